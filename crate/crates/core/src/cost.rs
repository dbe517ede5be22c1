//! Multiply-add cost model, break-even analysis and the bandwidth accountant.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::base::BaseNetwork;
use crate::baseline::{DiscreteClassifier, FullDnnFilter};
use crate::error::{Error, Result};
use crate::microclassifier::{cropped_shape, McWeights, MicroclassifierSpec};
use crate::tensor::{ConvParams, FcParams, Scalar, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Fc {
        units: usize,
    },
    Conv {
        kernel: usize,
        stride: usize,
        filters: usize,
    },
    Separable {
        kernel: usize,
        stride: usize,
        filters: usize,
    },
}

/// One layer applied to an `height x width x channels` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub kind: LayerKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl CostParams {
    pub fn new(kind: LayerKind, input: Shape) -> Result<Self> {
        let p = Self {
            kind,
            height: input.height,
            width: input.width,
            channels: input.channels,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.height > 0 && self.width > 0 && self.channels > 0;
        let kind_ok = match self.kind {
            LayerKind::Fc { units } => units > 0,
            LayerKind::Conv {
                kernel,
                stride,
                filters,
            }
            | LayerKind::Separable {
                kernel,
                stride,
                filters,
            } => kernel % 2 == 1 && stride > 0 && filters > 0,
        };
        if dims_ok && kind_ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "invalid cost parameters {self:?}"
            )))
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Fc { units } => Shape::new(1, 1, units),
            LayerKind::Conv {
                stride, filters, ..
            }
            | LayerKind::Separable {
                stride, filters, ..
            } => Shape::new(
                self.height.div_ceil(stride),
                self.width.div_ceil(stride),
                filters,
            ),
        }
    }
}

pub fn multiply_adds(p: &CostParams) -> u64 {
    let (h, w, m) = (p.height as u64, p.width as u64, p.channels as u64);
    match p.kind {
        LayerKind::Fc { units } => units as u64 * h * w * m,
        LayerKind::Conv {
            kernel,
            stride,
            filters,
        } => {
            let s = stride as u64;
            let k2 = (kernel * kernel) as u64;
            h.div_ceil(s) * w.div_ceil(s) * m * k2 * filters as u64
        }
        LayerKind::Separable {
            kernel,
            stride,
            filters,
        } => {
            let s = stride as u64;
            let k2 = (kernel * kernel) as u64;
            h.div_ceil(s) * w.div_ceil(s) * m * (k2 + filters as u64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: CostParams,
    pub multiply_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostBreakdown {
    pub layers: Vec<LayerCost>,
}

impl CostBreakdown {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|l| l.multiply_adds).sum()
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind, input: Shape) -> Result<Shape> {
        let params = CostParams::new(kind, input)?;
        self.layers.push(LayerCost {
            name: name.into(),
            params,
            multiply_adds: multiply_adds(&params),
        });
        Ok(params.output_shape())
    }

    fn push_conv<T: Scalar>(
        &mut self,
        name: impl Into<String>,
        p: &ConvParams<T>,
        input: Shape,
    ) -> Result<Shape> {
        if p.in_channels != input.channels {
            return Err(Error::InvalidSpec(format!(
                "layer expects {} channels, receives {}",
                p.in_channels, input.channels
            )));
        }
        let kind = if p.separable {
            LayerKind::Separable {
                kernel: p.kernel_size,
                stride: p.stride,
                filters: p.filters,
            }
        } else {
            LayerKind::Conv {
                kernel: p.kernel_size,
                stride: p.stride,
                filters: p.filters,
            }
        };
        self.push(name, kind, input)
    }

    fn push_fc<T: Scalar>(
        &mut self,
        name: impl Into<String>,
        p: &FcParams<T>,
        input: Shape,
    ) -> Result<Shape> {
        self.push(
            name,
            LayerKind::Fc {
                units: p.hidden_units,
            },
            input,
        )
    }
}

/// Models the cost model can meter.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Base(&'a BaseNetwork),
    /// Marginal per-frame cost of one classifier on top of the base network.
    Microclassifier(&'a MicroclassifierSpec, &'a BaseNetwork),
    Discrete(&'a DiscreteClassifier),
    FullDnn(&'a FullDnnFilter),
}

/// Sum of per-layer multiply-adds for one frame of `height x width` pixels.
///
/// Dense heads are costed at the size their input would have at these dims,
/// so a model built for one resolution can be priced at another. Crops only
/// apply at the network's own dims.
pub fn model_cost(model: Model<'_>, height: usize, width: usize) -> Result<CostBreakdown> {
    match model {
        Model::Base(net) => base_cost(net, height, width),
        Model::Microclassifier(spec, net) => {
            let tap = net
                .tap_shapes_for(height, width)
                .into_iter()
                .find(|(n, _)| *n == spec.tap)
                .map(|(_, s)| s)
                .ok_or_else(|| Error::NotFound(format!("tap {:?}", spec.tap)))?;
            let input = match spec.crop {
                Some(_) if net.input_dims() != (height, width) => {
                    return Err(Error::InvalidInput(format!(
                        "cropped classifier can only be costed at {:?}",
                        net.input_dims()
                    )))
                }
                crop => cropped_shape(tap, crop)?,
            };
            mc_cost(&spec.weights, input, spec.window)
        }
        Model::Discrete(dc) => {
            let mut c = CostBreakdown::default();
            let s = c.push_conv("conv1", &dc.conv, Shape::new(height, width, 3))?;
            let s = c.push_conv("sep1", &dc.sep1, s)?;
            let s = c.push_conv("sep2", &dc.sep2, s)?;
            c.push_fc("fc", &dc.fc, s)?;
            Ok(c)
        }
        Model::FullDnn(f) => {
            let mut c = base_cost(&f.base, height, width)?;
            let deepest = f
                .base
                .tap_shapes_for(height, width)
                .pop()
                .expect("non-empty network")
                .1;
            c.push_fc("head", &f.head, deepest)?;
            Ok(c)
        }
    }
}

fn base_cost(net: &BaseNetwork, height: usize, width: usize) -> Result<CostBreakdown> {
    let mut c = CostBreakdown::default();
    let mut s = Shape::new(height, width, 3);
    for (name, layer) in net.tap_names().iter().zip(net.layers()) {
        s = c.push_conv(name.clone(), layer, s)?;
    }
    Ok(c)
}

/// Per-frame cost of a classifier reading an input of shape `input`. The
/// windowed classifier reduces each frame once and reuses the reduction
/// across windows, so it is charged one reduction per frame.
pub fn mc_cost<T: Scalar>(
    weights: &McWeights<T>,
    input: Shape,
    window: usize,
) -> Result<CostBreakdown> {
    let mut c = CostBreakdown::default();
    match weights {
        McWeights::Ffod { layers } => {
            let mut s = input;
            for (i, l) in layers.iter().enumerate() {
                s = c.push_conv(format!("conv{}", i + 1), l, s)?;
            }
        }
        McWeights::Lbc { sep1, sep2, fc } => {
            let s = c.push_conv("sep1", sep1, input)?;
            let s = c.push_conv("sep2", sep2, s)?;
            c.push_fc("fc", fc, s)?;
        }
        McWeights::Wlbc { reduce, sep, fc } => {
            let r = c.push_conv("reduce", reduce, input)?;
            let stacked = Shape::new(r.height, r.width, r.channels * window);
            let s = c.push_conv("sep", sep, stacked)?;
            c.push_fc("fc", fc, s)?;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakEven {
    /// Smallest classifier count at which shared-base filtering is strictly
    /// cheaper than one discrete classifier per task.
    At(u64),
    Never,
}

pub fn break_even(base_cost: u64, mc_marginal_cost: u64, dc_cost: u64) -> BreakEven {
    if dc_cost <= mc_marginal_cost {
        BreakEven::Never
    } else {
        BreakEven::At(base_cost / (dc_cost - mc_marginal_cost) + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitrateModel {
    pub frame_rate: f64,
    pub full_stream_bitrate: f64,
    pub event_bitrate: f64,
}

impl Default for BitrateModel {
    fn default() -> Self {
        Self {
            frame_rate: 15.0,
            full_stream_bitrate: 2.0e6,
            event_bitrate: 5.0e5,
        }
    }
}

impl BitrateModel {
    pub fn new(frame_rate: f64, full_stream_bitrate: f64, event_bitrate: f64) -> Result<Self> {
        let m = Self {
            frame_rate,
            full_stream_bitrate,
            event_bitrate,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_rate", self.frame_rate),
            ("full_stream_bitrate", self.full_stream_bitrate),
            ("event_bitrate", self.event_bitrate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::SpecRejected {
                    field: name,
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Target-bitrate upper bound on upload volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthReport {
    pub uploaded_bits: f64,
    pub full_bits: f64,
    /// `None` when nothing is uploaded (unbounded savings).
    pub savings_factor: Option<f64>,
}

pub fn bandwidth_report(
    matched_frames: u64,
    total_frames: u64,
    model: &BitrateModel,
) -> Result<BandwidthReport> {
    if matched_frames > total_frames {
        return Err(Error::InvalidInput(format!(
            "{matched_frames} matched frames out of {total_frames}"
        )));
    }
    model.validate()?;
    let full_bits = total_frames as f64 / model.frame_rate * model.full_stream_bitrate;
    let uploaded_bits = matched_frames as f64 / model.frame_rate * model.event_bitrate;
    let savings_factor = (matched_frames > 0).then(|| {
        model.full_stream_bitrate / model.event_bitrate
            * (total_frames as f64 / matched_frames as f64)
    });
    Ok(BandwidthReport {
        uploaded_bits,
        full_bits,
        savings_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microclassifier::Architecture;

    fn ma(kind: LayerKind, h: usize, w: usize, m: usize) -> u64 {
        multiply_adds(&CostParams::new(kind, Shape::new(h, w, m)).unwrap())
    }

    #[test]
    fn formula_instances() {
        assert_eq!(ma(LayerKind::Fc { units: 2 }, 4, 4, 8), 256);
        assert_eq!(
            ma(
                LayerKind::Conv {
                    kernel: 3,
                    stride: 2,
                    filters: 16
                },
                8,
                8,
                4
            ),
            9216
        );
        assert_eq!(
            ma(
                LayerKind::Separable {
                    kernel: 3,
                    stride: 2,
                    filters: 16
                },
                8,
                8,
                4
            ),
            1600
        );
    }

    #[test]
    fn even_kernel_rejected() {
        let k = LayerKind::Conv {
            kernel: 2,
            stride: 1,
            filters: 1,
        };
        assert!(CostParams::new(k, Shape::new(4, 4, 1)).is_err());
    }

    #[test]
    fn break_even_cases() {
        assert_eq!(break_even(1000, 50, 300), BreakEven::At(5));
        assert_eq!(break_even(999, 50, 300), BreakEven::At(4));
        assert_eq!(break_even(1000, 300, 300), BreakEven::Never);
        assert_eq!(break_even(1000, 400, 300), BreakEven::Never);
        assert_eq!(break_even(0, 50, 300), BreakEven::At(1));
    }

    #[test]
    fn bandwidth_cases() {
        let m = BitrateModel::default();
        let r = bandwidth_report(1000, 10_000, &m).unwrap();
        assert_eq!(r.savings_factor, Some(40.0));
        let eq = BitrateModel::new(15.0, 1e6, 1e6).unwrap();
        assert_eq!(
            bandwidth_report(50, 50, &eq).unwrap().savings_factor,
            Some(1.0)
        );
        let none = bandwidth_report(0, 100, &m).unwrap();
        assert_eq!(none.uploaded_bits, 0.0);
        assert_eq!(none.savings_factor, None);
        assert!(bandwidth_report(5, 4, &m).is_err());
        assert!(BitrateModel::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn base_cost_is_sum_of_layers() {
        let net = BaseNetwork::build(1, 256, 256).unwrap();
        let c = model_cost(Model::Base(&net), 256, 256).unwrap();
        assert_eq!(c.layers.len(), 4);
        assert_eq!(c.total(), 5_627_904);
    }

    #[test]
    fn lbc_crop_scales_cost() {
        let net = BaseNetwork::build(1, 128, 128).unwrap();
        let full = MicroclassifierSpec::init_default("a", Architecture::Lbc, &net, 3).unwrap();
        let tap = net.tap_shape("conv2").unwrap();
        let rect = crate::tensor::CropRect::new(0, 0, tap.height / 2 - 1, tap.width / 2 - 1);
        let cropped = MicroclassifierSpec::init(
            "b",
            Architecture::Lbc,
            "conv2",
            Some(rect),
            1,
            &net,
            &crate::microclassifier::McWidths::default(),
            3,
        )
        .unwrap();
        let a = model_cost(Model::Microclassifier(&full, &net), 128, 128)
            .unwrap()
            .total() as f64;
        let b = model_cost(Model::Microclassifier(&cropped, &net), 128, 128)
            .unwrap()
            .total() as f64;
        assert!((a / b - 4.0).abs() < 0.2, "ratio {}", a / b);
    }
}
