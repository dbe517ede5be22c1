//! Comparison filters that share no computation: a discrete pixel-input
//! classifier per task, and a full copy of the base network with a one-unit
//! head per task.

use alloc::vec;
use alloc::vec::Vec;

use crate::base::{scaled_uniform, BaseNetwork};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{
    conv2d, fully_connected, relu, separable_conv2d, sigmoid, ConvParams, FcParams, Shape, Tensor,
};

pub const DC_DEFAULT_WIDTHS: [usize; 3] = [16, 32, 32];

/// Pixel-input classifier: standard 3x3/2 conv, two separable 3x3/2 convs,
/// relu after each, then a one-unit dense layer and sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteClassifier {
    pub conv: ConvParams,
    pub sep1: ConvParams,
    pub sep2: ConvParams,
    pub fc: FcParams,
    pub threshold: f32,
    input_height: usize,
    input_width: usize,
}

impl DiscreteClassifier {
    pub fn build(seed: u64, height: usize, width: usize) -> Result<Self> {
        Self::build_with_widths(seed, height, width, DC_DEFAULT_WIDTHS)
    }

    pub fn build_with_widths(
        seed: u64,
        height: usize,
        width: usize,
        widths: [usize; 3],
    ) -> Result<Self> {
        if height == 0 || width == 0 || widths.contains(&0) {
            return Err(Error::InvalidSpec(
                "discrete classifier dims and widths must be positive".into(),
            ));
        }
        let mut rng = SplitMix64::new(seed);
        let [f1, f2, f3] = widths;
        let conv = ConvParams::standard(
            3,
            2,
            3,
            f1,
            scaled_uniform(&mut rng, 27 * f1, 27),
            vec![0.0; f1],
        )?;
        let sep1 = ConvParams::separable(
            3,
            2,
            f1,
            f2,
            scaled_uniform(&mut rng, 9 * f1, 9),
            scaled_uniform(&mut rng, f1 * f2, f1),
            vec![0.0; f2],
        )?;
        let sep2 = ConvParams::separable(
            3,
            2,
            f2,
            f3,
            scaled_uniform(&mut rng, 9 * f2, 9),
            scaled_uniform(&mut rng, f2 * f3, f2),
            vec![0.0; f3],
        )?;
        let out = Self::head_shape_for(height, width, f3);
        let fc = FcParams::new(1, scaled_uniform(&mut rng, out.len(), out.len()), vec![0.0])?;
        Ok(Self {
            conv,
            sep1,
            sep2,
            fc,
            threshold: 0.5,
            input_height: height,
            input_width: width,
        })
    }

    fn head_shape_for(height: usize, width: usize, channels: usize) -> Shape {
        let d = |x: usize| x.div_ceil(2).div_ceil(2).div_ceil(2);
        Shape::new(d(height), d(width), channels)
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_height, self.input_width)
    }

    /// Probability that `frame` (HxWx3, values in [0, 1]) is relevant.
    pub fn forward(&self, frame: &Tensor) -> Result<f32> {
        self.head(&self.trunk(frame)?)
    }

    /// The convolutional layers, up to the input of the dense head.
    pub fn trunk(&self, frame: &Tensor) -> Result<Tensor> {
        if frame.height() != self.input_height || frame.width() != self.input_width {
            return Err(Error::InvalidInput(alloc::format!(
                "frame is {}x{}, classifier expects {}x{}",
                frame.height(),
                frame.width(),
                self.input_height,
                self.input_width
            )));
        }
        let a = relu(&conv2d(frame, &self.conv)?);
        let b = relu(&separable_conv2d(&a, &self.sep1)?);
        Ok(relu(&separable_conv2d(&b, &self.sep2)?))
    }

    pub fn head(&self, trunk: &Tensor) -> Result<f32> {
        Ok(sigmoid(fully_connected(trunk, &self.fc)?[0]))
    }
}

/// One independent base network plus a one-unit head on its deepest tap.
#[derive(Debug, Clone)]
pub struct FullDnnFilter {
    pub base: BaseNetwork,
    pub head: FcParams,
}

impl FullDnnFilter {
    pub fn build(seed: u64, height: usize, width: usize) -> Result<Self> {
        Self::with_base(BaseNetwork::build(seed, height, width)?)
    }

    /// Attach a fresh head to `base`; the head is seeded from the base seed.
    pub fn with_base(base: BaseNetwork) -> Result<Self> {
        let seed = base.seed();
        let deepest = base
            .tap_shapes()
            .last()
            .map(|(_, s)| *s)
            .expect("non-empty network");
        let mut rng = SplitMix64::new(seed ^ 0x5eed_f00d);
        let head = FcParams::new(
            1,
            scaled_uniform(&mut rng, deepest.len(), deepest.len()),
            vec![0.0],
        )?;
        Ok(Self { base, head })
    }

    pub fn forward(&self, frame: &Tensor) -> Result<f32> {
        let maps = self.base.extract_frame(0, frame)?;
        self.head(&maps.maps.last().expect("non-empty network").1)
    }

    /// Head probability from the deepest tap.
    pub fn head(&self, deepest: &Tensor) -> Result<f32> {
        Ok(sigmoid(fully_connected(deepest, &self.head)?[0]))
    }
}

/// `n` discrete classifiers with distinct seeds derived from `seed`.
pub fn discrete_bank(
    seed: u64,
    n: usize,
    height: usize,
    width: usize,
) -> Result<Vec<DiscreteClassifier>> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| DiscreteClassifier::build(rng.next_u64(), height, width))
        .collect()
}
