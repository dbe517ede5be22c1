//! The shared base network. It is evaluated once per frame and every
//! intermediate activation is exposed under a tap name (`conv1`, `conv2`, ...)
//! for the microclassifiers to consume.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{conv_layer, relu_in_place, ConvParams, CropRect, Shape, Tensor};

pub const DEFAULT_WIDTHS: [usize; 4] = [8, 16, 32, 64];
pub const KERNEL_SIZE: usize = 3;
pub const STRIDE: usize = 2;

/// Uniform(-0.5, 0.5) / sqrt(fan_in) draws.
pub(crate) fn scaled_uniform(rng: &mut SplitMix64, n: usize, fan_in: usize) -> Vec<f32> {
    let scale = 1.0 / Float::sqrt(fan_in as f64);
    (0..n)
        .map(|_| (rng.uniform(-0.5, 0.5) * scale) as f32)
        .collect()
}

/// A frozen convolutional feature extractor. Layer 1 is a standard 3x3
/// convolution, the rest are separable; every layer has stride 2 and is
/// followed by relu.
#[derive(Debug)]
pub struct BaseNetwork {
    layers: Vec<ConvParams>,
    tap_names: Vec<String>,
    seed: u64,
    input_height: usize,
    input_width: usize,
    evaluations: AtomicU64,
}

impl Clone for BaseNetwork {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            tap_names: self.tap_names.clone(),
            seed: self.seed,
            input_height: self.input_height,
            input_width: self.input_width,
            evaluations: AtomicU64::new(0),
        }
    }
}

impl PartialEq for BaseNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.tap_names == other.tap_names
            && self.input_height == other.input_height
            && self.input_width == other.input_width
    }
}

impl BaseNetwork {
    /// Build the default four-layer network for `height x width` frames.
    pub fn build(seed: u64, height: usize, width: usize) -> Result<Self> {
        Self::build_with_widths(seed, height, width, &DEFAULT_WIDTHS)
    }

    /// Build a network with one layer per entry in `widths`.
    pub fn build_with_widths(
        seed: u64,
        height: usize,
        width: usize,
        widths: &[usize],
    ) -> Result<Self> {
        let depth = widths.len();
        if depth == 0 || widths.contains(&0) {
            return Err(Error::InvalidSpec(
                "base network needs at least one non-zero width".into(),
            ));
        }
        let min = 1usize.checked_shl(depth as u32).unwrap_or(usize::MAX);
        if height < min || width < min {
            return Err(Error::InvalidSpec(format!(
                "input {height}x{width} is too small for a {depth}-layer network (needs >= {min})"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        let mut layers = Vec::with_capacity(depth);
        let mut in_channels = 3;
        for (i, &filters) in widths.iter().enumerate() {
            let mut layer_rng = rng.fork();
            let layer = if i == 0 {
                ConvParams::standard(
                    KERNEL_SIZE,
                    STRIDE,
                    in_channels,
                    filters,
                    scaled_uniform(&mut layer_rng, k2 * in_channels * filters, k2 * in_channels),
                    alloc::vec![0.0; filters],
                )?
            } else {
                ConvParams::separable(
                    KERNEL_SIZE,
                    STRIDE,
                    in_channels,
                    filters,
                    scaled_uniform(&mut layer_rng, k2 * in_channels, k2),
                    scaled_uniform(&mut layer_rng, in_channels * filters, in_channels),
                    alloc::vec![0.0; filters],
                )?
            };
            layers.push(layer);
            in_channels = filters;
        }
        Ok(Self {
            layers,
            tap_names: (1..=depth).map(|i| format!("conv{i}")).collect(),
            seed,
            input_height: height,
            input_width: width,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[ConvParams] {
        &self.layers
    }

    /// Mutable access for tests that need hand-set weights.
    pub fn layers_mut(&mut self) -> &mut [ConvParams] {
        &mut self.layers
    }

    pub fn tap_names(&self) -> &[String] {
        &self.tap_names
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_height, self.input_width)
    }

    pub fn tap_index(&self, tap: &str) -> Option<usize> {
        self.tap_names.iter().position(|t| t == tap)
    }

    /// Shape of every tap for the network's configured input dims.
    pub fn tap_shapes(&self) -> Vec<(String, Shape)> {
        self.tap_shapes_for(self.input_height, self.input_width)
    }

    /// Shape of every tap for arbitrary input dims (each layer ceil-halves).
    pub fn tap_shapes_for(&self, height: usize, width: usize) -> Vec<(String, Shape)> {
        let mut shape = Shape::new(height, width, 3);
        self.layers
            .iter()
            .zip(&self.tap_names)
            .map(|(layer, name)| {
                shape = layer.output_shape(shape);
                (name.clone(), shape)
            })
            .collect()
    }

    pub fn tap_shape(&self, tap: &str) -> Option<Shape> {
        self.tap_shapes()
            .into_iter()
            .find(|(n, _)| n == tap)
            .map(|(_, s)| s)
    }

    /// Number of frames passed through the network since it was built.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn extract_frame(&self, frame_index: u64, frame: &Tensor) -> Result<FeatureMapSet> {
        if frame.height() != self.input_height
            || frame.width() != self.input_width
            || frame.channels() != 3
        {
            return Err(Error::InvalidInput(format!(
                "frame {frame_index} is {}x{}x{}, network expects {}x{}x3",
                frame.height(),
                frame.width(),
                frame.channels(),
                self.input_height,
                self.input_width
            )));
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let mut maps = Vec::with_capacity(self.layers.len());
        let mut x = frame.clone();
        for (layer, name) in self.layers.iter().zip(&self.tap_names) {
            x = conv_layer(&x, layer)?;
            relu_in_place(&mut x);
            maps.push((name.clone(), x.clone()));
        }
        Ok(FeatureMapSet { frame_index, maps })
    }

    /// Run a batch of frames whose indices start at `first_index`.
    pub fn extract(&self, first_index: u64, frames: &[Tensor]) -> Result<Vec<FeatureMapSet>> {
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| self.extract_frame(first_index + i as u64, f))
            .collect()
    }
}

/// Activations of every tap for one frame, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub frame_index: u64,
    pub maps: Vec<(String, Tensor)>,
}

impl FeatureMapSet {
    pub fn get(&self, tap: &str) -> Option<&Tensor> {
        self.maps.iter().find(|(n, _)| n == tap).map(|(_, t)| t)
    }

    pub fn tap(&self, tap: &str) -> Result<&Tensor> {
        self.get(tap)
            .ok_or_else(|| Error::NotFound(format!("tap {tap}")))
    }
}

/// Convert interleaved 8-bit RGB into a `[0, 1]` float frame.
pub fn frame_from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Tensor> {
    Tensor::new(
        height,
        width,
        3,
        rgb.iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

/// Map a rectangle in pixel coordinates onto a feature map by flooring each
/// corner divided by the per-axis scale `frame_dim / feat_dim`.
pub fn rescale_crop(
    pixel_rect: CropRect,
    frame_dims: (usize, usize),
    feat_dims: (usize, usize),
) -> Result<CropRect> {
    let (fh, fw) = frame_dims;
    let (h, w) = feat_dims;
    if h == 0 || w == 0 {
        return Err(Error::InvalidCrop("feature dims must be positive".into()));
    }
    pixel_rect.check_within(fh, fw)?;
    // floor(p / (F / f)) == floor(p * f / F) in exact integer arithmetic.
    let map = |p: usize, frame: usize, feat: usize| ((p * feat) / frame).min(feat - 1);
    Ok(CropRect::new(
        map(pixel_rect.row0, fh, h),
        map(pixel_rect.col0, fw, w),
        map(pixel_rect.row1, fh, h),
        map(pixel_rect.col1, fw, w),
    ))
}

const REFERENCE_OBJECT_PX: f64 = 40.0;
const TARGET_REDUCTION: f64 = 20.0;

/// Pick the earliest tap whose spatial reduction relative to the frame is at
/// least `20 * object_height / 40`, falling back to the deepest tap.
pub fn suggest_tap(object_height_px: f64, frame_height_px: f64, net: &BaseNetwork) -> &str {
    let threshold = TARGET_REDUCTION * object_height_px / REFERENCE_OBJECT_PX;
    let mut height = Float::ceil(frame_height_px) as usize;
    for (layer, name) in net.layers.iter().zip(&net.tap_names) {
        height = height.div_ceil(layer.stride);
        if frame_height_px / height as f64 >= threshold {
            return name;
        }
    }
    net.tap_names.last().map(String::as_str).unwrap_or("")
}
