//! Dense HWC tensors and the forward kernels every model in the crate is
//! built from.
//!
//! Convolutions use zero "same" padding: output spatial dims are
//! `ceil(dim / stride)` and output cell `(i, j)` is centred on input cell
//! `(i * stride, j * stride)`. Kernel sizes must be odd.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating point element type. Production paths use `f32`; `f64` exists so
/// gradient checks can run the same kernels at higher precision.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rank-3 tensor stored row-major as (height, width, channels).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "tensor dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidSpec(format!(
                "tensor {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            shape: Shape::new(height, width, channels),
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "tensor dims must be positive"
        );
        Self {
            shape: Shape::new(height, width, channels),
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut out = Self::zeros(height, width, channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    let i = out.index(h, w, c);
                    out.data[i] = f(h, w, c);
                }
            }
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.shape.width + w) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: T) {
        let i = self.index(h, w, c);
        self.data[i] = v;
    }

    /// Channel vector at one spatial location.
    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[T] {
        let start = self.index(h, w, 0);
        &self.data[start..start + self.shape.channels]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|x| x * a)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|x| U::from(*x).expect("castable"))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Convolution layer parameters.
///
/// Weight layout for a standard layer is `[ky][kx][in][out]`. A separable
/// layer stores its depthwise block `[ky][kx][in]` followed by its pointwise
/// block `[in][out]`; its bias belongs to the pointwise stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel_size: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub separable: bool,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn standard(
        kernel_size: usize,
        stride: usize,
        in_channels: usize,
        filters: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let p = Self {
            kernel_size,
            stride,
            in_channels,
            filters,
            separable: false,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn separable(
        kernel_size: usize,
        stride: usize,
        in_channels: usize,
        filters: usize,
        depthwise: Vec<T>,
        pointwise: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let mut weights = depthwise;
        weights.extend(pointwise);
        let p = Self {
            kernel_size,
            stride,
            in_channels,
            filters,
            separable: true,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero-initialised layer of the given geometry.
    pub fn zeros(
        kernel_size: usize,
        stride: usize,
        in_channels: usize,
        filters: usize,
        separable: bool,
    ) -> Self {
        let mut p = Self {
            kernel_size,
            stride,
            in_channels,
            filters,
            separable,
            weights: Vec::new(),
            bias: vec![T::zero(); filters],
        };
        p.weights = vec![T::zero(); p.expected_weight_count()];
        p
    }

    pub fn expected_weight_count(&self) -> usize {
        let k2 = self.kernel_size * self.kernel_size;
        if self.separable {
            k2 * self.in_channels + self.in_channels * self.filters
        } else {
            k2 * self.in_channels * self.filters
        }
    }

    pub fn depthwise_len(&self) -> usize {
        self.kernel_size * self.kernel_size * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.stride == 0 || self.in_channels == 0 || self.filters == 0 {
            return Err(Error::InvalidSpec(format!(
                "stride, in_channels and filters must be positive (got {}, {}, {})",
                self.stride, self.in_channels, self.filters
            )));
        }
        if self.weights.len() != self.expected_weight_count() {
            return Err(Error::InvalidSpec(format!(
                "{} conv expects {} weights, got {}",
                if self.separable {
                    "separable"
                } else {
                    "standard"
                },
                self.expected_weight_count(),
                self.weights.len()
            )));
        }
        if self.bias.len() != self.filters {
            return Err(Error::InvalidSpec(format!(
                "expected {} bias values, got {}",
                self.filters,
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Depthwise block of a separable layer.
    pub fn depthwise(&self) -> &[T] {
        &self.weights[..self.depthwise_len()]
    }

    /// Pointwise block of a separable layer.
    pub fn pointwise(&self) -> &[T] {
        &self.weights[self.depthwise_len()..]
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.height.div_ceil(self.stride),
            input.width.div_ceil(self.stride),
            self.filters,
        )
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            kernel_size: self.kernel_size,
            stride: self.stride,
            in_channels: self.in_channels,
            filters: self.filters,
            separable: self.separable,
            weights: cast_vec(&self.weights),
            bias: cast_vec(&self.bias),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        self.validate()?;
        if input.channels() != self.in_channels {
            return Err(Error::InvalidSpec(format!(
                "layer expects {} input channels, tensor has {}",
                self.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }
}

/// Fully-connected layer. `weights[n * len + i]` connects flattened input
/// element `i` to unit `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T = f32> {
    pub hidden_units: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn new(hidden_units: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if hidden_units == 0
            || bias.len() != hidden_units
            || !weights.len().is_multiple_of(hidden_units)
        {
            return Err(Error::InvalidSpec(format!(
                "fc layer with {hidden_units} units has {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            hidden_units,
            weights,
            bias,
        })
    }

    pub fn zeros(hidden_units: usize, input_len: usize) -> Self {
        Self {
            hidden_units,
            weights: vec![T::zero(); hidden_units * input_len],
            bias: vec![T::zero(); hidden_units],
        }
    }

    pub fn input_len(&self) -> usize {
        self.weights.len() / self.hidden_units.max(1)
    }

    pub fn cast<U: Scalar>(&self) -> FcParams<U> {
        FcParams {
            hidden_units: self.hidden_units,
            weights: cast_vec(&self.weights),
            bias: cast_vec(&self.bias),
        }
    }
}

pub(crate) fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from(*x).expect("castable")).collect()
}

/// Inclusive rectangle `(row0, col0)..=(row1, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl CropRect {
    pub const fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Self {
            row0,
            col0,
            row1,
            col1,
        }
    }

    pub const fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height - 1, width - 1)
    }

    pub const fn height(&self) -> usize {
        self.row1 - self.row0 + 1
    }

    pub const fn width(&self) -> usize {
        self.col1 - self.col0 + 1
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.row0 > self.row1
            || self.col0 > self.col1
            || self.row1 >= height
            || self.col1 >= width
        {
            return Err(Error::InvalidCrop(format!(
                "rect rows {}..={} cols {}..={} does not fit {height}x{width}",
                self.row0, self.row1, self.col0, self.col1
            )));
        }
        Ok(())
    }

    /// Express `inner`, given relative to this rect, in this rect's parent
    /// coordinates.
    pub const fn compose(&self, inner: CropRect) -> CropRect {
        CropRect::new(
            self.row0 + inner.row0,
            self.col0 + inner.col0,
            self.row0 + inner.row1,
            self.col0 + inner.col1,
        )
    }
}

/// Compensated accumulation: keeps long f32 dot products within a few ulp of
/// the exact sum.
#[inline(always)]
fn kahan_add<T: Scalar>(sum: &mut T, comp: &mut T, term: T) {
    let y = term - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Standard "same"-padded convolution. No activation is applied.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if params.separable {
        return Err(Error::InvalidSpec(
            "conv2d called with separable params".into(),
        ));
    }
    params.check_input(input)?;
    let out_shape = params.output_shape(input.shape());
    let (k, s, m, f) = (
        params.kernel_size,
        params.stride,
        params.in_channels,
        params.filters,
    );
    let pad = k / 2;
    let mut out = Tensor::zeros(out_shape.height, out_shape.width, f);
    let mut acc = vec![T::zero(); f];
    let mut comp = vec![T::zero(); f];
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            acc.copy_from_slice(&params.bias);
            comp.iter_mut().for_each(|c| *c = T::zero());
            for ky in 0..k {
                let Some(iy) = (oy * s + ky)
                    .checked_sub(pad)
                    .filter(|&y| y < input.height())
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * s + kx)
                        .checked_sub(pad)
                        .filter(|&x| x < input.width())
                    else {
                        continue;
                    };
                    let px = input.pixel(iy, ix);
                    let wbase = (ky * k + kx) * m * f;
                    for (c, &x) in px.iter().enumerate() {
                        let row = &params.weights[wbase + c * f..wbase + (c + 1) * f];
                        for ((a, e), &w) in acc.iter_mut().zip(comp.iter_mut()).zip(row) {
                            kahan_add(a, e, x * w);
                        }
                    }
                }
            }
            let o = out.index(oy, ox, 0);
            out.data[o..o + f].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Per-channel K x K convolution (stride S, same padding), no bias.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &[T],
    kernel_size: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let m = input.channels();
    if kernel.len() != kernel_size * kernel_size * m || kernel_size.is_multiple_of(2) || stride == 0
    {
        return Err(Error::InvalidSpec(format!(
            "depthwise kernel of {} values does not fit K={kernel_size} over {m} channels",
            kernel.len()
        )));
    }
    let k = kernel_size;
    let pad = k / 2;
    let (oh, ow) = (
        input.height().div_ceil(stride),
        input.width().div_ceil(stride),
    );
    let mut out = Tensor::zeros(oh, ow, m);
    let mut comp = vec![T::zero(); m];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = out.index(oy, ox, 0);
            comp.iter_mut().for_each(|c| *c = T::zero());
            for ky in 0..k {
                let Some(iy) = (oy * stride + ky)
                    .checked_sub(pad)
                    .filter(|&y| y < input.height())
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * stride + kx)
                        .checked_sub(pad)
                        .filter(|&x| x < input.width())
                    else {
                        continue;
                    };
                    let px = input.pixel(iy, ix);
                    let row = &kernel[(ky * k + kx) * m..(ky * k + kx + 1) * m];
                    let dst = &mut out.data[o..o + m];
                    for c in 0..m {
                        kahan_add(&mut dst[c], &mut comp[c], px[c] * row[c]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1x1 channel mixing: `out[f] = bias[f] + sum_m x[m] * w[m][f]`.
pub fn pointwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    bias: &[T],
) -> Result<Tensor<T>> {
    let m = input.channels();
    let f = bias.len();
    if f == 0 || weights.len() != m * f {
        return Err(Error::InvalidSpec(format!(
            "pointwise weights of {} values do not fit {m} -> {f}",
            weights.len()
        )));
    }
    let mut out = Tensor::zeros(input.height(), input.width(), f);
    let mut comp = vec![T::zero(); f];
    for (px, dst) in input.data.chunks_exact(m).zip(out.data.chunks_exact_mut(f)) {
        dst.copy_from_slice(bias);
        comp.iter_mut().for_each(|c| *c = T::zero());
        for (c, &x) in px.iter().enumerate() {
            for ((d, e), &w) in dst
                .iter_mut()
                .zip(comp.iter_mut())
                .zip(&weights[c * f..(c + 1) * f])
            {
                kahan_add(d, e, x * w);
            }
        }
    }
    Ok(out)
}

/// Depthwise K x K convolution followed by pointwise mixing to F channels.
pub fn separable_conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if !params.separable {
        return Err(Error::InvalidSpec(
            "separable_conv2d called with standard params".into(),
        ));
    }
    params.check_input(input)?;
    let dw = depthwise_conv2d(input, params.depthwise(), params.kernel_size, params.stride)?;
    pointwise_conv2d(&dw, params.pointwise(), &params.bias)
}

/// Dispatch on `params.separable`.
pub fn conv_layer<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    if params.separable {
        separable_conv2d(input, params)
    } else {
        conv2d(input, params)
    }
}

/// Dense layer over the row-major flattening of `input`.
pub fn fully_connected<T: Scalar>(input: &Tensor<T>, params: &FcParams<T>) -> Result<Vec<T>> {
    let len = input.shape().len();
    if params.hidden_units == 0
        || params.weights.len() != params.hidden_units * len
        || params.bias.len() != params.hidden_units
    {
        return Err(Error::InvalidSpec(format!(
            "fc layer with {} units and {} weights cannot consume {len} inputs",
            params.hidden_units,
            params.weights.len()
        )));
    }
    Ok(params
        .weights
        .chunks_exact(len)
        .zip(&params.bias)
        .map(|(row, &b)| {
            let (mut acc, mut comp) = (b, T::zero());
            for (&w, &x) in row.iter().zip(&input.data) {
                kahan_add(&mut acc, &mut comp, w * x);
            }
            acc
        })
        .collect())
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.max(T::zero()))
}

pub fn relu_in_place<T: Scalar>(input: &mut Tensor<T>) {
    for x in input.data.iter_mut() {
        *x = x.max(T::zero());
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_tensor<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}

/// Location of the largest value of a single-channel map. Ties resolve to the
/// first row-major index.
pub fn spatial_argmax<T: Scalar>(input: &Tensor<T>) -> Result<(usize, T)> {
    if input.channels() != 1 {
        return Err(Error::InvalidSpec(format!(
            "spatial max needs a single-channel map, got {} channels",
            input.channels()
        )));
    }
    let mut best = (0, input.data[0]);
    for (i, &x) in input.data.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    Ok(best)
}

/// Maximum over all spatial locations of a single-channel map.
pub fn spatial_max<T: Scalar>(input: &Tensor<T>) -> Result<T> {
    spatial_argmax(input).map(|(_, v)| v)
}

pub fn crop<T: Scalar>(input: &Tensor<T>, rect: CropRect) -> Result<Tensor<T>> {
    rect.check_within(input.height(), input.width())?;
    let c = input.channels();
    let mut data = Vec::with_capacity(rect.height() * rect.width() * c);
    for h in rect.row0..=rect.row1 {
        let start = input.index(h, rect.col0, 0);
        data.extend_from_slice(&input.data[start..start + rect.width() * c]);
    }
    Tensor::new(rect.height(), rect.width(), c, data)
}

/// Concatenate along the channel axis, in input order.
pub fn depth_concat<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidSpec("depth_concat needs at least one input".into()))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = inputs.iter().find(|t| t.height() != h || t.width() != w) {
        return Err(Error::InvalidSpec(format!(
            "depth_concat spatial mismatch: {h}x{w} vs {}x{}",
            bad.height(),
            bad.width()
        )));
    }
    let total: usize = inputs.iter().map(|t| t.channels()).sum();
    let mut data = Vec::with_capacity(h * w * total);
    for y in 0..h {
        for x in 0..w {
            for t in inputs {
                data.extend_from_slice(t.pixel(y, x));
            }
        }
    }
    Tensor::new(h, w, total, data)
}
