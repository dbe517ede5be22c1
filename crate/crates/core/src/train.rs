//! Offline training of microclassifier weights: binary cross-entropy on the
//! per-frame probability, reverse-mode gradients through the exact forward
//! kernels, and mini-batch SGD with momentum.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::base::FeatureMapSet;
use crate::error::{Error, Result};
use crate::grad::{
    conv2d_backward, fc_backward, relu_backward, separable_backward, spatial_max_backward,
    split_channels,
};
use crate::microclassifier::{Architecture, McWeights, MicroclassifierSpec};
use crate::rng::SplitMix64;
use crate::tensor::{
    conv2d, crop, depth_concat, fully_connected, relu, separable_conv2d, sigmoid, spatial_argmax,
    CropRect, Scalar, Tensor,
};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    /// Passes over the data; fractional values visit a prefix of the last
    /// shuffled pass.
    pub epochs: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 1.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidSpec(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.epochs >= 0.0) || !self.epochs.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "epochs must be non-negative, got {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One training input: a single (cropped) feature map, or `W` of them for a
/// windowed classifier, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample<T = f32> {
    pub inputs: Vec<Tensor<T>>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    pub examples: Vec<LabeledExample>,
    pub tap: String,
    pub crop: Option<CropRect>,
}

impl LabeledFeatureSet {
    /// One example per frame. `labels[i]` labels `featsets[i]`.
    pub fn from_frames(
        featsets: &[FeatureMapSet],
        labels: &[bool],
        tap: &str,
        crop_rect: Option<CropRect>,
    ) -> Result<Self> {
        Self::windows(featsets, labels, tap, crop_rect, 1)
    }

    /// One example per frame made of the centred `window` frames around it.
    /// Stream edges repeat the first/last frame.
    pub fn windows(
        featsets: &[FeatureMapSet],
        labels: &[bool],
        tap: &str,
        crop_rect: Option<CropRect>,
        window: usize,
    ) -> Result<Self> {
        if featsets.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature sets but {} labels",
                featsets.len(),
                labels.len()
            )));
        }
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "window must be odd, got {window}"
            )));
        }
        let maps = featsets
            .iter()
            .map(|f| {
                let t = f.tap(tap)?;
                match crop_rect {
                    Some(r) => crop(t, r),
                    None => Ok(t.clone()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let half = window / 2;
        let last = maps.len().saturating_sub(1);
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledExample {
                inputs: (0..window)
                    .map(|k| maps[(i + k).saturating_sub(half).min(last)].clone())
                    .collect(),
                label,
            })
            .collect();
        Ok(Self {
            examples,
            tap: tap.into(),
            crop: crop_rect,
        })
    }
}

fn clamp_p<T: Scalar>(p: T) -> T {
    let lo = T::lit(P_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Binary cross-entropy of probability `p` against `label`, with clamping.
pub fn bce<T: Scalar>(p: T, label: bool) -> T {
    let p = clamp_p(p);
    if label {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// d(loss)/d(logit). Zero where the clamp is active.
fn bce_logit_grad<T: Scalar>(p: T, label: bool) -> T {
    let lo = T::lit(P_CLAMP);
    if p < lo || p > T::one() - lo {
        return T::zero();
    }
    p - if label { T::one() } else { T::zero() }
}

/// Forward pass up to the logit, generic over precision.
pub fn logit<T: Scalar>(weights: &McWeights<T>, inputs: &[Tensor<T>]) -> Result<T> {
    Ok(forward_cached(weights, inputs)?.logit)
}

struct Cache<T> {
    logit: T,
    // Per-architecture intermediates, in forward order.
    pre: Vec<Tensor<T>>,
    post: Vec<Tensor<T>>,
    argmax: usize,
}

fn expect_inputs<T>(inputs: &[Tensor<T>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} input maps, got {}",
            inputs.len()
        )));
    }
    Ok(())
}

fn head<T: Scalar>(out: Vec<T>) -> Result<T> {
    out.first()
        .copied()
        .ok_or_else(|| Error::InvalidSpec("empty classifier head".into()))
}

fn forward_cached<T: Scalar>(weights: &McWeights<T>, inputs: &[Tensor<T>]) -> Result<Cache<T>> {
    let mut pre = Vec::new();
    let mut post = Vec::new();
    match weights {
        McWeights::Ffod { layers } => {
            expect_inputs(inputs, 1)?;
            let mut x = inputs[0].clone();
            for (i, l) in layers.iter().enumerate() {
                let z = conv2d(&x, l)?;
                if i + 1 < layers.len() {
                    x = relu(&z);
                    pre.push(z);
                    post.push(x.clone());
                } else {
                    pre.push(z);
                }
            }
            let (argmax, logit) = spatial_argmax(pre.last().expect("non-empty stack"))?;
            Ok(Cache {
                logit,
                pre,
                post,
                argmax,
            })
        }
        McWeights::Lbc { sep1, sep2, fc } => {
            expect_inputs(inputs, 1)?;
            let z1 = separable_conv2d(&inputs[0], sep1)?;
            let a1 = relu(&z1);
            let z2 = separable_conv2d(&a1, sep2)?;
            let a2 = relu(&z2);
            let logit = head(fully_connected(&a2, fc)?)?;
            pre.extend([z1, z2]);
            post.extend([a1, a2]);
            Ok(Cache {
                logit,
                pre,
                post,
                argmax: 0,
            })
        }
        McWeights::Wlbc { reduce, sep, fc } => {
            if inputs.is_empty() {
                return Err(Error::InvalidInput(
                    "windowed classifier needs at least one map".into(),
                ));
            }
            for x in inputs {
                let z = conv2d(x, reduce)?;
                post.push(relu(&z));
                pre.push(z);
            }
            let refs: Vec<&Tensor<T>> = post.iter().collect();
            let cat = depth_concat(&refs)?;
            let z = separable_conv2d(&cat, sep)?;
            let a = relu(&z);
            let logit = head(fully_connected(&a, fc)?)?;
            pre.push(z);
            post.push(cat);
            post.push(a);
            Ok(Cache {
                logit,
                pre,
                post,
                argmax: 0,
            })
        }
    }
}

/// Loss of one example and the gradient of that loss for every parameter.
pub fn loss_and_gradients<T: Scalar>(
    weights: &McWeights<T>,
    example: &LabeledExample<T>,
) -> Result<(T, McWeights<T>)> {
    let cache = forward_cached(weights, &example.inputs)?;
    let p = sigmoid(cache.logit);
    let loss = bce(p, example.label);
    let dlogit = bce_logit_grad(p, example.label);
    let mut grads = weights.zeros_like();
    match (weights, &mut grads) {
        (McWeights::Ffod { layers }, McWeights::Ffod { layers: glayers }) => {
            let last = cache.pre.last().expect("non-empty stack");
            let mut g = spatial_max_backward(last.height(), last.width(), cache.argmax, dlogit);
            for i in (0..layers.len()).rev() {
                let input = if i == 0 {
                    &example.inputs[0]
                } else {
                    &cache.post[i - 1]
                };
                let lg = conv2d_backward(input, &layers[i], &g)?;
                glayers[i].weights = lg.weights;
                glayers[i].bias = lg.bias;
                if i > 0 {
                    g = relu_backward(&cache.pre[i - 1], lg.input);
                }
            }
        }
        (
            McWeights::Lbc { sep1, sep2, fc },
            McWeights::Lbc {
                sep1: g1,
                sep2: g2,
                fc: gfc,
            },
        ) => {
            let (z1, z2) = (&cache.pre[0], &cache.pre[1]);
            let (a1, a2) = (&cache.post[0], &cache.post[1]);
            let f = fc_backward(a2, fc, &[dlogit])?;
            gfc.weights = f.weights;
            gfc.bias = f.bias;
            let g = relu_backward(z2, f.input);
            let s2 = separable_backward(a1, sep2, &g)?;
            g2.weights = s2.weights;
            g2.bias = s2.bias;
            let g = relu_backward(z1, s2.input);
            let s1 = separable_backward(&example.inputs[0], sep1, &g)?;
            g1.weights = s1.weights;
            g1.bias = s1.bias;
        }
        (
            McWeights::Wlbc { reduce, sep, fc },
            McWeights::Wlbc {
                reduce: gr,
                sep: gs,
                fc: gfc,
            },
        ) => {
            let n = example.inputs.len();
            let z = &cache.pre[n];
            let (cat, a) = (&cache.post[n], &cache.post[n + 1]);
            let f = fc_backward(a, fc, &[dlogit])?;
            gfc.weights = f.weights;
            gfc.bias = f.bias;
            let g = relu_backward(z, f.input);
            let s = separable_backward(cat, sep, &g)?;
            gs.weights = s.weights;
            gs.bias = s.bias;
            let parts = split_channels(&s.input, &alloc::vec![reduce.filters; n])?;
            for ((x, zi), gi) in example.inputs.iter().zip(&cache.pre[..n]).zip(parts) {
                let lg = conv2d_backward(x, reduce, &relu_backward(zi, gi))?;
                add_into(&mut gr.weights, &lg.weights);
                add_into(&mut gr.bias, &lg.bias);
            }
        }
        _ => unreachable!("zeros_like preserves the variant"),
    }
    Ok((loss, grads))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// One momentum step on a single parameter vector:
/// `v = momentum * v - lr * g; w = w + v`.
pub fn sgd_step<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v - lr * g;
        *w = *w + *v;
    }
}

/// Apply one momentum step to every parameter block.
pub fn sgd_update<T: Scalar>(
    params: &mut McWeights<T>,
    grads: &McWeights<T>,
    velocity: &mut McWeights<T>,
    config: &TrainConfig,
) -> Result<()> {
    let lr = T::from_f32(config.learning_rate).expect("finite");
    let momentum = T::from_f32(config.momentum).expect("finite");
    let gs = grads.params();
    let mut vs = velocity.params_mut();
    let mut ws = params.params_mut();
    if gs.len() != ws.len() || vs.len() != ws.len() {
        return Err(Error::InvalidSpec(
            "gradient and parameter layouts differ".into(),
        ));
    }
    for ((w, g), v) in ws.iter_mut().zip(&gs).zip(vs.iter_mut()) {
        if w.len() != g.len() || w.len() != v.len() {
            return Err(Error::InvalidSpec(
                "gradient and parameter sizes differ".into(),
            ));
        }
        sgd_step(w, g, v, lr, momentum);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: MicroclassifierSpec,
    /// Mean loss over the examples visited in each (possibly partial) epoch.
    pub epoch_losses: Vec<f32>,
    /// Mean loss of every mini-batch, in order.
    pub batch_losses: Vec<f32>,
}

/// Train `spec` on `data`. Deterministic for a fixed `config.seed`.
pub fn train(
    spec: &MicroclassifierSpec,
    data: &LabeledFeatureSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.examples.is_empty() {
        return Err(Error::DegenerateData("no training examples".into()));
    }
    let positives = data.examples.iter().filter(|e| e.label).count();
    if positives == 0 || positives == data.examples.len() {
        return Err(Error::DegenerateData(format!(
            "both classes required, got {positives} positives of {}",
            data.examples.len()
        )));
    }
    let expected_inputs = if spec.arch == Architecture::Wlbc {
        spec.window
    } else {
        1
    };
    if let Some(bad) = data
        .examples
        .iter()
        .find(|e| e.inputs.len() != expected_inputs)
    {
        return Err(Error::InvalidInput(format!(
            "{} examples need {expected_inputs} maps each, found one with {}",
            spec.arch,
            bad.inputs.len()
        )));
    }

    let examples = scaled_examples(spec, data);
    let n = examples.len();
    let total = Float::round(config.epochs as f64 * n as f64) as usize;
    let mut rng = SplitMix64::new(config.seed);
    let mut weights = spec.weights.clone();
    let mut velocity = weights.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::new();
    let mut batch_losses = Vec::new();
    let mut visited = 0;
    while visited < total {
        rng.shuffle(&mut order);
        let this_epoch = (total - visited).min(n);
        let mut epoch_sum = 0.0f64;
        for batch in order[..this_epoch].chunks(config.batch_size) {
            let mut sum = weights.zeros_like();
            let mut loss_sum = 0.0f64;
            for &i in batch {
                let (loss, g) = loss_and_gradients(&weights, &examples[i])?;
                loss_sum += loss as f64;
                for (s, gv) in sum.params_mut().into_iter().zip(g.params()) {
                    add_into(s, gv);
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for s in sum.params_mut() {
                s.iter_mut().for_each(|v| *v *= scale);
            }
            sgd_update(&mut weights, &sum, &mut velocity, config)?;
            batch_losses.push((loss_sum / batch.len() as f64) as f32);
            epoch_sum += loss_sum;
        }
        epoch_losses.push((epoch_sum / this_epoch as f64) as f32);
        visited += this_epoch;
    }
    let mut trained = spec.clone();
    trained.weights = weights;
    Ok(TrainOutcome {
        spec: trained,
        epoch_losses,
        batch_losses,
    })
}

fn scaled_examples<'a>(
    spec: &MicroclassifierSpec,
    data: &'a LabeledFeatureSet,
) -> Cow<'a, [LabeledExample]> {
    if spec.input_scale == 1.0 {
        return Cow::Borrowed(&data.examples);
    }
    Cow::Owned(
        data.examples
            .iter()
            .map(|e| LabeledExample {
                inputs: e.inputs.iter().map(|t| t.scale(spec.input_scale)).collect(),
                label: e.label,
            })
            .collect(),
    )
}

/// Input scale that brings the training maps to unit root-mean-square.
/// Returns 1.0 for all-zero data.
pub fn calibrate_input_scale(data: &LabeledFeatureSet) -> f32 {
    let (mut sum, mut count) = (0.0f64, 0usize);
    for e in &data.examples {
        for &v in e.inputs[0].data() {
            sum += v as f64 * v as f64;
        }
        count += e.inputs[0].data().len();
    }
    if count == 0 || sum == 0.0 {
        return 1.0;
    }
    (1.0 / Float::sqrt(sum / count as f64)) as f32
}

/// Fraction of examples whose thresholded probability matches the label.
pub fn accuracy(spec: &MicroclassifierSpec, data: &LabeledFeatureSet) -> Result<f32> {
    if data.examples.is_empty() {
        return Err(Error::DegenerateData("no examples".into()));
    }
    let mut correct = 0usize;
    for e in scaled_examples(spec, data).iter() {
        let p = sigmoid(logit(&spec.weights, &e.inputs)?);
        if (p >= spec.threshold) == e.label {
            correct += 1;
        }
    }
    Ok(correct as f32 / data.examples.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microclassifier::McWidths;
    use crate::tensor::Shape;

    #[test]
    fn bce_values() {
        assert!((bce(0.5f64, true) - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0f64, true) < 1e-6);
        assert!((bce(0.0f64, true) - -(P_CLAMP.ln())).abs() < 1e-9);
        assert!(bce(1.0f64, false) <= -(P_CLAMP.ln()) + 1e-9);
    }

    #[test]
    fn sgd_single_step() {
        let mut w = [1.0f64];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.0);
        assert!((w[0] - 0.95).abs() < 1e-12);
        let mut w = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.9);
        assert_eq!(w, [1.0, -2.0]);
    }

    #[test]
    fn sgd_two_steps_with_momentum() {
        // v1 = -0.1*0.5 = -0.05, w1 = 0.95
        // v2 = 0.9*-0.05 - 0.1*0.2 = -0.065, w2 = 0.885
        let mut w = [1.0f64];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.9);
        sgd_step(&mut w, &[0.2], &mut v, 0.1, 0.9);
        assert!((v[0] + 0.065).abs() < 1e-12);
        assert!((w[0] - 0.885).abs() < 1e-12);
    }

    fn tiny_set(arch: Architecture) -> (MicroclassifierSpec, LabeledFeatureSet) {
        let shape = Shape::new(4, 4, 2);
        let widths = McWidths {
            ffod_hidden: alloc::vec![4],
            conv_filters: 3,
            wlbc_reduce: 2,
        };
        let weights = McWeights::init(arch, shape, &widths, 3, 5);
        let spec = MicroclassifierSpec {
            name: "t".into(),
            arch,
            tap: "conv1".into(),
            crop: None,
            weights,
            threshold: 0.5,
            window: 3,
            input_scale: 1.0,
        };
        let mut rng = SplitMix64::new(8);
        let n_in = if arch == Architecture::Wlbc { 3 } else { 1 };
        let examples = (0..6)
            .map(|i| LabeledExample {
                inputs: (0..n_in)
                    .map(|_| Tensor::from_fn(4, 4, 2, |_, _, _| rng.next_f64() as f32))
                    .collect(),
                label: i % 2 == 0,
            })
            .collect();
        (
            spec,
            LabeledFeatureSet {
                examples,
                tap: "conv1".into(),
                crop: None,
            },
        )
    }

    #[test]
    fn zero_epochs_leaves_weights() {
        let (spec, data) = tiny_set(Architecture::Lbc);
        let cfg = TrainConfig {
            epochs: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        assert_eq!(out.spec.weights, spec.weights);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        for arch in Architecture::ALL {
            let (spec, data) = tiny_set(arch);
            let cfg = TrainConfig {
                epochs: 2.5,
                batch_size: 4,
                seed: 3,
                ..TrainConfig::default()
            };
            let a = train(&spec, &data, &cfg).unwrap();
            let b = train(&spec, &data, &cfg).unwrap();
            let bits = |w: &McWeights| -> Vec<u32> {
                w.params()
                    .iter()
                    .flat_map(|p| p.iter().map(|v| v.to_bits()))
                    .collect()
            };
            assert_eq!(bits(&a.spec.weights), bits(&b.spec.weights));
            assert_eq!(a.epoch_losses.len(), 3);
            assert_ne!(bits(&a.spec.weights), bits(&spec.weights));
        }
    }

    #[test]
    fn single_class_rejected() {
        let (spec, mut data) = tiny_set(Architecture::Ffod);
        data.examples.iter_mut().for_each(|e| e.label = true);
        assert!(matches!(
            train(&spec, &data, &TrainConfig::default()),
            Err(Error::DegenerateData(_))
        ));
        data.examples.clear();
        assert!(matches!(
            train(&spec, &data, &TrainConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn loss_within_clamp_bounds() {
        for arch in Architecture::ALL {
            let (spec, data) = tiny_set(arch);
            let mut big = spec.weights.clone();
            for p in big.params_mut() {
                p.iter_mut().for_each(|v| *v *= 50.0);
            }
            for e in &data.examples {
                for w in [&spec.weights, &big] {
                    let (loss, _) = loss_and_gradients(w, e).unwrap();
                    assert!(
                        loss >= 0.0 && loss as f64 <= -(P_CLAMP.ln()) + 1e-3,
                        "{loss}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_scale_reaches_unit_rms_and_is_applied() {
        let (mut spec, mut data) = tiny_set(Architecture::Lbc);
        for e in data.examples.iter_mut() {
            for t in e.inputs.iter_mut() {
                *t = t.scale(1e-3);
            }
        }
        let s = calibrate_input_scale(&data);
        let scaled = data.examples[0].inputs[0].scale(s);
        let total: f64 = data
            .examples
            .iter()
            .flat_map(|e| e.inputs[0].data().iter())
            .map(|&v| (v as f64 * s as f64).powi(2))
            .sum();
        let count = data.examples.len() * scaled.data().len();
        assert!(((total / count as f64).sqrt() - 1.0).abs() < 1e-4);

        spec.input_scale = s;
        let direct = sigmoid(logit(&spec.weights, &[scaled]).unwrap());
        let via_spec = spec.scale_input(data.examples[0].inputs[0].clone());
        assert_eq!(sigmoid(logit(&spec.weights, &[via_spec]).unwrap()), direct);
    }
}
