//! Central finite-difference verification of the training gradients.

use filterforward_core::microclassifier::{Architecture, McWeights, McWidths};
use filterforward_core::rng::SplitMix64;
use filterforward_core::tensor::{conv2d, depth_concat, relu, separable_conv2d, Shape, Tensor};
use filterforward_core::train::{bce, logit, loss_and_gradients, LabeledExample};

pub const EPS: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Components where both gradients are below this are treated as zero.
pub const ZERO_FLOOR: f64 = 1e-10;
/// Required distance of every relu input from 0 and of the runner-up logit
/// from the max, so an EPS step cannot cross a kink.
const MARGIN: f64 = 0.05;

pub const WINDOW: usize = 3;

fn widths() -> McWidths {
    McWidths {
        ffod_hidden: vec![4],
        conv_filters: 3,
        wlbc_reduce: 2,
    }
}

fn min_abs(t: &Tensor<f64>) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Smallest distance of any kink input from its kink for this instance.
fn kink_margin(w: &McWeights<f64>, inputs: &[Tensor<f64>]) -> f64 {
    match w {
        McWeights::Ffod { layers } => {
            let mut x = conv2d(&inputs[0], &layers[0]).unwrap();
            let mut m = f64::INFINITY;
            for l in &layers[1..] {
                m = m.min(min_abs(&x));
                x = conv2d(&relu(&x), l).unwrap();
            }
            let mut v: Vec<f64> = x.data().to_vec();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if v.len() > 1 {
                m = m.min(v[0] - v[1]);
            }
            m
        }
        McWeights::Lbc { sep1, sep2, .. } => {
            let a = separable_conv2d(&inputs[0], sep1).unwrap();
            let b = separable_conv2d(&relu(&a), sep2).unwrap();
            min_abs(&a).min(min_abs(&b))
        }
        McWeights::Wlbc { reduce, sep, .. } => {
            let pre: Vec<Tensor<f64>> = inputs.iter().map(|x| conv2d(x, reduce).unwrap()).collect();
            let post: Vec<Tensor<f64>> = pre.iter().map(relu).collect();
            let refs: Vec<&Tensor<f64>> = post.iter().collect();
            let s = separable_conv2d(&depth_concat(&refs).unwrap(), sep).unwrap();
            pre.iter().fold(min_abs(&s), |m, p| m.min(min_abs(p)))
        }
    }
}

fn loss(w: &McWeights<f64>, ex: &LabeledExample<f64>) -> f64 {
    let z = logit(w, &ex.inputs).unwrap();
    bce(1.0 / (1.0 + (-z).exp()), ex.label)
}

pub struct GradReport {
    pub seed: u64,
    pub components: usize,
    pub max_rel_err: f64,
}

/// Find a kink-free tiny instance for `arch` starting at `seed` and compare
/// every analytic gradient component with a central difference.
pub fn check(arch: Architecture, seed: u64) -> GradReport {
    let shape = Shape::new(4, 4, 2);
    let window = if arch == Architecture::Wlbc {
        WINDOW
    } else {
        1
    };
    let mut s = seed;
    let (weights, example) = loop {
        let mut rng = SplitMix64::new(s);
        let w: McWeights<f64> = McWeights::init(arch, shape, &widths(), window, s).cast();
        let inputs: Vec<Tensor<f64>> = (0..window)
            .map(|_| Tensor::from_fn(4, 4, 2, |_, _, _| rng.uniform(-1.0, 1.0)))
            .collect();
        let ex = LabeledExample {
            inputs,
            label: rng.below(2) == 1,
        };
        if kink_margin(&w, &ex.inputs) > MARGIN {
            break (w, ex);
        }
        s = s.wrapping_add(1);
    };
    let (_, grads) = loss_and_gradients(&weights, &example).unwrap();
    let analytic: Vec<f64> = grads
        .params()
        .iter()
        .flat_map(|p| p.iter().copied())
        .collect();
    let mut probe = weights.clone();
    let mut k = 0;
    let mut worst = 0.0f64;
    let blocks = probe.params().iter().map(|p| p.len()).collect::<Vec<_>>();
    for (b, len) in blocks.into_iter().enumerate() {
        for i in 0..len {
            let orig = probe.params()[b][i];
            probe.params_mut()[b][i] = orig + EPS;
            let up = loss(&probe, &example);
            probe.params_mut()[b][i] = orig - EPS;
            let down = loss(&probe, &example);
            probe.params_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[k];
            let scale = a.abs().max(numeric.abs());
            if scale > ZERO_FLOOR {
                worst = worst.max((a - numeric).abs() / scale);
            }
            k += 1;
        }
    }
    GradReport {
        seed: s,
        components: k,
        max_rel_err: worst,
    }
}
