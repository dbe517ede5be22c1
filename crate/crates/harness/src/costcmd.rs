//! The `cost` command: per-layer multiply-adds of one model.

use std::fmt::Write as _;
use std::path::Path;

use filterforward_core::baseline::FullDnnFilter;
use filterforward_core::cost::{break_even, model_cost, BreakEven, CostBreakdown, Model};
use filterforward_core::microclassifier::{Architecture, MicroclassifierSpec};

use crate::config::Config;
use crate::error::{Context, Result};
use crate::pipeline::{build_base, build_discrete};
use crate::weights;

#[derive(Debug, Clone)]
pub struct CostSummary {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub breakdown: CostBreakdown,
    /// Set for microclassifiers.
    pub marginal: Option<Marginal>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub base: u64,
    pub discrete: u64,
    /// Discrete classifier cost over this classifier's cost.
    pub ratio_vs_discrete: f64,
    pub break_even: BreakEven,
}

/// `model` is a weight file path or one of `base`, `discrete`, `full-dnn`,
/// `ffod`, `lbc`, `wlbc` (freshly initialised on its default tap).
pub fn run(cfg: &Config, model: &str, dims: Option<(usize, usize)>) -> Result<CostSummary> {
    let (height, width) = dims.unwrap_or((cfg.base.height as usize, cfg.base.width as usize));
    let net = build_base(cfg)?;
    let ctx = || format!("cost of {model} at {height}x{width}");
    let dc = build_discrete(cfg, 1)?.pop().expect("one classifier").1;
    let dc_cost = model_cost(Model::Discrete(&dc), height, width)
        .context(ctx)?
        .total();
    let base_cost = model_cost(Model::Base(&net), height, width)
        .context(ctx)?
        .total();

    let spec: Option<MicroclassifierSpec> = match model {
        "base" | "discrete" | "full-dnn" => None,
        name => Some(match name.parse::<Architecture>() {
            Ok(arch) => {
                MicroclassifierSpec::init_default(arch.as_str(), arch, &net, 0).context(ctx)?
            }
            Err(_) => weights::load(Path::new(name))?,
        }),
    };
    let breakdown = match (model, &spec) {
        ("base", _) => model_cost(Model::Base(&net), height, width),
        ("discrete", _) => model_cost(Model::Discrete(&dc), height, width),
        ("full-dnn", _) => {
            let f = FullDnnFilter::with_base(net.clone()).context(ctx)?;
            model_cost(Model::FullDnn(&f), height, width)
        }
        (_, Some(spec)) => model_cost(Model::Microclassifier(spec, &net), height, width),
        (_, None) => unreachable!(),
    }
    .context(ctx)?;
    let marginal = spec.map(|_| {
        let mc = breakdown.total();
        Marginal {
            base: base_cost,
            discrete: dc_cost,
            ratio_vs_discrete: dc_cost as f64 / mc as f64,
            break_even: break_even(base_cost, mc, dc_cost),
        }
    });
    Ok(CostSummary {
        model: model.into(),
        height,
        width,
        breakdown,
        marginal,
    })
}

impl CostSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model {} at {}x{}", self.model, self.height, self.width);
        for l in &self.breakdown.layers {
            let _ = writeln!(s, "  {:<10} {:>16}", l.name, l.multiply_adds);
        }
        let _ = writeln!(s, "  {:<10} {:>16}", "total", self.breakdown.total());
        if let Some(m) = &self.marginal {
            let _ = writeln!(s, "base network {}", m.base);
            let _ = writeln!(s, "discrete classifier {}", m.discrete);
            let _ = writeln!(s, "marginal ratio vs discrete {:.2}x", m.ratio_vs_discrete);
            match m.break_even {
                BreakEven::At(n) => {
                    let _ = writeln!(s, "break-even at {n} classifiers");
                }
                BreakEven::Never => {
                    let _ = writeln!(s, "break-even never");
                }
            }
        }
        s
    }
}
