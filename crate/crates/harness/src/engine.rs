//! Batched two-phase execution shared by `run` and `bench`.
//!
//! Each batch runs the frame models first (the shared base network, or
//! every per-task model in the baseline modes), joins, and only then runs
//! the per-task classifiers. Work inside a phase is spread over the current
//! rayon pool.

use std::sync::{Arc, Mutex};

use filterforward_core::base::{BaseNetwork, FeatureMapSet};
use filterforward_core::baseline::{DiscreteClassifier, FullDnnFilter};
use filterforward_core::microclassifier::{
    forward_ffod, forward_lbc, wlbc_flush, wlbc_push, Architecture, Deployment, FrameVerdict,
    MicroclassifierSpec, WindowState,
};
use filterforward_core::{Error as CoreError, Tensor};
use rayon::prelude::*;

use crate::config::Mode;
use crate::error::{Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    FrameModel,
    Classifier,
}

/// Records one entry per unit of work so a test can check that phases never
/// overlap.
#[derive(Debug, Default)]
pub struct PhaseLog {
    entries: Mutex<Vec<(u64, Phase)>>,
}

impl PhaseLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, batch: u64, phase: Phase) {
        self.entries
            .lock()
            .expect("phase log poisoned")
            .push((batch, phase));
    }

    pub fn entries(&self) -> Vec<(u64, Phase)> {
        self.entries.lock().expect("phase log poisoned").clone()
    }

    /// Batches appear in order and, within a batch, no frame-model entry
    /// follows a classifier entry.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mut current = None;
        let mut classifying = false;
        for (i, &(batch, phase)) in self.entries().iter().enumerate() {
            match current {
                Some(c) if batch < c => {
                    return Err(format!("entry {i}: batch {batch} after batch {c}"))
                }
                Some(c) if batch == c => {}
                _ => {
                    current = Some(batch);
                    classifying = false;
                }
            }
            match phase {
                Phase::Classifier => classifying = true,
                Phase::FrameModel if classifying => {
                    return Err(format!(
                        "entry {i}: frame model ran after classifiers in batch {batch}"
                    ))
                }
                Phase::FrameModel => {}
            }
        }
        Ok(())
    }
}

fn log(log: Option<&PhaseLog>, batch: u64, phase: Phase) {
    if let Some(l) = log {
        l.record(batch, phase);
    }
}

/// A per-task filter in filterforward mode.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Classifier {
    Model {
        spec: MicroclassifierSpec,
        state: Option<WindowState>,
    },
    /// Test hook: answers with the ground-truth label of each frame.
    Oracle { name: String, labels: Arc<[bool]> },
}

impl Classifier {
    pub fn name(&self) -> &str {
        match self {
            Classifier::Model { spec, .. } => &spec.name,
            Classifier::Oracle { name, .. } => name,
        }
    }

    fn classify(&mut self, feats: &[FeatureMapSet]) -> Result<Vec<FrameVerdict>, CoreError> {
        let mut out = Vec::with_capacity(feats.len());
        match self {
            Classifier::Model { spec, state } => {
                for f in feats {
                    let input = spec.prepare_input(f)?;
                    match spec.arch {
                        Architecture::Ffod => out.push(forward_ffod(spec, &input, f.frame_index)?),
                        Architecture::Lbc => out.push(forward_lbc(spec, &input, f.frame_index)?),
                        Architecture::Wlbc => {
                            let st = state.get_or_insert_with(|| WindowState::new(spec.window));
                            out.extend(wlbc_push(spec, st, &input, f.frame_index)?);
                        }
                    }
                }
            }
            Classifier::Oracle { name, labels } => {
                for f in feats {
                    let label = *labels.get(f.frame_index as usize).ok_or_else(|| {
                        CoreError::InvalidInput(format!("no label for frame {}", f.frame_index))
                    })?;
                    out.push(FrameVerdict {
                        frame_index: f.frame_index,
                        mc_name: name.clone(),
                        probability: if label { 1.0 } else { 0.0 },
                        positive: label,
                    });
                }
            }
        }
        Ok(out)
    }

    fn finish(&mut self) -> Result<Vec<FrameVerdict>, CoreError> {
        match self {
            Classifier::Model {
                spec,
                state: Some(st),
            } => wlbc_flush(spec, st),
            _ => Ok(Vec::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Engine {
    FilterForward {
        net: BaseNetwork,
        classifiers: Vec<Classifier>,
    },
    Discrete {
        filters: Vec<(String, DiscreteClassifier)>,
    },
    FullDnn {
        filters: Vec<(String, FullDnnFilter)>,
    },
}

impl Engine {
    /// Shared-base engine. Model specs are validated against `net` and names
    /// must be unique.
    pub fn filterforward(net: BaseNetwork, classifiers: Vec<Classifier>) -> Result<Self> {
        let specs = classifiers
            .iter()
            .filter_map(|c| match c {
                Classifier::Model { spec, .. } => Some(spec.clone()),
                Classifier::Oracle { .. } => None,
            })
            .collect();
        Deployment::new(specs, &net).context(|| "microclassifiers".into())?;
        let mut names: Vec<&str> = classifiers.iter().map(Classifier::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CoreError::SpecRejected {
                field: "name",
                message: format!("duplicate classifier name {:?}", w[0]),
            })
            .context(|| "microclassifiers".into());
        }
        Ok(Engine::FilterForward { net, classifiers })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Engine::FilterForward { .. } => Mode::Filterforward,
            Engine::Discrete { .. } => Mode::Discrete,
            Engine::FullDnn { .. } => Mode::FullDnn,
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Engine::FilterForward { classifiers, .. } => {
                classifiers.iter().map(|c| c.name().to_string()).collect()
            }
            Engine::Discrete { filters } => filters.iter().map(|(n, _)| n.clone()).collect(),
            Engine::FullDnn { filters } => filters.iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    /// Run one batch whose first frame has index `first`. Returns, per
    /// classifier, the verdicts that became available (windowed classifiers
    /// lag by half a window).
    pub fn process_batch(
        &mut self,
        batch: u64,
        first: u64,
        frames: &[Tensor],
        phases: Option<&PhaseLog>,
    ) -> Result<Vec<Vec<FrameVerdict>>> {
        let ctx = || format!("batch {batch} (frames from {first})");
        match self {
            Engine::FilterForward { net, classifiers } => {
                let feats = frames
                    .par_iter()
                    .enumerate()
                    .map(|(i, f)| {
                        log(phases, batch, Phase::FrameModel);
                        net.extract_frame(first + i as u64, f)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .context(ctx)?;
                classifiers
                    .par_iter_mut()
                    .map(|c| {
                        log(phases, batch, Phase::Classifier);
                        c.classify(&feats)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .context(ctx)
            }
            Engine::Discrete { filters } => {
                let n = frames.len();
                let trunks = (0..filters.len() * n)
                    .into_par_iter()
                    .map(|k| {
                        log(phases, batch, Phase::FrameModel);
                        filters[k / n].1.trunk(&frames[k % n])
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .context(ctx)?;
                filters
                    .par_iter()
                    .zip(trunks.par_chunks(n.max(1)))
                    .map(|((name, dc), maps)| {
                        log(phases, batch, Phase::Classifier);
                        maps.iter()
                            .enumerate()
                            .map(|(i, m)| {
                                let p = dc.head(m)?;
                                Ok(FrameVerdict {
                                    frame_index: first + i as u64,
                                    mc_name: name.clone(),
                                    probability: p,
                                    positive: p >= dc.threshold,
                                })
                            })
                            .collect()
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .context(ctx)
            }
            Engine::FullDnn { filters } => {
                let n = frames.len();
                let deepest = (0..filters.len() * n)
                    .into_par_iter()
                    .map(|k| {
                        log(phases, batch, Phase::FrameModel);
                        let i = k % n;
                        let mut maps = filters[k / n]
                            .1
                            .base
                            .extract_frame(first + i as u64, &frames[i])?;
                        Ok(maps.maps.pop().expect("non-empty network").1)
                    })
                    .collect::<Result<Vec<_>, CoreError>>()
                    .context(ctx)?;
                filters
                    .par_iter()
                    .zip(deepest.par_chunks(n.max(1)))
                    .map(|((name, f), maps)| {
                        log(phases, batch, Phase::Classifier);
                        maps.iter()
                            .enumerate()
                            .map(|(i, m)| {
                                let p = f.head(m)?;
                                Ok(FrameVerdict {
                                    frame_index: first + i as u64,
                                    mc_name: name.clone(),
                                    probability: p,
                                    positive: p >= 0.5,
                                })
                            })
                            .collect()
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .context(ctx)
            }
        }
    }

    /// End of stream: the verdicts windowed classifiers still owe.
    pub fn finish(&mut self) -> Result<Vec<Vec<FrameVerdict>>> {
        match self {
            Engine::FilterForward { classifiers, .. } => classifiers
                .iter_mut()
                .map(Classifier::finish)
                .collect::<Result<Vec<_>, _>>()
                .context(|| "end of stream".into()),
            Engine::Discrete { filters } => Ok(vec![Vec::new(); filters.len()]),
            Engine::FullDnn { filters } => Ok(vec![Vec::new(); filters.len()]),
        }
    }
}
