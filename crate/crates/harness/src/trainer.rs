//! The `train` command: features from a stream (or cache), one classifier
//! trained on them, weights written out.

use filterforward_core::base::{frame_from_rgb8, BaseNetwork, FeatureMapSet};
use filterforward_core::microclassifier::{Architecture, McWidths, MicroclassifierSpec};
use filterforward_core::tensor::CropRect;
use filterforward_core::train::{
    accuracy, calibrate_input_scale, train, LabeledFeatureSet, TrainConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Context, Error, Result};
use crate::features::{self, FeatureCacheWriter};
use crate::pipeline::build_base;
use crate::stream::StreamReader;
use crate::{csvio, weights};

const EXTRACT_BATCH: usize = 64;

/// Base-network features of every frame of `stream`, keeping only `tap`.
pub fn extract_tap(
    net: &BaseNetwork,
    stream: &std::path::Path,
    tap: &str,
) -> Result<Vec<FeatureMapSet>> {
    let mut reader = StreamReader::open(stream)?;
    let header = reader.header();
    if (header.height as usize, header.width as usize) != net.input_dims() {
        return Err(Error::format(
            stream,
            format!(
                "frames are {}x{}, network expects {:?}",
                header.height,
                header.width,
                net.input_dims()
            ),
        ));
    }
    let (h, w) = net.input_dims();
    let mut out = Vec::with_capacity(header.frame_count as usize);
    let mut buf = Vec::new();
    loop {
        let mut raw = Vec::with_capacity(EXTRACT_BATCH);
        while raw.len() < EXTRACT_BATCH && reader.next_frame(&mut buf)? {
            raw.push(buf.clone());
        }
        if raw.is_empty() {
            return Ok(out);
        }
        let first = out.len() as u64;
        let batch = raw
            .par_iter()
            .enumerate()
            .map(|(i, rgb)| {
                let mut f = net.extract_frame(first + i as u64, &frame_from_rgb8(h, w, rgb)?)?;
                f.maps.retain(|(n, _)| n == tap);
                Ok(f)
            })
            .collect::<Result<Vec<_>, filterforward_core::Error>>()
            .context(|| format!("{}", stream.display()))?;
        out.extend(batch);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub name: String,
    pub arch: &'static str,
    pub tap: String,
    pub train_examples: usize,
    pub holdout_examples: usize,
    pub input_scale: f32,
    pub final_loss: Option<f32>,
    pub train_accuracy: f32,
    pub holdout_accuracy: Option<f32>,
    pub output: String,
}

fn split(data: LabeledFeatureSet, holdout: f64) -> (LabeledFeatureSet, LabeledFeatureSet) {
    let n = data.examples.len();
    let held = (n as f64 * holdout).floor() as usize;
    let mut train_set = data;
    let test = LabeledFeatureSet {
        examples: train_set.examples.split_off(n - held),
        tap: train_set.tap.clone(),
        crop: train_set.crop,
    };
    (train_set, test)
}

pub fn run(cfg: &Config) -> Result<TrainReport> {
    let t = cfg.require(&cfg.train, "train")?;
    let arch = cfg.train_arch()?;
    let net = build_base(cfg)?;
    let tap = t
        .tap
        .clone()
        .unwrap_or_else(|| arch.default_tap(net.depth()));
    if net.tap_index(&tap).is_none() {
        return Err(Error::config(
            &cfg.source,
            format!("train.tap: network has no tap {tap:?}"),
        ));
    }
    let labels = csvio::read_labels(&t.labels)?;

    let feats = match (&t.features, &t.stream) {
        (Some(cache), _) if cache.exists() => features::load(cache, Some(&[tap.as_str()]))?.1,
        (cache, Some(stream)) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers()?)
                .build()
                .map_err(|e| Error::Usage(e.to_string()))?;
            let feats = pool.install(|| extract_tap(&net, stream, &tap))?;
            if let Some(cache) = cache {
                let shape = net.tap_shape(&tap).expect("tap checked");
                let mut w =
                    FeatureCacheWriter::create(cache, &[(tap.clone(), shape)], feats.len() as u32)?;
                for f in &feats {
                    w.write(f)?;
                }
                w.finish()?;
            }
            feats
        }
        (Some(cache), None) => {
            return Err(Error::config(
                &cfg.source,
                format!("train.features: {} missing and no stream", cache.display()),
            ))
        }
        (None, None) => unreachable!("validated"),
    };
    if feats.len() != labels.len() {
        return Err(Error::format(
            &t.labels,
            format!("{} labels for {} frames", labels.len(), feats.len()),
        ));
    }

    let crop = t.crop.map(|[r0, c0, r1, c1]| CropRect::new(r0, c0, r1, c1));
    let window = if arch == Architecture::Wlbc {
        t.window
    } else {
        1
    };
    let data = LabeledFeatureSet::windows(&feats, &labels, &tap, crop, window)
        .context(|| "training examples".into())?;
    drop(feats);
    let (train_set, test_set) = split(data, t.holdout);

    let mut spec = MicroclassifierSpec::init(
        &t.name,
        arch,
        &tap,
        crop,
        t.window,
        &net,
        &McWidths::default(),
        t.init_seed,
    )
    .context(|| "train".into())?;
    if t.calibrate_input_scale {
        spec.input_scale = calibrate_input_scale(&train_set);
    }
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
        momentum: t.momentum.unwrap_or(defaults.momentum),
        epochs: t.epochs.unwrap_or(defaults.epochs),
        batch_size: t.batch_size.unwrap_or(defaults.batch_size),
        seed: t.seed.unwrap_or(defaults.seed),
    };
    let outcome = train(&spec, &train_set, &tc).context(|| "train".into())?;
    let mut spec = outcome.spec;
    if let Some(th) = t.threshold {
        spec.threshold = th;
    }
    let train_accuracy = accuracy(&spec, &train_set).context(|| "train accuracy".into())?;
    let holdout_accuracy = if test_set.examples.is_empty() {
        None
    } else {
        Some(accuracy(&spec, &test_set).context(|| "holdout accuracy".into())?)
    };
    weights::save(&t.output, &spec)?;
    Ok(TrainReport {
        name: spec.name.clone(),
        arch: arch.as_str(),
        tap,
        train_examples: train_set.examples.len(),
        holdout_examples: test_set.examples.len(),
        input_scale: spec.input_scale,
        final_loss: outcome.epoch_losses.last().copied(),
        train_accuracy,
        holdout_accuracy,
        output: t.output.display().to_string(),
    })
}
