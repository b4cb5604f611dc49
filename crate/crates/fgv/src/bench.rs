//! Forward-pass throughput over in-memory synthetic batches.
//!
//! Inputs are rendered and preprocessed before the clock starts; only
//! forward passes (and, for the pipeline, its own crop/resize stage) are
//! timed. Each runner gets [`WARMUP_BATCHES`] untimed batches first. When
//! several runners are compared they are timed in interleaved rounds so
//! slow drift in machine load hits all of them alike.

use std::time::{Duration, Instant};

use fgv_core::image::{to_tensor, RgbImage};
use fgv_core::model::Model;
use fgv_core::nn::BnMode;
use fgv_core::pipeline::{BoxSource, Pipeline};
use fgv_core::preprocess::{preprocess_eval_center, PreprocessConfig};
use fgv_core::{Tape, Tensor};

use crate::Result;

pub const MIN_IMAGES: usize = 10_000;
pub const WARMUP_BATCHES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchLine {
    pub label: String,
    pub batch: usize,
    pub images: usize,
    pub seconds: f64,
}

impl BenchLine {
    pub fn fps(&self) -> f64 {
        self.images as f64 / self.seconds
    }
}

impl std::fmt::Display for BenchLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} batch={} images={} seconds={:.3} fps={:.1}",
            self.label,
            self.batch,
            self.images,
            self.seconds,
            self.fps()
        )
    }
}

/// Runs batch `k` of a workload.
pub type BatchFn<'a> = Box<dyn FnMut(usize) -> Result<()> + 'a>;

/// One timed workload processing `batch` images per call.
pub struct Runner<'a> {
    pub label: String,
    pub batch: usize,
    pub run: BatchFn<'a>,
}

impl<'a> Runner<'a> {
    pub fn new(label: impl Into<String>, batch: usize, run: BatchFn<'a>) -> Self {
        Runner {
            label: label.into(),
            batch: batch.max(1),
            run,
        }
    }
}

/// Times each runner over at least `images` images. Runners take turns in
/// `rounds` interleaved chunks, whatever their batch sizes.
pub fn measure(runners: Vec<Runner<'_>>, images: usize, rounds: usize) -> Result<Vec<BenchLine>> {
    let mut runners: Vec<(Runner<'_>, usize, Duration)> = runners
        .into_iter()
        .map(|r| {
            let n = images.div_ceil(r.batch).max(1);
            (r, n, Duration::ZERO)
        })
        .collect();
    let fewest = runners.iter().map(|r| r.1).min().unwrap_or(1);
    let rounds = rounds.clamp(1, fewest);
    for (r, _, _) in runners.iter_mut() {
        for k in 0..WARMUP_BATCHES {
            (r.run)(k)?;
        }
    }
    for round in 0..rounds {
        for (r, n, total) in runners.iter_mut() {
            let (start, end) = (*n * round / rounds, *n * (round + 1) / rounds);
            let t = Instant::now();
            for k in start..end {
                (r.run)(WARMUP_BATCHES + k)?;
            }
            *total += t.elapsed();
        }
    }
    Ok(runners
        .into_iter()
        .map(|(r, n, total)| BenchLine {
            label: r.label,
            batch: r.batch,
            images: n * r.batch,
            seconds: total.as_secs_f64().max(1e-9),
        })
        .collect())
}

/// Infer-mode forward of one batch, discarding the outputs.
pub fn forward_only(model: &Model<f32>, x: &Tensor<f32>) -> Result<()> {
    let mut tape = Tape::unchecked().inference();
    let xv = tape.leaf(x);
    model.forward(&mut tape, xv, BnMode::Infer)?;
    Ok(())
}

/// Central-crop batches cycling over `pool`.
pub fn model_batches(pool: &[RgbImage], input: usize, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let cfg = PreprocessConfig::for_input(input);
    let crops = pool
        .iter()
        .map(|img| preprocess_eval_center(img, &cfg).map(|(c, _)| c))
        .collect::<Result<Vec<_>, _>>()?;
    let n = crops.len().max(1).div_ceil(batch).max(1);
    (0..n)
        .map(|b| {
            let refs: Vec<&RgbImage> = (0..batch).map(|i| &crops[(b * batch + i) % crops.len()]).collect();
            Ok(to_tensor(&refs)?)
        })
        .collect()
}

/// A runner that forwards pre-built batches through `model`.
pub fn model_runner<'a>(model: &'a Model<f32>, batches: &'a [Tensor<f32>]) -> BatchFn<'a> {
    Box::new(move |k| forward_only(model, &batches[k % batches.len()]))
}

/// A runner that pushes raw images through both pipeline stages.
pub fn pipeline_runner<'a>(pipeline: Pipeline<'a, f32>, pool: &'a [RgbImage], batch: usize) -> BatchFn<'a> {
    Box::new(move |k| {
        let refs: Vec<&RgbImage> = (0..batch).map(|i| &pool[(k * batch + i) % pool.len()]).collect();
        pipeline.run(&refs, BoxSource::Localiser)?;
        Ok(())
    })
}

/// Hardware and config lines printed ahead of the FPS table.
pub fn echo_lines(extra: &[(&str, String)]) -> Vec<String> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut v = vec![
        format!("host: {} {} threads={threads}", std::env::consts::OS, std::env::consts::ARCH),
        format!("warmup_batches: {WARMUP_BATCHES}"),
    ];
    v.extend(extra.iter().map(|(k, val)| format!("{k}: {val}")));
    v
}
