//! Attack execution over many (pair, seed) jobs and their evaluation.

use gsm_forge_core::attack::{run_attack, run_attack_through, AttackConfig, AttackResult, GsmPair};
use gsm_forge_core::codec::{CodecModel, Image};
use gsm_forge_core::defense::{defended_reconstruction, JpegConfig, SoftJpeg};
use gsm_forge_core::diagnostics::residual_norm;
use gsm_forge_core::metrics::{linf, ms_ssim, psnr, MetricReport, DEFAULT_MS_SSIM_SCALES, SSIM_WINDOW};
use rayon::prelude::*;

use crate::error::Result;

pub const THREADS_ENV: &str = "GSM_FORGE_THREADS";

/// Worker count from `GSM_FORGE_THREADS`, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
pub struct Job {
    pub pair_id: usize,
    pub cfg: AttackConfig,
    /// Differentiate through soft JPEG with this configuration.
    pub through_jpeg: Option<JpegConfig>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub job: Job,
    pub result: std::result::Result<AttackResult, String>,
}

impl Outcome {
    pub fn status(&self) -> &'static str {
        match &self.result {
            Ok(r) if r.error.is_none() => "ok",
            Ok(_) => "aborted",
            Err(_) => "failed",
        }
    }
}

/// Runs every job; results come back in job order regardless of scheduling.
/// A failing job is recorded, never propagated.
pub fn run_jobs(model: &CodecModel, pairs: &[GsmPair], jobs: Vec<Job>, threads: usize) -> Vec<Outcome> {
    let one = |job: Job| {
        let result = match pairs.get(job.pair_id) {
            None => Err(format!("no pair {}", job.pair_id)),
            Some(pair) => {
                let stream = job.pair_id as u64;
                let attempt = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match &job.through_jpeg {
                    None => run_attack(model, pair, &job.cfg, stream),
                    Some(j) => run_attack_through(model, pair, &job.cfg, stream, Some(&SoftJpeg { cfg: *j })),
                }));
                match attempt {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(_) => Err("worker panicked".to_string()),
                }
            }
        };
        Outcome { job, result }
    };
    if threads <= 1 {
        return jobs.into_iter().map(one).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| jobs.into_par_iter().map(one).collect()),
        Err(_) => jobs.into_iter().map(one).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Residual of the deployed codec at the adversarial input.
    pub residual_norm: f64,
    pub reconstruction: Image,
}

/// Target-side metrics of `adversarial`; with `defense`, the codec sees the
/// hard-JPEG version of the input.
pub fn evaluate(model: &CodecModel, pair: &GsmPair, adversarial: &Image, defense: Option<&JpegConfig>) -> Result<Evaluation> {
    let reconstruction = match defense {
        Some(j) => defended_reconstruction(model, adversarial, j)?,
        None => model.reconstruct(adversarial)?,
    };
    let side = pair.target.height().min(pair.target.width());
    let scales = (1..=DEFAULT_MS_SSIM_SCALES).rev().find(|&s| side >= SSIM_WINDOW << (s - 1));
    let report = MetricReport {
        psnr_db: psnr(&reconstruction, &pair.target)?,
        ms_ssim: match scales {
            Some(s) => ms_ssim(&reconstruction, &pair.target, s)?,
            None => f64::NAN,
        },
        bpp: model.bpp(adversarial)?,
        delta_linf: linf(adversarial.tensor(), pair.source.tensor())?,
    };
    Ok(Evaluation { report, residual_norm: residual_norm(model, adversarial)?, reconstruction })
}
