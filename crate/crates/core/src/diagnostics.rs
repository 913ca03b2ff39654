//! Instruments for reading attack dynamics: lazy cosine similarity,
//! reconstruction residual, identity/amplification labelling, the
//! amplification-region check for successful attacks, and stage
//! segmentation of LCS trajectories.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::attack::{lazy_perturbation, GsmPair};
use crate::codec::{CodecModel, Image, Quantizer};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::tensor::Tensor;

/// Norms below this make a cosine similarity undefined.
pub const NORM_EPS: f64 = 1e-12;

/// One attack iteration, evaluated at the iterate `delta^(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub alpha_t: f64,
    pub objective: f64,
    /// `None` when either the perturbation or the lazy perturbation vanishes.
    pub lcs: Option<f64>,
    pub residual_norm: f64,
    pub delta_linf: f64,
}

pub const TRAJECTORY_HEADER: &str = "t,alpha,objective,lcs,residual_norm,delta_linf";

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_trajectory_csv<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> io::Result<()> {
    let mut buf = String::with_capacity(64 * (records.len() + 1));
    buf.push_str(TRAJECTORY_HEADER);
    buf.push('\n');
    for r in records {
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{}",
            r.t,
            fmt_real(r.alpha_t),
            fmt_real(r.objective),
            fmt_real(r.lcs.unwrap_or(f64::NAN)),
            fmt_real(r.residual_norm),
            fmt_real(r.delta_linf)
        );
    }
    out.write_all(buf.as_bytes())
}

/// Cosine similarity between `delta` and an already-computed lazy perturbation.
pub fn cosine(delta: &Tensor, lazy: &Tensor) -> Option<f64> {
    let (nd, nl) = (delta.norm_l2(), lazy.norm_l2());
    if nd < NORM_EPS || nl < NORM_EPS {
        return None;
    }
    Some((delta.dot(lazy) / (nd * nl)).clamp(-1.0, 1.0))
}

/// Lazy cosine similarity of `delta` for the pair `(x_p, x_q)` at budget `epsilon`.
pub fn lcs(delta: &Tensor, x_p: &Image, x_q: &Image, epsilon: f64) -> Result<Option<f64>> {
    delta.expect_shape(x_p.tensor(), "lcs perturbation vs source")?;
    let lazy = lazy_perturbation(x_p, x_q, epsilon)?;
    Ok(cosine(delta, &lazy))
}

/// `||f(x) - x||_2` of the deployed (hard-quantized) codec.
pub fn residual_norm(model: &CodecModel, x: &Image) -> Result<f64> {
    let out = model.forward(x, &mut Quantizer::Hard)?;
    Ok(out
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionLabel {
    Identity,
    Amplification,
}

/// Identity iff `eta <= eta0`.
pub fn classify_region(eta: f64, eta0: f64) -> RegionLabel {
    if eta <= eta0 {
        RegionLabel::Identity
    } else {
        RegionLabel::Amplification
    }
}

/// `eta0` as a multiple of the median clean-image residual.
pub fn eta0_from_clean(model: &CodecModel, clean: &[Image], multiple: f64) -> Result<f64> {
    if clean.is_empty() {
        return Err(Error::invalid("no clean images to calibrate eta0"));
    }
    let mut etas = clean.iter().map(|x| residual_norm(model, x)).collect::<Result<Vec<_>>>()?;
    etas.sort_by(f64::total_cmp);
    let n = etas.len();
    let median = if n % 2 == 1 { etas[n / 2] } else { 0.5 * (etas[n / 2 - 1] + etas[n / 2]) };
    Ok(multiple * median)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LemmaVerdict {
    /// The attack did not reach the success threshold; nothing to check.
    Vacuous,
    /// Successful and in the amplification region.
    Holds,
    /// Successful yet labelled identity.
    Violated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaReport {
    pub target_psnr: f64,
    pub residual_norm: f64,
    pub eta0: f64,
    /// `||x_q - x_p||_2` for scale.
    pub pair_distance: f64,
    pub region: RegionLabel,
    pub verdict: LemmaVerdict,
}

/// Checks that an attack reaching `success_threshold_psnr` against the
/// target has left the identity region.
pub fn check_lemma1(
    model: &CodecModel,
    pair: &GsmPair,
    adversarial: &Image,
    success_threshold_psnr: f64,
    eta0: f64,
) -> Result<LemmaReport> {
    let recon = model.reconstruct(adversarial)?;
    let target_psnr = psnr(&recon, &pair.target)?;
    let eta = residual_norm(model, adversarial)?;
    let region = classify_region(eta, eta0);
    let verdict = if target_psnr < success_threshold_psnr {
        LemmaVerdict::Vacuous
    } else if region == RegionLabel::Amplification {
        LemmaVerdict::Holds
    } else {
        LemmaVerdict::Violated
    };
    let pair_distance = pair
        .target
        .data()
        .iter()
        .zip(pair.source.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(LemmaReport { target_psnr, residual_norm: eta, eta0, pair_distance, region, verdict })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageParams {
    pub window: usize,
    pub oscillating_fraction: f64,
    pub refining_fraction: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        StageParams { window: 5, oscillating_fraction: 0.6, refining_fraction: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSegmentation {
    pub lazying_end: usize,
    pub oscillating_end: usize,
    pub refining_detected: bool,
    /// `(t, smoothed LCS)` at the maximum.
    pub lcs_acme: (usize, f64),
    pub final_smoothed: f64,
}

/// Trailing moving average over the defined LCS values, indexed by record.
/// Undefined entries carry the previous smoothed value forward.
pub fn smoothed_lcs(trajectory: &[TrajectoryRecord], window: usize) -> Result<Vec<f64>> {
    if trajectory.iter().all(|r| r.lcs.is_none()) {
        return Err(Error::invalid("trajectory has no defined LCS values"));
    }
    let window = window.max(1);
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(window);
    let mut out = Vec::with_capacity(trajectory.len());
    let first = trajectory.iter().find_map(|r| r.lcs).expect("checked above");
    let mut last = first;
    for r in trajectory {
        if let Some(v) = r.lcs {
            if recent.len() == window {
                recent.pop_front();
            }
            recent.push_back(v);
            // Offsetting by the oldest value keeps a constant window exact.
            let base = recent[0];
            last = base + recent.iter().map(|x| x - base).sum::<f64>() / recent.len() as f64;
        }
        out.push(last);
    }
    Ok(out)
}

/// Splits an LCS trajectory into lazying / oscillating / refining stages.
/// Stage boundaries are reported as `t` values; `T` is one past the last record.
pub fn segment_stages(trajectory: &[TrajectoryRecord], params: &StageParams) -> Result<StageSegmentation> {
    if trajectory.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let smooth = smoothed_lcs(trajectory, params.window)?;
    let (acme_idx, acme) = smooth
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let end_t = trajectory.last().expect("non-empty").t + 1;
    let osc_idx = (acme_idx + 1..smooth.len()).find(|&i| smooth[i] < params.oscillating_fraction * acme);
    let oscillating_end = osc_idx.map_or(end_t, |i| trajectory[i].t);
    let final_smoothed = *smooth.last().expect("non-empty");
    let refining_detected = oscillating_end < end_t && final_smoothed < params.refining_fraction * acme;
    Ok(StageSegmentation {
        lazying_end: trajectory[acme_idx].t,
        oscillating_end,
        refining_detected,
        lcs_acme: (trajectory[acme_idx].t, acme),
        final_smoothed,
    })
}
