use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AttackConfig;
use crate::autodiff::{Graph, Var};
use crate::codec::{CodecModel, Image, Quantizer};
use crate::diagnostics::{cosine, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source image to perturb and target the reconstruction should match.
#[derive(Clone, Debug, PartialEq)]
pub struct GsmPair {
    pub source: Image,
    pub target: Image,
}

impl GsmPair {
    pub fn new(source: Image, target: Image) -> Result<Self> {
        source.tensor().expect_shape(target.tensor(), "source vs target")?;
        Ok(GsmPair { source, target })
    }
}

/// A differentiable stage inserted between the perturbed image and the codec.
pub trait InputTransform {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    /// `clamp(x_p + delta^(T), 0, 1)`.
    pub adversarial: Image,
    pub final_delta: Tensor,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Objective at `delta^(T)` (unclamped input).
    pub final_objective: f64,
    pub best_objective: f64,
    pub best_delta: Tensor,
    /// Set when the run stopped on a non-finite objective; `final_delta`
    /// then holds the best iterate seen.
    pub error: Option<String>,
}

/// Objective value, its gradient in `delta`, and the reconstruction residual.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// `||f(x_p + delta) - (x_p + delta)||_2`.
    pub residual_norm: f64,
}

/// `clamp(x_q - x_p, -epsilon, epsilon)`.
pub fn lazy_perturbation(x_p: &Image, x_q: &Image, epsilon: f64) -> Result<Tensor> {
    x_q.tensor().zip_map(x_p.tensor(), |q, p| (q - p).clamp(-epsilon, epsilon))
}

/// `clamp(delta + alpha_t * sgn(grad), -epsilon, epsilon)` with `sgn(0) = 0`.
pub fn pgd_step(delta: &Tensor, grad: &[f64], alpha_t: f64, epsilon: f64) -> Result<Tensor> {
    if grad.len() != delta.len() {
        return Err(Error::shape(format!("gradient length {} vs perturbation {}", grad.len(), delta.len())));
    }
    let mut next = delta.clone();
    for (d, &g) in next.data_mut().iter_mut().zip(grad) {
        let s = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        *d = (*d + alpha_t * s).clamp(-epsilon, epsilon);
    }
    Ok(next)
}

fn objective_on(
    model: &CodecModel,
    x_p: &Image,
    delta: &Tensor,
    x_q: &Image,
    transform: Option<&dyn InputTransform>,
    want_grad: bool,
) -> Result<ObjectiveEval> {
    delta.expect_shape(x_p.tensor(), "perturbation vs source")?;
    x_p.tensor().expect_shape(x_q.tensor(), "source vs target")?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let d = if want_grad { g.variable(delta.clone()) } else { g.constant(delta.clone()) };
    let x = g.add_const(d, x_p.tensor())?;
    let input = match transform {
        Some(t) => t.apply(&mut g, x)?,
        None => x,
    };
    let (_, x_hat) = model.forward_on(&mut g, &p, input, &mut Quantizer::Ste)?;
    let residual_norm = g
        .value(x_hat)
        .data()
        .iter()
        .zip(g.value(x).data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let target = g.constant(x_q.tensor().clone());
    let diff = g.sub(x_hat, target)?;
    let sq = g.sum_squares(diff)?;
    let phi = g.scale(sq, -0.5)?;
    let value = g.scalar_value(phi)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("gsm objective"));
    }
    let grad = if want_grad {
        g.backward(phi)?;
        g.grad(d).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; delta.len()])
    } else {
        Vec::new()
    };
    Ok(ObjectiveEval { value, grad, residual_norm })
}

/// `phi = -1/2 ||f(x_p + delta) - x_q||^2` through the straight-through
/// quantizer, with its gradient in `delta`.
pub fn gsm_objective(model: &CodecModel, x_p: &Image, delta: &Tensor, x_q: &Image) -> Result<ObjectiveEval> {
    objective_on(model, x_p, delta, x_q, None, true)
}

fn init_delta(dims: &[usize], epsilon: f64, seed: u64, stream: u64) -> Tensor {
    if epsilon == 0.0 {
        return Tensor::zeros(dims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Tensor::from_fn(dims, |_| rng.gen_range(-epsilon..=epsilon))
}

/// Sign-gradient PGD on the GSM objective with the configured step-size
/// schedule. `stream` selects an independent initialization stream for
/// the pair (use the pair index in multi-pair sweeps).
pub fn run_attack(model: &CodecModel, pair: &GsmPair, cfg: &AttackConfig, stream: u64) -> Result<AttackResult> {
    run_attack_through(model, pair, cfg, stream, None)
}

/// As [`run_attack`], but the objective differentiates through `transform`
/// applied to the perturbed image before the codec.
pub fn run_attack_through(
    model: &CodecModel,
    pair: &GsmPair,
    cfg: &AttackConfig,
    stream: u64,
    transform: Option<&dyn InputTransform>,
) -> Result<AttackResult> {
    cfg.validate()?;
    let (x_p, x_q) = (&pair.source, &pair.target);
    let lazy = lazy_perturbation(x_p, x_q, cfg.epsilon)?;
    let mut delta = init_delta(x_p.tensor().dims(), cfg.epsilon, cfg.seed, stream);
    let mut trajectory = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, Tensor)> = None;
    let mut error = None;

    for t in 0..cfg.steps {
        let alpha_t = cfg.step_size(t);
        let eval = match objective_on(model, x_p, &delta, x_q, transform, true) {
            Ok(e) => e,
            Err(Error::NonFinite(what)) => {
                error = Some(format!("non-finite {what} at step {t}"));
                break;
            }
            Err(e) => return Err(e),
        };
        trajectory.push(TrajectoryRecord {
            t,
            alpha_t,
            objective: eval.value,
            lcs: cosine(&delta, &lazy),
            residual_norm: eval.residual_norm,
            delta_linf: delta.norm_linf(),
        });
        if best.as_ref().is_none_or(|(b, _)| eval.value > *b) {
            best = Some((eval.value, delta.clone()));
        }
        delta = pgd_step(&delta, &eval.grad, alpha_t, cfg.epsilon)?;
    }

    let final_objective = if error.is_none() {
        match objective_on(model, x_p, &delta, x_q, transform, false) {
            Ok(e) => {
                if best.as_ref().is_none_or(|(b, _)| e.value > *b) {
                    best = Some((e.value, delta.clone()));
                }
                e.value
            }
            Err(Error::NonFinite(what)) => {
                error = Some(format!("non-finite {what} at final iterate"));
                f64::NAN
            }
            Err(e) => return Err(e),
        }
    } else {
        f64::NAN
    };
    let (best_objective, best_delta) = best.unwrap_or((f64::NAN, delta.clone()));
    if error.is_some() {
        delta = best_delta.clone();
    }
    let adversarial = Image::from_clamped(&delta.zip_map(x_p.tensor(), |d, p| d + p)?)?;
    Ok(AttackResult {
        adversarial,
        final_delta: delta,
        trajectory,
        final_objective,
        best_objective,
        best_delta,
        error,
    })
}
