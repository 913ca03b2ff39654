use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    Fixed,
    PeriodicGeometric,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Fixed => "fixed",
            Schedule::PeriodicGeometric => "periodic_geometric",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Schedule::Fixed),
            "periodic_geometric" => Ok(Schedule::PeriodicGeometric),
            other => Err(Error::invalid(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Everything one attack run consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    /// l-infinity budget in pixel units (pixels live in `[0, 1]`).
    pub epsilon: f64,
    pub steps: usize,
    pub alpha0: f64,
    pub decay_factor: f64,
    /// Interpret `decay_factor` as a divisor (`k -> 1/k`), as in ablation
    /// grids that report factors >= 1.
    pub decay_is_divisor: bool,
    pub period: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.08,
            steps: 500,
            alpha0: 0.01,
            decay_factor: 0.5,
            decay_is_divisor: false,
            period: 100,
            seed: 0,
            schedule: Schedule::PeriodicGeometric,
        }
    }
}

impl AttackConfig {
    /// Periodic geometric decay with `P = T / 5` (at least 1).
    pub fn periodic(epsilon: f64, steps: usize, alpha0: f64, decay_factor: f64, seed: u64) -> Self {
        AttackConfig {
            epsilon,
            steps,
            alpha0,
            decay_factor,
            decay_is_divisor: false,
            period: (steps / 5).max(1),
            seed,
            schedule: Schedule::PeriodicGeometric,
        }
    }

    pub fn fixed(epsilon: f64, steps: usize, alpha: f64, seed: u64) -> Self {
        AttackConfig {
            epsilon,
            steps,
            alpha0: alpha,
            decay_factor: 1.0,
            decay_is_divisor: false,
            period: (steps / 5).max(1),
            seed,
            schedule: Schedule::Fixed,
        }
    }

    /// The multiplicative decay actually applied each period.
    pub fn effective_decay(&self) -> f64 {
        if self.decay_is_divisor {
            1.0 / self.decay_factor
        } else {
            self.decay_factor
        }
    }

    /// True when the schedule never changes the step size within `steps`.
    pub fn degenerates_to_fixed(&self) -> bool {
        self.schedule == Schedule::Fixed || self.effective_decay() == 1.0 || self.period >= self.steps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon <= 1.0) {
            return Err(Error::invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::invalid(format!("alpha0 {} must be positive", self.alpha0)));
        }
        if self.period == 0 {
            return Err(Error::invalid("decay period must be >= 1"));
        }
        let k = self.effective_decay();
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::invalid(format!("effective decay factor {k} outside (0, 1]")));
        }
        Ok(())
    }

    /// Step size at iteration `t`: `alpha0 * k^floor(t / P)` for the
    /// periodic schedule, `alpha0` for the fixed one.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::Fixed => self.alpha0,
            Schedule::PeriodicGeometric => {
                let exponent = (t / self.period) as i32;
                self.alpha0 * self.effective_decay().powi(exponent)
            }
        }
    }
}
