//! Targeted global semantic manipulation (GSM) against the codec:
//! objective, projections, the sign-gradient PGD recursion and the
//! periodic geometric step-size decay.

mod config;
mod run;

pub use config::{AttackConfig, Schedule};
pub use run::{
    gsm_objective, lazy_perturbation, pgd_step, run_attack, run_attack_through, AttackResult,
    GsmPair, InputTransform, ObjectiveEval,
};
