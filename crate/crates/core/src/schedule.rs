//! Local-epoch schedules.
//!
//! Decaying schedules start at `t_max` epochs in round 1 and reach `t_min`
//! at round `r_min`; the decay coefficient is solved from `r_min` rather
//! than configured directly. Rounds are 1-based.

use crate::error::{Error, Result};
use crate::util::round_half_up;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Logarithm,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub t_max: u32,
    pub t_min: u32,
    pub rounds: u32,
    pub r_min: u32,
    /// Cosine coefficient; 0 when unused.
    pub psi1: f64,
    /// Logarithm base; 0 when unused.
    pub psi2: f64,
    pub constant_epochs: u32,
}

impl ScheduleSpec {
    /// Build a decaying schedule with its coefficient solved from `r_min`.
    pub fn decaying(
        kind: ScheduleKind,
        t_max: u32,
        t_min: u32,
        rounds: u32,
        r_min: u32,
    ) -> Result<Self> {
        let mut spec = Self {
            kind,
            t_max,
            t_min,
            rounds,
            r_min,
            psi1: 0.0,
            psi2: 0.0,
            constant_epochs: t_max,
        };
        spec.validate_bounds()?;
        spec.psi1 = solve_psi1(r_min, rounds)?;
        spec.psi2 = solve_psi2(r_min, t_max, t_min)?;
        Ok(spec)
    }

    pub fn constant(epochs: u32, rounds: u32) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::Config(
                "constant schedule needs at least one epoch".into(),
            ));
        }
        Ok(Self {
            kind: ScheduleKind::Constant,
            t_max: epochs,
            t_min: epochs,
            rounds,
            r_min: 1,
            psi1: 0.0,
            psi2: 0.0,
            constant_epochs: epochs,
        })
    }

    fn validate_bounds(&self) -> Result<()> {
        if self.t_min < 1 || self.t_min > self.t_max {
            return Err(Error::Config(format!(
                "need 1 <= t_min <= t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        if self.r_min < 1 || self.r_min > self.rounds.max(1) {
            return Err(Error::Config(format!(
                "need 1 <= r_min <= rounds, got r_min={} rounds={}",
                self.r_min, self.rounds
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScheduleKind::Constant if self.constant_epochs == 0 => Err(Error::Config(
                "constant schedule needs at least one epoch".into(),
            )),
            ScheduleKind::Constant => Ok(()),
            ScheduleKind::Cosine => {
                self.validate_bounds()?;
                if !(self.psi1 > 0.0) {
                    return Err(Error::Config(format!(
                        "psi1 must be > 0, got {}",
                        self.psi1
                    )));
                }
                Ok(())
            }
            ScheduleKind::Logarithm => {
                self.validate_bounds()?;
                if !(self.psi2 > 1.0) {
                    return Err(Error::Config(format!(
                        "psi2 must be > 1, got {}",
                        self.psi2
                    )));
                }
                Ok(())
            }
        }
    }

    /// Local epochs for round `r` (1-based).
    pub fn epochs(&self, r: u32) -> u32 {
        match self.kind {
            ScheduleKind::Cosine => cosine_epochs(r, self),
            ScheduleKind::Logarithm => log_epochs(r, self),
            ScheduleKind::Constant => self.constant_epochs,
        }
    }

    pub fn table(&self) -> Vec<u32> {
        (1..=self.rounds).map(|r| self.epochs(r)).collect()
    }

    pub fn total_epochs(&self) -> u64 {
        self.table().iter().map(|&t| t as u64).sum()
    }
}

/// `psi1 = 2 (r_min - 1) / R`, placing the cosine's zero at round `r_min`.
pub fn solve_psi1(r_min: u32, rounds: u32) -> Result<f64> {
    if r_min <= 1 || r_min > rounds {
        return Err(Error::Domain(format!(
            "cosine r_min must satisfy 1 < r_min <= R, got r_min={r_min} R={rounds}"
        )));
    }
    Ok(2.0 * (r_min - 1) as f64 / rounds as f64)
}

/// `psi2 = r_min^(1 / (t_max - t_min))`, so `log_psi2(r_min) = t_max - t_min`.
pub fn solve_psi2(r_min: u32, t_max: u32, t_min: u32) -> Result<f64> {
    if r_min <= 1 {
        return Err(Error::Domain(format!(
            "logarithm r_min must exceed 1, got {r_min}"
        )));
    }
    if t_max <= t_min {
        return Err(Error::Domain(format!(
            "need t_max > t_min, got {t_max} and {t_min}"
        )));
    }
    Ok((r_min as f64).powf(1.0 / (t_max - t_min) as f64))
}

fn clamp_round(raw: f64, t_min: u32) -> u32 {
    (round_half_up(raw).max(t_min as f64)) as u32
}

/// `max{ round(t_min + (t_max - t_min) cos((r-1) pi / (psi1 R))), t_min }`.
///
/// The argument is capped at pi so the curve stays at `t_min` instead of
/// climbing back up on the cosine's next period when `r_min` is small.
pub fn cosine_epochs(r: u32, spec: &ScheduleSpec) -> u32 {
    let arg = ((r.saturating_sub(1)) as f64 * std::f64::consts::PI
        / (spec.psi1 * spec.rounds as f64))
        .min(std::f64::consts::PI);
    let raw = spec.t_min as f64 + (spec.t_max - spec.t_min) as f64 * arg.cos();
    clamp_round(raw, spec.t_min)
}

/// `max{ round(t_max - ln r / ln psi2), t_min }`.
pub fn log_epochs(r: u32, spec: &ScheduleSpec) -> u32 {
    let raw = spec.t_max as f64 - (r.max(1) as f64).ln() / spec.psi2.ln();
    clamp_round(raw, spec.t_min)
}

/// Constant epoch count whose total work matches `reference` over its
/// rounds. `batches_per_epoch(r)` weights each round's epochs; with a
/// constant weight this is `round(sum T_r / R)`.
pub fn budget_matched_constant(
    reference: &ScheduleSpec,
    batches_per_epoch: impl Fn(u32) -> f64,
) -> u32 {
    if reference.rounds == 0 {
        return reference.epochs(1);
    }
    let (mut work, mut weight) = (0.0, 0.0);
    for r in 1..=reference.rounds {
        let b = batches_per_epoch(r);
        work += reference.epochs(r) as f64 * b;
        weight += b;
    }
    (round_half_up(work / weight) as u32).max(1)
}
