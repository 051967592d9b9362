//! Batch sizing: how many honions are needed so that their descriptors land on
//! a target fraction of the HSDir ring.
//!
//! Each honion publishes two descriptors, each stored on three adjacent
//! relays, so a single descriptor hits a given relay with probability close to
//! `3 / N`. After `m` honions a relay is missed with probability
//! `(1 - 3/N)^(2m)`.

use serde::Serialize;
use thiserror::Error;

use crate::ring::{ConsensusSnapshot, Fingerprint, PlacementRecord};
use std::collections::HashSet;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("need at least 4 HSDirs, got {0}")]
    TooFewHsdirs(u64),
    #[error("target fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveragePlan {
    pub n_hsdirs: u64,
    pub target_fraction: f64,
    pub honions_required: u64,
    pub predicted_coverage: f64,
}

impl CoveragePlan {
    pub fn new(n_hsdirs: u64, target_fraction: f64) -> Result<Self, PlannerError> {
        let honions_required = required_honions(n_hsdirs, target_fraction)?;
        Ok(CoveragePlan {
            n_hsdirs,
            target_fraction,
            honions_required,
            predicted_coverage: coverage_probability(n_hsdirs, honions_required)?,
        })
    }
}

fn check_hsdirs(n_hsdirs: u64) -> Result<(), PlannerError> {
    if n_hsdirs < 4 {
        Err(PlannerError::TooFewHsdirs(n_hsdirs))
    } else {
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<(), PlannerError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(PlannerError::BadFraction(f))
    }
}

/// `1 - (1 - 3/N)^(2m)`.
pub fn coverage_probability(n_hsdirs: u64, m: u64) -> Result<f64, PlannerError> {
    check_hsdirs(n_hsdirs)?;
    let miss = 1.0 - 3.0 / n_hsdirs as f64;
    // ln/exp keeps precision for large exponents
    Ok(-(2.0 * m as f64 * miss.ln()).exp_m1())
}

/// Real-valued batch size solving `coverage_probability(N, m) = f`.
pub fn required_honions_real(n_hsdirs: u64, f: f64) -> Result<f64, PlannerError> {
    check_hsdirs(n_hsdirs)?;
    check_fraction(f)?;
    Ok((-f).ln_1p() / (2.0 * (-3.0 / n_hsdirs as f64).ln_1p()))
}

/// Batch size for the target fraction, rounded to the nearest integer (at
/// least one). At N = 3000 and f = 0.95 this is 1497.
pub fn required_honions(n_hsdirs: u64, f: f64) -> Result<u64, PlannerError> {
    let m = required_honions_real(n_hsdirs, f)?;
    Ok((m.round() as u64).max(1))
}

/// Smallest batch size whose predicted coverage is at least `f`.
pub fn required_honions_strict(n_hsdirs: u64, f: f64) -> Result<u64, PlannerError> {
    let m = required_honions_real(n_hsdirs, f)?;
    let mut guess = (m.ceil() as u64).max(1);
    // correct float rounding at the boundary
    while guess > 1 && coverage_probability(n_hsdirs, guess - 1)? >= f {
        guess -= 1;
    }
    while coverage_probability(n_hsdirs, guess)? < f {
        guess += 1;
    }
    Ok(guess)
}

/// Fraction of relays in `c` that appear in at least one placement.
pub fn measure_coverage(placements: &[PlacementRecord], c: &ConsensusSnapshot) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let hosted: HashSet<Fingerprint> = placements
        .iter()
        .flat_map(|p| p.hsdirs.iter().map(|r| r.fingerprint))
        .collect();
    let covered = c.relays().iter().filter(|r| hosted.contains(&r.fingerprint)).count();
    covered as f64 / c.len() as f64
}
