//! Miscoverage-level tracking `α_{t+1} = α_t + λ (α − err_t)`.
//!
//! The level is carried as an exact dyadic rational (every `f64` is one), so
//! the telescoped coverage identity
//! `(1/T) Σ err_t = α + (α_1 − α_{T+1}) / (T λ)` holds with no rounding at
//! all. The `f64` view handed to quantile queries is the correctly rounded
//! value of the exact level.

use alloc::vec::Vec;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStep {
    /// Level used at this step.
    pub alpha: f64,
    pub err: bool,
}

/// Both sides of the long-run coverage bound, exact and rounded.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageBound {
    pub steps: u64,
    pub errors: u64,
    /// `(1/T) Σ err_t`
    pub lhs: f64,
    /// `α + (α_1 − α_{T+1}) / (T λ)`
    pub rhs: f64,
    /// `lhs ≤ rhs` decided in exact arithmetic.
    pub holds: bool,
    /// `|lhs − α| ≤ (max α_t − min α_t) / (T λ)` decided in exact arithmetic.
    pub two_sided_holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTracker {
    target: f64,
    step_size: f64,
    initial: f64,
    exact: BigRational,
    current: f64,
    min_seen: BigRational,
    max_seen: BigRational,
    history: Vec<AlphaStep>,
    errors: u64,
}

fn exact(v: f64) -> BigRational {
    // Finite by construction.
    BigRational::from_float(v).expect("finite float")
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

impl AlphaTracker {
    /// Starts at `α_1 = target`.
    pub fn new(target: f64, step_size: f64) -> Result<Self> {
        Self::with_initial(target, step_size, target)
    }

    pub fn with_initial(target: f64, step_size: f64, initial: f64) -> Result<Self> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "target alpha {target} not in (0, 1)"
            )));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "step size {step_size} must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&initial) {
            return Err(Error::InvalidConfig(alloc::format!(
                "initial alpha {initial} not in [0, 1]"
            )));
        }
        let start = exact(initial);
        Ok(Self {
            target,
            step_size,
            initial,
            current: initial,
            min_seen: start.clone(),
            max_seen: start.clone(),
            exact: start,
            history: Vec::new(),
            errors: 0,
        })
    }

    /// Current level `α_t`.
    pub fn alpha(&self) -> f64 {
        self.current
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn history(&self) -> &[AlphaStep] {
        &self.history
    }

    pub fn steps(&self) -> u64 {
        self.history.len() as u64
    }

    pub fn errors(&self) -> u64 {
        self.errors
    }

    pub fn update(&mut self, err: bool) {
        self.history.push(AlphaStep {
            alpha: self.current,
            err,
        });
        let mut delta = exact(self.target);
        if err {
            delta -= BigRational::from_integer(BigInt::from(1));
            self.errors += 1;
        }
        self.exact += exact(self.step_size) * delta;
        self.current = to_f64(&self.exact);
        if self.exact < self.min_seen {
            self.min_seen = self.exact.clone();
        }
        if self.exact > self.max_seen {
            self.max_seen = self.exact.clone();
        }
    }

    /// `α_t ∈ [−λ, 1 + λ]`; guaranteed when errors come from the quantile
    /// convention `Q_a = −∞` for `a < 0` and `+∞` for `a > 1`.
    pub fn within_bounds(&self) -> bool {
        let lam = exact(self.step_size);
        let one = BigRational::from_integer(BigInt::from(1));
        self.exact >= -lam.clone() && self.exact <= one + lam
    }

    pub fn coverage_bound(&self) -> CoverageBound {
        let steps = self.steps();
        if steps == 0 {
            return CoverageBound {
                steps,
                errors: 0,
                lhs: 0.0,
                rhs: self.target,
                holds: true,
                two_sided_holds: true,
            };
        }
        let t = BigRational::from_integer(BigInt::from(steps));
        let lam = exact(self.step_size);
        let alpha = exact(self.target);
        let lhs = BigRational::from_integer(BigInt::from(self.errors)) / t.clone();
        let scale = t * lam;
        let rhs = alpha.clone() + (exact(self.initial) - self.exact.clone()) / scale.clone();
        let spread = (self.max_seen.clone() - self.min_seen.clone()) / scale;
        let gap = lhs.clone() - alpha;
        let abs_gap = if gap < BigRational::zero() { -gap } else { gap };
        CoverageBound {
            steps,
            errors: self.errors,
            lhs: to_f64(&lhs),
            rhs: to_f64(&rhs),
            holds: lhs <= rhs,
            two_sided_holds: abs_gap <= spread,
        }
    }
}
