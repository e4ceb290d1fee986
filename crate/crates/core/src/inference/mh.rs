//! Adaptive random-walk Metropolis on an unconstrained scale.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{ParamId, PriorSpec};

/// Map from the constrained parameter `x` to the sampling scale `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Identity,
    /// `y = ln x`
    Log,
    /// `y = logit((x − lo)/(hi − lo))`
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn for_param(prior: &PriorSpec, id: ParamId) -> Self {
        match prior.bounds(id) {
            None => Transform::Log,
            Some((lo, hi)) => Transform::Logit { lo, hi },
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit { lo, hi } => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Log => y.exp(),
            Transform::Logit { lo, hi } => {
                let p = if y >= 0.0 { 1.0 / (1.0 + (-y).exp()) } else { y.exp() / (1.0 + y.exp()) };
                lo + (hi - lo) * p
            }
        }
    }

    /// `ln |dx/dy|` at `x`.
    pub fn log_jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => x.ln(),
            Transform::Logit { lo, hi } => (x - lo).ln() + (hi - x).ln() - (hi - lo).ln(),
        }
    }
}

/// Step size and acceptance counters of one MH-updated parameter.
#[derive(Clone, Debug)]
pub struct AdaptState {
    log_step: f64,
    target: f64,
    adapting: bool,
    n_adapt: u64,
    proposed: u64,
    accepted: u64,
}

impl AdaptState {
    pub fn new(initial_step: f64, target: f64) -> Self {
        AdaptState {
            log_step: initial_step.ln(),
            target,
            adapting: true,
            n_adapt: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    /// Stops adaptation and resets the acceptance counters.
    pub fn freeze(&mut self) {
        self.adapting = false;
        self.proposed = 0;
        self.accepted = 0;
    }

    /// Acceptance rate since the last freeze (or since creation).
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accept_prob: f64, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
        if self.adapting {
            self.n_adapt += 1;
            let gain = (self.n_adapt as f64).powf(-0.6);
            self.log_step += gain * (accept_prob - self.target);
            self.log_step = self.log_step.clamp(-20.0, 5.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhOutcome {
    pub value: f64,
    pub log_target: f64,
    pub accepted: bool,
}

/// One random-walk Metropolis update of a scalar.
///
/// `log_target` is the unnormalized log posterior on the constrained scale;
/// `current_log_target` must equal `log_target(x)`. A proposal whose target
/// evaluation fails with a non-PSD error counts as having density zero.
pub fn mh_update<R, F>(
    x: f64,
    current_log_target: f64,
    transform: Transform,
    mut log_target: F,
    rng: &mut R,
    adapt: &mut AdaptState,
) -> Result<MhOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> Result<f64>,
{
    let y = transform.forward(x);
    let xi: f64 = rng.sample(StandardNormal);
    let y_new = y + adapt.step() * xi;
    let x_new = transform.inverse(y_new);
    let u: f64 = rng.random();

    let valid = x_new.is_finite()
        && match transform {
            Transform::Logit { lo, hi } => x_new > lo && x_new < hi,
            Transform::Log => x_new > 0.0,
            Transform::Identity => true,
        };
    let lt_new = if valid {
        match log_target(x_new) {
            Ok(v) => v,
            Err(e) if matches!(e.root(), Error::NotPsd { .. }) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        }
    } else {
        f64::NEG_INFINITY
    };
    let log_ratio = lt_new + transform.log_jacobian(x_new) - current_log_target - transform.log_jacobian(x);
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.exp().min(1.0) };
    let accepted = lt_new > f64::NEG_INFINITY && u.ln() < log_ratio;
    adapt.record(accept_prob, accepted);
    Ok(if accepted {
        MhOutcome { value: x_new, log_target: lt_new, accepted }
    } else {
        MhOutcome { value: x, log_target: current_log_target, accepted }
    })
}
