//! Comparison schedulers.
//!
//! Each one is a deterministic stand-in for a scheduling philosophy rather
//! than a reproduction of a specific published algorithm:
//!
//! * max-rate: water-filling for sum rate, ignoring interference, then keep
//!   whoever meets the deadline once interference is accounted for;
//! * fairness: the largest common SINR all clients can reach together, then
//!   keep whoever that SINR serves;
//! * active learning: greedy by predicted loss with an equal power split,
//!   blind to the channel until a deadline breaks.

use std::fmt;
use std::str::FromStr;

use crate::alloc::{Allocation, Problem};
use crate::channel::spectral_efficiency;
use crate::error::{Error, Result};
use crate::powerctl::{min_power, SinrTargets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    MaxRate,
    Fairness,
    ActiveLearning,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::MaxRate, Baseline::Fairness, Baseline::ActiveLearning];

    pub fn run(self, problem: &Problem<'_>, bandwidth: &[f64]) -> Allocation {
        match self {
            Baseline::MaxRate => max_rate_baseline(problem, bandwidth),
            Baseline::Fairness => fairness_baseline(problem),
            Baseline::ActiveLearning => active_learning_baseline(problem),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Baseline::MaxRate => "max-rate",
            Baseline::Fairness => "fairness",
            Baseline::ActiveLearning => "active-learning",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::field("baseline", format!("unknown baseline {s:?}")))
    }
}

fn meets_deadline(problem: &Problem<'_>, p: &[f64], x: &[f64]) -> Vec<bool> {
    let se = spectral_efficiency(problem.gains, p, x, problem.sigma2);
    (0..p.len()).map(|k| x[k] == 1.0 && se[k] >= problem.eta[k]).collect()
}

fn keep_selected(selected: &[bool], p: &[f64]) -> Vec<f64> {
    p.iter().zip(selected).map(|(&v, &s)| if s { v } else { 0.0 }).collect()
}

/// Interference-free water-filling over the box and sum budget:
/// `p_k = clip(w B_k - sigma2 / H_kk, 0, P_max)` with the level `w` set by
/// bisection so that the sum budget binds when it must.
pub fn water_filling(problem: &Problem<'_>, bandwidth: &[f64]) -> Vec<f64> {
    let k = problem.clients();
    let floor: Vec<f64> = (0..k).map(|i| problem.sigma2 / problem.gains.direct(i)).collect();
    let at = |w: f64| -> Vec<f64> { (0..k).map(|i| (w * bandwidth[i] - floor[i]).clamp(0.0, problem.p_max)).collect() };
    if k as f64 * problem.p_max <= problem.p_sum {
        return vec![problem.p_max; k];
    }
    let mut lo = 0.0;
    let mut hi = (0..k).map(|i| (problem.p_max + floor[i]) / bandwidth[i]).fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid).iter().sum::<f64>() > problem.p_sum {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    at(lo)
}

/// Water-filling powers, then one deadline check with everyone transmitting
/// and one re-check after silencing the clients that failed it.
pub fn max_rate_baseline(problem: &Problem<'_>, bandwidth: &[f64]) -> Allocation {
    let k = problem.clients();
    let p = water_filling(problem, bandwidth);
    let first = meets_deadline(problem, &p, &vec![1.0; k]);
    let x: Vec<f64> = first.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let p = keep_selected(&first, &p);
    let second = meets_deadline(problem, &p, &x);
    let p = keep_selected(&second, &p);
    Allocation::binary(&second, p, problem)
}

fn common_target_powers(problem: &Problem<'_>, gamma: f64) -> Option<Vec<f64>> {
    let targets = SinrTargets::new(vec![gamma; problem.clients()]).ok()?;
    let p = min_power(problem.gains, &targets, problem.sigma2, problem.p_max).ok()?;
    (p.iter().sum::<f64>() <= problem.p_sum).then_some(p)
}

/// Largest common SINR the whole population can reach within both budgets.
pub fn max_min_sinr(problem: &Problem<'_>) -> (f64, Vec<f64>) {
    let k = problem.clients();
    let mut lo = 0.0;
    let mut best = vec![0.0; k];
    // noise-limited single-client bound
    let mut hi = (0..k).map(|i| problem.p_max * problem.gains.direct(i) / problem.sigma2).fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match common_target_powers(problem, mid) {
            Some(p) => {
                lo = mid;
                best = p;
            }
            None => hi = mid,
        }
    }
    (lo, best)
}

pub fn fairness_baseline(problem: &Problem<'_>) -> Allocation {
    let (gamma, p) = max_min_sinr(problem);
    let efficiency = gamma.ln_1p() / std::f64::consts::LN_2;
    let selected: Vec<bool> = problem.eta.iter().map(|&e| efficiency >= e).collect();
    let p = keep_selected(&selected, &p);
    let out = Allocation::binary(&selected, p.clone(), problem);
    if out.feasible {
        out
    } else {
        // silencing others only raises SINR, so this is a rounding guard
        let kept = meets_deadline(problem, &p, &out.x);
        Allocation::binary(&kept, keep_selected(&kept, &p), problem)
    }
}

/// Descending predicted loss; ties go to the lower index.
pub fn loss_order(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order
}

pub fn active_learning_baseline(problem: &Problem<'_>) -> Allocation {
    let k = problem.clients();
    let mut selected = vec![false; k];
    let mut powers = vec![0.0; k];
    for (m, &c) in loss_order(problem.losses).iter().enumerate() {
        let mut trial = selected.clone();
        trial[c] = true;
        let share = problem.p_max.min(problem.p_sum / (m + 1) as f64);
        let p: Vec<f64> = trial.iter().map(|&s| if s { share } else { 0.0 }).collect();
        let x: Vec<f64> = trial.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        let ok = meets_deadline(problem, &p, &x);
        if (0..k).any(|i| trial[i] && !ok[i]) {
            break;
        }
        selected = trial;
        powers = p;
    }
    Allocation::binary(&selected, powers, problem)
}
