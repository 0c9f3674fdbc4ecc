//! Client selection / power allocations and the shared feasibility certifier.

use crate::channel::{spectral_efficiency, GainMatrix};

/// Tolerance of the closed constraints: relative to `eta_k` (at least 1 bit/s/Hz)
/// for rates, relative to the respective budget for powers.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
    pub feasible: bool,
    /// `sum_k x_k pi_k`.
    pub objective: f64,
}

impl Allocation {
    /// Binary allocation with the given selection and powers, certified.
    pub fn binary(selected: &[bool], p: Vec<f64>, problem: &Problem<'_>) -> Self {
        let x: Vec<f64> = selected.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        let xi = x.iter().zip(&p).map(|(a, b)| a * b).collect();
        let mut alloc = Self { objective: objective(&x, problem.losses), x, p, xi, feasible: false };
        alloc.feasible = certify(&alloc, problem).feasible;
        alloc
    }

    pub fn empty(problem: &Problem<'_>) -> Self {
        Self::binary(&vec![false; problem.gains.clients()], vec![0.0; problem.gains.clients()], problem)
    }

    pub fn selected(&self) -> Vec<usize> {
        self.x.iter().enumerate().filter(|(_, &v)| v >= 0.5).map(|(k, _)| k).collect()
    }

    /// Distance of the selection from the nearest binary vertex.
    pub fn zero_one_loss(&self) -> f64 {
        zero_one_loss(&self.x)
    }

    /// Volume transmitted in the second stage (bits) by the selected clients.
    pub fn transmitted_bits(&self, remaining_bits: &[f64]) -> f64 {
        self.x.iter().zip(remaining_bits).filter(|(&x, _)| x >= 0.5).map(|(_, b)| b).sum()
    }
}

pub fn zero_one_loss(x: &[f64]) -> f64 {
    x.iter().map(|&v| v.min(1.0 - v)).sum()
}

pub fn objective(x: &[f64], losses: &[f64]) -> f64 {
    x.iter().zip(losses).map(|(a, b)| a * b).sum()
}

/// Data shared by every selection/power-control solver: gains, budgets,
/// predicted losses and rate targets `eta_k` (bit/s/Hz).
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub gains: &'a GainMatrix,
    pub losses: &'a [f64],
    pub eta: &'a [f64],
    pub p_max: f64,
    pub p_sum: f64,
    pub sigma2: f64,
}

impl Problem<'_> {
    pub fn clients(&self) -> usize {
        self.gains.clients()
    }

    /// SINR targets `2^eta_k - 1`.
    pub fn sinr_targets(&self) -> Vec<f64> {
        self.eta.iter().map(|&e| e.exp2() - 1.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub feasible: bool,
    pub binary: bool,
    /// Smallest `log2(1 + SINR_k) - eta_k` over selected clients (bit/s/Hz).
    pub rate_slack: f64,
    /// Smallest `min(p_k, P_max - p_k)`.
    pub power_slack: f64,
    /// `P_sum - sum_k p_k`.
    pub sum_slack: f64,
}

/// Direct evaluation of the deadline, per-client power, sum power and
/// binary constraints, interference weighted by the selection.
pub fn certify(alloc: &Allocation, problem: &Problem<'_>) -> Certificate {
    let k = problem.clients();
    let binary = alloc.x.len() == k && alloc.x.iter().all(|&v| v == 0.0 || v == 1.0);
    let se = spectral_efficiency(problem.gains, &alloc.p, &alloc.x, problem.sigma2);

    let mut rate_ok = true;
    let mut rate_slack = f64::INFINITY;
    for i in 0..k {
        if alloc.x[i] > 0.0 {
            let target = alloc.x[i] * problem.eta[i];
            let slack = se[i] - target;
            rate_slack = rate_slack.min(slack);
            if slack < -FEAS_TOL * target.max(1.0) || !slack.is_finite() {
                rate_ok = false;
            }
        }
    }
    let power_slack = alloc.p.iter().map(|&p| p.min(problem.p_max - p)).fold(f64::INFINITY, f64::min);
    let sum_slack = problem.p_sum - alloc.p.iter().sum::<f64>();
    let power_ok = alloc.p.iter().all(|&p| p >= 0.0 && p <= problem.p_max * (1.0 + FEAS_TOL));
    let sum_ok = sum_slack >= -FEAS_TOL * problem.p_sum;
    Certificate { feasible: binary && rate_ok && power_ok && sum_ok, binary, rate_slack, power_slack, sum_slack }
}
