//! Minimum-power SINR feasibility.
//!
//! For SINR targets `gamma_k` the componentwise-minimal power vector meets
//! every target with equality:
//!
//! `p_k = gamma_k (sum_{j != k} H[k][j] p_j + sigma2) / H[k][k]`.
//!
//! It exists iff the spectral radius of the normalized interference matrix
//! is below one, and it simultaneously minimizes the total power.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::channel::GainMatrix;

/// Relative overshoot of `P_max` tolerated before declaring infeasibility.
pub const CAP_TOL: f64 = 1e-12;
pub const MAX_FIXED_POINT_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Infeasible {
    /// The targets cannot be met at any finite power.
    Unsupportable,
    /// The minimal power of this client exceeds `P_max`.
    ExceedsCap { client: usize },
    /// The fixed-point iteration did not settle.
    NoConvergence,
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasible::Unsupportable => write!(f, "SINR targets unsupportable at any power"),
            Infeasible::ExceedsCap { client } => {
                write!(f, "client {client} would need more than P_max")
            }
            Infeasible::NoConvergence => write!(f, "power iteration did not converge"),
        }
    }
}

impl From<Infeasible> for crate::error::Error {
    fn from(e: Infeasible) -> Self {
        crate::error::Error::Infeasible(e.to_string())
    }
}

/// Nonnegative finite SINR targets, one per client.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrTargets(Vec<f64>);

impl SinrTargets {
    pub fn new(gamma: Vec<f64>) -> crate::error::Result<Self> {
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(crate::error::Error::field("gamma", format!("SINR target {g} is not finite and nonnegative")));
        }
        Ok(Self(gamma))
    }

    /// Targets `2^eta_k - 1` from spectral efficiencies.
    pub fn from_efficiency(eta: &[f64]) -> crate::error::Result<Self> {
        Self::new(eta.iter().map(|e| e.exp2() - 1.0).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn active(gamma: &[f64]) -> Vec<usize> {
    (0..gamma.len()).filter(|&k| gamma[k] > 0.0).collect()
}

/// Direct linear solve of `(I - D F) p = D u` over clients with demand.
pub fn min_power(h: &GainMatrix, gamma: &SinrTargets, sigma2: f64, p_max: f64) -> Result<Vec<f64>, Infeasible> {
    let gamma = gamma.as_slice();
    let act = active(gamma);
    let mut p = vec![0.0; gamma.len()];
    if act.is_empty() {
        return Ok(p);
    }
    let n = act.len();
    let scale: Vec<f64> = act.iter().map(|&k| gamma[k] / h.direct(k)).collect();
    let m = DMatrix::from_fn(n, n, |a, b| if a == b { 1.0 } else { -scale[a] * h.get(act[a], act[b]) });
    let rhs = DVector::from_iterator(n, scale.iter().map(|d| d * sigma2));
    let sol = m.lu().solve(&rhs).ok_or(Infeasible::Unsupportable)?;
    for (a, &k) in act.iter().enumerate() {
        let v = sol[a];
        if !(v.is_finite() && v > 0.0) {
            return Err(Infeasible::Unsupportable);
        }
        p[k] = v;
    }
    check_cap(&p, p_max)?;
    Ok(p)
}

fn check_cap(p: &[f64], p_max: f64) -> Result<(), Infeasible> {
    match p.iter().position(|&v| v > p_max * (1.0 + CAP_TOL)) {
        Some(client) => Err(Infeasible::ExceedsCap { client }),
        None => Ok(()),
    }
}

/// Monotone fixed-point iteration from zero power. Stops when successive
/// iterates differ by at most `tol` relative to the largest component.
pub fn min_power_iterative(
    h: &GainMatrix,
    gamma: &SinrTargets,
    sigma2: f64,
    p_max: f64,
    tol: f64,
) -> Result<Vec<f64>, Infeasible> {
    let gamma = gamma.as_slice();
    let k = gamma.len();
    let mut p = vec![0.0; k];
    for _ in 0..MAX_FIXED_POINT_ITERS {
        let next: Vec<f64> = (0..k)
            .map(|i| {
                if gamma[i] == 0.0 {
                    return 0.0;
                }
                let interference: f64 = (0..k).filter(|&j| j != i).map(|j| h.get(i, j) * p[j]).sum();
                gamma[i] * (interference + sigma2) / h.direct(i)
            })
            .collect();
        check_cap(&next, p_max)?;
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = next.iter().cloned().fold(0.0, f64::max);
        p = next;
        if change <= tol * size {
            return Ok(p);
        }
    }
    Err(Infeasible::NoConvergence)
}

/// Closed sum-power constraint.
pub fn check_sum_budget(p: &[f64], p_sum: f64) -> bool {
    p.iter().sum::<f64>() <= p_sum
}

/// Largest relative deviation from SINR equality among clients with demand.
pub fn sinr_residual(h: &GainMatrix, gamma: &SinrTargets, sigma2: f64, p: &[f64]) -> f64 {
    let ones = vec![1.0; p.len()];
    let achieved = crate::channel::sinr(h, p, &ones, sigma2);
    gamma.as_slice().iter().zip(achieved).filter(|(g, _)| **g > 0.0).map(|(g, s)| (s - g).abs() / g).fold(0.0, f64::max)
}
