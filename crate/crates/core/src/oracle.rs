//! Exact reference solvers for small instances.
//!
//! [`brute_force_p2`] enumerates every selection; a selection is feasible iff
//! minimum-power control supports it within both power budgets, with the
//! unselected clients silent. [`projected_gradient_qp`] solves the power
//! subproblem by plain projected gradient as a cross-check of the KKT
//! solution.

use crate::alloc::{Allocation, Problem};
use crate::error::{Error, Result};
use crate::pamm::selection_powers;

/// Largest client count accepted by [`brute_force_p2`].
pub const MAX_CLIENTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best: Allocation,
    /// Feasibility of every selection, indexed by bitmask (bit `k` = client `k`).
    pub feasible: Vec<bool>,
}

impl OracleResult {
    pub fn feasible_count(&self) -> usize {
        self.feasible.iter().filter(|&&f| f).count()
    }
}

fn mask_to_selection(mask: usize, k: usize) -> Vec<bool> {
    (0..k).map(|i| mask >> i & 1 == 1).collect()
}

/// Ties go to the smaller selection, then to the lexicographically smaller
/// list of selected indices.
fn better(cand: (f64, &[usize]), inc: (f64, &[usize])) -> bool {
    if cand.0 != inc.0 {
        return cand.0 > inc.0;
    }
    if cand.1.len() != inc.1.len() {
        return cand.1.len() < inc.1.len();
    }
    cand.1 < inc.1
}

pub fn brute_force_p2(problem: &Problem<'_>) -> Result<OracleResult> {
    let k = problem.clients();
    if k > MAX_CLIENTS {
        return Err(Error::TooLarge(k));
    }
    let mut feasible = vec![false; 1 << k];
    let mut best: Option<(f64, Vec<usize>, Vec<bool>, Vec<f64>)> = None;
    for mask in 0..1usize << k {
        let sel = mask_to_selection(mask, k);
        let Some(p) = selection_powers(problem, &sel) else { continue };
        feasible[mask] = true;
        let idx: Vec<usize> = (0..k).filter(|&i| sel[i]).collect();
        let value: f64 = idx.iter().map(|&i| problem.losses[i]).sum();
        let take = match &best {
            None => true,
            Some((bv, bi, _, _)) => better((value, &idx), (*bv, bi)),
        };
        if take {
            best = Some((value, idx, sel, p));
        }
    }
    let (_, _, sel, p) = best.expect("the empty selection is feasible");
    Ok(OracleResult { best: Allocation::binary(&sel, p, problem), feasible })
}

/// Euclidean projection onto `{0 <= p <= cap, sum p <= total}`.
pub fn project_box_sum(v: &[f64], cap: f64, total: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, cap)).collect();
    if clipped.iter().sum::<f64>() <= total {
        return clipped;
    }
    // sum of clamp(v - tau) is piecewise linear in tau; breakpoints at v and v - cap
    let mut knots: Vec<f64> = v.iter().flat_map(|&x| [x, x - cap]).filter(|t| *t >= 0.0).collect();
    knots.push(0.0);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let at = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, cap)).sum::<f64>();
    let mut lo = 0.0;
    let mut hi = knots[knots.len() - 1];
    for w in knots.windows(2) {
        if at(w[1]) <= total {
            lo = w[0];
            hi = w[1];
            break;
        }
    }
    let (s_lo, s_hi) = (at(lo), at(hi));
    let tau = if s_lo == s_hi { hi } else { lo + (s_lo - total) * (hi - lo) / (s_lo - s_hi) };
    v.iter().map(|x| (x - tau).clamp(0.0, cap)).collect()
}

/// Minimizes `sum (xi_k - x_k p_k)^2` by projected gradient with step `1/L`.
pub fn projected_gradient_qp(xi: &[f64], x: &[f64], p_max: f64, p_sum: f64, max_iters: usize) -> Vec<f64> {
    let lip = 2.0 * x.iter().map(|v| v * v).fold(0.0, f64::max);
    let mut p = project_box_sum(&vec![0.0; xi.len()], p_max, p_sum);
    if lip == 0.0 {
        return p;
    }
    for _ in 0..max_iters {
        let grad: Vec<f64> = (0..p.len()).map(|k| -2.0 * x[k] * (xi[k] - x[k] * p[k])).collect();
        let step: Vec<f64> = p.iter().zip(&grad).map(|(a, g)| a - g / lip).collect();
        let next = project_box_sum(&step, p_max, p_sum);
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if change < 1e-14 {
            break;
        }
    }
    p
}
