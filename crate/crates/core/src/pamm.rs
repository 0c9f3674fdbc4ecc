//! Joint client selection and power control by penalty alternating
//! majorization-minimization (PAMM).
//!
//! The mixed-integer problem
//!
//! ```text
//! max_{x, p}  sum_k x_k pi_k
//! s.t.        log2(1 + x_k p_k H_kk / (sum_{j!=k} x_j p_j H_kj + sigma2)) >= eta_k x_k
//!             0 <= p_k <= P_max,  sum_k p_k <= P_sum,  x_k in {0, 1}
//! ```
//!
//! is relaxed to `x in [0,1]^K` with the concave binary penalty
//! `phi1(x) = (1/beta) sum x_k (1 - x_k)`, and the product `x_k p_k` is
//! replaced by a slack `xi_k` tied back through `gamma sum (xi_k - x_k p_k)^2`.
//! Rate constraints then involve `(x, xi)` only, so the solver alternates
//! between an `(x, xi)` block and a `p` block. The `(x, xi)` block is still
//! nonconvex; it is solved by repeatedly minimizing convex upper bounds of
//! `phi1` and of the rate constraint functions, tangent at the current point.
//! Each convex surrogate problem is solved with a log-barrier Newton method.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use crate::alloc::{self, Allocation, Problem};
use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::powerctl::{min_power, SinrTargets};
use crate::scenario::ScenarioConfig;

/// Strict-interior margin required of the rate constraints at start.
const INTERIOR_MARGIN: f64 = 1e-6;
/// Selections below this are treated as zero in the power subproblem.
const X_EPS: f64 = 1e-12;

/// `eta_k = V_k (|D_k| - |pilot_k|) / ((T - T0) B_k)` in bit/s/Hz.
pub fn eta_targets(config: &ScenarioConfig, t0: f64, pilot_sizes: &[usize]) -> Result<Vec<f64>> {
    let remaining = config.time_budget - t0;
    if !(remaining > 0.0) {
        return Err(Error::field("T0", format!("pilot time {t0} leaves no time of the budget {}", config.time_budget)));
    }
    Ok((0..config.clients)
        .map(|k| {
            let left = config.dataset_sizes[k].saturating_sub(pilot_sizes[k]) as f64;
            config.sample_bits[k] * left / (remaining * config.bandwidth[k])
        })
        .collect())
}

pub fn phi1(x: &[f64], beta: f64) -> f64 {
    x.iter().map(|&v| v * (1.0 - v)).sum::<f64>() / beta
}

/// Linearization of `phi1` at `anchor`; an upper bound since `phi1` is concave.
pub fn phi1_surrogate(x: &[f64], anchor: &[f64], beta: f64) -> f64 {
    x.iter().zip(anchor).map(|(&v, &a)| v / beta - 2.0 * a * v / beta + a * a / beta).sum()
}

fn log_arg(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(Error::field(what, format!("logarithm argument {value} outside the domain")))
    }
}

fn signal_and_interference(h: &GainMatrix, xi: &[f64], sigma2: f64, k: usize) -> (f64, f64) {
    let interference: f64 = (0..xi.len()).filter(|&l| l != k).map(|l| h.get(k, l) * xi[l] / sigma2).sum::<f64>() + 1.0;
    (interference + h.direct(k) * xi[k] / sigma2, interference)
}

/// Rate constraint function `eta_k x_k - log2(1 + SINR_k(xi))`.
pub fn phi_k(x: &[f64], xi: &[f64], h: &GainMatrix, sigma2: f64, eta: &[f64], k: usize) -> Result<f64> {
    let (s, i) = signal_and_interference(h, xi, sigma2, k);
    Ok(eta[k] * x[k] - (log_arg(s, "xi")? - log_arg(i, "xi")?) / LN_2)
}

/// Convex upper bound of [`phi_k`], tangent at `xi_anchor`: the concave
/// `ln(interference)` term is replaced by its first-order expansion.
pub fn phi_k_surrogate(
    x: &[f64],
    xi: &[f64],
    xi_anchor: &[f64],
    h: &GainMatrix,
    sigma2: f64,
    eta: &[f64],
    k: usize,
) -> Result<f64> {
    let (s, i) = signal_and_interference(h, xi, sigma2, k);
    let (_, i_star) = signal_and_interference(h, xi_anchor, sigma2, k);
    let bracket = log_arg(s, "xi")? - log_arg(i_star, "xi_anchor")? - i / i_star + 1.0;
    Ok(eta[k] * x[k] - bracket / LN_2)
}

pub fn phi1_gradient(x: &[f64], beta: f64) -> Vec<f64> {
    x.iter().map(|&v| (1.0 - 2.0 * v) / beta).collect()
}

/// Gradient of [`phi1_surrogate`] in `x`; constant for a fixed anchor.
pub fn phi1_surrogate_gradient(anchor: &[f64], beta: f64) -> Vec<f64> {
    phi1_gradient(anchor, beta)
}

fn rate_gradient(h: &GainMatrix, xi: &[f64], sigma2: f64, eta: &[f64], k: usize, denom: f64) -> Vec<f64> {
    let n = xi.len();
    let (s, _) = signal_and_interference(h, xi, sigma2, k);
    let mut g = vec![0.0; 2 * n];
    g[k] = eta[k];
    for l in 0..n {
        let a = h.get(k, l) / sigma2;
        let lin = if l == k { 0.0 } else { a / denom };
        g[n + l] = -(a / s - lin) / LN_2;
    }
    g
}

/// Gradient of [`phi_k`] with respect to `(x, xi)`, stacked.
pub fn phi_k_gradient(xi: &[f64], h: &GainMatrix, sigma2: f64, eta: &[f64], k: usize) -> Vec<f64> {
    let (_, i) = signal_and_interference(h, xi, sigma2, k);
    rate_gradient(h, xi, sigma2, eta, k, i)
}

/// Gradient of [`phi_k_surrogate`] with respect to `(x, xi)`, stacked.
pub fn phi_k_surrogate_gradient(
    xi: &[f64],
    xi_anchor: &[f64],
    h: &GainMatrix,
    sigma2: f64,
    eta: &[f64],
    k: usize,
) -> Vec<f64> {
    let (_, i_star) = signal_and_interference(h, xi_anchor, sigma2, k);
    rate_gradient(h, xi, sigma2, eta, k, i_star)
}

/// Parameters of one PAMM run.
#[derive(Debug, Clone, PartialEq)]
pub struct PammSettings {
    pub beta: f64,
    pub gamma: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Early exit once both `||dx||` and `||dp||` fall below this.
    pub tol: f64,
    /// Coupling residual `||xi - x p||_inf` tolerated, relative to `P_max`.
    pub coupling_tol: f64,
    pub max_escalations: usize,
}

impl PammSettings {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            beta: config.beta,
            gamma: config.gamma_penalty(),
            outer_iters: config.outer_iters,
            inner_iters: config.inner_iters,
            tol: 1e-6,
            coupling_tol: 1e-4,
            max_escalations: 3,
        }
    }
}

/// Problem data plus solver settings.
#[derive(Debug, Clone, Copy)]
pub struct JcspcProblem<'a> {
    pub base: Problem<'a>,
    pub settings: &'a PammSettings,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub dx: f64,
    pub dp: f64,
    pub zero_one: f64,
    /// Penalized objective of the relaxation.
    pub objective: f64,
    /// `||xi - x p||_inf`.
    pub coupling: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PammTrace {
    pub records: Vec<TraceRecord>,
    /// Penalized objective after every inner MM step, all outer iterations.
    pub inner_objectives: Vec<f64>,
    pub escalations: usize,
}

impl PammTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,dx,dp,zero_one,objective,coupling,gamma\n");
        for (i, r) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                i + 1,
                r.dx,
                r.dp,
                r.zero_one,
                r.objective,
                r.coupling,
                r.gamma
            ));
        }
        out
    }
}

/// Data of one convex surrogate problem over the active clients.
#[derive(Debug, Clone)]
pub struct SurrogateProblem {
    n: usize,
    /// `H[k][l] / sigma2`, row-major.
    a: Vec<f64>,
    eta: Vec<f64>,
    weights: Vec<f64>,
    beta: f64,
    gamma: f64,
    p_max: f64,
    p_fixed: Vec<f64>,
    x_anchor: Vec<f64>,
    /// `1 + sum_{l != k} a_kl xi*_l` at the anchor.
    i_anchor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub objective: f64,
    /// Largest surrogate constraint value (must be <= 0).
    pub max_violation: f64,
    /// Projected-gradient norm of the Lagrangian with barrier multipliers.
    pub kkt_residual: f64,
}

impl SurrogateProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: &GainMatrix,
        sigma2: f64,
        eta: &[f64],
        weights: &[f64],
        beta: f64,
        gamma: f64,
        p_max: f64,
        p_fixed: &[f64],
    ) -> Self {
        let n = h.clients();
        let a = (0..n * n).map(|i| h.get(i / n, i % n) / sigma2).collect();
        let mut sp = Self {
            n,
            a,
            eta: eta.to_vec(),
            weights: weights.to_vec(),
            beta,
            gamma,
            p_max,
            p_fixed: p_fixed.to_vec(),
            x_anchor: vec![0.0; n],
            i_anchor: vec![1.0; n],
        };
        sp.set_anchor(&vec![0.0; n], &vec![0.0; n]);
        sp
    }

    pub fn set_anchor(&mut self, x: &[f64], xi: &[f64]) {
        self.x_anchor.copy_from_slice(x);
        for k in 0..self.n {
            self.i_anchor[k] = 1.0 + self.cross(k, xi);
        }
    }

    pub fn set_p_fixed(&mut self, p: &[f64]) {
        self.p_fixed.copy_from_slice(p);
    }

    fn cross(&self, k: usize, xi: &[f64]) -> f64 {
        let row = &self.a[k * self.n..(k + 1) * self.n];
        row.iter().zip(xi).enumerate().filter(|(l, _)| *l != k).map(|(_, (a, v))| a * v).sum()
    }

    /// Surrogate rate constraint value for client `k`.
    fn constraint(&self, k: usize, x: &[f64], xi: &[f64]) -> f64 {
        let interference = 1.0 + self.cross(k, xi);
        let signal = interference + self.a[k * self.n + k] * xi[k];
        let ia = self.i_anchor[k];
        self.eta[k] * x[k] - (signal.ln() - ia.ln() - interference / ia + 1.0) / LN_2
    }

    /// Same as [`Self::constraint`] with the concave term kept exact.
    fn true_constraint(&self, k: usize, x: &[f64], xi: &[f64]) -> f64 {
        let interference = 1.0 + self.cross(k, xi);
        let signal = interference + self.a[k * self.n + k] * xi[k];
        self.eta[k] * x[k] - (signal.ln() - interference.ln()) / LN_2
    }

    /// Surrogate objective: linearized binary penalty.
    pub fn objective(&self, x: &[f64], xi: &[f64]) -> f64 {
        let mut f = 0.0;
        for k in 0..self.n {
            let (xk, ak) = (x[k], self.x_anchor[k]);
            f += -self.weights[k] * xk + (xk - 2.0 * ak * xk + ak * ak) / self.beta;
            let c = xi[k] - xk * self.p_fixed[k];
            f += self.gamma * c * c;
        }
        f
    }

    /// Objective with the exact binary penalty.
    pub fn true_objective(&self, x: &[f64], xi: &[f64]) -> f64 {
        let mut f = 0.0;
        for k in 0..self.n {
            let xk = x[k];
            f += -self.weights[k] * xk + xk * (1.0 - xk) / self.beta;
            let c = xi[k] - xk * self.p_fixed[k];
            f += self.gamma * c * c;
        }
        f
    }

    fn strictly_inside(&self, x: &[f64], xi: &[f64]) -> bool {
        (0..self.n)
            .all(|k| x[k] > 0.0 && x[k] < 1.0 && xi[k] > 0.0 && xi[k] < self.p_max && self.constraint(k, x, xi) < 0.0)
    }

    /// `t f + barrier`, or `None` outside the domain.
    fn barrier_value(&self, t: f64, z: &[f64]) -> Option<f64> {
        let (x, xi) = z.split_at(self.n);
        if !self.strictly_inside(x, xi) {
            return None;
        }
        let mut v = t * self.objective(x, xi);
        for k in 0..self.n {
            v -= (-self.constraint(k, x, xi)).ln();
            v -= x[k].ln() + (1.0 - x[k]).ln();
            v -= xi[k].ln() + (self.p_max - xi[k]).ln();
        }
        Some(v)
    }

    /// Gradient of the surrogate constraint of client `k` with respect to `z`.
    fn constraint_gradient(&self, k: usize, xi: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n;
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[k] = self.eta[k];
        let row = &self.a[k * n..(k + 1) * n];
        let interference = 1.0 + self.cross(k, xi);
        let signal = interference + row[k] * xi[k];
        for l in 0..n {
            let own = row[l] / signal;
            let lin = if l == k { 0.0 } else { row[l] / self.i_anchor[k] };
            grad[n + l] = -(own - lin) / LN_2;
        }
        signal
    }

    /// Gradient and Hessian of `t f + barrier`.
    fn derivatives(&self, t: f64, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let (x, xi) = z.split_at(n);
        let mut g = DVector::zeros(2 * n);
        let mut hm = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            let (xk, pk) = (x[k], self.p_fixed[k]);
            let c = xi[k] - xk * pk;
            g[k] += t * (-self.weights[k] + (1.0 - 2.0 * self.x_anchor[k]) / self.beta - 2.0 * self.gamma * c * pk);
            g[n + k] += t * 2.0 * self.gamma * c;
            hm[(k, k)] += t * 2.0 * self.gamma * pk * pk;
            hm[(k, n + k)] -= t * 2.0 * self.gamma * pk;
            hm[(n + k, k)] -= t * 2.0 * self.gamma * pk;
            hm[(n + k, n + k)] += t * 2.0 * self.gamma;

            for (idx, v, hi) in [(k, xk, 1.0), (n + k, xi[k], self.p_max)] {
                g[idx] += -1.0 / v + 1.0 / (hi - v);
                hm[(idx, idx)] += 1.0 / (v * v) + 1.0 / ((hi - v) * (hi - v));
            }
        }
        let mut cg = vec![0.0; 2 * n];
        for k in 0..n {
            let s = -self.constraint(k, x, xi);
            let signal = self.constraint_gradient(k, xi, &mut cg);
            let row = &self.a[k * n..(k + 1) * n];
            for i in 0..2 * n {
                g[i] += cg[i] / s;
                for j in 0..2 * n {
                    hm[(i, j)] += cg[i] * cg[j] / (s * s);
                }
            }
            // curvature of -ln(signal)/ln2, signal affine in xi
            let w = 1.0 / (s * LN_2 * signal * signal);
            for i in 0..n {
                for j in 0..n {
                    hm[(n + i, n + j)] += w * row[i] * row[j];
                }
            }
        }
        (g, hm)
    }

    /// Newton direction with symmetric diagonal scaling.
    fn newton_step(g: &DVector<f64>, hm: &DMatrix<f64>) -> Option<DVector<f64>> {
        let m = g.len();
        let d = DVector::from_iterator(m, (0..m).map(|i| 1.0 / hm[(i, i)].max(f64::MIN_POSITIVE).sqrt()));
        let scaled = DMatrix::from_fn(m, m, |i, j| hm[(i, j)] * d[i] * d[j]);
        let rhs = -g.component_mul(&d);
        let y = match scaled.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => scaled.lu().solve(&rhs)?,
        };
        Some(y.component_mul(&d))
    }

    /// Log-barrier solve from a strictly feasible `(x, xi)`.
    pub fn solve(&self, x0: &[f64], xi0: &[f64]) -> Result<InnerSolution> {
        let n = self.n;
        let mut z: Vec<f64> = x0.iter().chain(xi0).copied().collect();
        if !self.strictly_inside(x0, xi0) {
            return Err(Error::NoStrictInterior("surrogate subproblem started outside its strict interior".into()));
        }
        let constraints = (5 * n) as f64;
        let mut t = 1.0;
        loop {
            self.center(t, &mut z);
            if constraints / t < 1e-8 {
                break;
            }
            t *= 10.0;
        }
        let (x, xi) = z.split_at(n);
        let max_violation = (0..n).map(|k| self.constraint(k, x, xi)).fold(f64::NEG_INFINITY, f64::max);
        Ok(InnerSolution {
            objective: self.objective(x, xi),
            kkt_residual: self.kkt_residual(t, &z),
            max_violation,
            x: x.to_vec(),
            xi: xi.to_vec(),
        })
    }

    /// Damped Newton on `t f + barrier`. Once the Armijo test can no longer
    /// resolve progress against rounding in the barrier value, full steps are
    /// taken only while they at least halve the Newton decrement.
    fn center(&self, t: f64, z: &mut [f64]) {
        let n = self.n;
        let mut trial = vec![0.0; z.len()];
        for _ in 0..200 {
            let Some((step, decrement)) = self.newton_direction(t, z) else {
                return;
            };
            if !(decrement > 1e-12) {
                return;
            }
            let f0 = self.barrier_value(t, z).expect("iterate stays interior");
            // largest step keeping the box strictly feasible
            let mut s_box: f64 = 1.0;
            for i in 0..2 * n {
                let hi = if i < n { 1.0 } else { self.p_max };
                if step[i] < 0.0 {
                    s_box = s_box.min(-0.99 * z[i] / step[i]);
                } else if step[i] > 0.0 {
                    s_box = s_box.min(0.99 * (hi - z[i]) / step[i]);
                }
            }
            let mut s = s_box;
            let mut accepted = false;
            if decrement > 1e-12 * f0.abs() {
                while s > 1e-10 {
                    for i in 0..z.len() {
                        trial[i] = z[i] + s * step[i];
                    }
                    if let Some(f1) = self.barrier_value(t, &trial) {
                        if f1 <= f0 - 0.25 * s * decrement {
                            accepted = true;
                            break;
                        }
                    }
                    s *= 0.5;
                }
            }
            if !accepted {
                for i in 0..z.len() {
                    trial[i] = z[i] + s_box * step[i];
                }
                let improves = self.barrier_value(t, &trial).is_some()
                    && self.newton_direction(t, &trial).is_some_and(|(_, d)| d < 0.5 * decrement);
                if !improves {
                    return;
                }
            }
            z.copy_from_slice(&trial);
        }
    }

    fn newton_direction(&self, t: f64, z: &[f64]) -> Option<(DVector<f64>, f64)> {
        let (g, hm) = self.derivatives(t, z);
        let step = Self::newton_step(&g, &hm)?;
        let decrement = -g.dot(&step);
        Some((step, decrement))
    }

    /// `||P_box(z - r) - z||_inf` with `r` the Lagrangian gradient. The
    /// multipliers start from the barrier estimates `1 / (t s_k)` and are
    /// refined by least squares on the coordinates away from the box; the
    /// smaller of the two residuals is reported.
    fn kkt_residual(&self, t: f64, z: &[f64]) -> f64 {
        let n = self.n;
        let (x, xi) = z.split_at(n);
        let mut r0 = DVector::zeros(2 * n);
        for k in 0..n {
            let c = xi[k] - x[k] * self.p_fixed[k];
            r0[k] =
                -self.weights[k] + (1.0 - 2.0 * self.x_anchor[k]) / self.beta - 2.0 * self.gamma * c * self.p_fixed[k];
            r0[n + k] = 2.0 * self.gamma * c;
        }
        let mut grads = DMatrix::zeros(2 * n, n);
        let mut cg = vec![0.0; 2 * n];
        for k in 0..n {
            self.constraint_gradient(k, xi, &mut cg);
            grads.set_column(k, &DVector::from_column_slice(&cg));
        }
        let upper = |i: usize| if i < n { 1.0 } else { self.p_max };
        let residual = |lambda: &DVector<f64>| -> f64 {
            let r = &r0 + &grads * lambda;
            (0..2 * n).map(|i| ((z[i] - r[i]).clamp(0.0, upper(i)) - z[i]).abs()).fold(0.0, f64::max)
        };
        let barrier: DVector<f64> = DVector::from_iterator(n, (0..n).map(|k| 1.0 / (t * -self.constraint(k, x, xi))));
        let base = residual(&barrier);

        let free: Vec<usize> =
            (0..2 * n).filter(|&i| z[i] > 1e-6 * upper(i) && z[i] < (1.0 - 1e-6) * upper(i)).collect();
        if free.is_empty() {
            return base;
        }
        let top = barrier.max();
        let active: Vec<usize> = (0..n).filter(|&k| barrier[k] > 1e-6 * top).collect();
        let mut lambda = DVector::zeros(n);
        active.iter().for_each(|&k| lambda[k] = barrier[k]);
        let r = &r0 + &grads * &lambda;
        let sub_g = DMatrix::from_fn(free.len(), active.len(), |a, b| grads[(free[a], active[b])]);
        let sub_r = DVector::from_iterator(free.len(), free.iter().map(|&i| -r[i]));
        let Ok(delta) = sub_g.svd(true, true).solve(&sub_r, 1e-14) else {
            return base;
        };
        active.iter().zip(delta.iter()).for_each(|(&k, d)| lambda[k] = (lambda[k] + d).max(0.0));
        let refined = lambda;
        base.min(residual(&refined))
    }

    /// Moves `(x, xi)` into the strict interior of the surrogate constraints
    /// anchored at `xi` itself, shrinking selections where needed.
    pub fn strict_start(&mut self, x: &[f64], xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let lo = 1e-9 * self.p_max;
        let xi: Vec<f64> = xi.iter().map(|&v| v.clamp(lo, self.p_max * (1.0 - 1e-9))).collect();
        let mut x: Vec<f64> = x.iter().map(|&v| v.clamp(1e-9, 1.0 - 1e-9)).collect();
        self.set_anchor(&self.x_anchor.clone(), &xi);
        for k in 0..n {
            let capacity = (self.eta[k] * x[k] - self.constraint(k, &x, &xi)).max(0.0);
            // constraint(k) = eta_k x_k - capacity, capacity > 0 once xi_k > 0
            if self.constraint(k, &x, &xi) > -INTERIOR_MARGIN {
                if capacity <= INTERIOR_MARGIN || self.eta[k] == 0.0 {
                    return Err(Error::NoStrictInterior(format!(
                        "rate constraint of client {k} cannot be made strict"
                    )));
                }
                x[k] = x[k].min(0.5 * capacity / self.eta[k]);
            }
        }
        if !self.strictly_inside(&x, &xi) {
            return Err(Error::NoStrictInterior("phase-I point not strictly feasible".into()));
        }
        Ok((x, xi))
    }

    pub fn true_constraints(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        (0..self.n).map(|k| self.true_constraint(k, x, xi)).collect()
    }
}

/// One convex surrogate solve anchored at `(x_n, xi_n)` with fixed powers.
///
/// `(x_n, xi_n)` must satisfy the rate constraints; it is nudged into the
/// strict interior before the barrier method starts.
pub fn solve_p3a_inner(
    problem: &JcspcProblem<'_>,
    x_n: &[f64],
    xi_n: &[f64],
    p_fixed: &[f64],
) -> Result<InnerSolution> {
    let base = &problem.base;
    let weights = normalized_weights(base.losses);
    let mut sp = SurrogateProblem::new(
        base.gains,
        base.sigma2,
        base.eta,
        &weights,
        problem.settings.beta,
        problem.settings.gamma,
        base.p_max,
        p_fixed,
    );
    sp.set_anchor(x_n, xi_n);
    let (x0, xi0) = sp.strict_start(x_n, xi_n)?;
    sp.set_anchor(x_n, xi_n);
    if !sp.strictly_inside(&x0, &xi0) {
        return Err(Error::NoStrictInterior("start is not strictly feasible for the surrogate".into()));
    }
    sp.solve(&x0, &xi0)
}

/// Exact minimizer of `sum (xi_k - x_k p_k)^2` over
/// `{0 <= p <= P_max, sum p <= P_sum}` via the KKT conditions, with the
/// sum-constraint multiplier found by bisection.
pub fn solve_p3b(xi: &[f64], x: &[f64], p_max: f64, p_sum: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        xi.iter()
            .zip(x)
            .map(|(&s, &v)| if v <= X_EPS { 0.0 } else { (s / v - mu / (2.0 * v * v)).clamp(0.0, p_max) })
            .collect()
    };
    let free = at(0.0);
    if free.iter().sum::<f64>() <= p_sum {
        return free;
    }
    let mut lo = 0.0;
    let mut hi = xi.iter().zip(x).filter(|(_, &v)| v > X_EPS).map(|(&s, &v)| 2.0 * v * s).fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid).iter().sum::<f64>() > p_sum {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs the full alternation. Clients with `eta_k = 0` have nothing left to
/// send; they are selected outright at zero power and left out of the solve.
/// Returns the continuous solution; see [`round_and_repair`].
pub fn pamm_solve(problem: &JcspcProblem<'_>) -> Result<(Allocation, PammTrace)> {
    let base = &problem.base;
    let settings = problem.settings;
    let k_all = base.clients();
    let active: Vec<usize> = (0..k_all).filter(|&k| base.eta[k] > 0.0).collect();

    let mut x_full = vec![1.0; k_all];
    let mut p_full = vec![0.0; k_all];
    let mut xi_full = vec![0.0; k_all];
    let mut trace = PammTrace::default();

    if !active.is_empty() {
        let n = active.len();
        let gains = base.gains.subset(&active);
        let eta: Vec<f64> = active.iter().map(|&k| base.eta[k]).collect();
        let all_weights = normalized_weights(base.losses);
        let weights: Vec<f64> = active.iter().map(|&k| all_weights[k]).collect();

        let p0 = (base.p_sum / n as f64).min(base.p_max);
        let mut p = vec![p0; n];
        let x_init = vec![0.5; n];
        let xi_init: Vec<f64> = x_init.iter().zip(&p).map(|(a, b)| a * b).collect();

        let mut gamma = settings.gamma;
        let mut sp = SurrogateProblem::new(&gains, base.sigma2, &eta, &weights, settings.beta, gamma, base.p_max, &p);
        sp.set_anchor(&x_init, &xi_init);
        let (mut x, mut xi) = sp.strict_start(&x_init, &xi_init).map_err(|e| match e {
            Error::NoStrictInterior(msg) => {
                Error::NoStrictInterior(format!("{msg} (client index in the full problem: one of {active:?})"))
            }
            other => other,
        })?;

        loop {
            sp.gamma = gamma;
            for _ in 0..settings.outer_iters {
                sp.set_p_fixed(&p);
                let x_prev = x.clone();
                for _ in 0..settings.inner_iters {
                    sp.set_anchor(&x, &xi);
                    let sol = sp.solve(&x, &xi)?;
                    let moved = l2_diff(&sol.x, &x).max(l2_diff(&sol.xi, &xi));
                    x = sol.x;
                    xi = sol.xi;
                    trace.inner_objectives.push(sp.true_objective(&x, &xi));
                    if moved < 1e-10 {
                        break;
                    }
                }
                let p_next = solve_p3b(&xi, &x, base.p_max, base.p_sum);
                let dx = l2_diff(&x, &x_prev);
                let dp = l2_diff(&p_next, &p);
                p = p_next;
                sp.set_p_fixed(&p);
                trace.records.push(TraceRecord {
                    dx,
                    dp,
                    zero_one: alloc::zero_one_loss(&x),
                    objective: sp.true_objective(&x, &xi),
                    coupling: coupling(&x, &xi, &p),
                    gamma,
                });
                if dx < settings.tol && dp < settings.tol {
                    break;
                }
            }
            if coupling(&x, &xi, &p) <= settings.coupling_tol * base.p_max
                || trace.escalations >= settings.max_escalations
            {
                break;
            }
            gamma *= 10.0;
            trace.escalations += 1;
        }

        for (a, &k) in active.iter().enumerate() {
            x_full[k] = x[a];
            p_full[k] = p[a];
            xi_full[k] = xi[a];
        }
    }

    let mut alloc = Allocation {
        objective: alloc::objective(&x_full, base.losses),
        x: x_full,
        p: p_full,
        xi: xi_full,
        feasible: false,
    };
    alloc.feasible = alloc::certify(&alloc, base).feasible;
    Ok((alloc, trace))
}

fn coupling(x: &[f64], xi: &[f64], p: &[f64]) -> f64 {
    (0..x.len()).map(|k| (xi[k] - x[k] * p[k]).abs()).fold(0.0, f64::max)
}

/// Minimum powers for a binary selection (unselected clients silent), if
/// they fit both budgets.
pub fn selection_powers(problem: &Problem<'_>, selected: &[bool]) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..selected.len()).filter(|&k| selected[k]).collect();
    let mut p = vec![0.0; selected.len()];
    if idx.is_empty() {
        return Some(p);
    }
    let sub = problem.gains.subset(&idx);
    let eta: Vec<f64> = idx.iter().map(|&k| problem.eta[k]).collect();
    let targets = SinrTargets::from_efficiency(&eta).ok()?;
    let sub_p = min_power(&sub, &targets, problem.sigma2, problem.p_max).ok()?;
    if sub_p.iter().sum::<f64>() > problem.p_sum * (1.0 + alloc::FEAS_TOL) {
        return None;
    }
    for (a, &k) in idx.iter().enumerate() {
        p[k] = sub_p[a];
    }
    Some(p)
}

/// Rescales losses so the largest is one. The binary selection maximizing
/// `sum x_k pi_k` is unchanged, and the penalty weight `1/beta` keeps the
/// same meaning whatever the loss units.
pub fn normalized_weights(losses: &[f64]) -> Vec<f64> {
    let top = losses.iter().cloned().fold(0.0, f64::max);
    if top > 0.0 {
        losses.iter().map(|l| l / top).collect()
    } else {
        vec![0.0; losses.len()]
    }
}

fn selection_value(problem: &Problem<'_>, selected: &[bool]) -> f64 {
    (0..selected.len()).filter(|&k| selected[k]).map(|k| problem.losses[k]).sum()
}

/// Local search around a feasible binary selection: greedily adds clients
/// in descending loss order, then applies improving single swaps (and the
/// additions they make room for) until none is left.
pub fn local_improve(alloc: &Allocation, problem: &Problem<'_>) -> Allocation {
    let k = problem.clients();
    let mut selected: Vec<bool> = alloc.x.iter().map(|&v| v >= 0.5).collect();
    if selection_powers(problem, &selected).is_none() {
        return alloc.clone();
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| problem.losses[b].total_cmp(&problem.losses[a]).then(a.cmp(&b)));
    let fill = |selected: &mut Vec<bool>| {
        for &j in &order {
            if !selected[j] {
                selected[j] = true;
                if selection_powers(problem, selected).is_none() {
                    selected[j] = false;
                }
            }
        }
    };
    fill(&mut selected);
    'search: loop {
        let current = selection_value(problem, &selected);
        for i in (0..k).filter(|&i| selected[i]) {
            for &j in order.iter().filter(|&&j| !selected[j]) {
                let mut trial = selected.clone();
                trial[i] = false;
                trial[j] = true;
                if selection_powers(problem, &trial).is_none() {
                    continue;
                }
                fill(&mut trial);
                if selection_value(problem, &trial) > current {
                    selected = trial;
                    continue 'search;
                }
            }
        }
        break;
    }
    let improved = selection_value(problem, &selected) > alloc.objective;
    match selection_powers(problem, &selected) {
        Some(p) if improved => {
            let out = Allocation::binary(&selected, p, problem);
            if out.feasible {
                out
            } else {
                alloc.clone()
            }
        }
        _ => alloc.clone(),
    }
}

/// The full scheduler: PAMM, rounding with repair, then local improvement.
pub fn solve_jcspc(problem: &JcspcProblem<'_>) -> Result<(Allocation, Allocation, PammTrace)> {
    let (relaxed, trace) = pamm_solve(problem)?;
    let repaired = round_and_repair(&relaxed, &problem.base);
    let improved = local_improve(&repaired, &problem.base);
    Ok((relaxed, improved, trace))
}

/// Thresholds the selection at 0.5 and drops the lowest-loss selected client
/// until minimum-power control supports the rest.
pub fn round_and_repair(alloc: &Allocation, problem: &Problem<'_>) -> Allocation {
    if alloc::certify(alloc, problem).feasible {
        return alloc.clone();
    }
    let mut selected: Vec<bool> = alloc.x.iter().map(|&v| v >= 0.5).collect();
    loop {
        if let Some(p) = selection_powers(problem, &selected) {
            let out = Allocation::binary(&selected, p, problem);
            if out.feasible {
                return out;
            }
        }
        let drop = (0..selected.len())
            .filter(|&k| selected[k])
            .min_by(|&a, &b| problem.losses[a].total_cmp(&problem.losses[b]).then(b.cmp(&a)))
            .expect("the empty selection is always feasible");
        selected[drop] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::scenario_gains;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gm(rows: &[&[f64]]) -> GainMatrix {
        GainMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn eta_examples() {
        let mut cfg = ScenarioConfig::reference(0);
        cfg.sample_bits = vec![1e6; 5];
        cfg.dataset_sizes = vec![100; 5];
        cfg.time_budget = 350.0;
        let eta = eta_targets(&cfg, 50.0, &[10, 100, 10, 10, 10]).unwrap();
        assert!((eta[0] - 0.03).abs() < 1e-15);
        assert_eq!(eta[1], 0.0);
        let longer = eta_targets(
            &{
                let mut c = cfg.clone();
                c.time_budget = 650.0;
                c
            },
            50.0,
            &[10; 5],
        )
        .unwrap();
        assert!((longer[0] - 0.015).abs() < 1e-15);
        assert!(eta_targets(&cfg, 350.0, &[10; 5]).is_err());
    }

    #[test]
    fn phi1_examples() {
        assert_eq!(phi1(&[0.0, 1.0, 1.0], 0.1), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        assert!((phi1_surrogate(&a, &a, 0.3) - phi1(&a, 0.3)).abs() < 1e-14);
        assert!((phi1_surrogate(&[0.0], &[0.5], 0.1) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn phi_k_examples() {
        let h = gm(&[&[2.0, 0.5], &[0.3, 1.0]]);
        let eta = [1.0, 2.0];
        let x = [0.4, 0.0];
        let xi = [0.7, 0.0];
        assert_eq!(phi_k(&x, &xi, &h, 0.1, &eta, 1).unwrap(), 0.0);
        let a = phi_k(&x, &xi, &h, 0.1, &eta, 0).unwrap();
        let b = phi_k_surrogate(&x, &xi, &xi, &h, 0.1, &eta, 0).unwrap();
        assert!((a - b).abs() < 1e-14);
        // interference large and negative makes the log argument invalid
        assert!(phi_k(&x, &[-10.0, -10.0], &h, 0.1, &eta, 0).is_err());
    }

    #[test]
    fn phi_k_surrogate_bounds_from_above() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let k = rng.random_range(1..5);
            let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0.01..3.0)).collect()).collect();
            let h = GainMatrix::from_rows(rows).unwrap();
            let eta: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..4.0)).collect();
            let x: Vec<f64> = (0..k).map(|_| rng.random()).collect();
            let xi: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
            let xs: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
            let s2 = rng.random_range(0.01..1.0);
            for c in 0..k {
                let t = phi_k(&x, &xi, &h, s2, &eta, c).unwrap();
                let s = phi_k_surrogate(&x, &xi, &xs, &h, s2, &eta, c).unwrap();
                assert!(s >= t - 1e-12);
            }
        }
    }

    #[test]
    fn p3b_examples() {
        let p = solve_p3b(&[0.1, 0.05], &[1.0, 1.0], 0.2, 0.3);
        assert_eq!(p, vec![0.1, 0.05]);
        let p = solve_p3b(&[0.1, 0.05], &[0.0, 1.0], 0.2, 0.3);
        assert_eq!(p, vec![0.0, 0.05]);
        let p = solve_p3b(&[0.25, 0.25], &[1.0, 1.0], 0.2, 0.3);
        assert!((p[0] - 0.15).abs() < 1e-12 && (p[1] - 0.15).abs() < 1e-12);
    }

    fn reference_problem(seed: u64) -> (GainMatrix, Vec<f64>, Vec<f64>, ScenarioConfig) {
        let cfg = ScenarioConfig::reference(seed);
        let h = scenario_gains(&cfg);
        let losses: Vec<f64> = [0.38159, 0.26150, 0.02561, 0.21864, 0.31429].iter().map(|m| m * 280.0).collect();
        let pilots = cfg.pilot_sizes();
        let t0 = crate::pttm::pttm_bisect(&h, &cfg, &pilots).unwrap().t0;
        let eta = eta_targets(&cfg, t0, &pilots).unwrap();
        (h, losses, eta, cfg)
    }

    fn reference_base<'a>(h: &'a GainMatrix, losses: &'a [f64], eta: &'a [f64], cfg: &ScenarioConfig) -> Problem<'a> {
        Problem { gains: h, losses, eta, p_max: cfg.p_max, p_sum: cfg.p_sum, sigma2: cfg.noise_power }
    }

    #[test]
    fn default_scenario_converges_to_a_vertex() {
        let (h, losses, eta, cfg) = reference_problem(0);
        let base = reference_base(&h, &losses, &eta, &cfg);
        let settings = PammSettings::from_config(&cfg);
        let (relaxed, best, trace) = solve_jcspc(&JcspcProblem { base, settings: &settings }).unwrap();
        assert!(best.feasible);
        assert!(trace.records.len() <= 60);
        let last = trace.records.last().unwrap();
        assert!(last.dx < 1e-4 && last.dp < 1e-4);
        assert!(relaxed.zero_one_loss() <= 0.05);
        assert!(trace.records.iter().all(|r| r.dx.is_finite() && r.objective.is_finite()));
    }

    #[test]
    fn true_objective_never_increases_without_escalation() {
        for seed in 0..10 {
            let (h, losses, eta, cfg) = reference_problem(seed);
            let base = reference_base(&h, &losses, &eta, &cfg);
            let settings = PammSettings { max_escalations: 0, ..PammSettings::from_config(&cfg) };
            let (_, trace) = pamm_solve(&JcspcProblem { base, settings: &settings }).unwrap();
            for w in trace.inner_objectives.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    fn random_gains(rng: &mut ChaCha8Rng, k: usize) -> GainMatrix {
        let rows = (0..k)
            .map(|a| {
                (0..k).map(|b| if a == b { rng.random_range(0.5..2.0) } else { rng.random_range(0.0..0.5) }).collect()
            })
            .collect();
        GainMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn surrogate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let step = 1e-6;
        for _ in 0..300 {
            let k = rng.random_range(1..5);
            let h = random_gains(&mut rng, k);
            let eta: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.9)).collect();
            let xi: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let anchor: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let c = rng.random_range(0..k);
            let g = phi_k_surrogate_gradient(&xi, &anchor, &h, 0.1, &eta, c);
            for i in 0..2 * k {
                let (mut xp, mut xm, mut sp, mut sm) = (x.clone(), x.clone(), xi.clone(), xi.clone());
                if i < k {
                    xp[i] += step;
                    xm[i] -= step;
                } else {
                    sp[i - k] += step;
                    sm[i - k] -= step;
                }
                let fd = (phi_k_surrogate(&xp, &sp, &anchor, &h, 0.1, &eta, c).unwrap()
                    - phi_k_surrogate(&xm, &sm, &anchor, &h, 0.1, &eta, c).unwrap())
                    / (2.0 * step);
                assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
            // tangency: gradients agree at the expansion point
            let gs = phi_k_surrogate_gradient(&anchor, &anchor, &h, 0.1, &eta, c);
            let gt = phi_k_gradient(&anchor, &h, 0.1, &eta, c);
            for (a, b) in gs.iter().zip(&gt) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn surrogate_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let k = rng.random_range(1..5);
            let h = random_gains(&mut rng, k);
            let eta: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
            let anchor: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
                ((0..k).map(|_| rng.random()).collect(), (0..k).map(|_| rng.random_range(0.0..1.0)).collect())
            };
            let (xa, sa) = draw(&mut rng);
            let (xb, sb) = draw(&mut rng);
            let mid = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect() };
            let (xm, sm) = (mid(&xa, &xb), mid(&sa, &sb));
            let c = rng.random_range(0..k);
            let f = |x: &[f64], s: &[f64]| phi_k_surrogate(x, s, &anchor, &h, 0.05, &eta, c).unwrap();
            assert!(f(&xm, &sm) <= 0.5 * (f(&xa, &sa) + f(&xb, &sb)) + 1e-12);
        }
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = random_gains(&mut rng, 3);
        let mut sp =
            SurrogateProblem::new(&h, 0.1, &[0.5, 0.8, 0.3], &[1.0, 0.6, 0.3], 0.5, 20.0, 1.0, &[0.4, 0.3, 0.5]);
        sp.set_anchor(&[0.5, 0.5, 0.5], &[0.2, 0.2, 0.2]);
        let z = vec![0.3, 0.4, 0.2, 0.3, 0.25, 0.35];
        let (g, hm) = sp.derivatives(3.0, &z);
        let step = 1e-6;
        for i in 0..6 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += step;
            zm[i] -= step;
            let fd = (sp.barrier_value(3.0, &zp).unwrap() - sp.barrier_value(3.0, &zm).unwrap()) / (2.0 * step);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "grad {i}: {fd} vs {}", g[i]);
            let (gp, _) = sp.derivatives(3.0, &zp);
            let (gm, _) = sp.derivatives(3.0, &zm);
            for j in 0..6 {
                let fd = (gp[j] - gm[j]) / (2.0 * step);
                assert!((fd - hm[(j, i)]).abs() <= 1e-4 * hm[(j, i)].abs().max(1.0), "hess {j},{i}");
            }
        }
    }

    #[test]
    fn inner_solve_meets_its_accuracy_targets() {
        let (h, losses, eta, cfg) = reference_problem(4);
        let base = reference_base(&h, &losses, &eta, &cfg);
        let settings = PammSettings::from_config(&cfg);
        let problem = JcspcProblem { base, settings: &settings };
        let p = vec![0.06; 5];
        let x0 = vec![0.5; 5];
        let xi0: Vec<f64> = vec![1e-4; 5];
        let sol = solve_p3a_inner(&problem, &x0, &xi0, &p).unwrap();
        assert!(sol.max_violation <= 1e-8);
        assert!(sol.kkt_residual <= 1e-6, "{}", sol.kkt_residual);
        assert!(sol.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(sol.xi.iter().all(|&v| (0.0..=cfg.p_max).contains(&v)));
    }

    #[test]
    fn zero_demand_client_fills_its_slot() {
        let h = gm(&[&[1.0]]);
        let settings = PammSettings {
            beta: 1.0,
            gamma: 10.0,
            outer_iters: 60,
            inner_iters: 20,
            tol: 1e-6,
            coupling_tol: 1e-4,
            max_escalations: 3,
        };
        let base = Problem { gains: &h, losses: &[2.0], eta: &[0.0], p_max: 1.0, p_sum: 1.0, sigma2: 0.1 };
        let problem = JcspcProblem { base, settings: &settings };
        let sol = solve_p3a_inner(&problem, &[0.5], &[0.2], &[0.4]).unwrap();
        assert!(sol.x[0] > 1.0 - 1e-6);
        assert!((sol.xi[0] - 0.4).abs() < 1e-3, "{}", sol.xi[0]);
        // pamm_solve selects it outright at zero power
        let (alloc, _) = pamm_solve(&problem).unwrap();
        assert_eq!((alloc.x[0], alloc.p[0]), (1.0, 0.0));
        assert!(alloc.feasible);
    }

    #[test]
    fn all_zero_losses_still_reach_vertices() {
        let (h, _, eta, cfg) = reference_problem(2);
        let zeros = [0.0; 5];
        let base = reference_base(&h, &zeros, &eta, &cfg);
        let settings = PammSettings::from_config(&cfg);
        let (alloc, _) = pamm_solve(&JcspcProblem { base, settings: &settings }).unwrap();
        assert_eq!(alloc.objective, 0.0);
        assert!(alloc.zero_one_loss() <= 1e-3);
    }

    #[test]
    fn single_feasible_client_is_selected() {
        let h = gm(&[&[1e-7]]);
        let cfg = ScenarioConfig::reference(0);
        let base = Problem {
            gains: &h,
            losses: &[5.0],
            eta: &[4.0],
            p_max: cfg.p_max,
            p_sum: cfg.p_sum,
            sigma2: cfg.noise_power,
        };
        let settings = PammSettings::from_config(&cfg);
        let (relaxed, best, _) = solve_jcspc(&JcspcProblem { base, settings: &settings }).unwrap();
        assert!(relaxed.x[0] > 0.99);
        let need = (2f64.powf(4.0) - 1.0) * cfg.noise_power / 1e-7;
        assert!(best.feasible && best.x == vec![1.0]);
        assert!(best.p[0] >= need * (1.0 - 1e-9));
    }

    #[test]
    fn thresholding_keeps_the_majority_side() {
        let h = gm(&[&[1.0, 0.01], &[0.01, 1.0]]);
        let base = Problem { gains: &h, losses: &[1.0, 1.0], eta: &[1.0, 1.0], p_max: 1.0, p_sum: 2.0, sigma2: 0.1 };
        let relaxed =
            Allocation { x: vec![0.9, 0.1], p: vec![0.5, 0.5], xi: vec![0.45, 0.05], feasible: false, objective: 1.0 };
        let out = round_and_repair(&relaxed, &base);
        assert_eq!(out.selected(), vec![0]);
        assert!((out.p[0] - 0.1).abs() < 1e-12 && out.p[1] == 0.0);
        // a certified binary input comes back untouched
        assert_eq!(round_and_repair(&out, &base), out);
    }

    #[test]
    fn repair_drops_the_smallest_loss_first() {
        // clients 0 and 1 cannot coexist; client 1 has the smallest loss
        let h = gm(&[&[1.0, 1.2, 0.0], &[1.2, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let losses = [3.0, 1.0, 2.0];
        let base = Problem { gains: &h, losses: &losses, eta: &[1.0, 1.0, 1.0], p_max: 1.0, p_sum: 3.0, sigma2: 0.1 };
        let relaxed = Allocation {
            x: vec![0.8, 0.7, 0.6],
            p: vec![0.5; 3],
            xi: vec![0.4, 0.35, 0.3],
            feasible: false,
            objective: 0.0,
        };
        let out = round_and_repair(&relaxed, &base);
        assert_eq!(out.selected(), vec![0, 2]);
        assert!(out.feasible);
        assert!(crate::oracle::brute_force_p2(&base).unwrap().feasible[0b101]);
    }

    #[test]
    fn local_search_only_moves_uphill() {
        let h = gm(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        // budget for two clients; {1, 2} is best but we start from {0}
        let losses = [1.0, 2.0, 3.0];
        let base = Problem { gains: &h, losses: &losses, eta: &[1.0, 1.0, 1.0], p_max: 1.0, p_sum: 0.25, sigma2: 0.1 };
        let p = selection_powers(&base, &[true, false, false]).unwrap();
        let start = Allocation::binary(&[true, false, false], p, &base);
        let out = local_improve(&start, &base);
        assert_eq!(out.selected(), vec![1, 2]);
        assert!(out.feasible);
        assert_eq!(local_improve(&out, &base), out);
    }

    /// Zooming grid search over `(x1, x2, xi1, xi2)` using only the public
    /// surrogate functions.
    fn grid_p3a(
        h: &GainMatrix,
        eta: &[f64],
        w: &[f64],
        beta: f64,
        gamma: f64,
        p_max: f64,
        p: &[f64],
        xa: &[f64],
        sa: &[f64],
    ) -> f64 {
        let value = |z: &[f64; 4]| -> f64 {
            let x = [z[0], z[1]];
            let xi = [z[2], z[3]];
            for k in 0..2 {
                match phi_k_surrogate(&x, &xi, sa, h, 0.1, eta, k) {
                    Ok(v) if v <= 0.0 => {}
                    _ => return f64::INFINITY,
                }
            }
            let coupling: f64 = (0..2).map(|k| gamma * (xi[k] - x[k] * p[k]).powi(2)).sum();
            -(w[0] * x[0] + w[1] * x[1]) + phi1_surrogate(&x, xa, beta) + coupling
        };
        let hi = [1.0, 1.0, p_max, p_max];
        let mut lo_b = [0.0; 4];
        let mut hi_b = hi;
        let mut best = ([0.0; 4], f64::INFINITY);
        let pts = 24;
        for _ in 0..12 {
            let mut z = [0.0; 4];
            for i0 in 0..=pts {
                z[0] = lo_b[0] + (hi_b[0] - lo_b[0]) * i0 as f64 / pts as f64;
                for i1 in 0..=pts {
                    z[1] = lo_b[1] + (hi_b[1] - lo_b[1]) * i1 as f64 / pts as f64;
                    for i2 in 0..=pts {
                        z[2] = lo_b[2] + (hi_b[2] - lo_b[2]) * i2 as f64 / pts as f64;
                        for i3 in 0..=pts {
                            z[3] = lo_b[3] + (hi_b[3] - lo_b[3]) * i3 as f64 / pts as f64;
                            let v = value(&z);
                            if v < best.1 {
                                best = (z, v);
                            }
                        }
                    }
                }
            }
            for d in 0..4 {
                let half = (hi_b[d] - lo_b[d]) * 2.0 / pts as f64;
                lo_b[d] = (best.0[d] - half).max(0.0);
                hi_b[d] = (best.0[d] + half).min(hi[d]);
            }
        }
        best.1
    }

    #[test]
    fn two_client_inner_solve_matches_grid_search() {
        let h = gm(&[&[1.0, 0.2], &[0.3, 0.8]]);
        let eta = [1.2, 0.9];
        let losses = [1.0, 0.7];
        let settings = PammSettings {
            beta: 1.0,
            gamma: 4.0,
            outer_iters: 1,
            inner_iters: 1,
            tol: 1e-6,
            coupling_tol: 1e-4,
            max_escalations: 0,
        };
        let base = Problem { gains: &h, losses: &losses, eta: &eta, p_max: 1.0, p_sum: 2.0, sigma2: 0.1 };
        let problem = JcspcProblem { base, settings: &settings };
        let (xa, sa, p) = ([0.4, 0.6], [0.3, 0.3], [0.6, 0.5]);
        let sol = solve_p3a_inner(&problem, &xa, &sa, &p).unwrap();
        let grid = grid_p3a(&h, &eta, &losses, 1.0, 4.0, 1.0, &p, &xa, &sa);
        assert!((sol.objective - grid).abs() < 1e-5, "{} vs {grid}", sol.objective);
    }

    #[test]
    fn p3b_matches_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..300 {
            let k = rng.random_range(1..6);
            let x: Vec<f64> =
                (0..k).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
            let xi: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.4)).collect();
            let p = solve_p3b(&xi, &x, 0.2, 0.3);
            let q = crate::oracle::projected_gradient_qp(&xi, &x, 0.2, 0.3, 100_000);
            let f = |p: &[f64]| (0..k).map(|i| (xi[i] - x[i] * p[i]).powi(2)).sum::<f64>();
            assert!(f(&p) <= f(&q) + 1e-12);
        }
    }
}
