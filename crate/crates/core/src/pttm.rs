//! Pilot transmission time minimization.
//!
//! All clients upload their pilots simultaneously. For a trial deadline the
//! pilot volumes translate into SINR targets; the deadline is achievable iff
//! the minimum-power vector for those targets respects both power budgets.
//! Feasibility is monotone in the deadline, so bisection on `[0, T]` finds
//! the shortest one.

use crate::channel::{rate, GainMatrix};
use crate::error::{Error, Result};
use crate::powerctl::{min_power, SinrTargets};
use crate::scenario::ScenarioConfig;

/// Absolute slack (W) on the sum-power check at a trial point.
pub const SUM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionStep {
    pub lower: f64,
    pub upper: f64,
    pub kappa: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PttmResult {
    pub t0: f64,
    pub powers: Vec<f64>,
    /// Per-client pilot rates (bit/s) at `t0`.
    pub rates: Vec<f64>,
    pub trace: Vec<BisectionStep>,
}

/// `gamma_k = 2^(V_k |pilot_k| / (T0 B_k)) - 1`.
pub fn pilot_sinr_targets(
    t0: f64,
    sample_bits: &[f64],
    pilot_sizes: &[usize],
    bandwidth: &[f64],
) -> Result<SinrTargets> {
    if !(t0 > 0.0) {
        return Err(Error::field("T0", format!("pilot time must be positive, got {t0}")));
    }
    let gamma = sample_bits
        .iter()
        .zip(pilot_sizes)
        .zip(bandwidth)
        .map(|((&v, &m), &b)| {
            if m == 0 || v == 0.0 {
                0.0
            } else {
                // saturate so an impossible deadline reads as unsupportable
                ((v * m as f64 / (t0 * b)).exp2() - 1.0).min(f64::MAX)
            }
        })
        .collect();
    SinrTargets::new(gamma)
}

fn pilot_bits(config: &ScenarioConfig, pilot_sizes: &[usize]) -> Vec<f64> {
    config.sample_bits.iter().zip(pilot_sizes).map(|(v, &m)| v * m as f64).collect()
}

/// Minimum powers supporting pilot deadline `t0`, if within both budgets.
pub fn pilot_powers(
    h: &GainMatrix,
    config: &ScenarioConfig,
    pilot_sizes: &[usize],
    t0: f64,
) -> Result<Option<Vec<f64>>> {
    let gamma = pilot_sinr_targets(t0, &config.sample_bits, pilot_sizes, &config.bandwidth)?;
    Ok(match min_power(h, &gamma, config.noise_power, config.p_max) {
        Ok(p) if p.iter().sum::<f64>() <= config.p_sum + SUM_SLACK => Some(p),
        _ => None,
    })
}

/// Bisection until the bracket is no wider than `config.time_tol`.
pub fn pttm_bisect(h: &GainMatrix, config: &ScenarioConfig, pilot_sizes: &[usize]) -> Result<PttmResult> {
    if pilot_sizes.len() != config.clients || h.clients() != config.clients {
        return Err(Error::ShapeMismatch("pilot sizes, gains and scenario disagree on K".into()));
    }
    let mut lower = 0.0;
    let mut upper = config.time_budget;
    let mut powers = pilot_powers(h, config, pilot_sizes, upper)?
        .ok_or_else(|| Error::Infeasible(format!("pilots cannot be delivered within the full budget T = {upper} s")))?;
    let mut trace = Vec::new();
    while upper - lower > config.time_tol {
        let kappa = 0.5 * (lower + upper);
        let trial = pilot_powers(h, config, pilot_sizes, kappa)?;
        trace.push(BisectionStep { lower, upper, kappa, feasible: trial.is_some() });
        match trial {
            Some(p) => {
                upper = kappa;
                powers = p;
            }
            None => lower = kappa,
        }
    }
    let ones = vec![1.0; config.clients];
    let rates = rate(h, &powers, &ones, &config.bandwidth, config.noise_power);
    Ok(PttmResult { t0: upper, powers, rates, trace })
}

/// Pilot time when every client transmits `min(P_max, P_sum / K)`.
pub fn equal_power_pilot_time(h: &GainMatrix, config: &ScenarioConfig, pilot_sizes: &[usize]) -> f64 {
    let k = config.clients;
    let p = vec![config.p_max.min(config.p_sum / k as f64); k];
    let ones = vec![1.0; k];
    let rates = rate(h, &p, &ones, &config.bandwidth, config.noise_power);
    pilot_bits(config, pilot_sizes)
        .iter()
        .zip(&rates)
        .map(|(&bits, &r)| if bits == 0.0 { 0.0 } else { bits / r })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::scenario_gains;

    #[test]
    fn target_examples() {
        let g = pilot_sinr_targets(2.0, &[5.0, 5.0, 8.0], &[2, 0, 1], &[5.0, 5.0, 2.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 3.0]);
        assert!(pilot_sinr_targets(0.0, &[1.0], &[1], &[1.0]).is_err());
    }

    #[test]
    fn empty_pilots_take_no_time() {
        let cfg = ScenarioConfig::reference(0);
        let h = scenario_gains(&cfg);
        let res = pttm_bisect(&h, &cfg, &[0; 5]).unwrap();
        assert!(res.t0 <= cfg.time_tol);
        assert_eq!(equal_power_pilot_time(&h, &cfg, &[0; 5]), 0.0);
    }

    fn single_client() -> (ScenarioConfig, GainMatrix) {
        let mut cfg = ScenarioConfig::reference(3);
        cfg.clients = 1;
        for v in [&mut cfg.bandwidth, &mut cfg.sample_bits, &mut cfg.rho, &mut cfg.shadowing] {
            v.truncate(1);
        }
        cfg.dataset_sizes.truncate(1);
        cfg.client_positions.truncate(1);
        let h = scenario_gains(&cfg);
        (cfg, h)
    }

    #[test]
    fn single_client_closed_form() {
        let (cfg, h) = single_client();
        let pilots = cfg.pilot_sizes();
        let res = pttm_bisect(&h, &cfg, &pilots).unwrap();
        let p = cfg.p_max.min(cfg.p_sum);
        let exact = cfg.sample_bits[0] * pilots[0] as f64
            / (cfg.bandwidth[0] * (1.0 + p * h.direct(0) / cfg.noise_power).log2());
        assert!(res.t0 >= exact - 1e-9 && res.t0 - exact <= cfg.time_tol, "{} vs {exact}", res.t0);
        let eq = equal_power_pilot_time(&h, &cfg, &pilots);
        assert!((eq - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn trace_brackets_nest_and_halve() {
        let cfg = ScenarioConfig::reference(6);
        let h = scenario_gains(&cfg);
        let res = pttm_bisect(&h, &cfg, &cfg.pilot_sizes()).unwrap();
        for w in res.trace.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert!(b.lower >= a.lower && b.upper <= a.upper);
            assert!(((b.upper - b.lower) - 0.5 * (a.upper - a.lower)).abs() < 1e-9);
        }
        // every feasible trial lies above every infeasible one
        let max_bad = res.trace.iter().filter(|s| !s.feasible).map(|s| s.kappa).fold(0.0, f64::max);
        let min_ok = res.trace.iter().filter(|s| s.feasible).map(|s| s.kappa).fold(f64::INFINITY, f64::min);
        assert!(max_bad < min_ok);
        let last = res.trace.last().unwrap();
        let (lo, hi) = if last.feasible { (last.lower, last.kappa) } else { (last.kappa, last.upper) };
        assert!(hi - lo <= cfg.time_tol);
    }

    #[test]
    fn returned_powers_meet_pilot_deadlines() {
        let cfg = ScenarioConfig::reference(9);
        let h = scenario_gains(&cfg);
        let pilots = cfg.pilot_sizes();
        let res = pttm_bisect(&h, &cfg, &pilots).unwrap();
        for k in 0..cfg.clients {
            let need = cfg.sample_bits[k] * pilots[k] as f64 / res.t0;
            assert!(res.rates[k] >= need * (1.0 - 1e-9));
            assert!(res.powers[k] <= cfg.p_max * (1.0 + 1e-12));
        }
        assert!(res.powers.iter().sum::<f64>() <= cfg.p_sum + SUM_SLACK);
    }

    #[test]
    fn infeasible_within_budget() {
        let mut cfg = ScenarioConfig::reference(1);
        cfg.time_budget = 1e-3;
        let h = scenario_gains(&cfg);
        let err = pttm_bisect(&h, &cfg, &cfg.pilot_sizes()).unwrap_err();
        assert!(err.is_infeasible());
    }
}
