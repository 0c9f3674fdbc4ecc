//! Rician uplink channels, MRC composite gains and achievable rates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// Distances below this are treated as the 1 m reference distance, where the
/// path-loss law stops being meaningful.
pub const MIN_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// One length-`N` vector per client.
    pub h: Vec<Vec<Complex64>>,
    /// Line-of-sight angle per client (rad).
    pub theta: Vec<f64>,
}

/// Half-wavelength uniform linear array response.
pub fn steering_vector(theta: f64, antennas: usize) -> Vec<Complex64> {
    let phase = -std::f64::consts::PI * theta.sin();
    (0..antennas).map(|n| Complex64::from_polar(1.0, phase * n as f64)).collect()
}

/// Large-scale gain `h0 * omega_k * d_k^-alpha` per client.
pub fn large_scale_gains(config: &ScenarioConfig) -> Vec<f64> {
    config
        .distances()
        .iter()
        .zip(&config.shadowing)
        .map(|(&d, &omega)| config.ref_path_gain * omega * d.max(MIN_DISTANCE).powf(-config.path_loss_exp))
        .collect()
}

/// Draws one Rician realization for every client.
pub fn sample_channel<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> ChannelRealization {
    let n = config.antennas;
    let kf = config.rician_k;
    let los_w = (kf / (kf + 1.0)).sqrt();
    let nlos_w = (1.0 / (kf + 1.0)).sqrt();
    let half = std::f64::consts::FRAC_1_SQRT_2;

    let mut h = Vec::with_capacity(config.clients);
    let mut theta = Vec::with_capacity(config.clients);
    for amp in large_scale_gains(config).into_iter().map(f64::sqrt) {
        loop {
            let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let los = steering_vector(th, n);
            let v: Vec<Complex64> = los
                .into_iter()
                .map(|a| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    amp * (los_w * a + nlos_w * Complex64::new(re * half, im * half))
                })
                .collect();
            if v.iter().any(|c| c.norm_sqr() > 0.0) {
                h.push(v);
                theta.push(th);
                break;
            }
        }
    }
    ChannelRealization { h, theta }
}

/// K x K composite gains seen after maximum-ratio combining.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    k: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::ShapeMismatch("empty gain matrix".into()));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("gain matrix must be square".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Parse("gain entries must be finite and nonnegative".into()));
        }
        let m = Self { k, data };
        if (0..k).any(|i| m.get(i, i) <= 0.0) {
            return Err(Error::Parse("direct gains must be positive".into()));
        }
        Ok(m)
    }

    pub fn clients(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.k + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.k..(k + 1) * self.k]
    }

    pub fn direct(&self, k: usize) -> f64 {
        self.get(k, k)
    }

    /// Gains restricted to the given clients, in the given order.
    pub fn subset(&self, idx: &[usize]) -> GainMatrix {
        let data = idx.iter().flat_map(|&a| idx.iter().map(move |&b| (a, b))).map(|(a, b)| self.get(a, b)).collect();
        GainMatrix { k: idx.len(), data }
    }

    /// One row per line, whitespace separated, full round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in 0..self.k {
            let row: Vec<String> = self.row(k).iter().map(|g| format!("{g:e}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    /// Parses the text dump; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad gain entry `{t}`"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `H[k][k] = |h_k|^2`, `H[k][j] = |h_k^H h_j|^2 / |h_k|^2`.
pub fn composite_gains(ch: &ChannelRealization) -> GainMatrix {
    let k = ch.h.len();
    let norms: Vec<f64> = ch.h.iter().map(|v| v.iter().map(|c| c.norm_sqr()).sum()).collect();
    let mut data = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            data[a * k + b] = if a == b {
                norms[a]
            } else {
                let inner: Complex64 = ch.h[a].iter().zip(&ch.h[b]).map(|(x, y)| x.conj() * y).sum();
                inner.norm_sqr() / norms[a]
            };
        }
    }
    GainMatrix { k, data }
}

/// Draws a channel for the scenario's own seed and returns its gains.
pub fn scenario_gains(config: &ScenarioConfig) -> GainMatrix {
    let mut rng = crate::scenario::stream_rng(config.seed, crate::scenario::streams::CHANNEL);
    composite_gains(&sample_channel(config, &mut rng))
}

/// SINR of every client when client `j` transmits `x_j p_j`.
pub fn sinr(h: &GainMatrix, p: &[f64], x: &[f64], sigma2: f64) -> Vec<f64> {
    let k = h.clients();
    (0..k)
        .map(|i| {
            let interference: f64 = (0..k).filter(|&j| j != i).map(|j| x[j] * p[j] * h.get(i, j)).sum();
            x[i] * p[i] * h.direct(i) / (interference + sigma2)
        })
        .collect()
}

/// Spectral efficiency `log2(1 + SINR_k)` (bit/s/Hz).
pub fn spectral_efficiency(h: &GainMatrix, p: &[f64], x: &[f64], sigma2: f64) -> Vec<f64> {
    sinr(h, p, x, sigma2).into_iter().map(f64::ln_1p).map(|v| v / std::f64::consts::LN_2).collect()
}

/// Uplink rates `B_k log2(1 + SINR_k)` in bit/s.
pub fn rate(h: &GainMatrix, p: &[f64], x: &[f64], bandwidth: &[f64], sigma2: f64) -> Vec<f64> {
    spectral_efficiency(h, p, x, sigma2).into_iter().zip(bandwidth).map(|(se, b)| b * se).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::stream_rng;
    use proptest::prelude::*;

    fn gains(rows: &[&[f64]]) -> GainMatrix {
        GainMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn pure_los_has_constant_modulus() {
        let mut cfg = ScenarioConfig::reference(1);
        cfg.rician_k = 1e12;
        let ch = sample_channel(&cfg, &mut stream_rng(1, 0));
        for (v, g) in ch.h.iter().zip(large_scale_gains(&cfg)) {
            for c in v {
                assert!((c.norm() / g.sqrt() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn single_antenna_cross_gain_equals_own_gain() {
        let mut cfg = ScenarioConfig::reference(2);
        cfg.antennas = 1;
        let h = composite_gains(&sample_channel(&cfg, &mut stream_rng(2, 0)));
        for k in 0..cfg.clients {
            for j in 0..cfg.clients {
                let rel = (h.get(k, j) - h.direct(j)).abs() / h.direct(j);
                assert!(rel < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = ScenarioConfig::reference(3);
        let a = sample_channel(&cfg, &mut stream_rng(3, 2));
        let b = sample_channel(&cfg, &mut stream_rng(3, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_and_parallel_vectors() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let ortho = ChannelRealization { h: vec![vec![one, zero], vec![zero, one]], theta: vec![0.0, 0.0] };
        let g = composite_gains(&ortho);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);

        let v = vec![Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5)];
        let same = ChannelRealization { h: vec![v.clone(), v], theta: vec![0.0, 0.0] };
        let g = composite_gains(&same);
        assert!((g.get(0, 1) - g.direct(0)).abs() < 1e-12);
    }

    #[test]
    fn cross_gains_bounded_by_norm() {
        let cfg = ScenarioConfig::reference(0);
        for seed in 0..1000 {
            let h = composite_gains(&sample_channel(&cfg, &mut stream_rng(seed, 2)));
            for k in 0..cfg.clients {
                for j in 0..cfg.clients {
                    assert!(h.get(k, j) >= 0.0);
                    assert!(h.get(k, j) <= h.direct(j) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn rate_examples() {
        let h = gains(&[&[1.0]]);
        assert_eq!(rate(&h, &[0.0], &[1.0], &[1.0], 1.0), vec![0.0]);
        assert!((rate(&h, &[0.5], &[1.0], &[1.0], 0.5)[0] - 1.0).abs() < 1e-15);
        let h = gains(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let r = rate(&h, &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 1.0);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn text_dump_round_trips() {
        let h = scenario_gains(&ScenarioConfig::reference(4));
        assert_eq!(GainMatrix::parse(&h.to_text()).unwrap(), h);
        assert!(GainMatrix::parse("1 2\n3").is_err());
        assert!(GainMatrix::parse("# c\n1 0\n0 1\n").is_ok());
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64)> {
        (1usize..5).prop_flat_map(|k| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..2.0, k), k),
                prop::collection::vec(0.0f64..1.0, k),
                0.01f64..1.0,
            )
        })
    }

    proptest! {
        #[test]
        fn sinr_is_scale_free((rows, p, s2) in instance(), c in 0.01f64..100.0) {
            let h = GainMatrix::from_rows(rows).unwrap();
            let x = vec![1.0; p.len()];
            let b = vec![1.0; p.len()];
            let r1 = rate(&h, &p, &x, &b, s2);
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let r2 = rate(&h, &ps, &x, &b, s2 * c);
            for (a, b) in r1.iter().zip(&r2) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn rate_monotone_in_powers((rows, p, s2) in instance(), who in 0usize..4, dp in 1e-4f64..0.1) {
            let h = GainMatrix::from_rows(rows).unwrap();
            let k = p.len();
            let who = who % k;
            let x = vec![1.0; k];
            let b = vec![1.0; k];
            let base = rate(&h, &p, &x, &b, s2);
            let mut bumped = p.clone();
            bumped[who] += dp;
            let after = rate(&h, &bumped, &x, &b, s2);
            for i in 0..k {
                if i == who {
                    prop_assert!(after[i] >= base[i] - 1e-12);
                } else {
                    prop_assert!(after[i] <= base[i] + 1e-12);
                }
            }
        }

        #[test]
        fn gains_ignore_unit_phase(seed in 0u64..1000, phi in -3.0f64..3.0, who in 0usize..5) {
            let cfg = ScenarioConfig::reference(seed);
            let mut ch = sample_channel(&cfg, &mut stream_rng(seed, 2));
            let before = composite_gains(&ch);
            let rot = Complex64::from_polar(1.0, phi);
            ch.h[who].iter_mut().for_each(|c| *c *= rot);
            let after = composite_gains(&ch);
            for k in 0..cfg.clients {
                for j in 0..cfg.clients {
                    let scale = before.direct(j).max(before.direct(k));
                    prop_assert!((before.get(k, j) - after.get(k, j)).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
