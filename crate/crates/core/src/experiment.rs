//! End-to-end runs and parameter sweeps.
//!
//! [`prepare`] carries a scenario through pilot sampling, pilot-time
//! minimization and loss prediction, producing the selection problem every
//! scheduler consumes. [`run_pipeline`] then solves it with PAMM and renders
//! a [`RunReport`]. Reports contain no timings and format every number with
//! its shortest round-trip representation, so identical inputs give
//! byte-identical output. Client numbers in reports are 1-based.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::alloc::{certify, Allocation, Certificate, Problem};
use crate::baselines::Baseline;
use crate::channel::{scenario_gains, GainMatrix};
use crate::error::{Error, Result};
use crate::fdc::{fdc_sample, FeatureMode, PilotSet};
use crate::gsloss::{pilot_loss, predict_client_loss, total_loss, LossConfig};
use crate::oracle::brute_force_p2;
use crate::pamm::{eta_targets, solve_jcspc, JcspcProblem, PammSettings, PammTrace};
use crate::pttm::{equal_power_pilot_time, pttm_bisect, PttmResult};
use crate::scenario::{
    generate_synthetic_datasets, stream_rng, streams, ClientDataset, LossManifest, LossSource, ScenarioConfig,
    SyntheticSpec,
};

/// Where the per-client predicted losses come from.
#[derive(Debug, Clone)]
pub enum LossInput {
    /// Losses given directly; pilot sizes follow `ceil(rho_k |D_k|)`.
    Manifest(LossManifest),
    /// Datasets sampled with FDC; losses predicted from the pilots.
    Datasets(Vec<ClientDataset>),
}

/// Everything up to the selection problem.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub gains: GainMatrix,
    pub pilots: Option<Vec<PilotSet>>,
    pub pilot_sizes: Vec<usize>,
    pub pttm: PttmResult,
    pub equal_power_t0: f64,
    pub losses: Vec<f64>,
    /// Ground-truth total losses, when the datasets carry them.
    pub true_losses: Option<Vec<f64>>,
    pub eta: Vec<f64>,
}

impl Prepared {
    pub fn problem(&self) -> Problem<'_> {
        Problem {
            gains: &self.gains,
            losses: &self.losses,
            eta: &self.eta,
            p_max: self.config.p_max,
            p_sum: self.config.p_sum,
            sigma2: self.config.noise_power,
        }
    }

    /// Bits left to send after the pilots.
    pub fn remaining_bits(&self) -> Vec<f64> {
        (0..self.config.clients)
            .map(|k| {
                let left = self.config.dataset_sizes[k].saturating_sub(self.pilot_sizes[k]);
                self.config.sample_bits[k] * left as f64
            })
            .collect()
    }

    /// Mean squared error of the predicted losses, when ground truth exists.
    pub fn prediction_mse(&self) -> Option<f64> {
        self.true_losses.as_ref().map(|t| mse(&self.losses, t))
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// FDC pilots for every client, drawn from the scenario's FDC stream.
pub fn sample_pilots(config: &ScenarioConfig, datasets: &[ClientDataset]) -> Result<Vec<PilotSet>> {
    let mut rng = stream_rng(config.seed, streams::FDC);
    datasets.iter().zip(&config.rho).map(|(d, &rho)| fdc_sample(d, rho, FeatureMode::default(), &mut rng)).collect()
}

/// Predicted and, where available, true per-client losses for given pilots.
pub fn predict_losses(
    config: &ScenarioConfig,
    datasets: &[ClientDataset],
    pilots: &[Vec<usize>],
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let cfg = LossConfig::with_lambda(config.lambda_loss);
    let predicted = datasets
        .iter()
        .zip(pilots)
        .map(|(d, idx)| predict_client_loss(pilot_loss(d, idx, &cfg)?, d.len(), idx.len()))
        .collect::<Result<Vec<_>>>()?;
    let truth = datasets
        .iter()
        .all(|d| !matches!(d.losses, LossSource::Unavailable))
        .then(|| datasets.iter().map(|d| total_loss(d, &cfg)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok((predicted, truth))
}

fn check_datasets(config: &ScenarioConfig, datasets: &[ClientDataset]) -> Result<()> {
    if datasets.len() != config.clients {
        return Err(Error::ShapeMismatch(format!("{} datasets for {} clients", datasets.len(), config.clients)));
    }
    for (k, (d, &size)) in datasets.iter().zip(&config.dataset_sizes).enumerate() {
        if d.len() != size {
            return Err(Error::field(
                "D_sizes",
                format!("client {} has {} images, scenario says {size}", k + 1, d.len()),
            ));
        }
    }
    Ok(())
}

/// Sampling, pilot-time minimization and loss prediction. Uses the
/// scenario's own channel draw unless `gains` is given.
pub fn prepare(config: &ScenarioConfig, input: &LossInput, gains: Option<GainMatrix>) -> Result<Prepared> {
    config.validate().map_err(|e| e.in_stage("scenario"))?;
    let gains = gains.unwrap_or_else(|| scenario_gains(config));
    if gains.clients() != config.clients {
        return Err(Error::ShapeMismatch(format!(
            "gain matrix is {0}x{0}, scenario has {1} clients",
            gains.clients(),
            config.clients
        ))
        .in_stage("channel"));
    }
    let pilots = match input {
        LossInput::Manifest(_) => None,
        LossInput::Datasets(d) => {
            check_datasets(config, d).map_err(|e| e.in_stage("fdc"))?;
            Some(sample_pilots(config, d).map_err(|e| e.in_stage("fdc"))?)
        }
    };
    let pilot_sizes = match &pilots {
        Some(p) => p.iter().map(PilotSet::len).collect(),
        None => config.pilot_sizes(),
    };
    let pttm = pttm_bisect(&gains, config, &pilot_sizes).map_err(|e| e.in_stage("pttm"))?;
    let equal_power_t0 = equal_power_pilot_time(&gains, config, &pilot_sizes);
    let (losses, true_losses) = match (input, &pilots) {
        (LossInput::Datasets(d), Some(p)) => {
            let idx: Vec<Vec<usize>> = p.iter().map(|s| s.indices.clone()).collect();
            predict_losses(config, d, &idx)
        }
        (LossInput::Manifest(m), _) => m.predicted_losses(config).map(|l| (l, None)),
        (LossInput::Datasets(_), None) => unreachable!("datasets always produce pilots"),
    }
    .map_err(|e| e.in_stage("loss prediction"))?;
    let eta = eta_targets(config, pttm.t0, &pilot_sizes).map_err(|e| e.in_stage("pttm"))?;
    Ok(Prepared { config: config.clone(), gains, pilots, pilot_sizes, pttm, equal_power_t0, losses, true_losses, eta })
}

/// One certified allocation with the name of the solver that produced it.
#[derive(Debug, Clone)]
pub struct SolvedAllocation {
    pub solver: String,
    pub allocation: Allocation,
    pub certificate: Certificate,
}

impl SolvedAllocation {
    pub fn new(solver: impl Into<String>, allocation: Allocation, problem: &Problem<'_>) -> Self {
        let certificate = certify(&allocation, problem);
        Self { solver: solver.into(), allocation, certificate }
    }

    /// Shared allocation CSV schema.
    pub fn to_csv(&self) -> String {
        let a = &self.allocation;
        let mut out = String::from("client,x,p,xi,selected\n");
        for k in 0..a.x.len() {
            let _ =
                writeln!(out, "{},{},{},{},{}", k + 1, Num(a.x[k]), Num(a.p[k]), Num(a.xi[k]), u8::from(a.x[k] >= 0.5));
        }
        out
    }

    fn write_summary(&self, out: &mut String) {
        let a = &self.allocation;
        let c = &self.certificate;
        let _ = writeln!(out, "solver = {}", self.solver);
        let _ = writeln!(out, "selected = {}", join(a.selected().iter().map(|k| k + 1)));
        let _ = writeln!(out, "objective = {}", Num(a.objective));
        let _ = writeln!(out, "powers_w = {}", nums(&a.p));
        let _ = writeln!(out, "feasible = {}", c.feasible);
        let _ = writeln!(out, "binary = {}", c.binary);
        let _ = writeln!(out, "rate_slack = {}", Num(c.rate_slack));
        let _ = writeln!(out, "power_slack = {}", Num(c.power_slack));
        let _ = writeln!(out, "sum_slack = {}", Num(c.sum_slack));
    }
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn nums(values: &[f64]) -> String {
    join(values.iter().map(|&v| Num(v)))
}

/// Shortest round-trip formatting, in exponent form outside `[1e-4, 1e12)`.
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-4..1e12).contains(&a) || !a.is_finite() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

/// Output of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub prepared: Prepared,
    /// Continuous PAMM solution before rounding.
    pub relaxed: Allocation,
    pub result: SolvedAllocation,
    pub trace: PammTrace,
}

impl RunReport {
    /// Structured `key = value` summary in `[section]` blocks.
    pub fn summary(&self) -> String {
        let pr = &self.prepared;
        let mut out = String::new();
        let _ = writeln!(out, "[scenario]");
        let _ = writeln!(out, "seed = {}", pr.config.seed);
        let _ = writeln!(out, "clients = {}", pr.config.clients);
        let _ = writeln!(out, "antennas = {}", pr.config.antennas);
        let _ = writeln!(out, "time_budget_s = {}", pr.config.time_budget);
        let _ = writeln!(out, "p_max_w = {}", pr.config.p_max);
        let _ = writeln!(out, "p_sum_w = {}", pr.config.p_sum);
        let _ = writeln!(out);
        let _ = writeln!(out, "[pilots]");
        let _ = writeln!(out, "pilot_sizes = {}", join(&pr.pilot_sizes));
        if let Some(p) = &pr.pilots {
            for (k, set) in p.iter().enumerate() {
                let _ = writeln!(out, "pilot_indices_{} = {}", k + 1, join(&set.indices));
            }
        }
        let _ = writeln!(out, "t0_s = {}", Num(pr.pttm.t0));
        let _ = writeln!(out, "equal_power_t0_s = {}", Num(pr.equal_power_t0));
        let _ = writeln!(out, "pilot_powers_w = {}", nums(&pr.pttm.powers));
        let _ = writeln!(out, "bisection_steps = {}", pr.pttm.trace.len());
        let _ = writeln!(out, "eta_bps_hz = {}", nums(&pr.eta));
        if let Some(mse) = pr.prediction_mse() {
            let _ = writeln!(out, "prediction_mse = {}", Num(mse));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "[allocation]");
        self.result.write_summary(&mut out);
        let _ =
            writeln!(out, "transmitted_bits = {}", Num(self.result.allocation.transmitted_bits(&pr.remaining_bits())));
        let _ = writeln!(out);
        let _ = writeln!(out, "[relaxation]");
        let _ = writeln!(out, "outer_iterations = {}", self.trace.records.len());
        let _ = writeln!(out, "escalations = {}", self.trace.escalations);
        let _ = writeln!(out, "zero_one_loss = {}", Num(self.relaxed.zero_one_loss()));
        let _ = writeln!(out, "x = {}", nums(&self.relaxed.x));
        let _ = writeln!(out, "p_w = {}", nums(&self.relaxed.p));
        out
    }

    pub fn losses_csv(&self) -> String {
        let pr = &self.prepared;
        let mut out = String::from("client,predicted,true\n");
        for k in 0..pr.losses.len() {
            let truth = pr.true_losses.as_ref().map(|t| Num(t[k]).to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", k + 1, Num(pr.losses[k]), truth);
        }
        out
    }

    pub fn pttm_csv(&self) -> String {
        let mut out = String::from("step,lower,upper,kappa,feasible\n");
        for (i, s) in self.prepared.pttm.trace.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i + 1, Num(s.lower), Num(s.upper), Num(s.kappa), s.feasible);
        }
        out
    }

    /// Every report file as `(name, contents)`, in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("report.txt", self.summary()),
            ("allocation.csv", self.result.to_csv()),
            ("losses.csv", self.losses_csv()),
            ("pamm_trace.csv", self.trace.to_csv()),
            ("pttm_trace.csv", self.pttm_csv()),
        ]
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in self.files() {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Full pipeline: sampling, PTTM, loss prediction, PAMM with repair, and
/// certification.
pub fn run_pipeline(config: &ScenarioConfig, input: &LossInput, gains: Option<GainMatrix>) -> Result<RunReport> {
    let prepared = prepare(config, input, gains)?;
    let settings = PammSettings::from_config(config);
    let problem = JcspcProblem { base: prepared.problem(), settings: &settings };
    let (relaxed, result, trace) = solve_jcspc(&problem).map_err(|e| e.in_stage("pamm"))?;
    let result = SolvedAllocation::new("pamm", result, &prepared.problem());
    Ok(RunReport { prepared, relaxed, result, trace })
}

/// Selection solvers other than PAMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Pamm,
    Oracle,
    Baseline(Baseline),
}

impl Scheduler {
    pub fn solve(self, prepared: &Prepared) -> Result<SolvedAllocation> {
        let problem = prepared.problem();
        let (name, alloc) = match self {
            Scheduler::Pamm => {
                let settings = PammSettings::from_config(&prepared.config);
                let jp = JcspcProblem { base: problem, settings: &settings };
                ("pamm".to_string(), solve_jcspc(&jp).map_err(|e| e.in_stage("pamm"))?.1)
            }
            Scheduler::Oracle => {
                ("oracle".to_string(), brute_force_p2(&problem).map_err(|e| e.in_stage("oracle"))?.best)
            }
            Scheduler::Baseline(b) => (b.name().to_string(), b.run(&problem, &prepared.config.bandwidth)),
        };
        Ok(SolvedAllocation::new(name, alloc, &problem))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Rho,
    PSum,
    T,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::PSum => "p_sum",
            SweepParam::T => "T",
            SweepParam::Beta => "beta",
        }
    }

    /// Applies a grid value to every client where the parameter is per client.
    pub fn apply(self, config: &mut ScenarioConfig, value: f64) {
        match self {
            SweepParam::Rho => config.rho = vec![value; config.clients],
            SweepParam::PSum => config.p_sum = value,
            SweepParam::T => config.time_budget = value,
            SweepParam::Beta => config.beta = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepParam::Rho),
            "p_sum" | "P_sum" => Ok(SweepParam::PSum),
            "T" | "t" => Ok(SweepParam::T),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::field("parameter", format!("unknown sweep parameter {s:?}"))),
        }
    }
}

/// Where each sweep cell gets its losses from.
#[derive(Debug, Clone)]
pub enum SweepLosses {
    Manifest(LossManifest),
    /// Synthetic datasets regenerated for every seed.
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub losses: SweepLosses,
    /// Also solve each cell exactly when `K` is at most this.
    pub oracle_max_clients: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub mse: Option<f64>,
    pub objective: f64,
    pub oracle_objective: Option<f64>,
    pub transmitted_bits: f64,
    pub zero_one: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub grid_index: usize,
    pub value: f64,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
    /// Informational wall-clock time of the cell.
    pub runtime_s: f64,
}

fn run_cell(base: &ScenarioConfig, spec: &SweepSpec, value: f64, seed: u64) -> Result<CellMetrics> {
    let mut config = base.with_seed(seed, true);
    spec.param.apply(&mut config, value);
    let input = match &spec.losses {
        SweepLosses::Manifest(m) => LossInput::Manifest(m.clone()),
        SweepLosses::Synthetic(s) => LossInput::Datasets(generate_synthetic_datasets(&config, s)?),
    };
    let report = run_pipeline(&config, &input, None)?;
    let oracle_objective = if config.clients <= spec.oracle_max_clients {
        Some(brute_force_p2(&report.prepared.problem())?.best.objective)
    } else {
        None
    };
    Ok(CellMetrics {
        mse: report.prepared.prediction_mse(),
        objective: report.result.allocation.objective,
        oracle_objective,
        transmitted_bits: report.result.allocation.transmitted_bits(&report.prepared.remaining_bits()),
        zero_one: report.relaxed.zero_one_loss(),
    })
}

/// Runs every (grid value, seed) cell. Each cell redraws positions and
/// channel from its seed. Cells run on `spec.threads` workers; the output is
/// ordered by (grid index, seed position) regardless.
pub fn sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Vec<SweepCell> {
    let jobs: Vec<(usize, f64, u64)> =
        spec.grid.iter().enumerate().flat_map(|(i, &v)| spec.seeds.iter().map(move |&s| (i, v, s))).collect();
    let threads = spec.threads.clamp(1, jobs.len().max(1));
    let mut cells: Vec<Option<SweepCell>> = vec![None; jobs.len()];
    std::thread::scope(|scope| {
        let chunks: Vec<_> = cells
            .chunks_mut(jobs.len().div_ceil(threads).max(1))
            .zip(jobs.chunks(jobs.len().div_ceil(threads).max(1)))
            .map(|(out, work)| {
                scope.spawn(move || {
                    for (slot, &(grid_index, value, seed)) in out.iter_mut().zip(work) {
                        let start = Instant::now();
                        let outcome = run_cell(base, spec, value, seed).map_err(|e| e.to_string());
                        *slot = Some(SweepCell {
                            grid_index,
                            value,
                            seed,
                            outcome,
                            runtime_s: start.elapsed().as_secs_f64(),
                        });
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("sweep worker panicked");
        }
    });
    cells.into_iter().map(|c| c.expect("every cell is filled")).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| Num(x).to_string()).unwrap_or_default()
}

/// One row per cell. Failed cells keep their row with the error message.
pub fn cells_csv(param: SweepParam, cells: &[SweepCell]) -> String {
    let mut out = format!(
        "grid_index,{},seed,mse,objective,oracle_objective,transmitted_bits,zero_one,runtime_s,error\n",
        param.name()
    );
    for c in cells {
        let head = format!("{},{},{}", c.grid_index, c.value, c.seed);
        match &c.outcome {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{head},{},{},{},{},{},{},",
                    opt(m.mse),
                    Num(m.objective),
                    opt(m.oracle_objective),
                    Num(m.transmitted_bits),
                    Num(m.zero_one),
                    Num(c.runtime_s)
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{head},,,,,,{},\"{}\"", Num(c.runtime_s), e.replace('"', "'"));
            }
        }
    }
    out
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// `(q1, median, q3)` of the finite values.
pub fn quartiles(values: impl IntoIterator<Item = f64>) -> (f64, f64, f64) {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75))
}

/// Median and quartiles of every metric per grid value, over the seeds that
/// succeeded.
pub fn summary_csv(param: SweepParam, grid: &[f64], cells: &[SweepCell]) -> String {
    type Metric = fn(&CellMetrics) -> Option<f64>;
    let metrics: [(&str, Metric); 6] = [
        ("mse", |m| m.mse),
        ("objective", |m| Some(m.objective)),
        ("oracle_objective", |m| m.oracle_objective),
        ("transmitted_bits", |m| Some(m.transmitted_bits)),
        ("zero_one", |m| Some(m.zero_one)),
        ("runtime_s", |_| None),
    ];
    let mut out = format!("grid_index,{},metric,count,q1,median,q3,failures\n", param.name());
    for (i, &value) in grid.iter().enumerate() {
        let here: Vec<&SweepCell> = cells.iter().filter(|c| c.grid_index == i).collect();
        let failures = here.iter().filter(|c| c.outcome.is_err()).count();
        for (name, get) in metrics {
            let vals: Vec<f64> = if name == "runtime_s" {
                here.iter().map(|c| c.runtime_s).collect()
            } else {
                here.iter().filter_map(|c| c.outcome.as_ref().ok().and_then(get)).collect()
            };
            if vals.is_empty() {
                continue;
            }
            let (q1, med, q3) = quartiles(vals.iter().copied());
            let _ = writeln!(out, "{i},{value},{name},{},{},{},{},{failures}", vals.len(), Num(q1), Num(med), Num(q3));
        }
    }
    out
}
