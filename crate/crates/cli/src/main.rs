//! Command-line front end: single pipeline stages, whole runs and sweeps.
//!
//! Exit status is 0 on success, 2 when the scenario is infeasible and 1 on
//! any input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sttgs_core::baselines::Baseline;
use sttgs_core::channel::GainMatrix;
use sttgs_core::experiment::{
    cells_csv, prepare, run_pipeline, summary_csv, sweep, LossInput, Num, Prepared, Scheduler, SolvedAllocation,
    SweepLosses, SweepParam, SweepSpec,
};
use sttgs_core::scenario::{
    generate_synthetic_datasets, load_dataset_manifest, load_scenario, LossManifest, SyntheticSpec,
};
use sttgs_core::{Error, Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "sttgs", version, about = "Sample-then-transmit edge Gaussian splatting scheduler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pilot sampling, PTTM, loss prediction, PAMM and certification
    Pipeline(Common),
    /// FDC pilot sampling and loss prediction only
    Fdc(Common),
    /// Minimum pilot transmission time
    Pttm(Common),
    /// Joint client selection and power control with PAMM
    Jcspc(Common),
    /// Exhaustive search over client subsets (at most 20 clients)
    Oracle(Common),
    /// A comparison scheduler
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = BaselineKind::All)]
        kind: BaselineKind,
    },
    /// Parameter sweep over seeds with quartile summaries
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated grid values
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// `a..b` (end exclusive) or a comma-separated list
        #[arg(long, default_value = "0..20", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Solve each cell exactly too when K is at most this
        #[arg(long, default_value_t = 12)]
        oracle_max_clients: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    MaxRate,
    Fairness,
    ActiveLearning,
    All,
}

#[derive(Args)]
struct Common {
    /// Scenario file; the built-in reference setup when omitted
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed and redraws client positions
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the scenario's client positions when overriding the seed
    #[arg(long)]
    keep_positions: bool,
    /// Loss manifest (JSON) with per-client losses
    #[arg(long, conflicts_with = "datasets")]
    losses: Option<PathBuf>,
    /// Dataset manifest (JSON) listing images, poses and rendered images or losses
    #[arg(long)]
    datasets: Option<PathBuf>,
    /// Cluster count of the synthetic datasets used when no input is given
    #[arg(long, default_value_t = 56)]
    synthetic_clusters: usize,
    /// Per-pixel perturbation of the synthetic datasets
    #[arg(long, default_value_t = 0.02)]
    synthetic_noise: f64,
    /// Composite gain matrix (text); drawn from the seed when omitted
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Directory for report files; the summary goes to stdout otherwise
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |e: std::num::ParseIntError| e.to_string();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().map_err(bad)?, b.trim().parse::<u64>().map_err(bad)?);
        if a >= b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',').map(|v| v.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>().map(Seeds)
}

fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let cfg = match &self.scenario {
            Some(p) => load_scenario(p)?,
            None => ScenarioConfig::reference(0),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s, !self.keep_positions),
            None => cfg,
        })
    }

    fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec::new(self.synthetic_clusters, self.synthetic_noise)
    }

    fn input(&self, config: &ScenarioConfig) -> Result<LossInput> {
        if let Some(p) = &self.losses {
            return Ok(LossInput::Manifest(LossManifest::load(p)?));
        }
        let datasets = match &self.datasets {
            Some(p) => load_dataset_manifest(p)?,
            None => generate_synthetic_datasets(config, &self.synthetic())?,
        };
        Ok(LossInput::Datasets(datasets))
    }

    fn gains(&self) -> Result<Option<GainMatrix>> {
        self.gains.as_deref().map(GainMatrix::load).transpose()
    }

    fn prepare(&self) -> Result<Prepared> {
        let config = self.config()?;
        let input = self.input(&config)?;
        prepare(&config, &input, self.gains()?)
    }

    fn emit(&self, summary: &str, files: &[(&str, String)]) -> Result<()> {
        match &self.out {
            Some(dir) => write_files(dir, files),
            None => {
                print!("{summary}");
                Ok(())
            }
        }
    }
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn allocation_summary(solved: &[SolvedAllocation]) -> String {
    let mut out = String::new();
    for s in solved {
        out.push_str(&format!(
            "{}: selected [{}] objective {} feasible {}\n",
            s.solver,
            s.allocation.selected().iter().map(|k| (k + 1).to_string()).collect::<Vec<_>>().join(","),
            Num(s.allocation.objective),
            s.certificate.feasible
        ));
    }
    out
}

/// Runs the schedulers and reports; infeasible certificates map to exit 2.
fn schedule(common: &Common, schedulers: &[Scheduler]) -> Result<()> {
    let prepared = common.prepare()?;
    let solved = schedulers.iter().map(|s| s.solve(&prepared)).collect::<Result<Vec<_>>>()?;
    let files: Vec<(String, String)> =
        solved.iter().map(|s| (format!("allocation_{}.csv", s.solver), s.to_csv())).collect();
    let files: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    common.emit(&allocation_summary(&solved), &files)?;
    if let Some(bad) = solved.iter().find(|s| !s.certificate.feasible) {
        return Err(Error::Infeasible(format!("{} produced an uncertified allocation", bad.solver)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(common) => {
            let config = common.config()?;
            let input = common.input(&config)?;
            let report = run_pipeline(&config, &input, common.gains()?)?;
            common.emit(&report.summary(), &report.files())?;
            if !report.result.certificate.feasible {
                return Err(Error::Infeasible("final allocation failed certification".into()));
            }
            Ok(())
        }
        Command::Fdc(common) => {
            if common.losses.is_some() {
                return Err(Error::InvalidField {
                    field: "losses".into(),
                    reason: "fdc samples datasets; pass --datasets or use synthetic data".into(),
                });
            }
            let prepared = common.prepare()?;
            let mut csv = String::from("client,pilot_size,predicted,true,pilot_indices\n");
            let pilots = prepared.pilots.as_deref().unwrap_or_default();
            for (k, set) in pilots.iter().enumerate() {
                let truth = prepared.true_losses.as_ref().map(|t| Num(t[k]).to_string()).unwrap_or_default();
                let idx = set.indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
                csv.push_str(&format!("{},{},{},{truth},{idx}\n", k + 1, set.len(), Num(prepared.losses[k])));
            }
            common.emit(&csv, &[("fdc.csv", csv.clone())])
        }
        Command::Pttm(common) => {
            let p = common.prepare()?;
            let mut text = format!("t0_s = {}\nequal_power_t0_s = {}\n", Num(p.pttm.t0), Num(p.equal_power_t0));
            let powers: Vec<String> = p.pttm.powers.iter().map(|&v| Num(v).to_string()).collect();
            text.push_str(&format!("pilot_powers_w = {}\n", powers.join(",")));
            let mut csv = String::from("step,lower,upper,kappa,feasible\n");
            for (i, s) in p.pttm.trace.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{},{}\n", i + 1, Num(s.lower), Num(s.upper), Num(s.kappa), s.feasible));
            }
            common.emit(&text, &[("pttm.txt", text.clone()), ("pttm_trace.csv", csv)])
        }
        Command::Jcspc(common) => schedule(&common, &[Scheduler::Pamm]),
        Command::Oracle(common) => schedule(&common, &[Scheduler::Oracle]),
        Command::Baseline { common, kind } => {
            let picked: Vec<Scheduler> = match kind {
                BaselineKind::MaxRate => vec![Scheduler::Baseline(Baseline::MaxRate)],
                BaselineKind::Fairness => vec![Scheduler::Baseline(Baseline::Fairness)],
                BaselineKind::ActiveLearning => vec![Scheduler::Baseline(Baseline::ActiveLearning)],
                BaselineKind::All => Baseline::ALL.into_iter().map(Scheduler::Baseline).collect(),
            };
            schedule(&common, &picked)
        }
        Command::Sweep { common, param, grid, seeds, threads, oracle_max_clients } => {
            let config = common.config()?;
            if common.datasets.is_some() {
                return Err(Error::InvalidField {
                    field: "datasets".into(),
                    reason: "sweeps use a loss manifest or synthetic datasets".into(),
                });
            }
            let losses = match &common.losses {
                Some(p) => SweepLosses::Manifest(LossManifest::load(p)?),
                None => SweepLosses::Synthetic(common.synthetic()),
            };
            let spec = SweepSpec { param, grid, seeds: seeds.0, losses, oracle_max_clients, threads };
            let cells = sweep(&config, &spec);
            let summary = summary_csv(param, &spec.grid, &cells);
            common.emit(&summary, &[("cells.csv", cells_csv(param, &cells)), ("summary.csv", summary.clone())])
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infeasible() { 2 } else { 1 })
        }
    }
}
