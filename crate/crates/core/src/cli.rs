//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::experiments::{replicate_study, variance_decay, Aggregate, ReplicateConfig};
use crate::io::{self, Provenance};
use crate::model::{ModelParams, Theta};
use crate::rng::{label, StreamSeed};
use crate::saem::{saem_fit, ParticleSchedule, SaemConfig, StepSchedule};
use crate::simulate::SimulationSetup;
use crate::smc::{filter, FilterConfig, Proposal, ResamplingScheme};

#[derive(Debug, Parser)]
#[command(name = "ml-saem", version, about = "Stochastic Morris-Lecar simulation, particle filtering and SAEM estimation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model parameters as a flat JSON object
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Particle count (filter) or particle cap K(m) = min(m, k) (fit, replicate)
    #[arg(long, global = true, default_value_t = 100)]
    pub k: usize,
    #[arg(long, global = true, default_value_t = Proposal::Transition)]
    pub proposal: Proposal,
    #[arg(long, global = true, default_value_t = ResamplingScheme::Multinomial)]
    pub resampler: ResamplingScheme,
    /// Worker threads for replicate studies (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Override the channel-noise scale σ
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub v1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub v2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub v3: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub v4: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a path and write it with and without the gating variable
    Simulate(SimulateArgs),
    /// Run the particle filter on an observed V path
    Filter(FilterArgs),
    /// Estimate θ by SAEM-SMC from an observed V path
    Fit(FitArgs),
    /// Simulate-and-fit study over independent replicates
    Replicate(ReplicateArgs),
    /// Spread of the filter estimate against the particle count
    #[command(name = "prop1-check")]
    Prop1Check(Prop1Args),
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Number of observation intervals n
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Fine simulation step δ (ms)
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Fine steps per observation interval
    #[arg(long, default_value_t = 10)]
    pub subsample: usize,
    #[arg(long, default_value_t = -26.0, allow_hyphen_values = true)]
    pub v0: f64,
    #[arg(long, default_value_t = 0.2)]
    pub u0: f64,
}

impl GridArgs {
    fn setup(&self) -> SimulationSetup {
        SimulationSetup { v0: self.v0, u0: self.u0, delta: self.delta, subsample: self.subsample, n: self.steps }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Observation CSV with header t,v (a u column is ignored)
    #[arg(long)]
    pub data: PathBuf,
    /// Also write every particle cloud to clouds.bin
    #[arg(long)]
    pub dump_clouds: bool,
}

#[derive(Debug, Args)]
pub struct SaemArgs {
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// Iterations run with step size 1
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    /// Step-size decay exponent, in (0.5, 1]
    #[arg(long, default_value_t = 0.8)]
    pub exponent: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub gamma_min: f64,
    /// Starting θ as JSON; default is a random draw around the configured values
    #[arg(long, value_name = "PATH")]
    pub theta0: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub saem: SaemArgs,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Only run the estimator that sees both coordinates
    #[arg(long)]
    pub complete_only: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub saem: SaemArgs,
}

#[derive(Debug, Args)]
pub struct Prop1Args {
    /// Observation CSV; simulated from the configured model when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "25,100,400")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub repetitions: usize,
    #[command(flatten)]
    pub grid: GridArgs,
}

impl Common {
    fn params(&self) -> Result<ModelParams> {
        let mut p = match &self.config {
            Some(path) => io::read_json::<ModelParams>(path)?,
            None => ModelParams::default(),
        };
        let overrides = [(self.sigma, &mut p.sigma), (self.v1, &mut p.v1), (self.v2, &mut p.v2), (self.v3, &mut p.v3), (self.v4, &mut p.v4)];
        for (val, slot) in overrides {
            if let Some(x) = val {
                *slot = x;
            }
        }
        p.validate()?;
        Ok(p)
    }

    fn filter_config(&self, particles: usize) -> Result<FilterConfig> {
        if particles == 0 {
            return Err(Error::Config("--k must be ≥ 1".into()));
        }
        Ok(FilterConfig { particles, proposal: self.proposal, scheme: self.resampler, ..Default::default() })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

impl SaemArgs {
    fn config(&self, common: &Common, fixed: ModelParams, seed: u64) -> Result<SaemConfig> {
        let theta0 = match &self.theta0 {
            Some(path) => Some(io::read_json::<Theta>(path)?),
            None => None,
        };
        let cfg = SaemConfig {
            iterations: self.iterations,
            step: StepSchedule { warmup: self.warmup, exponent: self.exponent },
            particles: ParticleSchedule { cap: common.k },
            filter: common.filter_config(common.k)?,
            fixed,
            theta0,
            seed,
            gamma_min: self.gamma_min,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stamp<C: Serialize>(seed: u64, config: &C) -> Provenance {
    Provenance::new(seed, config)
}

fn cmd_simulate(common: &Common, args: &SimulateArgs) -> Result<()> {
    let p = common.params()?;
    let setup = args.grid.setup();
    let run = json!({ "command": "simulate", "params": p, "setup": setup, "seed": common.seed });
    let prov = stamp(common.seed, &run);
    let traj = setup.run(&p, StreamSeed::new(common.seed))?;
    io::write_trajectory(&common.out("trajectory.csv"), &traj, &prov)?;
    io::write_trajectory(&common.out("observations.csv"), &traj.without_u(), &prov)?;
    io::write_json(&common.out("simulate.json"), &json!({ "seed": common.seed, "config_sha256": prov.config_sha256, "config": run }))?;
    info!("wrote {} points to {}", traj.len(), common.out.display());
    Ok(())
}

fn cmd_filter(common: &Common, args: &FilterArgs) -> Result<()> {
    let p = common.params()?;
    let obs = io::read_trajectory(&args.data)?.without_u();
    let cfg = common.filter_config(common.k)?;
    let run = json!({ "command": "filter", "params": p, "filter": cfg, "data": args.data, "seed": common.seed });
    let prov = stamp(common.seed, &run);
    let out = filter(&obs, &p, &cfg, StreamSeed::new(common.seed))?;
    let summaries = out.summaries();
    io::write_summaries(&common.out("filter.csv"), &summaries, &prov)?;
    let last = summaries.last().expect("filter output is non-empty");
    io::write_json(
        &common.out("filter.json"),
        &json!({
            "seed": common.seed,
            "config_sha256": prov.config_sha256,
            "config": run,
            "log_likelihood": out.log_likelihood,
            "steps": out.len(),
            "final": last,
            "final_ess": out.last().ess(),
        }),
    )?;
    if args.dump_clouds {
        io::write_cloud_dump(&common.out("clouds.bin"), &out)?;
    }
    Ok(())
}

fn cmd_fit(common: &Common, args: &FitArgs) -> Result<()> {
    let p = common.params()?;
    let obs = io::read_trajectory(&args.data)?.without_u();
    let cfg = args.saem.config(common, p, common.seed)?;
    let run = json!({ "command": "fit", "saem": cfg, "data": args.data });
    let prov = stamp(common.seed, &run);
    let rep = saem_fit(&obs, &cfg)?;
    io::write_iterations(&common.out("iterations.csv"), &rep.iterations, &prov)?;
    io::write_json(
        &common.out("estimate.json"),
        &json!({ "seed": common.seed, "config_sha256": prov.config_sha256, "report": rep }),
    )?;
    Ok(())
}

fn aggregate_rows(name: &str, agg: &Aggregate) -> [(String, Vec<f64>); 2] {
    [
        (format!("{name}_mean"), agg.mean.to_array().to_vec()),
        (format!("{name}_rmse"), agg.rmse.to_array().to_vec()),
    ]
}

fn cmd_replicate(common: &Common, args: &ReplicateArgs) -> Result<()> {
    let truth = common.params()?;
    let cfg = ReplicateConfig {
        replicates: args.replicates,
        truth,
        setup: args.grid.setup(),
        saem: args.saem.config(common, truth, common.seed)?,
        complete_only: args.complete_only,
        seed: common.seed,
        jobs: common.jobs,
        ..Default::default()
    };
    // the worker count does not change results, so it stays out of the hash
    let run = json!({ "command": "replicate", "config": ReplicateConfig { jobs: 0, ..cfg.clone() } });
    let prov = stamp(common.seed, &run);
    let study = replicate_study(&cfg)?;
    let mut header = vec!["estimator"];
    header.extend(Theta::NAMES);
    let mut rows = vec![("truth".to_string(), study.truth.to_array().to_vec())];
    rows.extend(aggregate_rows("complete_data", &study.complete_data));
    if let Some(s) = &study.saem {
        rows.extend(aggregate_rows("saem", s));
    }
    io::write_table(&common.out("aggregate.csv"), &header, &rows, &prov)?;
    let mut per = Vec::new();
    for r in &study.results {
        for (name, est) in [("complete_data", r.complete_data), ("saem", r.saem)] {
            if let Some(t) = est {
                per.push((format!("{}_{name}", r.replicate), t.to_array().to_vec()));
            }
        }
    }
    let mut header = vec!["replicate_estimator"];
    header.extend(Theta::NAMES);
    io::write_table(&common.out("replicates.csv"), &header, &per, &prov)?;
    io::write_json(
        &common.out("replicate.json"),
        &json!({ "seed": common.seed, "config_sha256": prov.config_sha256, "config": run, "study": study }),
    )?;
    Ok(())
}

fn cmd_prop1(common: &Common, args: &Prop1Args) -> Result<()> {
    let p = common.params()?;
    let base = common.filter_config(1)?;
    let obs = match &args.data {
        Some(path) => io::read_trajectory(path)?,
        None => args.grid.setup().run(&p, StreamSeed::new(common.seed).child(label::SIMULATE))?,
    };
    let run = json!({
        "command": "prop1-check", "params": p, "filter": base, "ks": args.ks,
        "repetitions": args.repetitions, "data": args.data, "setup": args.grid.setup(),
    });
    let prov = stamp(common.seed, &run);
    let res = variance_decay(&obs, &p, &base, &args.ks, args.repetitions, StreamSeed::new(common.seed).child(label::FILTER))?;
    let rows: Vec<(String, Vec<f64>)> =
        res.rows.iter().map(|r| (r.particles.to_string(), vec![r.mean, r.sd])).collect();
    io::write_table(&common.out("prop1.csv"), &["k", "mean", "sd"], &rows, &prov)?;
    io::write_json(
        &common.out("prop1.json"),
        &json!({ "seed": common.seed, "config_sha256": prov.config_sha256, "config": run, "result": res }),
    )?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cli.common, a),
        Command::Filter(a) => cmd_filter(&cli.common, a),
        Command::Fit(a) => cmd_fit(&cli.common, a),
        Command::Replicate(a) => cmd_replicate(&cli.common, a),
        Command::Prop1Check(a) => cmd_prop1(&cli.common, a),
    }
}

/// `ML_SAEM_LOG` sets the log filter (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("ML_SAEM_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
