use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use repfair::data::{GroupedDataset, NoiseSource};
use repfair::experiments::{
    compare_baseline_with_progress, render_directory, run_experiment_with_progress, ExperimentResult, ExperimentSpec,
    RunOutcome, RunStatus, SweepAxis,
};
use repfair::fairness::{
    classwise_audit, is_eps_fair, repeated_audit, write_reports_csv, AttributeOracle, Distance, OracleTraining,
};
use repfair::models::{GeneratorNet, Mlp};
use repfair::{Error, Result};

#[derive(Parser)]
#[command(name = "repfair", version = repfair::experiments::VERSION, about = "Group-wise clipped GAN training and fairness audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GridArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Replace the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the spec's seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Replace the spec's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

impl GridArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::from_file(&self.spec)?;
        if let Some(out) = &self.out {
            spec.output_dir = out.clone();
        }
        if let Some(seeds) = &self.seeds {
            spec.seeds = seeds.clone();
        }
        if let Some(epochs) = self.epochs {
            spec.train.epochs = epochs;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one trainer over the spec's seeds (vanilla unless a max norm is set).
    Train {
        #[command(flatten)]
        grid: GridArgs,
        /// Maximum gradient norm; selects the clipped trainer.
        #[arg(long, conflicts_with = "vanilla")]
        c: Option<f64>,
        #[arg(long)]
        vanilla: bool,
    },
    /// Sweep the maximum gradient norm, with a vanilla reference.
    SweepC {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Sweep the group-0 share, pairing both trainers at each point.
    SweepRatio {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Vanilla against the clipped trainer on shared seeds.
    Compare {
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Audit a saved generator checkpoint.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        /// analytic-2d, corner-pixel or trained-classifier.
        #[arg(long, default_value = "analytic-2d")]
        oracle: String,
        #[arg(long, default_value_t = 1)]
        light_group: u8,
        /// Labelled CSV data for fitting the classifier oracle.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Independent audits; epsilon is the largest distance seen.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value = "kl")]
        distance: String,
        /// Also report whether the generator is epsilon-fair.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        classwise: bool,
        /// Write the reports as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Redraw the charts of an experiment directory from its CSV files.
    Render {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "experiment")]
        title: String,
    },
}

fn print_run(run: &RunOutcome) {
    let point = run.point.map(|v| format!(" @ {v}")).unwrap_or_default();
    match (&run.status, &run.report) {
        (RunStatus::Completed, Some(r)) => println!(
            "{}{point} seed {}: p = ({:.3}, {:.3}) kl = {:.5}{}",
            run.trainer.name(),
            run.seed,
            r.frequencies[0],
            r.frequencies[1],
            r.kl_to_uniform,
            if run.degenerate { " [degenerate]" } else { "" }
        ),
        (RunStatus::Diverged { epoch, detail }, _) => {
            println!("{}{point} seed {}: diverged at epoch {epoch} ({detail})", run.trainer.name(), run.seed)
        }
        _ => {}
    }
}

fn print_rows(result: &ExperimentResult) {
    println!("trainer  point     kl_median  freq_gap  completed/diverged/degenerate");
    for r in &result.rows {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
        println!(
            "{:<8} {:<9} {:<10} {:<9} {}/{}/{}",
            r.trainer.name(),
            r.value.map_or("-".into(), |v| v.to_string()),
            fmt(r.kl_median),
            fmt(r.freq_gap_median),
            r.completed,
            r.diverged,
            r.degenerate
        );
    }
}

fn build_oracle(name: &str, light_group: u8, data: Option<&PathBuf>) -> Result<AttributeOracle> {
    match name {
        "analytic-2d" => Ok(AttributeOracle::Analytic2d),
        "corner-pixel" => AttributeOracle::corner_pixel(light_group),
        "trained-classifier" => {
            let path = data.ok_or_else(|| Error::Config("the trained oracle needs --data".into()))?;
            AttributeOracle::train(&GroupedDataset::read_csv(path)?, &OracleTraining::default())
        }
        other => Err(Error::Config(format!("unknown oracle {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut progress = print_run;
    match cli.command {
        Command::Train { grid, c, vanilla } => {
            let mut spec = grid.load()?;
            spec.sweep = SweepAxis::None;
            if vanilla {
                spec.train.max_grad_norm = None;
            } else if c.is_some() {
                spec.train.max_grad_norm = c;
            }
            print_rows(&run_experiment_with_progress(&spec, &mut progress)?);
        }
        Command::SweepC { grid, values } => {
            let mut spec = grid.load()?;
            if let Some(v) = values {
                spec.sweep = SweepAxis::C(v);
            }
            if !matches!(spec.sweep, SweepAxis::C(_)) {
                return Err(Error::Config("sweep-c needs C values (--values or a c sweep in the spec)".into()));
            }
            print_rows(&run_experiment_with_progress(&spec, &mut progress)?);
        }
        Command::SweepRatio { grid, values } => {
            let mut spec = grid.load()?;
            if let Some(v) = values {
                spec.sweep = SweepAxis::Ratio(v);
            }
            if !matches!(spec.sweep, SweepAxis::Ratio(_)) {
                return Err(Error::Config("sweep-ratio needs ratios (--values or a ratio sweep in the spec)".into()));
            }
            let result = run_experiment_with_progress(&spec, &mut progress)?;
            print_rows(&result);
        }
        Command::Compare { grid } => {
            let mut spec = grid.load()?;
            spec.sweep = SweepAxis::None;
            let pair = compare_baseline_with_progress(&spec, &mut progress)?;
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
            println!(
                "median kl: vanilla {} repfair {}",
                fmt(pair.vanilla.kl_median),
                fmt(pair.repfair.kl_median)
            );
            println!("frequency-gap reduction: {}", fmt(pair.freq_gap_reduction));
        }
        Command::Audit {
            checkpoint,
            oracle,
            light_group,
            data,
            samples,
            seed,
            repeats,
            distance,
            eps,
            classwise,
            out,
        } => {
            let distance: Distance = distance.parse()?;
            let (role, net) = Mlp::load_checkpoint(&checkpoint)?;
            if role != "generator" {
                return Err(Error::Config(format!("{} holds a {role}, not a generator", checkpoint.display())));
            }
            let g = GeneratorNet::from_mlp(net)?;
            let h = build_oracle(&oracle, light_group, data.as_ref())?;
            if let Some(acc) = h.accuracy() {
                println!("oracle accuracy on held-out rows: {acc:.4}");
            }
            let seeds: Vec<u64> = (0..repeats.max(1)).map(|i| seed + i).collect();
            let audit = repeated_audit(&g, &h, samples, &seeds, distance)?;
            let mut reports = audit.reports.clone();
            for r in &audit.reports {
                println!(
                    "seed {}: p = ({:.4}, {:.4}) kl = {:.6} tv = {:.6}",
                    r.seed, r.frequencies[0], r.frequencies[1], r.kl_to_uniform, r.tv_to_uniform
                );
            }
            println!("epsilon ({distance}, max over {} audits): {:.6}", seeds.len(), audit.epsilon);
            if let Some(e) = eps {
                let worst = audit
                    .reports
                    .iter()
                    .max_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
                    .expect("at least one audit");
                println!("{e}-fair: {}", is_eps_fair(worst, e, distance)?);
            }
            if classwise {
                let mut noise = NoiseSource::new(g.noise_dim(), seed);
                let per_class = classwise_audit(&g, &h, samples, &mut noise)?;
                for r in &per_class {
                    println!(
                        "class {}: p = ({:.4}, {:.4}) kl = {:.6}",
                        r.class.unwrap_or_default(),
                        r.frequencies[0],
                        r.frequencies[1],
                        r.kl_to_uniform
                    );
                }
                reports.extend(per_class);
            }
            if let Some(path) = out {
                write_reports_csv(&path, &reports)?;
            }
        }
        Command::Render { dir, title } => {
            for path in render_directory(&dir, &title)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
