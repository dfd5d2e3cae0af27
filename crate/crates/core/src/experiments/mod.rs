//! Multi-seed experiment grids: baseline comparison, C sweeps and
//! imbalance sweeps, with CSV/JSON artifacts and SVG charts.

mod aggregate;
mod charts;
mod spec;

pub use aggregate::{
    aggregate_runs, median, read_aggregate_csv, write_aggregate_csv, AggregateRow, PairedSummary, RunOutcome, RunStatus,
    TrainerKind,
};
pub use charts::{frequency_chart, grad_norm_chart, point_label, sweep_chart};
pub use spec::{DatasetSpec, ExperimentSpec, OracleSpec, SweepAxis, DEFAULT_DEGENERATE_THRESHOLD};

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{shuffle, GroupedDataset, NoiseSource};
use crate::error::{Error, Result};
use crate::fairness::{
    classwise_audit, quality_by_group, sample_and_audit, write_reports_csv, AttributeOracle, FairnessReport, QualityReport,
};
use crate::models::GeneratorNet;
use crate::trainer::{build_networks, derive_seed, read_telemetry_csv, train_repfair, train_vanilla, TrainConfig, FAKE_STEP_POLICY};

/// `git describe` of the build, or the crate version outside a checkout.
pub const VERSION: &str = env!("REPFAIR_VERSION");

const STREAM_AUDIT: u64 = 100;
const STREAM_QUALITY: u64 = 101;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const FAIRNESS_FILE: &str = "fairness.csv";

/// One (trainer, sweep point) cell of a grid.
#[derive(Debug, Clone)]
struct Cell {
    trainer: TrainerKind,
    point: Option<f64>,
    train: TrainConfig,
    dataset: DatasetSpec,
}

impl Cell {
    fn dir_name(&self, axis: &SweepAxis, seed: u64) -> String {
        match self.point {
            Some(v) => format!("{}_{}{v}_seed{seed}", self.trainer.name(), axis.name()),
            None => format!("{}_seed{seed}", self.trainer.name()),
        }
    }
}

fn vanilla_cfg(train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        max_grad_norm: None,
        ..train.clone()
    }
}

fn repfair_cfg(train: &TrainConfig, c: f64) -> TrainConfig {
    TrainConfig {
        max_grad_norm: Some(c),
        ..train.clone()
    }
}

fn plan(spec: &ExperimentSpec, paired: bool) -> Result<Vec<Cell>> {
    let c = spec.repfair_c();
    let cell = |trainer, point, train, dataset: &DatasetSpec| Cell {
        trainer,
        point,
        train,
        dataset: dataset.clone(),
    };
    Ok(match &spec.sweep {
        SweepAxis::None if paired => vec![
            cell(TrainerKind::Vanilla, None, vanilla_cfg(&spec.train), &spec.dataset),
            cell(TrainerKind::Repfair, None, repfair_cfg(&spec.train, c), &spec.dataset),
        ],
        SweepAxis::None => {
            let kind = if spec.train.is_vanilla() {
                TrainerKind::Vanilla
            } else {
                TrainerKind::Repfair
            };
            vec![cell(kind, None, spec.train.clone(), &spec.dataset)]
        }
        SweepAxis::C(values) => std::iter::once(cell(TrainerKind::Vanilla, None, vanilla_cfg(&spec.train), &spec.dataset))
            .chain(
                values
                    .iter()
                    .map(|&v| cell(TrainerKind::Repfair, Some(v), repfair_cfg(&spec.train, v), &spec.dataset)),
            )
            .collect(),
        SweepAxis::Ratio(values) => {
            let mut cells = Vec::new();
            for &r in values {
                let ds = spec.dataset.with_ratio(r)?;
                cells.push(cell(TrainerKind::Vanilla, Some(r), vanilla_cfg(&spec.train), &ds));
                cells.push(cell(TrainerKind::Repfair, Some(r), repfair_cfg(&spec.train, c), &ds));
            }
            cells
        }
    })
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    experiment: &'a str,
    version: &'a str,
    trainer: TrainerKind,
    sweep_axis: &'a str,
    sweep_value: Option<f64>,
    seed: u64,
    fake_step_policy: &'a str,
    train: &'a TrainConfig,
    dataset: &'a DatasetSpec,
    oracle: &'a str,
    oracle_accuracy: Option<f64>,
    status: &'a RunStatus,
    degenerate: bool,
    group_frequencies: Option<[f64; 2]>,
    quality: Option<QualityReport>,
    wall_clock_seconds: &'a [f64],
}

#[derive(Debug, Serialize)]
struct ExperimentMetadata<'a> {
    version: &'a str,
    spec: &'a ExperimentSpec,
    fake_step_policy: &'a str,
    runs: usize,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows of `ds` picked by a seeded shuffle, at most `n`.
fn real_subset(ds: &GroupedDataset, n: usize, seed: u64) -> Result<(crate::tensor::Tensor, Vec<u8>)> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n.min(ds.len()));
    let b = ds.gather(&idx)?;
    Ok((b.x, b.sensitive))
}

fn measure_quality(
    g: &GeneratorNet,
    h: &AttributeOracle,
    ds: &GroupedDataset,
    n: usize,
    seed: u64,
) -> Result<QualityReport> {
    let (real, real_groups) = real_subset(ds, n, seed)?;
    let mut noise = NoiseSource::new(g.noise_dim(), seed);
    let z = noise.sample(n);
    let labels = g.num_classes().map(|k| noise.labels(n, k));
    let fake = g.forward(&z, labels.as_deref())?;
    let fake_groups = h.predict(&fake)?;
    quality_by_group(&real, &real_groups, &fake, &fake_groups)
}

fn run_cell(spec: &ExperimentSpec, axis: &SweepAxis, cell: &Cell, seed: u64) -> Result<RunOutcome> {
    let ds = cell.dataset.load(seed)?;
    let run_name = cell.dir_name(axis, seed);
    let cfg = TrainConfig {
        seed,
        // one checkpoint folder per run so runs don't overwrite each other
        checkpoint_dir: cell.train.checkpoint_dir.as_ref().map(|d| d.join(&run_name)),
        ..cell.train.clone()
    };
    let h = spec.oracle_spec().build(&ds)?;
    let (g, d) = build_networks(&ds, &cfg)?;
    let trained = match cell.trainer {
        TrainerKind::Vanilla => train_vanilla(g, d, &ds, &cfg),
        TrainerKind::Repfair => train_repfair(g, d, &ds, &cfg),
    };
    let run_dir = spec.output_dir.join("runs").join(&run_name);
    let (status, mut telemetry, generator) = match trained {
        Ok(run) => (RunStatus::Completed, run.telemetry, Some(run.generator)),
        Err(Error::Divergence { epoch, detail }) => (RunStatus::Diverged { epoch, detail }, Default::default(), None),
        Err(e) => return Err(e),
    };

    let mut report = None;
    let mut quality = None;
    let mut classwise: Vec<FairnessReport> = Vec::new();
    if let Some(g) = &generator {
        let mut noise = NoiseSource::new(g.noise_dim(), derive_seed(seed, STREAM_AUDIT));
        let r = sample_and_audit(g, &h, spec.audit_samples, &mut noise)?;
        telemetry.set_frequencies(r.frequencies)?;
        if let Some(k) = g.num_classes() {
            let per_class = (spec.audit_samples / k).max(crate::fairness::MIN_AUDIT_SAMPLES);
            classwise = classwise_audit(g, &h, per_class, &mut noise)?;
        }
        report = Some(r);
        quality = Some(measure_quality(g, &h, &ds, spec.quality_samples, derive_seed(seed, STREAM_QUALITY))?);
    }
    let degenerate = quality.is_some_and(|q| q.pooled > spec.degenerate_threshold);
    let outcome = RunOutcome {
        trainer: cell.trainer,
        point: cell.point,
        seed,
        status,
        report,
        quality,
        degenerate,
        telemetry,
    };

    if spec.per_run_artifacts {
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        outcome.telemetry.write_csv(&run_dir.join(TELEMETRY_FILE))?;
        write_reports_csv(&run_dir.join(FAIRNESS_FILE), outcome.report.as_slice())?;
        if !classwise.is_empty() {
            write_reports_csv(&run_dir.join("classwise.csv"), &classwise)?;
        }
        write_json(
            &run_dir.join("metadata.json"),
            &RunMetadata {
                experiment: &spec.name,
                version: VERSION,
                trainer: cell.trainer,
                sweep_axis: axis.name(),
                sweep_value: cell.point,
                seed,
                fake_step_policy: FAKE_STEP_POLICY,
                train: &cfg,
                dataset: &cell.dataset,
                oracle: h.mode(),
                oracle_accuracy: h.accuracy(),
                status: &outcome.status,
                degenerate,
                group_frequencies: outcome.telemetry.group_frequencies,
                quality,
                wall_clock_seconds: &outcome.telemetry.wall_clock,
            },
        )?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<RunOutcome>,
    /// Vanilla/clipped pairs, for comparisons and ratio sweeps.
    pub paired: Vec<PairedSummary>,
}

impl ExperimentResult {
    pub fn row(&self, trainer: TrainerKind, value: Option<f64>) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.trainer == trainer && r.value == value)
    }
}

fn prepare_output(spec: &ExperimentSpec) -> Result<()> {
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("spec.toml"), &spec.to_toml_string()?)
}

fn execute(spec: &ExperimentSpec, paired: bool, progress: &mut dyn FnMut(&RunOutcome)) -> Result<ExperimentResult> {
    spec.validate()?;
    let cells = plan(spec, paired)?;
    prepare_output(spec)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for cell in &cells {
        let mut cell_runs = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let outcome = run_cell(spec, &spec.sweep, cell, seed)?;
            progress(&outcome);
            cell_runs.push(outcome);
        }
        let refs: Vec<&RunOutcome> = cell_runs.iter().collect();
        rows.push(aggregate_runs(cell.trainer, spec.sweep.name(), cell.point, &refs));
        runs.extend(cell_runs);
    }
    let paired_rows: Vec<PairedSummary> = rows
        .chunks(2)
        .filter(|pair| {
            pair.len() == 2
                && pair[0].trainer == TrainerKind::Vanilla
                && pair[1].trainer == TrainerKind::Repfair
                && pair[0].value == pair[1].value
        })
        .map(|pair| PairedSummary::new(pair[0].clone(), pair[1].clone()))
        .collect();

    let dir = &spec.output_dir;
    write_aggregate_csv(&dir.join(AGGREGATE_FILE), &rows)?;
    if !paired_rows.is_empty() {
        write_json(&dir.join("paired.json"), &paired_rows)?;
    }
    write_json(
        &dir.join("metadata.json"),
        &ExperimentMetadata {
            version: VERSION,
            spec,
            fake_step_policy: FAKE_STEP_POLICY,
            runs: runs.len(),
        },
    )?;
    render_directory(dir, &spec.name)?;
    Ok(ExperimentResult {
        rows,
        runs,
        paired: paired_rows,
    })
}

/// Runs every (sweep point × seed) cell of `spec` and writes its artifacts.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    execute(spec, false, &mut |_| {})
}

pub fn run_experiment_with_progress(spec: &ExperimentSpec, progress: &mut dyn FnMut(&RunOutcome)) -> Result<ExperimentResult> {
    execute(spec, false, progress)
}

/// Vanilla against the clipped trainer on shared data and seeds.
pub fn compare_baseline(spec: &ExperimentSpec) -> Result<PairedSummary> {
    compare_baseline_with_progress(spec, &mut |_| {})
}

pub fn compare_baseline_with_progress(spec: &ExperimentSpec, progress: &mut dyn FnMut(&RunOutcome)) -> Result<PairedSummary> {
    if spec.sweep != SweepAxis::None {
        return Err(Error::Config("a baseline comparison takes no sweep axis".into()));
    }
    let result = execute(spec, true, progress)?;
    result
        .paired
        .into_iter()
        .next()
        .ok_or_else(|| Error::Contract("comparison produced no pair".into()))
}

/// (Re)draws every chart of an experiment directory from its CSV files.
pub fn render_directory(dir: &Path, title: &str) -> Result<Vec<PathBuf>> {
    let rows = read_aggregate_csv(&dir.join(AGGREGATE_FILE))?;
    let mut written = Vec::new();
    let path = dir.join("frequencies.svg");
    write_text(&path, &frequency_chart(&format!("{title}: generated group shares"), &rows)?)?;
    written.push(path);
    if rows.iter().any(|r| r.axis == "c") {
        let path = dir.join("c_sweep.svg");
        write_text(&path, &sweep_chart(&format!("{title}: KL to uniform by C"), &rows)?)?;
        written.push(path);
    }
    let runs_dir = dir.join("runs");
    if runs_dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&runs_dir)
            .map_err(|e| Error::io(&runs_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(TELEMETRY_FILE).is_file())
            .collect();
        entries.sort();
        for run in entries {
            let rows = read_telemetry_csv(&run.join(TELEMETRY_FILE))?;
            if rows.is_empty() {
                continue;
            }
            let name = run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let path = run.join("grad_norms.svg");
            write_text(&path, &grad_norm_chart(&format!("{name}: discriminator gradient norm"), &rows)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dir: &Path, sweep: SweepAxis) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            dataset: DatasetSpec::Gauss2d {
                n: 128,
                ratio: 0.5,
                separation: 0.8,
                spreads: [0.02, 0.3],
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 32,
                generator_hidden: vec![8],
                discriminator_hidden: vec![8],
                ..TrainConfig::default()
            },
            sweep,
            seeds: vec![1, 2],
            audit_samples: 200,
            oracle: None,
            output_dir: dir.to_path_buf(),
            degenerate_threshold: DEFAULT_DEGENERATE_THRESHOLD,
            quality_samples: 50,
            per_run_artifacts: true,
        }
    }

    #[test]
    fn zero_epoch_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path(), SweepAxis::None);
        s.train.epochs = 0;
        s.seeds = vec![3];
        let res = run_experiment(&s).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].trainer, TrainerKind::Vanilla);
        for f in ["aggregate.csv", "frequencies.svg", "metadata.json", "spec.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let run = dir.path().join("runs/vanilla_seed3");
        assert!(run.join("telemetry.csv").exists());
        assert!(run.join("fairness.csv").exists());
        let f = res.rows[0].freq0_mean.unwrap() + res.rows[0].freq1_mean.unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn c_sweep_has_vanilla_reference_and_one_row_per_c() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&spec(dir.path(), SweepAxis::C(vec![0.5, 2.0]))).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert_eq!(res.rows[0].trainer, TrainerKind::Vanilla);
        assert_eq!(res.rows[2].value, Some(2.0));
        assert!(dir.path().join("c_sweep.svg").exists());
        assert!(dir.path().join("runs/repfair_c0.5_seed2/grad_norms.svg").exists());
    }

    #[test]
    fn ratio_sweep_is_paired() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&spec(dir.path(), SweepAxis::Ratio(vec![0.2, 0.4]))).unwrap();
        assert_eq!(res.paired.len(), 2);
        assert_eq!(res.paired[0].vanilla.value, Some(0.2));
    }

    #[test]
    fn compare_rejects_sweeps() {
        let dir = tempfile::tempdir().unwrap();
        assert!(compare_baseline(&spec(dir.path(), SweepAxis::C(vec![1.0]))).is_err());
    }

    #[test]
    fn unwritable_output_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let s = spec(&blocker.join("out"), SweepAxis::None);
        assert!(matches!(run_experiment(&s), Err(Error::Io { .. })));
        assert!(!blocker.join("out").exists());
    }
}
