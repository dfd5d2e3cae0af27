//! Vanilla and group-alternating, clipped GAN training.
//!
//! Every real batch triggers three updates: the discriminator on real
//! samples, the discriminator on generated samples, and the generator with
//! the non-saturating loss `-log D(G(z))`. In the clipped mode the real
//! batch comes from one group at a time (group 0 first in every epoch,
//! then strictly alternating) and its discriminator gradient is rescaled to
//! global L2 norm at most `C` before the Adam step.

mod config;
mod telemetry;

pub use config::{derive_seed, TrainConfig, DEFAULT_MAX_GRAD_NORM};
pub use telemetry::{read_telemetry_csv, EpochRecord, RealStepRecord, RunTelemetry, TelemetryRow, TELEMETRY_HEADER};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{group_minibatch, mixed_minibatch, GroupedDataset, Minibatch, NoiseSource};
use crate::error::{Error, Result};
use crate::models::{DiscriminatorNet, GeneratorNet, LabelEmbedding};
use crate::optim::{clip_grad_norm, global_l2_norm, AdamState, ClipReport};
use crate::tensor::{Tape, Tensor};

/// Losses above this abort the run.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// How often the fake-sample discriminator step runs; recorded in run metadata.
pub const FAKE_STEP_POLICY: &str = "once per real batch";

const STREAM_GENERATOR: u64 = 1;
const STREAM_DISCRIMINATOR: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_MEASURE: u64 = 5;

/// Fresh networks for `ds` as described by `cfg`, seeded from `cfg.seed`.
pub fn build_networks(ds: &GroupedDataset, cfg: &TrainConfig) -> Result<(GeneratorNet, DiscriminatorNet)> {
    let embedding = if cfg.conditional {
        let num_classes = ds
            .num_classes()
            .ok_or_else(|| Error::Config("conditional training needs a labelled dataset".into()))?;
        Some(LabelEmbedding {
            num_classes,
            embed_dim: cfg.embed_dim,
        })
    } else {
        None
    };
    let g = GeneratorNet::new(
        cfg.noise_dim,
        ds.dim(),
        &cfg.generator_hidden,
        embedding,
        derive_seed(cfg.seed, STREAM_GENERATOR),
    )?;
    let d = DiscriminatorNet::new(
        ds.dim(),
        &cfg.discriminator_hidden,
        embedding,
        derive_seed(cfg.seed, STREAM_DISCRIMINATOR),
    )?;
    Ok((g, d))
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub telemetry: RunTelemetry,
}

/// Classic training on mixed-group real batches, no clipping. Per-group
/// gradient norms come from separate measurement passes.
pub fn train_vanilla(g: GeneratorNet, d: DiscriminatorNet, ds: &GroupedDataset, cfg: &TrainConfig) -> Result<TrainedRun> {
    if !cfg.is_vanilla() {
        return Err(Error::Config("train_vanilla needs max_grad_norm = none".into()));
    }
    Trainer::new(g, d, ds, cfg.clone())?.run()
}

/// Group-alternating discriminator training with per-group norm clipping.
pub fn train_repfair(g: GeneratorNet, d: DiscriminatorNet, ds: &GroupedDataset, cfg: &TrainConfig) -> Result<TrainedRun> {
    if cfg.is_vanilla() {
        return Err(Error::Config("train_repfair needs a max_grad_norm".into()));
    }
    if cfg.alternate_groups {
        for group in 0..2u8 {
            if ds.group_count(group) == 0 {
                return Err(Error::Data(format!("group {group} has no samples")));
            }
        }
    }
    Trainer::new(g, d, ds, cfg.clone())?.run()
}

/// Discriminator loss on `real` (target "real") and its global gradient
/// norm, without touching any parameter or gradient slot.
pub fn record_group_grad_norm(d: &DiscriminatorNet, real: &Minibatch, group: u8) -> Result<f64> {
    if real.single_group() != Some(group) {
        return Err(Error::Contract(format!("measurement batch is not purely group {group}")));
    }
    measure(d, real).map(|(norm, _)| norm)
}

fn measure(d: &DiscriminatorNet, batch: &Minibatch) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let bound = d.net.params().bind(&mut tape, true);
    let x = tape.constant(&batch.x);
    let p = d.net.forward_on(&mut tape, &bound, x, batch.labels.as_deref())?;
    let loss = tape.bce(p, &Tensor::full(&[batch.len(), 1], 1.0))?;
    let loss_value = tape.value(loss)[0];
    let grads = tape.backward(loss)?;
    let sq: f64 = bound
        .iter()
        .filter_map(|&v| grads.get(v))
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum();
    Ok((sq.sqrt(), loss_value))
}

#[derive(Debug, Default, Clone)]
struct EpochAccumulator {
    norm_sum: [f64; 2],
    norm_count: [usize; 2],
    clip_count: [usize; 2],
    loss_sum: [f64; 2],
    real_steps: [usize; 2],
    fake_loss_sum: f64,
    g_loss_sum: f64,
    batches: usize,
}

impl EpochAccumulator {
    fn finish(&self, epoch: usize) -> EpochRecord {
        let div = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let per = |a: [f64; 2]| [div(a[0], self.norm_count[0]), div(a[1], self.norm_count[1])];
        EpochRecord {
            epoch,
            grad_norm: per(self.norm_sum),
            clip_rate: [
                div(self.clip_count[0] as f64, self.norm_count[0]),
                div(self.clip_count[1] as f64, self.norm_count[1]),
            ],
            d_loss: per(self.loss_sum),
            d_fake_loss: div(self.fake_loss_sum, self.batches),
            g_loss: div(self.g_loss_sum, self.batches),
            real_steps: self.real_steps,
        }
    }
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub real: RealStepRecord,
    pub real_loss: f64,
    pub fake_loss: f64,
    pub g_loss: f64,
}

/// Step-level driver shared by both training modes.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    ds: &'a GroupedDataset,
    g: GeneratorNet,
    d: DiscriminatorNet,
    opt_g: AdamState,
    opt_d: AdamState,
    batch_rng: ChaCha8Rng,
    measure_rng: ChaCha8Rng,
    noise: NoiseSource,
    /// Next real batch comes from group 0.
    next_group_zero: bool,
    epoch: usize,
    acc: EpochAccumulator,
    telemetry: RunTelemetry,
}

impl<'a> Trainer<'a> {
    pub fn new(g: GeneratorNet, d: DiscriminatorNet, ds: &'a GroupedDataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if g.output_dim() != ds.dim() || d.input_dim() != ds.dim() {
            return Err(Error::Contract(format!(
                "network widths ({}, {}) do not match data dimension {}",
                g.output_dim(),
                d.input_dim(),
                ds.dim()
            )));
        }
        if g.noise_dim() != cfg.noise_dim {
            return Err(Error::Contract("generator noise width differs from config".into()));
        }
        if g.is_conditional() != cfg.conditional {
            return Err(Error::Contract("generator conditioning differs from config".into()));
        }
        let opt_g = AdamState::new(g.net.params(), cfg.adam());
        let opt_d = AdamState::new(d.net.params(), cfg.adam());
        Ok(Self {
            batch_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_BATCHES)),
            measure_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_MEASURE)),
            noise: NoiseSource::new(cfg.noise_dim, derive_seed(cfg.seed, STREAM_NOISE)),
            cfg,
            ds,
            g,
            d,
            opt_g,
            opt_d,
            next_group_zero: true,
            epoch: 0,
            acc: EpochAccumulator::default(),
            telemetry: RunTelemetry::default(),
        })
    }

    pub fn generator(&self) -> &GeneratorNet {
        &self.g
    }

    pub fn discriminator(&self) -> &DiscriminatorNet {
        &self.d
    }

    pub fn telemetry(&self) -> &RunTelemetry {
        &self.telemetry
    }

    fn alternating(&self) -> bool {
        self.cfg.max_grad_norm.is_some() && self.cfg.alternate_groups
    }

    fn diverged(&self, what: &str, v: f64) -> Result<()> {
        if !v.is_finite() || v > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                epoch: self.epoch,
                detail: format!("{what} = {v}"),
            });
        }
        Ok(())
    }

    /// Backward of the discriminator loss on `x` against a constant target,
    /// leaving gradients in the discriminator's grad slots.
    fn d_backward(&mut self, x: &Tensor, labels: Option<&[usize]>, target: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.d.net.params().bind(&mut tape, true);
        let xv = tape.constant(x);
        let p = self.d.net.forward_on(&mut tape, &bound, xv, labels)?;
        let loss = tape.bce(p, &Tensor::full(&[x.rows(), 1], target))?;
        let value = tape.value(loss)[0];
        let grads = tape.backward(loss)?;
        let params = self.d.net.params_mut();
        params.zero_grad();
        params.absorb(&grads, &bound)?;
        Ok(value)
    }

    fn clip_d(&mut self, c: f64) -> Result<(ClipReport, f64)> {
        let before = self.d.net.params().flat_grads()?;
        let report = clip_grad_norm(self.d.net.params_mut(), c)?;
        let cosine = if report.clipped {
            let after = self.d.net.params().flat_grads()?;
            cosine(&before, &after)
        } else {
            1.0
        };
        Ok((report, cosine))
    }

    fn fake_labels(&mut self) -> Option<Vec<usize>> {
        let k = self.g.num_classes()?;
        Some(self.noise.labels(self.cfg.batch_size, k))
    }

    /// One real-batch discriminator step, one generated-batch discriminator
    /// step and one generator step.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let bs = self.cfg.batch_size;
        let group = self.alternating().then_some(if self.next_group_zero { 0u8 } else { 1 });
        let real = match group {
            Some(gr) => group_minibatch(self.ds, gr, bs, &mut self.batch_rng)?,
            None => mixed_minibatch(self.ds, bs, &mut self.batch_rng)?,
        };

        if group.is_none() {
            for gr in 0..2u8 {
                if self.ds.group_count(gr) == 0 {
                    continue;
                }
                let probe = group_minibatch(self.ds, gr, bs, &mut self.measure_rng)?;
                let (norm, loss) = measure(&self.d, &probe)?;
                let i = gr as usize;
                self.acc.norm_sum[i] += norm;
                self.acc.norm_count[i] += 1;
                self.acc.loss_sum[i] += loss;
            }
        }

        let real_loss = self.d_backward(&real.x, real.labels.as_deref(), 1.0)?;
        self.diverged("real discriminator loss", real_loss)?;
        let pre_norm = global_l2_norm(self.d.net.params())?;
        let (report, cos) = match self.cfg.max_grad_norm {
            Some(c) => self.clip_d(c)?,
            None => (
                ClipReport {
                    pre_norm,
                    post_norm: pre_norm,
                    clipped: false,
                    scale: 1.0,
                },
                1.0,
            ),
        };
        self.opt_d.step(self.d.net.params_mut())?;
        if let Some(gr) = group {
            let i = gr as usize;
            self.acc.norm_sum[i] += report.pre_norm;
            self.acc.norm_count[i] += 1;
            self.acc.clip_count[i] += usize::from(report.clipped);
            self.acc.loss_sum[i] += real_loss;
            self.acc.real_steps[i] += 1;
            self.next_group_zero = !self.next_group_zero;
        }
        let record = RealStepRecord {
            epoch: self.epoch,
            group,
            pre_norm: report.pre_norm,
            post_norm: report.post_norm,
            clipped: report.clipped,
            scale: report.scale,
            cosine: cos,
        };
        self.telemetry.real_steps.push(record);

        let z = self.noise.sample(bs);
        let fake_labels = self.fake_labels();
        let fake = self.g.forward(&z, fake_labels.as_deref())?;
        let fake_loss = self.d_backward(&fake, fake_labels.as_deref(), 0.0)?;
        self.diverged("fake discriminator loss", fake_loss)?;
        if let (Some(c), true) = (self.cfg.max_grad_norm, self.cfg.clip_fake_step) {
            clip_grad_norm(self.d.net.params_mut(), c)?;
        }
        self.opt_d.step(self.d.net.params_mut())?;

        let z = self.noise.sample(bs);
        let g_labels = self.fake_labels();
        let mut tape = Tape::new();
        let g_bound = self.g.net.params().bind(&mut tape, true);
        let d_bound = self.d.net.params().bind(&mut tape, false);
        let zv = tape.constant(&z);
        let x = self.g.net.forward_on(&mut tape, &g_bound, zv, g_labels.as_deref())?;
        let p = self.d.net.forward_on(&mut tape, &d_bound, x, g_labels.as_deref())?;
        let loss = tape.bce(p, &Tensor::full(&[bs, 1], 1.0))?;
        let g_loss = tape.value(loss)[0];
        self.diverged("generator loss", g_loss)?;
        let grads = tape.backward(loss)?;
        let params = self.g.net.params_mut();
        params.zero_grad();
        params.absorb(&grads, &g_bound)?;
        self.opt_g.step(params)?;

        self.acc.fake_loss_sum += fake_loss;
        self.acc.g_loss_sum += g_loss;
        self.acc.batches += 1;
        Ok(StepOutcome {
            real: record,
            real_loss,
            fake_loss,
            g_loss,
        })
    }

    /// Runs one epoch of real batches and appends its telemetry record.
    pub fn run_epoch(&mut self) -> Result<()> {
        let started = Instant::now();
        self.next_group_zero = true;
        self.acc = EpochAccumulator::default();
        for _ in 0..self.cfg.batches_for(self.ds.len()) {
            self.step()?;
        }
        self.telemetry.epochs.push(self.acc.finish(self.epoch));
        self.telemetry.wall_clock.push(started.elapsed().as_secs_f64());
        self.epoch += 1;
        if let (Some(every), Some(dir)) = (self.cfg.checkpoint_every, &self.cfg.checkpoint_dir) {
            if self.epoch.is_multiple_of(every) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                self.g
                    .net
                    .save_checkpoint("generator", &dir.join(format!("generator_epoch{}.json", self.epoch)))?;
                self.d
                    .net
                    .save_checkpoint("discriminator", &dir.join(format!("discriminator_epoch{}.json", self.epoch)))?;
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainedRun> {
        for _ in 0..self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainedRun {
        TrainedRun {
            generator: self.g,
            discriminator: self.d,
            telemetry: self.telemetry,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gauss2d;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            generator_hidden: vec![16],
            discriminator_hidden: vec![16],
            noise_dim: 4,
            batches_per_epoch: Some(4),
            ..TrainConfig::default()
        }
    }

    fn dataset() -> GroupedDataset {
        make_gauss2d(200, 0.5, 1, 0.5, [0.05, 0.15]).unwrap()
    }

    #[test]
    fn zero_epoch_run_leaves_networks_untouched() {
        let ds = dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        let run = train_vanilla(g.clone(), d.clone(), &ds, &cfg).unwrap();
        assert_eq!(run.generator.net.params().flat_values(), g.net.params().flat_values());
        assert_eq!(run.discriminator.net.params().flat_values(), d.net.params().flat_values());
        assert!(run.telemetry.epochs.is_empty());
    }

    #[test]
    fn modes_are_checked() {
        let ds = dataset();
        let cfg = small_cfg();
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        assert!(train_repfair(g.clone(), d.clone(), &ds, &cfg).is_err());
        let rf = TrainConfig {
            max_grad_norm: Some(1.0),
            ..small_cfg()
        };
        assert!(train_vanilla(g, d, &ds, &rf).is_err());
    }

    #[test]
    fn repfair_alternates_and_respects_c() {
        let ds = dataset();
        let cfg = TrainConfig {
            max_grad_norm: Some(0.05),
            ..small_cfg()
        };
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        let run = train_repfair(g, d, &ds, &cfg).unwrap();
        let groups: Vec<u8> = run.telemetry.real_steps.iter().map(|s| s.group.unwrap()).collect();
        assert_eq!(groups, vec![0, 1, 0, 1, 0, 1, 0, 1]);
        for s in &run.telemetry.real_steps {
            assert!(s.post_norm <= 0.05 + 1e-9);
            assert_eq!(s.clipped, s.pre_norm > 0.05);
        }
        assert_eq!(run.telemetry.epochs.len(), 2);
        assert_eq!(run.telemetry.epochs[0].real_steps, [2, 2]);
    }

    #[test]
    fn repfair_needs_both_groups() {
        let x = Tensor::zeros(&[4, 2]);
        let ds = GroupedDataset::new(x, vec![0; 4], None, None).unwrap();
        let cfg = TrainConfig {
            max_grad_norm: Some(1.0),
            ..small_cfg()
        };
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        assert!(matches!(train_repfair(g, d, &ds, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn vanilla_measures_both_groups() {
        let ds = dataset();
        let cfg = small_cfg();
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        let run = train_vanilla(g, d, &ds, &cfg).unwrap();
        for e in &run.telemetry.epochs {
            assert!(e.grad_norm.iter().all(|&n| n > 0.0 && n.is_finite()));
            assert_eq!(e.clip_rate, [0.0, 0.0]);
        }
        assert!(run.telemetry.real_steps.iter().all(|s| s.group.is_none()));
    }

    #[test]
    fn measurement_rejects_mixed_batches_and_leaves_grads_alone() {
        let ds = dataset();
        let (_, d) = build_networks(&ds, &small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mixed = ds.gather(&[ds.group_indices(0)[0], ds.group_indices(1)[0]]).unwrap();
        assert!(matches!(record_group_grad_norm(&d, &mixed, 0), Err(Error::Contract(_))));
        let b = group_minibatch(&ds, 1, 8, &mut rng).unwrap();
        let n1 = record_group_grad_norm(&d, &b, 1).unwrap();
        let n2 = record_group_grad_norm(&d, &b, 1).unwrap();
        assert_eq!(n1, n2);
        assert!(d.net.params().iter().all(|(_, t)| t.grad().is_none()));
    }

    #[test]
    fn checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset();
        let cfg = TrainConfig {
            checkpoint_every: Some(1),
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..small_cfg()
        };
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        let run = train_vanilla(g, d, &ds, &cfg).unwrap();
        let (role, back) = crate::models::Mlp::load_checkpoint(&dir.path().join("generator_epoch2.json")).unwrap();
        assert_eq!(role, "generator");
        assert_eq!(back.params().flat_values(), run.generator.net.params().flat_values());
        assert!(dir.path().join("discriminator_epoch1.json").exists());
    }

    #[test]
    fn conditional_training_runs() {
        let ds = crate::data::make_bgdigits(100, 0.5, 2, 4).unwrap();
        let cfg = TrainConfig {
            conditional: true,
            embed_dim: 3,
            max_grad_norm: Some(2.0),
            ..small_cfg()
        };
        let (g, d) = build_networks(&ds, &cfg).unwrap();
        let run = train_repfair(g, d, &ds, &cfg).unwrap();
        assert!(run.generator.is_conditional());
        assert_eq!(run.telemetry.epochs.len(), 2);
    }
}
