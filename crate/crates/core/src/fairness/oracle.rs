use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{shuffle, GroupedDataset};
use crate::error::{Error, Result};
use crate::models::{Mlp, Topology};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};

/// Settings for fitting the classifier oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleTraining {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of the data used for fitting; the rest measures accuracy.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for OracleTraining {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Sensitive-attribute predictor `h: X → {0, 1}`.
#[derive(Debug, Clone)]
pub enum AttributeOracle {
    /// `x0 < 0 → 0`, otherwise 1. Needs 2-D inputs.
    Analytic2d,
    /// Background read off one pixel: light (> 0 on the `[-1, 1]` scale)
    /// means `light_group`.
    CornerPixel { index: usize, light_group: u8 },
    /// Small MLP fitted on real data; `accuracy` is measured on held-out rows.
    Trained { net: Mlp, accuracy: f64 },
}

impl AttributeOracle {
    pub fn mode(&self) -> &'static str {
        match self {
            Self::Analytic2d => "analytic-2d",
            Self::CornerPixel { .. } => "corner-pixel",
            Self::Trained { .. } => "trained-classifier",
        }
    }

    /// Held-out accuracy of the trained classifier; `None` for exact rules.
    pub fn accuracy(&self) -> Option<f64> {
        match self {
            Self::Trained { accuracy, .. } => Some(*accuracy),
            _ => None,
        }
    }

    pub fn corner_pixel(light_group: u8) -> Result<Self> {
        if light_group > 1 {
            return Err(Error::Config(format!("light group {light_group} is not binary")));
        }
        Ok(Self::CornerPixel { index: 0, light_group })
    }

    /// Fits an MLP to predict `s` on a seeded split of `ds` and records its
    /// accuracy on the held-out part.
    pub fn train(ds: &GroupedDataset, opts: &OracleTraining) -> Result<Self> {
        if opts.batch_size == 0 || opts.epochs == 0 {
            return Err(Error::Config("oracle training needs positive epochs and batch size".into()));
        }
        let (fit, held_out) = ds.split(opts.train_fraction, opts.seed)?;
        if fit.is_empty() || held_out.is_empty() {
            return Err(Error::Data("oracle split left an empty part".into()));
        }
        let topology = Topology::discriminator(ds.dim(), &opts.hidden, None);
        let mut net = Mlp::new(topology, opts.seed)?;
        let mut adam = AdamState::new(
            net.params(),
            AdamConfig {
                lr: opts.lr,
                beta1: 0.9,
                ..AdamConfig::default()
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED);
        let mut order: Vec<usize> = (0..fit.len()).collect();
        for _ in 0..opts.epochs {
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(opts.batch_size) {
                let batch = fit.gather(chunk)?;
                let targets: Vec<f64> = batch.sensitive.iter().map(|&s| s as f64).collect();
                let mut tape = Tape::new();
                let bound = net.params().bind(&mut tape, true);
                let x = tape.constant(&batch.x);
                let p = net.forward_on(&mut tape, &bound, x, None)?;
                let loss = tape.bce(p, &Tensor::new(&[chunk.len(), 1], targets)?)?;
                let grads = tape.backward(loss)?;
                let params = net.params_mut();
                params.zero_grad();
                params.absorb(&grads, &bound)?;
                adam.step(params)?;
            }
        }
        let mut oracle = Self::Trained { net, accuracy: 0.0 };
        let predicted = oracle.predict(held_out.samples())?;
        let hits = predicted.iter().zip(held_out.sensitive()).filter(|(a, b)| a == b).count();
        if let Self::Trained { accuracy, .. } = &mut oracle {
            *accuracy = hits as f64 / held_out.len() as f64;
        }
        Ok(oracle)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        let (n, d) = x.dims2()?;
        match self {
            Self::Analytic2d => {
                if d != 2 {
                    return Err(Error::Contract(format!("analytic-2d oracle needs 2 columns, got {d}")));
                }
                Ok((0..n).map(|i| u8::from(x.row(i)[0] >= 0.0)).collect())
            }
            Self::CornerPixel { index, light_group } => {
                if *index >= d {
                    return Err(Error::Contract(format!("corner pixel {index} outside {d} columns")));
                }
                Ok((0..n)
                    .map(|i| if x.row(i)[*index] > 0.0 { *light_group } else { 1 - light_group })
                    .collect())
            }
            Self::Trained { net, .. } => {
                let input = net.topology().input_dim;
                if d != input {
                    return Err(Error::Contract(format!("classifier oracle expects {input} columns, got {d}")));
                }
                let p = net.forward(x, None)?;
                Ok(p.data().iter().map(|&v| u8::from(v > 0.5)).collect())
            }
        }
    }
}
