//! Dense generator and discriminator networks.
//!
//! Both networks are multilayer perceptrons with leaky-ReLU hidden layers.
//! The generator ends in `tanh`, the discriminator in a single sigmoid unit.
//! Conditional variants look up a learned label embedding and concatenate
//! it to the network input.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_GENERATOR_HIDDEN: [usize; 2] = [128, 256];
pub const DEFAULT_DISCRIMINATOR_HIDDEN: [usize; 2] = [256, 128];
pub const DEFAULT_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEmbedding {
    pub num_classes: usize,
    pub embed_dim: usize,
}

/// Layer layout of a dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output: OutputActivation,
    pub leaky_slope: f64,
    pub embedding: Option<LabelEmbedding>,
}

impl Topology {
    pub fn generator(noise_dim: usize, output_dim: usize, hidden: &[usize], embedding: Option<LabelEmbedding>) -> Self {
        Self {
            input_dim: noise_dim,
            hidden: hidden.to_vec(),
            output_dim,
            output: OutputActivation::Tanh,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            embedding,
        }
    }

    pub fn discriminator(input_dim: usize, hidden: &[usize], embedding: Option<LabelEmbedding>) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim: 1,
            output: OutputActivation::Sigmoid,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            embedding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("zero-size layer in topology {self:?}")));
        }
        if let Some(e) = self.embedding {
            if e.num_classes == 0 || e.embed_dim == 0 {
                return Err(Error::Config(format!("zero-size label embedding {e:?}")));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0,1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let first = self.input_dim + self.embedding.map_or(0, |e| e.embed_dim);
        let mut widths = vec![first];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        let emb = self.embedding.map_or(0, |e| e.num_classes * e.embed_dim);
        emb + self.layer_dims().iter().map(|(i, o)| i * o + o).sum::<usize>()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    entries: Vec<(String, Tensor)>,
}

impl NetworkParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Contract(format!("duplicate parameter name {name}")));
            }
        }
        let entries = entries
            .into_iter()
            .map(|(n, t)| (n, t.with_requires_grad(true)))
            .collect();
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter on `tape`. Frozen bindings are constants,
    /// so no gradient flows into them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect()
    }

    /// Adds the tape gradients of `bound` into each parameter's grad slot.
    pub fn absorb(&mut self, grads: &Gradients, bound: &[Var]) -> Result<()> {
        if bound.len() != self.entries.len() {
            return Err(Error::Contract("bound variables do not match parameters".into()));
        }
        for ((_, t), &v) in self.entries.iter_mut().zip(bound) {
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g)?,
                None if t.grad().is_none() => t.zero_grad(),
                None => {}
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// All gradient elements, concatenated in parameter order.
    pub fn flat_grads(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for (name, t) in &self.entries {
            let g = t
                .grad()
                .ok_or_else(|| Error::Contract(format!("missing gradient for {name}")))?;
            out.extend_from_slice(g);
        }
        Ok(out)
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }
}

/// Deterministic initialization: affine weights and biases from
/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`, embeddings from `N(0, 1)`.
pub fn init_params(topology: &Topology, seed: u64) -> Result<NetworkParams> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    if let Some(e) = topology.embedding {
        let data = (0..e.num_classes * e.embed_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        entries.push(("embed".to_string(), Tensor::new(&[e.num_classes, e.embed_dim], data)?));
    }
    for (i, (fan_in, fan_out)) in topology.layer_dims().into_iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        entries.push((format!("layer{i}.weight"), Tensor::new(&[fan_in, fan_out], w)?));
        entries.push((format!("layer{i}.bias"), Tensor::new(&[fan_out], b)?));
    }
    NetworkParams::new(entries)
}

/// A dense network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    topology: Topology,
    params: NetworkParams,
}

impl Mlp {
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        let params = init_params(&topology, seed)?;
        Ok(Self { topology, params })
    }

    pub fn from_parts(topology: Topology, params: NetworkParams) -> Result<Self> {
        topology.validate()?;
        let fresh = init_params(&topology, 0)?;
        let matches = fresh.len() == params.len()
            && fresh
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !matches {
            return Err(Error::Contract("parameters do not match topology".into()));
        }
        Ok(Self { topology, params })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    /// Records the forward pass of `x` (batch × input_dim) on `tape`.
    pub fn forward_on(&self, tape: &mut Tape, bound: &[Var], x: Var, labels: Option<&[usize]>) -> Result<Var> {
        let (batch, width) = match tape.shape(x) {
            [b, w] => (*b, *w),
            other => return Err(Error::Contract(format!("network input must be a matrix, got {other:?}"))),
        };
        if width != self.topology.input_dim {
            return Err(Error::dim("network input", &[batch, width], &[batch, self.topology.input_dim]));
        }
        let mut slots = bound.iter().copied();
        let mut h = match (self.topology.embedding, labels) {
            (Some(_), Some(ids)) => {
                if ids.len() != batch {
                    return Err(Error::Contract(format!(
                        "{} labels for a batch of {batch}",
                        ids.len()
                    )));
                }
                let table = slots.next().expect("embedding bound");
                let e = tape.embedding(table, ids)?;
                tape.concat_cols(x, e)?
            }
            (Some(_), None) => return Err(Error::Contract("conditional network needs labels".into())),
            (None, Some(_)) => return Err(Error::Contract("labels given to an unconditional network".into())),
            (None, None) => x,
        };
        let layers = self.topology.layer_dims().len();
        for i in 0..layers {
            let w = slots.next().expect("weight bound");
            let b = slots.next().expect("bias bound");
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            h = if i + 1 < layers {
                tape.leaky_relu(h, self.topology.leaky_slope)
            } else {
                match self.topology.output {
                    OutputActivation::Tanh => tape.tanh(h),
                    OutputActivation::Sigmoid => tape.sigmoid(h),
                }
            };
        }
        Ok(h)
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x);
        let out = self.forward_on(&mut tape, &bound, xv, labels)?;
        Ok(tape.to_tensor(out))
    }

    pub fn save_checkpoint(&self, role: &str, path: &Path) -> Result<()> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            role: role.to_string(),
            topology: self.topology.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| CheckpointParam {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Returns the stored role tag together with the network.
    pub fn load_checkpoint(path: &Path) -> Result<(String, Mlp)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        let entries = doc
            .params
            .into_iter()
            .map(|p| Ok((p.name, Tensor::new(&p.shape, p.data)?)))
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_parts(doc.topology, NetworkParams::new(entries)?)?;
        Ok((doc.role, mlp))
    }
}

const CHECKPOINT_FORMAT: &str = "repfair-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    role: String,
    topology: Topology,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Maps noise (and optionally a class id) to samples in `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub net: Mlp,
}

impl GeneratorNet {
    pub fn new(noise_dim: usize, output_dim: usize, hidden: &[usize], embedding: Option<LabelEmbedding>, seed: u64) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(Topology::generator(noise_dim, output_dim, hidden, embedding), seed)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.topology().output != OutputActivation::Tanh {
            return Err(Error::Contract("generator must end in tanh".into()));
        }
        Ok(Self { net })
    }

    pub fn noise_dim(&self) -> usize {
        self.net.topology().input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.net.topology().output_dim
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.net.topology().embedding.map(|e| e.num_classes)
    }

    pub fn is_conditional(&self) -> bool {
        self.net.topology().embedding.is_some()
    }

    pub fn forward(&self, z: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        self.net.forward(z, labels)
    }
}

/// Scores samples with the probability of being real.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub net: Mlp,
}

impl DiscriminatorNet {
    pub fn new(input_dim: usize, hidden: &[usize], embedding: Option<LabelEmbedding>, seed: u64) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(Topology::discriminator(input_dim, hidden, embedding), seed)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        let t = net.topology();
        if t.output != OutputActivation::Sigmoid || t.output_dim != 1 {
            return Err(Error::Contract("discriminator must end in one sigmoid unit".into()));
        }
        Ok(Self { net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.topology().input_dim
    }

    pub fn forward(&self, x: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        self.net.forward(x, labels)
    }
}

pub fn generator_forward(g: &GeneratorNet, z: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
    g.forward(z, labels)
}

pub fn discriminator_forward(d: &DiscriminatorNet, x: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
    d.forward(x, labels)
}
