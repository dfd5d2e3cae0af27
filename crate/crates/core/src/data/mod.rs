//! Two-group datasets, group-restricted sampling and the latent noise source.

mod idx;
mod synthetic;

pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IdxImages, IdxLabels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{
    glyph_template, make_bgdigits, make_bgdigits_with, make_gauss2d, BgDigitsOptions, GroupStyle, NUM_GLYPH_CLASSES,
    SHADE_FACTOR,
};

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples with a binary sensitive attribute and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    samples: Tensor,
    sensitive: Vec<u8>,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
    group_index: [Vec<usize>; 2],
}

impl GroupedDataset {
    pub fn new(samples: Tensor, sensitive: Vec<u8>, labels: Option<Vec<usize>>, num_classes: Option<usize>) -> Result<Self> {
        let (n, _) = samples.dims2()?;
        if sensitive.len() != n {
            return Err(Error::Data(format!("{} sensitive attributes for {n} samples", sensitive.len())));
        }
        if let Some(&bad) = sensitive.iter().find(|&&s| s > 1) {
            return Err(Error::Data(format!("sensitive attribute {bad} is not binary")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Data(format!("{} labels for {n} samples", l.len())));
            }
            let k = num_classes.ok_or_else(|| Error::Data("labels without a class count".into()))?;
            if l.iter().any(|&c| c >= k) {
                return Err(Error::Data(format!("label outside 0..{k}")));
            }
        }
        if samples.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Data("samples must be finite and inside [-1, 1]".into()));
        }
        let mut group_index = [Vec::new(), Vec::new()];
        for (i, &s) in sensitive.iter().enumerate() {
            group_index[s as usize].push(i);
        }
        let num_classes = num_classes.filter(|_| labels.is_some());
        Ok(Self {
            samples,
            sensitive,
            labels,
            num_classes,
            group_index,
        })
    }

    pub fn len(&self) -> usize {
        self.sensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensitive.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn group_count(&self, group: u8) -> usize {
        self.group_index[group as usize].len()
    }

    /// Fraction of samples with `s = 0`.
    pub fn group_ratio(&self) -> f64 {
        self.group_count(0) as f64 / self.len() as f64
    }

    pub fn group_indices(&self, group: u8) -> &[usize] {
        &self.group_index[group as usize]
    }

    /// Rows at `idx` with their attributes.
    pub fn gather(&self, idx: &[usize]) -> Result<Minibatch> {
        Ok(Minibatch {
            x: self.samples.select_rows(idx)?,
            sensitive: idx.iter().map(|&i| self.sensitive[i]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        })
    }

    /// Deterministic split into the first `fraction` of a seeded shuffle and the rest.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(GroupedDataset, GroupedDataset)> {
        let n = self.len();
        let cut = (fraction * n as f64).round() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::Config(format!("split fraction {fraction} leaves an empty side")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(seed));
        let part = |idx: &[usize]| {
            let b = self.gather(idx)?;
            GroupedDataset::new(b.x, b.sensitive, b.labels, self.num_classes)
        };
        Ok((part(&order[..cut])?, part(&order[cut..])?))
    }

    /// Writes `x0,..,x{d-1},s[,label]` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("s".into());
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.samples.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.sensitive[i].to_string());
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let header = r.headers()?.clone();
        let has_label = header.iter().next_back() == Some("label");
        let d = header.len() - 1 - usize::from(has_label);
        for (j, h) in header.iter().take(d).enumerate() {
            if h != format!("x{j}") {
                return Err(Error::Data(format!("unexpected column {h:?} at position {j}")));
            }
        }
        if header.get(d) != Some("s") {
            return Err(Error::Data("missing sensitive column `s`".into()));
        }
        let (mut data, mut sens, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Data(format!("short row {:?}", rec.position())))
            };
            for j in 0..d {
                data.push(num(j)?.parse::<f64>().map_err(|e| Error::Data(e.to_string()))?);
            }
            sens.push(num(d)?.parse::<u8>().map_err(|e| Error::Data(e.to_string()))?);
            if has_label {
                labels.push(num(d + 1)?.parse::<usize>().map_err(|e| Error::Data(e.to_string()))?);
            }
        }
        let n = sens.len();
        let samples = Tensor::new(&[n, d], data)?;
        if has_label {
            let k = labels.iter().max().map_or(1, |m| m + 1);
            GroupedDataset::new(samples, sens, Some(labels), Some(k))
        } else {
            GroupedDataset::new(samples, sens, None, None)
        }
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{other:?}")),
    }
}

pub(crate) fn shuffle<T>(v: &mut [T], rng: &mut impl Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// A batch of rows drawn from a [`GroupedDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub x: Tensor,
    pub sensitive: Vec<u8>,
    pub labels: Option<Vec<usize>>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.sensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensitive.is_empty()
    }

    /// The common group of all rows, or `None` for a mixed batch.
    pub fn single_group(&self) -> Option<u8> {
        let first = *self.sensitive.first()?;
        self.sensitive.iter().all(|&s| s == first).then_some(first)
    }

    /// Rows of one group, or `None` when the group is absent.
    pub fn restrict(&self, group: u8) -> Result<Option<Minibatch>> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.sensitive[i] == group).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        Ok(Some(Minibatch {
            x: self.x.select_rows(&idx)?,
            sensitive: vec![group; idx.len()],
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }))
    }
}

/// Uniform draw with replacement from the rows with `s = group`.
pub fn group_minibatch(ds: &GroupedDataset, group: u8, batch_size: usize, rng: &mut impl Rng) -> Result<Minibatch> {
    if group > 1 {
        return Err(Error::Contract(format!("group {group} is not binary")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let pool = ds.group_indices(group);
    if pool.is_empty() {
        return Err(Error::Data(format!("group {group} has no samples")));
    }
    let idx: Vec<usize> = (0..batch_size).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    ds.gather(&idx)
}

/// Uniform draw with replacement from the whole dataset.
pub fn mixed_minibatch(ds: &GroupedDataset, batch_size: usize, rng: &mut impl Rng) -> Result<Minibatch> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if ds.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..ds.len())).collect();
    ds.gather(&idx)
}

/// Seeded standard-normal latent codes.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    dim: usize,
    seed: u64,
}

impl NoiseSource {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&mut self, batch: usize) -> Tensor {
        let data = (0..batch * self.dim).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::new(&[batch, self.dim], data).expect("positive noise extents")
    }

    /// Class ids drawn uniformly from `0..num_classes`.
    pub fn labels(&mut self, batch: usize, num_classes: usize) -> Vec<usize> {
        (0..batch).map(|_| self.rng.random_range(0..num_classes)).collect()
    }
}
