//! Attribute oracles and distance-to-uniform audits of generated samples.

mod oracle;
mod quality;

pub use oracle::{AttributeOracle, OracleTraining};
pub use quality::{quality_by_group, quality_proxy, QualityReport};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::NoiseSource;
use crate::error::{Error, Result};
use crate::models::GeneratorNet;

/// Smallest sample count an audit accepts.
pub const MIN_AUDIT_SAMPLES: usize = 100;

const AUDIT_CHUNK: usize = 1024;

/// `Σ p ln(p·k)` over `k` groups, with `0·ln 0 = 0`.
pub fn kl_to_uniform(freq: &[f64]) -> f64 {
    let k = freq.len() as f64;
    freq.iter().filter(|&&p| p > 0.0).map(|&p| p * (p * k).ln()).sum::<f64>().max(0.0)
}

/// `½ Σ |p − 1/k|`.
pub fn tv_to_uniform(freq: &[f64]) -> f64 {
    let u = 1.0 / freq.len() as f64;
    0.5 * freq.iter().map(|&p| (p - u).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Kl,
    Tv,
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::Kl),
            "tv" => Ok(Self::Tv),
            other => Err(Error::Config(format!("unknown distance {other:?} (expected kl or tv)"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kl => "kl",
            Self::Tv => "tv",
        })
    }
}

/// Group distribution of one sample set, as seen by an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub counts: [usize; 2],
    pub frequencies: [f64; 2],
    pub kl_to_uniform: f64,
    pub tv_to_uniform: f64,
    /// Observed distance under `distance`.
    pub epsilon: f64,
    pub distance: Distance,
    pub n_samples: usize,
    pub seed: u64,
    /// Class the samples were conditioned on, for class-wise audits.
    pub class: Option<usize>,
    pub oracle_accuracy: Option<f64>,
}

impl FairnessReport {
    pub fn from_counts(counts: [usize; 2], seed: u64) -> Result<Self> {
        let n = counts[0] + counts[1];
        if n == 0 {
            return Err(Error::Contract("fairness report over zero samples".into()));
        }
        let frequencies = [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64];
        let kl = kl_to_uniform(&frequencies);
        Ok(Self {
            counts,
            frequencies,
            kl_to_uniform: kl,
            tv_to_uniform: tv_to_uniform(&frequencies),
            epsilon: kl,
            distance: Distance::Kl,
            n_samples: n,
            seed,
            class: None,
            oracle_accuracy: None,
        })
    }

    pub fn distance_value(&self, distance: Distance) -> f64 {
        match distance {
            Distance::Kl => self.kl_to_uniform,
            Distance::Tv => self.tv_to_uniform,
        }
    }

    pub fn with_distance(mut self, distance: Distance) -> Self {
        self.distance = distance;
        self.epsilon = self.distance_value(distance);
        self
    }

    /// `|p0 − p1|`.
    pub fn frequency_gap(&self) -> f64 {
        (self.frequencies[0] - self.frequencies[1]).abs()
    }
}

pub fn is_eps_fair(report: &FairnessReport, eps: f64, distance: Distance) -> Result<bool> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Config(format!("epsilon must be non-negative, got {eps}")));
    }
    Ok(report.distance_value(distance) <= eps)
}

fn count_groups(g: &GeneratorNet, h: &AttributeOracle, n: usize, class: Option<usize>, noise: &mut NoiseSource) -> Result<[usize; 2]> {
    if noise.dim() != g.noise_dim() {
        return Err(Error::Contract(format!(
            "noise width {} differs from generator input {}",
            noise.dim(),
            g.noise_dim()
        )));
    }
    let mut counts = [0usize; 2];
    let mut left = n;
    while left > 0 {
        let m = left.min(AUDIT_CHUNK);
        let z = noise.sample(m);
        let labels = match (g.num_classes(), class) {
            (Some(_), Some(c)) => Some(vec![c; m]),
            (Some(k), None) => Some(noise.labels(m, k)),
            (None, _) => None,
        };
        let x = g.forward(&z, labels.as_deref())?;
        let groups = h
            .predict(&x)
            .map_err(|e| Error::Contract(format!("oracle {} failed: {e}", h.mode())))?;
        for s in groups {
            counts[s as usize] += 1;
        }
        left -= m;
    }
    Ok(counts)
}

/// Draws `n_samples` from `g` (uniform classes when conditional) and
/// measures how far the oracle's group distribution is from uniform.
pub fn sample_and_audit(g: &GeneratorNet, h: &AttributeOracle, n_samples: usize, noise: &mut NoiseSource) -> Result<FairnessReport> {
    if n_samples < MIN_AUDIT_SAMPLES {
        return Err(Error::Config(format!("audit needs at least {MIN_AUDIT_SAMPLES} samples, got {n_samples}")));
    }
    let seed = noise.seed();
    let counts = count_groups(g, h, n_samples, None, noise)?;
    let mut report = FairnessReport::from_counts(counts, seed)?;
    report.oracle_accuracy = h.accuracy();
    Ok(report)
}

/// One report per class id, each from its own conditioned sample set.
pub fn classwise_audit(
    g: &GeneratorNet,
    h: &AttributeOracle,
    n_samples_per_class: usize,
    noise: &mut NoiseSource,
) -> Result<Vec<FairnessReport>> {
    let k = g
        .num_classes()
        .ok_or_else(|| Error::Contract("class-wise audit needs a conditional generator".into()))?;
    if n_samples_per_class < MIN_AUDIT_SAMPLES {
        return Err(Error::Config(format!(
            "audit needs at least {MIN_AUDIT_SAMPLES} samples per class, got {n_samples_per_class}"
        )));
    }
    let seed = noise.seed();
    (0..k)
        .map(|c| {
            let counts = count_groups(g, h, n_samples_per_class, Some(c), noise)?;
            let mut r = FairnessReport::from_counts(counts, seed)?;
            r.class = Some(c);
            r.oracle_accuracy = h.accuracy();
            Ok(r)
        })
        .collect()
}

/// Sample-weighted combination of several reports.
pub fn pool_reports(reports: &[FairnessReport]) -> Result<FairnessReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("nothing to pool".into()))?;
    let counts = reports
        .iter()
        .fold([0, 0], |acc, r| [acc[0] + r.counts[0], acc[1] + r.counts[1]]);
    let mut pooled = FairnessReport::from_counts(counts, first.seed)?.with_distance(first.distance);
    pooled.oracle_accuracy = first.oracle_accuracy;
    Ok(pooled)
}

/// Repeated audits with independent noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedAudit {
    pub reports: Vec<FairnessReport>,
    /// Largest observed distance over all audits.
    pub epsilon: f64,
    pub distance: Distance,
}

pub fn repeated_audit(
    g: &GeneratorNet,
    h: &AttributeOracle,
    n_samples: usize,
    seeds: &[u64],
    distance: Distance,
) -> Result<RepeatedAudit> {
    if seeds.is_empty() {
        return Err(Error::Config("repeated audit needs at least one seed".into()));
    }
    let reports = seeds
        .iter()
        .map(|&s| {
            let mut noise = NoiseSource::new(g.noise_dim(), s);
            sample_and_audit(g, h, n_samples, &mut noise).map(|r| r.with_distance(distance))
        })
        .collect::<Result<Vec<_>>>()?;
    let epsilon = reports.iter().map(|r| r.epsilon).fold(0.0, f64::max);
    Ok(RepeatedAudit {
        reports,
        epsilon,
        distance,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    class: Option<usize>,
    seed: u64,
    n_samples: usize,
    count0: usize,
    count1: usize,
    freq0: f64,
    freq1: f64,
    kl_to_uniform: f64,
    tv_to_uniform: f64,
    distance: Distance,
    epsilon: f64,
    oracle_accuracy: Option<f64>,
}

pub fn write_reports_csv(path: &Path, reports: &[FairnessReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(ReportRow {
            class: r.class,
            seed: r.seed,
            n_samples: r.n_samples,
            count0: r.counts[0],
            count1: r.counts[1],
            freq0: r.frequencies[0],
            freq1: r.frequencies[1],
            kl_to_uniform: r.kl_to_uniform,
            tv_to_uniform: r.tv_to_uniform,
            distance: r.distance,
            epsilon: r.epsilon,
            oracle_accuracy: r.oracle_accuracy,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<FairnessReport>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<ReportRow>()
        .map(|row| {
            let row = row?;
            Ok(FairnessReport {
                counts: [row.count0, row.count1],
                frequencies: [row.freq0, row.freq1],
                kl_to_uniform: row.kl_to_uniform,
                tv_to_uniform: row.tv_to_uniform,
                epsilon: row.epsilon,
                distance: row.distance,
                n_samples: row.n_samples,
                seed: row.seed,
                class: row.class,
                oracle_accuracy: row.oracle_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts() {
        let r = FairnessReport::from_counts([5000, 5000], 0).unwrap();
        assert_eq!(r.kl_to_uniform, 0.0);
        assert_eq!(r.epsilon, 0.0);
        assert!(is_eps_fair(&r, 0.0, Distance::Kl).unwrap());
    }

    #[test]
    fn sixty_forty() {
        let r = FairnessReport::from_counts([6000, 4000], 0).unwrap();
        let expected = 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln();
        assert!((r.kl_to_uniform - expected).abs() < 1e-15);
        assert!((r.kl_to_uniform - 0.02014).abs() < 1e-5);
        assert!((r.tv_to_uniform - 0.1).abs() < 1e-15);
        assert!(!is_eps_fair(&r, 0.01, Distance::Kl).unwrap());
        assert!((r.frequency_gap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_counts() {
        let r = FairnessReport::from_counts([10000, 0], 0).unwrap();
        assert!((r.kl_to_uniform - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(is_eps_fair(&r, std::f64::consts::LN_2, Distance::Kl).unwrap());
        assert_eq!(r.tv_to_uniform, 0.5);
    }

    #[test]
    fn eps_and_distance_validation() {
        let r = FairnessReport::from_counts([1, 1], 0).unwrap();
        assert!(matches!(is_eps_fair(&r, -1.0, Distance::Kl), Err(Error::Config(_))));
        assert!(matches!("hellinger".parse::<Distance>(), Err(Error::Config(_))));
        assert_eq!("TV".parse::<Distance>().unwrap(), Distance::Tv);
    }

    fn constant_generator(bias: f64) -> GeneratorNet {
        // one hidden layer; output bias decides the sign of x0
        let mut g = GeneratorNet::new(2, 2, &[4], None, 1).unwrap();
        for (name, t) in g.net.params_mut().iter_mut() {
            if name.ends_with("weight") {
                t.data_mut().fill(0.0);
            }
            if name == "layer1.bias" {
                t.data_mut().copy_from_slice(&[bias, 0.0]);
            }
        }
        g
    }

    #[test]
    fn audit_of_constant_generator_is_degenerate() {
        let g = constant_generator(1.0);
        let mut noise = NoiseSource::new(2, 9);
        let r = sample_and_audit(&g, &AttributeOracle::Analytic2d, 500, &mut noise).unwrap();
        assert_eq!(r.counts, [0, 500]);
        assert_eq!(r.seed, 9);
        assert!(sample_and_audit(&g, &AttributeOracle::Analytic2d, 99, &mut noise).is_err());
    }

    #[test]
    fn audit_propagates_oracle_failure() {
        let g = constant_generator(1.0);
        let h = AttributeOracle::CornerPixel { index: 5, light_group: 1 };
        let mut noise = NoiseSource::new(2, 9);
        assert!(sample_and_audit(&g, &h, 100, &mut noise).is_err());
    }

    #[test]
    fn repeated_audit_returns_max() {
        let g = GeneratorNet::new(2, 2, &[8], None, 3).unwrap();
        let a = repeated_audit(&g, &AttributeOracle::Analytic2d, 200, &[1, 2, 3, 4], Distance::Kl).unwrap();
        let max = a.reports.iter().map(|r| r.kl_to_uniform).fold(f64::MIN, f64::max);
        assert_eq!(a.epsilon, max);
        assert_eq!(a.reports.len(), 4);
    }

    #[test]
    fn classwise_needs_conditional_generator() {
        let g = constant_generator(1.0);
        let mut noise = NoiseSource::new(2, 0);
        assert!(matches!(
            classwise_audit(&g, &AttributeOracle::Analytic2d, 100, &mut noise),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reports_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut a = FairnessReport::from_counts([60, 40], 3).unwrap();
        a.class = Some(2);
        let b = FairnessReport::from_counts([10, 90], 4).unwrap().with_distance(Distance::Tv);
        write_reports_csv(&p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_reports_csv(&p).unwrap(), vec![a, b]);
    }
}
