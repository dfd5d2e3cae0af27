use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn mean_pairwise_distance(a: &Tensor, b: &Tensor) -> f64 {
    let (na, nb) = (a.rows(), b.rows());
    let mut total = 0.0;
    for i in 0..na {
        let ra = a.row(i);
        let mut row_sum = 0.0;
        for j in 0..nb {
            let sq: f64 = ra.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            row_sum += sq.sqrt();
        }
        total += row_sum;
    }
    total / (na * nb) as f64
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` between the empirical
/// distributions of the rows of `real` and `fake` (V-statistic, so it is
/// never negative and zero for identical sets).
pub fn quality_proxy(real: &Tensor, fake: &Tensor) -> Result<f64> {
    let (nr, dr) = real.dims2()?;
    let (nf, df) = fake.dims2()?;
    if dr != df {
        return Err(Error::dim("quality_proxy", real.shape(), fake.shape()));
    }
    if nr == 0 || nf == 0 {
        return Err(Error::Contract("quality_proxy needs non-empty sets".into()));
    }
    let cross = mean_pairwise_distance(real, fake);
    let within_real = mean_pairwise_distance(real, real);
    let within_fake = mean_pairwise_distance(fake, fake);
    Ok((2.0 * cross - within_real - within_fake).max(0.0))
}

/// Energy distance pooled and per group. A group entry is `None` when
/// either side has no rows of that group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub pooled: f64,
    pub per_group: [Option<f64>; 2],
}

pub fn quality_by_group(real: &Tensor, real_groups: &[u8], fake: &Tensor, fake_groups: &[u8]) -> Result<QualityReport> {
    if real_groups.len() != real.rows() || fake_groups.len() != fake.rows() {
        return Err(Error::Contract("group vector length differs from row count".into()));
    }
    let pooled = quality_proxy(real, fake)?;
    let mut per_group = [None, None];
    for (g, slot) in per_group.iter_mut().enumerate() {
        let pick = |groups: &[u8]| -> Vec<usize> { (0..groups.len()).filter(|&i| groups[i] as usize == g).collect() };
        let (ri, fi) = (pick(real_groups), pick(fake_groups));
        if !ri.is_empty() && !fi.is_empty() {
            *slot = Some(quality_proxy(&real.select_rows(&ri)?, &fake.select_rows(&fi)?)?);
        }
    }
    Ok(QualityReport { pooled, per_group })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, shift: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 2)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + if i % 2 == 0 { shift } else { 0.0 }
            })
            .collect();
        Tensor::new(&[n, 2], data).unwrap()
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = gaussian(50, 0.0, 1);
        assert_eq!(quality_proxy(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn symmetric() {
        let a = gaussian(60, 0.0, 1);
        let b = gaussian(40, 1.0, 2);
        let ab = quality_proxy(&a, &b).unwrap();
        let ba = quality_proxy(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn same_distribution_scores_below_shifted() {
        let a = gaussian(2000, 0.0, 1);
        let b = gaussian(2000, 0.0, 2);
        let c = gaussian(2000, 2.0, 3);
        assert!(quality_proxy(&a, &b).unwrap() < quality_proxy(&a, &c).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let a = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(matches!(quality_proxy(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn per_group_skips_missing_groups() {
        let a = gaussian(20, 0.0, 1);
        let b = gaussian(20, 0.0, 2);
        let r = quality_by_group(&a, &[0; 20], &b, &[0; 20]).unwrap();
        assert!(r.per_group[0].is_some());
        assert!(r.per_group[1].is_none());
        assert_eq!(r.per_group[0].unwrap(), r.pooled);
    }
}
