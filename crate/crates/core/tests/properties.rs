use proptest::prelude::*;

use repfair::data::{parse_idx_images, parse_idx_labels, IdxImages, IdxLabels};
use repfair::fairness::{kl_to_uniform, tv_to_uniform, FairnessReport};
use repfair::models::NetworkParams;
use repfair::optim::{clip_grad_norm, global_l2_norm};
use repfair::tensor::Tensor;

fn params_with_grads(grads: &[Vec<f64>]) -> NetworkParams {
    let entries = grads
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut t = Tensor::zeros(&[g.len()]).with_requires_grad(true);
            t.accumulate_grad(g).unwrap();
            (format!("p{i}"), t)
        })
        .collect();
    NetworkParams::new(entries).unwrap()
}

fn flat(params: &NetworkParams) -> Vec<f64> {
    params.flat_grads().unwrap()
}

proptest! {
    #[test]
    fn clipping_bounds_the_norm_and_keeps_direction(
        grads in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 1..8), 1..4),
        c in 0.01f64..20.0,
    ) {
        let mut params = params_with_grads(&grads);
        let before = flat(&params);
        let report = clip_grad_norm(&mut params, c).unwrap();
        let after = flat(&params);
        let norm = global_l2_norm(&params).unwrap();
        prop_assert!(norm <= c + 1e-9);
        prop_assert!((norm - report.post_norm).abs() <= 1e-12 * norm.max(1.0));
        if report.clipped {
            prop_assert!(report.pre_norm > c);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!((b * report.scale - a).abs() <= 1e-12 * b.abs().max(1.0));
            }
        } else {
            prop_assert_eq!(before, after);
        }
    }

    #[test]
    fn kl_and_tv_are_invariant_to_relabelling(a in 0usize..10_000, b in 0usize..10_000) {
        prop_assume!(a + b > 0);
        let r = FairnessReport::from_counts([a, b], 0).unwrap();
        let s = FairnessReport::from_counts([b, a], 0).unwrap();
        prop_assert_eq!(r.kl_to_uniform, s.kl_to_uniform);
        prop_assert_eq!(r.tv_to_uniform, s.tv_to_uniform);
        prop_assert!(r.kl_to_uniform >= 0.0 && r.kl_to_uniform <= std::f64::consts::LN_2 + 1e-15);
        prop_assert_eq!(r.kl_to_uniform == 0.0, a == b);
    }

    #[test]
    fn idx_files_round_trip(count in 0u32..6, rows in 1u32..6, cols in 1u32..6, seed in any::<u64>()) {
        let n = (count * rows * cols) as usize;
        let pixels: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let images = IdxImages { count, rows, cols, pixels };
        let bytes = images.to_bytes();
        prop_assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        prop_assert_eq!(&bytes[4..8], &count.to_be_bytes());
        prop_assert_eq!(&bytes[8..12], &rows.to_be_bytes());
        prop_assert_eq!(&bytes[12..16], &cols.to_be_bytes());
        prop_assert_eq!(&bytes[16..], &images.pixels[..]);
        let back = parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(&back, &images);
        prop_assert_eq!(back.to_bytes(), bytes);

        let labels = IdxLabels { labels: (0..count).map(|i| (i % 10) as u8).collect() };
        let lb = labels.to_bytes();
        prop_assert_eq!(&lb[..4], &[0, 0, 8, 1]);
        prop_assert_eq!(&lb[4..8], &count.to_be_bytes());
        prop_assert_eq!(parse_idx_labels(&lb).unwrap(), labels);
    }
}

#[test]
fn metrics_match_direct_formulas_on_random_vectors() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut vectors: Vec<[f64; 2]> = vec![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
    while vectors.len() < 1000 {
        let p: f64 = rng.random();
        vectors.push([p, 1.0 - p]);
    }
    for p in vectors {
        let kl: f64 = p.iter().filter(|&&q| q > 0.0).map(|&q| q * (2.0 * q).ln()).sum();
        let tv = 0.5 * ((p[0] - 0.5).abs() + (p[1] - 0.5).abs());
        assert!((kl_to_uniform(&p) - kl).abs() <= 1e-12, "{p:?}");
        assert!((tv_to_uniform(&p) - tv).abs() <= 1e-12, "{p:?}");
    }
    assert!((kl_to_uniform(&[1.0, 0.0]) - std::f64::consts::LN_2).abs() <= 1e-12);
}
