use repfair::data::NoiseSource;
use repfair::fairness::{classwise_audit, pool_reports, repeated_audit, sample_and_audit, AttributeOracle, Distance};
use repfair::models::{GeneratorNet, LabelEmbedding};

fn conditional_generator() -> GeneratorNet {
    let emb = LabelEmbedding {
        num_classes: 4,
        embed_dim: 3,
    };
    GeneratorNet::new(4, 2, &[16], Some(emb), 9).unwrap()
}

#[test]
fn pooled_classwise_audit_agrees_with_uniform_conditioning() {
    let g = conditional_generator();
    let h = AttributeOracle::Analytic2d;
    let per_class = classwise_audit(&g, &h, 5000, &mut NoiseSource::new(4, 1)).unwrap();
    assert_eq!(per_class.len(), 4);
    let pooled = pool_reports(&per_class).unwrap();
    let direct = sample_and_audit(&g, &h, 20_000, &mut NoiseSource::new(4, 2)).unwrap();
    let p = direct.frequencies[0];
    let sigma = (p * (1.0 - p) * (1.0 / 20_000.0 + 1.0 / pooled.n_samples as f64)).sqrt();
    let diff = (pooled.frequencies[0] - p).abs();
    assert!(diff <= 4.0 * sigma.max(1e-4), "diff {diff}, sigma {sigma}");
}

#[test]
fn independent_large_audits_agree() {
    let g = GeneratorNet::new(4, 2, &[16, 16], None, 3).unwrap();
    let audit = repeated_audit(&g, &AttributeOracle::Analytic2d, 100_000, &[10, 11], Distance::Kl).unwrap();
    let [a, b] = [&audit.reports[0], &audit.reports[1]];
    assert!((a.kl_to_uniform - b.kl_to_uniform).abs() <= 0.01);
    assert!((a.frequencies[0] - b.frequencies[0]).abs() <= 0.01);
    assert_eq!(audit.epsilon, a.epsilon.max(b.epsilon));
}

#[test]
fn audits_are_reproducible_per_seed() {
    let g = conditional_generator();
    let h = AttributeOracle::Analytic2d;
    let run = || sample_and_audit(&g, &h, 3000, &mut NoiseSource::new(4, 77)).unwrap();
    assert_eq!(run(), run());
}
