#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repfair::models::{LabelEmbedding, Mlp, OutputActivation, Topology};
use repfair::tensor::{Tape, Tensor};
use repfair::trainer::TrainConfig;

/// Random network, batch and loss drawn from one seed.
pub struct GradCase {
    pub net: Mlp,
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
    /// BCE targets for sigmoid heads, loss weights for tanh heads.
    pub targets: Tensor,
}

pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=4);
    let depth = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    let output_dim = rng.random_range(1..=3);
    let embedding = rng.random_bool(0.5).then(|| LabelEmbedding {
        num_classes: rng.random_range(2..=4),
        embed_dim: rng.random_range(1..=3),
    });
    let sigmoid = rng.random_bool(0.5);
    let topology = Topology {
        input_dim,
        hidden,
        output_dim,
        output: if sigmoid {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Tanh
        },
        leaky_slope: 0.2,
        embedding,
    };
    let net = Mlp::new(topology, seed ^ 0xABCD).unwrap();
    let batch = rng.random_range(1..=4);
    let x = Tensor::new(
        &[batch, input_dim],
        (0..batch * input_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap();
    let labels = embedding.map(|e| (0..batch).map(|_| rng.random_range(0..e.num_classes)).collect());
    let targets = Tensor::new(
        &[batch, output_dim],
        (0..batch * output_dim)
            .map(|_| if sigmoid { f64::from(rng.random_bool(0.5)) } else { rng.random_range(-1.0..1.0) })
            .collect(),
    )
    .unwrap();
    GradCase { net, x, labels, targets }
}

fn record_loss(case: &GradCase, net: &Mlp, x: &Tensor, tape: &mut Tape) -> (Vec<repfair::tensor::Var>, repfair::tensor::Var, repfair::tensor::Var) {
    let bound = net.params().bind(tape, true);
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let out = net.forward_on(tape, &bound, xv, case.labels.as_deref()).unwrap();
    let loss = match net.topology().output {
        OutputActivation::Sigmoid => tape.bce(out, &case.targets).unwrap(),
        OutputActivation::Tanh => {
            let w = tape.constant(&case.targets);
            // weighted sum through the elementwise ops available on the tape
            let s = tape.add(out, w).unwrap();
            let t = tape.tanh(s);
            let m = tape.mean(t);
            tape.scale(m, 3.0)
        }
    };
    (bound, xv, loss)
}

pub fn loss_value(case: &GradCase, net: &Mlp, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let (_, _, loss) = record_loss(case, net, x, &mut tape);
    tape.value(loss)[0]
}

/// Largest relative error between tape gradients and central differences
/// over every parameter and input entry.
pub fn max_relative_error(case: &GradCase) -> f64 {
    let mut tape = Tape::new();
    let (bound, xv, loss) = record_loss(case, &case.net, &case.x, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;

    let names: Vec<String> = case.net.params().iter().map(|(n, _)| n.to_string()).collect();
    for (slot, name) in names.iter().enumerate() {
        let analytic = grads.get(bound[slot]).unwrap().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = case.net.clone();
            plus.params_mut().get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = case.net.clone();
            minus.params_mut().get_mut(name).unwrap().data_mut()[i] -= h;
            let n = (loss_value(case, &plus, &case.x) - loss_value(case, &minus, &case.x)) / (2.0 * h);
            worst = worst.max(rel(a, n));
        }
    }
    let analytic = grads.get(xv).unwrap().to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let mut xp = case.x.clone();
        xp.data_mut()[i] += h;
        let mut xm = case.x.clone();
        xm.data_mut()[i] -= h;
        let n = (loss_value(case, &case.net, &xp) - loss_value(case, &case.net, &xm)) / (2.0 * h);
        worst = worst.max(rel(a, n));
    }
    worst
}

/// Desk-scale 2-D task used by the trend checks: a tight group 0 and a
/// wide group 1 on either side of the origin.
pub const DESK_N: usize = 512;
pub const DESK_SEPARATION: f64 = 0.8;
pub const DESK_SPREADS: [f64; 2] = [0.02, 0.3];

pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 64,
        lr: 2e-3,
        ..TrainConfig::default()
    }
}
