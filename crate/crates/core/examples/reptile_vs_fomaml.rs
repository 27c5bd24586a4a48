//! Meta-trains one scalar-regression parameter set with Reptile, FOMAML and
//! multitask pooling, then compares few-step adaptation on a held-out task.

use datml::compute::{Graph, OptimizerKind, ParamSet, Tensor, Var};
use datml::meta::{inner_adapt, source_train, Episode, MetaConfig, MetaMethod};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean squared error of `w * x + b` on `(x, y)` points.
fn loss(p: &ParamSet, batch: &[(f64, f64)], _: u64) -> datml::Result<(Graph, Var)> {
    let mut g = Graph::new();
    let w = g.param(p, "w")?;
    let b = g.param(p, "b")?;
    let xs = g.constant(batch.len(), 1, batch.iter().map(|s| s.0).collect());
    let ys = g.constant(batch.len(), 1, batch.iter().map(|s| s.1).collect());
    let wx = g.matmul(xs, w);
    let ones = g.constant(batch.len(), 1, vec![1.0; batch.len()]);
    let bias = g.matmul(ones, b);
    let pred = g.add(wx, bias);
    let err = g.sub(pred, ys);
    let sq = g.mul(err, err);
    let l = g.mean(sq);
    Ok((g, l))
}

fn task(slope: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..64)
        .map(|_| {
            let x = rng.gen_range(-1.0..1.0);
            (x, slope * x + 1.0)
        })
        .collect()
}

fn main() -> datml::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let domains: IndexMap<String, Vec<(f64, f64)>> =
        [1.5, 2.0, 2.5, 3.0].iter().map(|&s| (format!("slope{s}"), task(s, &mut rng))).collect();
    let held_out = task(2.2, &mut rng);

    let mut init = ParamSet::new();
    init.insert("w", Tensor::zeros(&[1, 1]).trainable())?;
    init.insert("b", Tensor::zeros(&[1, 1]).trainable())?;

    for method in [MetaMethod::Reptile, MetaMethod::Fomaml, MetaMethod::Multitask] {
        let cfg = MetaConfig {
            method,
            inner_lr: 0.05,
            outer_lr: 0.1,
            inner_steps: 5,
            episodes: 300,
            inner_optimizer: OptimizerKind::Sgd,
            batch_size: 8,
            seed: 271,
        };
        let (theta, _) = source_train(&init, &domains, &cfg, &loss)?;
        let ep = Episode::sample("held-out", &held_out, 3, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let (adapted, _) = inner_adapt(&theta, &ep, 0.05, 3, OptimizerKind::Sgd, 0, &loss)?;
        let (g, before) = loss(&theta, &held_out, 0)?;
        let (g2, after) = loss(&adapted, &held_out, 0)?;
        println!(
            "{:<9} w {:+.3} b {:+.3}  held-out mse {:.4} -> {:.4} after 3 steps",
            method.name(),
            theta.get("w").unwrap().data()[0],
            theta.get("b").unwrap().data()[0],
            g.scalar(before),
            g2.scalar(after)
        );
    }
    Ok(())
}
