//! Acceptance checks. Runs as a plain binary and prints one line per criterion.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use datml::cli::{load_checkpoint, payload_path, run_all, save_checkpoint, RunConfig, Workspace};
use datml::compute::{finite_diff_check, OptimizerKind, ParamSet, Tensor};
use datml::corpus::{generate_corpus, split_for_target, tokenize, CorpusSpec, Entity, SplitFractions, Vocab};
use datml::eval::{bleu, entity_f1};
use datml::hred::{HredConfig, HredExample, HredInput, HredModel, LatentShape};
use datml::laed::{LaedConfig, LaedKind, LaedModel, LatentCode, LatentOptions, LatentSampling, Triple, VstTerms};
use datml::meta::{early_stop_check, fomaml_update, inner_adapt, reptile_update, Episode, MetaMethod, TrainHistory};
use datml::{compute::Graph, compute::Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ids(rng: &mut ChaCha8Rng, v: usize, max_len: usize) -> Vec<usize> {
    (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(4..v)).collect()
}

fn laed_config(rng: &mut ChaCha8Rng, y: usize, k: usize) -> LaedConfig {
    LaedConfig {
        vocab_size: rng.gen_range(6..10),
        embed_dim: rng.gen_range(2..5),
        hidden_dim: rng.gen_range(2..5),
        y,
        k,
        temperature: 1.0,
    }
}

fn relaxed(seed: u64) -> LatentOptions {
    LatentOptions {
        sampling: LatentSampling::Relaxed,
        noise_seed: seed,
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_vae, mut worst_vst, mut worst_hred) = (0.0f64, 0.0f64, 0.0f64);
    let instances = 20;
    for i in 0..instances {
        let (y, k) = (rng.gen_range(1..3), rng.gen_range(2..4));
        let cfg = laed_config(&mut rng, y, k);
        let v = cfg.vocab_size;
        let opts = relaxed(i);

        let m = LaedModel::new(LaedKind::Divae, cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
        let batch: Vec<_> = (0..rng.gen_range(1..4)).map(|_| ids(&mut rng, v, 4)).collect();
        let mut p = m.params.clone();
        let lg = m.divae_graph(&p, &batch, &opts).map_err(|e| e.to_string())?;
        lg.graph.backward_into(lg.loss, &mut p).map_err(|e| e.to_string())?;
        let r = finite_diff_check(|q: &ParamSet| Ok::<_, datml::Error>(m.divae_graph(q, &batch, &opts)?.value()), &p, 1e-3)
            .map_err(|e| e.to_string())?;
        worst_vae = worst_vae.max(r.max_rel_error);

        let m = LaedModel::new(LaedKind::Divst, cfg, rng.gen()).map_err(|e| e.to_string())?;
        let triples: Vec<_> = (0..rng.gen_range(1..4))
            .map(|_| Triple {
                prev: ids(&mut rng, v, 3),
                current: ids(&mut rng, v, 3),
                next: ids(&mut rng, v, 3),
            })
            .collect();
        let mut p = m.params.clone();
        let lg = m
            .divst_graph(&p, &triples, &opts, VstTerms::default())
            .map_err(|e| e.to_string())?;
        lg.graph.backward_into(lg.loss, &mut p).map_err(|e| e.to_string())?;
        let r = finite_diff_check(
            |q: &ParamSet| Ok::<_, datml::Error>(m.divst_graph(q, &triples, &opts, VstTerms::default())?.value()),
            &p,
            1e-3,
        )
        .map_err(|e| e.to_string())?;
        worst_vst = worst_vst.max(r.max_rel_error);

        let (model, batch) = hred_instance(&mut rng, true, 0.3);
        let mut p = model.params.clone();
        let (g, l) = model.loss_graph(&p, &batch, Some(i)).map_err(|e| e.to_string())?;
        g.backward_into(l, &mut p).map_err(|e| e.to_string())?;
        let r = finite_diff_check(
            |q: &ParamSet| {
                let (g, l) = model.loss_graph(q, &batch, Some(i))?;
                Ok::<_, datml::Error>(g.scalar(l))
            },
            &p,
            1e-3,
        )
        .map_err(|e| e.to_string())?;
        worst_hred = worst_hred.max(r.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_vae < 1e-3 && worst_vst < 1e-3 && worst_hred < 1e-3 && secs < 120.0,
        format!(
            "{instances} instances each; max rel err DI-VAE {worst_vae:.2e}, DI-VST {worst_vst:.2e}, HRED {worst_hred:.2e} (< 1e-3); {secs:.1}s"
        ),
    )
}

const WORDS: &str = "i want cheap food in the north please a red taxi at noon thanks";

fn hred_instance(rng: &mut ChaCha8Rng, latents: bool, dropout: f64) -> (HredModel, Vec<HredExample>) {
    let words = tokenize(WORDS);
    let vocab = Vocab::build([&words[..words.len() - 3]]);
    let shape = LatentShape {
        y: rng.gen_range(1..3),
        k: rng.gen_range(2..4),
    };
    let config = HredConfig {
        vocab_size: vocab.len(),
        embed_dim: rng.gen_range(2..5),
        hidden_dim: rng.gen_range(2..5),
        dropout,
        latent: latents.then_some(shape),
        max_context: 2,
    };
    let model = HredModel::new(config, rng.gen()).unwrap();
    let phrase = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(1..4)).map(|_| words[rng.gen_range(0..words.len())].clone()).collect()
    };
    let batch = (0..rng.gen_range(1..3))
        .map(|_| {
            let context: Vec<Vec<String>> = (0..rng.gen_range(0..3)).map(|_| phrase(rng)).collect();
            let input = HredInput::new(&vocab, &context, &phrase(rng), 2);
            let target = input.target_ids(&vocab, &phrase(rng));
            let code = |rng: &mut ChaCha8Rng| {
                LatentCode::new((0..shape.y).map(|_| rng.gen_range(0..shape.k)).collect(), shape.k).unwrap()
            };
            let z = latents.then(|| (code(rng), code(rng)));
            HredExample {
                input,
                target,
                latents: z,
            }
        })
        .collect();
    (model, batch)
}

/// Mean over targets of `0.5 |w - t|^2` for every tensor, `t` broadcast per value.
fn quadratic(p: &ParamSet, batch: &[f64], _: u64) -> datml::Result<(Graph, Var)> {
    let mut g = Graph::new();
    let mut terms = Vec::new();
    for name in p.names() {
        let w = g.param(p, name)?;
        let (rows, cols) = g.shape(w);
        for &t in batch {
            let c = g.constant(rows, cols, vec![t; rows * cols]);
            let d = g.sub(w, c);
            let sq = g.mul(d, d);
            terms.push(g.sum(sq));
        }
    }
    let s = g.add_all(&terms);
    let l = g.scale(s, 0.5 / batch.len() as f64);
    Ok((g, l))
}

fn random_params(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for i in 0..rng.gen_range(1..4) {
        let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
        p.insert(format!("p{i}"), Tensor::uniform(&shape, 1.0, rng).trainable()).unwrap();
    }
    p
}

fn values(p: &ParamSet) -> Vec<f64> {
    p.iter().flat_map(|(_, t)| t.data().iter().map(|&v| f64::from(v))).collect()
}

fn c2_reptile() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut interp_err, mut composed_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let theta = random_params(&mut rng);
        let mut theta_d = theta.clone();
        for (_, t) in theta_d.iter_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let alpha: f64 = rng.gen_range(0.0..1.0);
        let out = reptile_update(&theta, &theta_d, alpha).map_err(|e| e.to_string())?;
        for ((a, b), o) in values(&theta).iter().zip(values(&theta_d)).zip(values(&out)) {
            interp_err = interp_err.max((o - (a + alpha * (b - a))).abs());
        }

        let batch: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta: f64 = rng.gen_range(0.01..0.5);
        let ep = Episode {
            domain: "d".into(),
            batches: vec![batch.clone()],
        };
        let (adapted, _) = inner_adapt(&theta, &ep, beta, 1, OptimizerKind::Sgd, 0, &quadratic).map_err(|e| e.to_string())?;
        let composed = reptile_update(&theta, &adapted, alpha).map_err(|e| e.to_string())?;
        let mean_t = batch.iter().sum::<f64>() / batch.len() as f64;
        for (w, c) in values(&theta).iter().zip(values(&composed)) {
            let grad = w - mean_t;
            composed_err = composed_err.max((c - (w - alpha * beta * grad)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        interp_err <= 1e-7 && composed_err <= 1e-6 && secs < 10.0,
        format!(
            "100 ParamSets; interpolation err {interp_err:.2e} (<= 1e-7), k=1 SGD composite vs alpha*beta step err {composed_err:.2e} (<= 1e-6); {secs:.2}s"
        ),
    )
}

fn scalar_params(v: f32) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::new(vec![1], vec![v]).unwrap().trainable()).unwrap();
    p
}

fn linear_loss(slope: f64) -> impl Fn(&ParamSet, &[f64], u64) -> datml::Result<(Graph, Var)> {
    move |p, _, _| {
        let mut g = Graph::new();
        let w = g.param(p, "w")?;
        let s = g.sum(w);
        let l = g.scale(s, slope);
        Ok((g, l))
    }
}

/// Parameters are stored as `f32`, so expectations are rounded the same way.
fn stored(x: f64) -> f64 {
    f64::from(x as f32)
}

fn c3_fomaml() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identity_err = 0.0f64;
    for _ in 0..20 {
        let theta = random_params(&mut rng);
        let d = random_params(&mut rng);
        let d = if d.is_shape_compatible(&theta) { d } else { theta.clone() };
        let zero = |p: &ParamSet, _: &[f64], _: u64| -> datml::Result<(Graph, Var)> {
            let mut g = Graph::new();
            let mut terms = Vec::new();
            for n in p.names() {
                let w = g.param(p, n)?;
                let s = g.sum(w);
                terms.push(g.scale(s, 0.0));
            }
            let l = g.add_all(&terms);
            Ok((g, l))
        };
        let (out, _) = fomaml_update(&theta, &d, &[0.0], 0.1, 0, &zero).map_err(|e| e.to_string())?;
        for (a, b) in values(&theta).iter().zip(values(&out)) {
            identity_err = identity_err.max((a - b).abs());
        }
    }

    let (out, _) = fomaml_update(&scalar_params(1.0), &scalar_params(0.3), &[0.0], 0.1, 0, &linear_loss(2.0))
        .map_err(|e| e.to_string())?;
    let scalar = values(&out)[0];
    let scalar_err = (scalar - stored(0.8)).abs();

    let mut beta0_err = 0.0f64;
    for _ in 0..20 {
        let theta = random_params(&mut rng);
        let support = Episode {
            domain: "d".into(),
            batches: vec![vec![rng.gen_range(-3.0..3.0)]],
        };
        let query: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = rng.gen_range(0.01..0.5);
        let (d, _) = inner_adapt(&theta, &support, 0.0, 3, OptimizerKind::Sgd, 0, &quadratic).map_err(|e| e.to_string())?;
        let (out, _) = fomaml_update(&theta, &d, &query, alpha, 0, &quadratic).map_err(|e| e.to_string())?;
        let mut plain = theta.clone();
        plain.zero_grad();
        let (g, l) = quadratic(&plain, &query, 0).map_err(|e| e.to_string())?;
        g.backward_into(l, &mut plain).map_err(|e| e.to_string())?;
        let grads: Vec<f64> = plain
            .iter()
            .flat_map(|(_, t)| t.grad().unwrap().iter().map(|&v| f64::from(v)))
            .collect();
        for ((w, gq), o) in values(&theta).iter().zip(grads).zip(values(&out)) {
            beta0_err = beta0_err.max((o - stored(w - alpha * gq)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        identity_err <= 1e-9 && scalar_err <= 1e-9 && beta0_err <= 1e-9 && secs < 10.0,
        format!(
            "zero-grad identity err {identity_err:.1e}; theta=1,g=2,alpha=0.1 -> {scalar:.9} (err {scalar_err:.1e} vs f32(0.8)); beta=0 vs query step err {beta0_err:.1e}; {secs:.2}s"
        ),
    )
}

/// Plain-f64 re-implementation of the LAED forward pass, reading the raw
/// parameter tensors.
mod oracle {
    use datml::compute::ParamSet;

    fn tensor<'a>(p: &'a ParamSet, name: &str) -> &'a [f32] {
        p.get(name).unwrap_or_else(|| panic!("missing {name}")).data()
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// `x [in] * W [in, out] + b [out]`.
    fn affine(x: &[f64], w: &[f32], b: &[f32]) -> Vec<f64> {
        let out = b.len();
        let mut y: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
        for (i, xi) in x.iter().enumerate() {
            for j in 0..out {
                y[j] += xi * f64::from(w[i * out + j]);
            }
        }
        y
    }

    fn gru_step(p: &ParamSet, name: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let n = h.len();
        let gx = affine(x, tensor(p, &format!("{name}.w_x")), tensor(p, &format!("{name}.b_x")));
        let gh = affine(h, tensor(p, &format!("{name}.w_h")), tensor(p, &format!("{name}.b_h")));
        (0..n)
            .map(|j| {
                let r = sigmoid(gx[j] + gh[j]);
                let z = sigmoid(gx[n + j] + gh[n + j]);
                let cand = (gx[2 * n + j] + r * gh[2 * n + j]).tanh();
                (1.0 - z) * cand + z * h[j]
            })
            .collect()
    }

    fn embed(p: &ParamSet, id: usize, e: usize) -> Vec<f64> {
        tensor(p, "emb")[id * e..(id + 1) * e].iter().map(|&v| f64::from(v)).collect()
    }

    fn log_softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        xs.iter().map(|x| x - lse).collect()
    }

    /// Posterior over the single latent variable.
    pub fn posterior(p: &ParamSet, ids: &[usize], e: usize, h: usize) -> Vec<f64> {
        let mut state = vec![0.0; h];
        for &id in ids {
            state = gru_step(p, "rec.gru", &embed(p, id, e), &state);
        }
        let logits = affine(&state, tensor(p, "rec.out.w"), tensor(p, "rec.out.b"));
        log_softmax(&logits).iter().map(|l| l.exp()).collect()
    }

    /// Summed NLL of `targets` from generator `prefix` with one-hot code `z` of width `k`.
    pub fn nll(p: &ParamSet, prefix: &str, z: usize, k: usize, targets: &[usize], e: usize) -> f64 {
        let mut code = vec![0.0; k];
        code[z] = 1.0;
        let mut state: Vec<f64> = affine(&code, tensor(p, &format!("{prefix}.init.w")), tensor(p, &format!("{prefix}.init.b")))
            .iter()
            .map(|v| v.tanh())
            .collect();
        let mut input: Vec<f64> = tensor(p, &format!("{prefix}.start")).iter().map(|&v| f64::from(v)).collect();
        let mut total = 0.0;
        for &t in targets {
            state = gru_step(p, &format!("{prefix}.gru"), &input, &state);
            let logits = affine(&state, tensor(p, &format!("{prefix}.out.w")), tensor(p, &format!("{prefix}.out.b")));
            total -= log_softmax(&logits)[t];
            input = embed(p, t, e);
        }
        total
    }

    pub fn kl_uniform(posteriors: &[Vec<f64>], k: usize) -> f64 {
        (0..k)
            .map(|j| {
                let qbar = posteriors.iter().map(|q| q[j]).sum::<f64>() / posteriors.len() as f64;
                if qbar > 0.0 {
                    qbar * (qbar * k as f64).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

fn c4_enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut err_vae, mut err_vst) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let k = rng.gen_range(2..=3);
        let cfg = laed_config(&mut rng, 1, k);
        let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);

        let m = LaedModel::new(LaedKind::Divae, cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
        let batch: Vec<_> = (0..rng.gen_range(1..4)).map(|_| ids(&mut rng, v, 4)).collect();
        let got = m
            .divae_graph(&m.params, &batch, &LatentOptions::marginal())
            .map_err(|e| e.to_string())?
            .value();
        let qs: Vec<Vec<f64>> = batch.iter().map(|x| oracle::posterior(&m.params, x, e, h)).collect();
        let tokens: usize = batch.iter().map(Vec::len).sum();
        let mut rec = 0.0;
        for (x, q) in batch.iter().zip(&qs) {
            for (z, qz) in q.iter().enumerate() {
                rec += qz * oracle::nll(&m.params, "dec", z, k, x, e);
            }
        }
        let want = rec / tokens as f64 + oracle::kl_uniform(&qs, k);
        err_vae = err_vae.max((got - want).abs());

        let m = LaedModel::new(LaedKind::Divst, cfg, rng.gen()).map_err(|e| e.to_string())?;
        let triples: Vec<_> = (0..rng.gen_range(1..4))
            .map(|_| Triple {
                prev: ids(&mut rng, v, 3),
                current: ids(&mut rng, v, 3),
                next: ids(&mut rng, v, 3),
            })
            .collect();
        let got = m
            .divst_graph(&m.params, &triples, &LatentOptions::marginal(), VstTerms::default())
            .map_err(|e| e.to_string())?
            .value();
        let qs: Vec<Vec<f64>> = triples.iter().map(|t| oracle::posterior(&m.params, &t.current, e, h)).collect();
        let (mut prev, mut next) = (0.0, 0.0);
        for (t, q) in triples.iter().zip(&qs) {
            for (z, qz) in q.iter().enumerate() {
                prev += qz * oracle::nll(&m.params, "dec_prev", z, k, &t.prev, e);
                next += qz * oracle::nll(&m.params, "dec_next", z, k, &t.next, e);
            }
        }
        let prev_tokens: usize = triples.iter().map(|t| t.prev.len()).sum();
        let next_tokens: usize = triples.iter().map(|t| t.next.len()).sum();
        let want = prev / prev_tokens as f64 + next / next_tokens as f64 + oracle::kl_uniform(&qs, k);
        err_vst = err_vst.max((got - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        err_vae <= 1e-5 && err_vst <= 1e-5 && secs < 60.0,
        format!("10 micro-batches, y=1, k in 2..=3; |loss - enumeration| DI-VAE {err_vae:.2e}, DI-VST {err_vst:.2e} (<= 1e-5); {secs:.2}s"),
    )
}

fn c5_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0;
    for trial in 0..10u64 {
        let (latent_model, batch) = hred_instance(&mut rng, true, 0.3);
        let mut annihilated = latent_model.params.clone();
        for name in ["lat.w", "lat.b"] {
            annihilated.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut plain_params = ParamSet::new();
        for (name, t) in latent_model.params.iter().filter(|(n, _)| !n.starts_with("lat.")) {
            plain_params.insert(name, t.clone()).unwrap();
        }
        let plain = HredModel::from_params(
            HredConfig {
                latent: None,
                ..latent_model.config.clone()
            },
            plain_params,
        )
        .map_err(|e| e.to_string())?;
        let plain_batch: Vec<HredExample> = batch
            .iter()
            .cloned()
            .map(|mut ex| {
                ex.latents = None;
                ex
            })
            .collect();
        for noise in [None, Some(trial)] {
            let (g1, l1) = latent_model.loss_graph(&annihilated, &batch, noise).map_err(|e| e.to_string())?;
            let (g2, l2) = plain.loss_graph(&plain.params, &plain_batch, noise).map_err(|e| e.to_string())?;
            if g1.scalar(l1).to_bits() != g2.scalar(l2).to_bits() {
                return Err(format!("trial {trial} noise {noise:?}: {} vs {}", g1.scalar(l1), g2.scalar(l2)));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} loss pairs bit-identical (with and without dropout noise)"))
}

fn c6_leakage() -> Outcome {
    let mut spec = CorpusSpec::toy(60, 6);
    spec.multi_domain_fraction = 0.3;
    let (corpus, _) = generate_corpus(&spec).map_err(|e| e.to_string())?;
    let multi = corpus.iter().filter(|d| d.domains.len() > 1).count();
    let mut violations = 0;
    let mut scanned = 0;
    for target in corpus.domains() {
        let split = split_for_target(&corpus, &target, SplitFractions::default(), 271).map_err(|e| e.to_string())?;
        for d in &split.source {
            scanned += 1;
            if d.turns.iter().any(|t| t.domain == target) || d.domains.contains(&target) {
                violations += 1;
            }
        }
        let touching = corpus.iter().filter(|d| d.turns.iter().any(|t| t.domain == target)).count();
        let held = split.train_pool.len() + split.validation.len() + split.test.len();
        if touching != held {
            violations += 1;
        }
    }
    check(
        violations == 0 && multi > 0,
        format!("{} dialogues ({multi} multi-domain), 4 targets, {scanned} source dialogues scanned, {violations} violations", corpus.len()),
    )
}

fn c7_metrics() -> Outcome {
    let pairs = [
        ("the golden palace serves cheap chinese food", "golden palace serves cheap chinese food in the north"),
        ("your taxi is a red toyota", "a red toyota will pick you up"),
        ("is there anything else", "is there anything else i can help with"),
    ];
    let cands: Vec<_> = pairs.iter().map(|(c, _)| tokenize(c)).collect();
    let refs: Vec<_> = pairs.iter().map(|(_, r)| tokenize(r)).collect();
    let toy = bleu(&cands, &refs).map_err(|e| e.to_string())?;
    // independent script (matches nltk corpus_bleu with default weights)
    let oracle = 0.4357420475733472;
    let identical = bleu(&refs, &refs).map_err(|e| e.to_string())?;
    let set = |vs: &[&str]| -> BTreeSet<Entity> { vs.iter().map(|v| Entity::new("name", *v)).collect() };
    let f1 = entity_f1(&[set(&["a", "b"])], &[set(&["b", "c"])]).map_err(|e| e.to_string())?.f1;
    check(
        identical == 1.0 && (f1 - 0.5).abs() < 1e-12 && (toy - oracle).abs() <= 1e-6,
        format!("bleu(identical)={identical}; entity F1 {{a,b}} vs {{b,c}} = {f1}; toy BLEU {toy:.10} vs oracle {oracle:.10}"),
    )
}

struct TrendRun {
    method: MetaMethod,
    seed: u64,
    source: (f64, f64),
    tuned: (f64, f64),
}

fn desk_config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.json")).expect("desk config")
}

fn c8_trend() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = desk_config();
    let mut runs = Vec::new();
    for method in [MetaMethod::Reptile, MetaMethod::Multitask] {
        for seed in [271, 272, 273] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.meta.method = method;
            let ws = Workspace::new(dir.path().join(format!("{}-{seed}", method.name())));
            let report = run_all(&cfg, &ws).map_err(|e| format!("{} seed {seed}: {e}", method.name()))?;
            let row = |label: &str| report.row(label, &cfg.data.target_domain).map(|r| (r.bleu, r.entity_f1));
            runs.push(TrendRun {
                method,
                seed,
                source: row(datml::cli::PRE_FINETUNE_LABEL).ok_or("missing source row")?,
                tuned: row(datml::cli::FINETUNED_LABEL).ok_or("missing fine-tuned row")?,
            });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for r in &runs {
        println!(
            "    {:<9} seed {}: BLEU {:.1} -> {:.1}, Entity F1 {:.1} -> {:.1}",
            r.method.name(),
            r.seed,
            r.source.0,
            r.tuned.0,
            r.source.1,
            r.tuned.1
        );
    }
    let mean = |m: MetaMethod, f: fn(&TrendRun) -> f64| {
        let xs: Vec<f64> = runs.iter().filter(|r| r.method == m).map(f).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    println!(
        "    fine-tuned means: reptile BLEU {:.1} F1 {:.1}; multitask BLEU {:.1} F1 {:.1}",
        mean(MetaMethod::Reptile, |r| r.tuned.0),
        mean(MetaMethod::Reptile, |r| r.tuned.1),
        mean(MetaMethod::Multitask, |r| r.tuned.0),
        mean(MetaMethod::Multitask, |r| r.tuned.1)
    );
    let improved = runs
        .iter()
        .filter(|r| r.method == MetaMethod::Reptile && r.tuned.1 - r.source.1 >= 5.0 && r.tuned.0 > r.source.0)
        .count();
    check(
        improved >= 2 && secs < 900.0,
        format!("reptile seeds with F1 +5 and BLEU up: {improved}/3 (need >= 2); 6 runs in {secs:.0}s (< 900s)"),
    )
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.json")).map_err(|e| e.to_string())?;
    let a = Workspace::new(dir.path().join("a"));
    let b = Workspace::new(dir.path().join("b"));
    run_all(&cfg, &a).map_err(|e| e.to_string())?;
    run_all(&cfg, &b).map_err(|e| e.to_string())?;
    let read = |p: std::path::PathBuf| std::fs::read(p).unwrap_or_default();
    let same_report = read(a.report_json()) == read(b.report_json()) && read(a.report_table()) == read(b.report_table());

    let mut bitwise = true;
    for name in ["divae", "divst", "sys_pred", "hred-source"] {
        let (p, m) = load_checkpoint(&a.checkpoint(name), name).map_err(|e| e.to_string())?;
        let again = dir.path().join(format!("copy-{name}"));
        save_checkpoint(&p, name, &m.config, &m.fingerprint, &again).map_err(|e| e.to_string())?;
        let (q, _) = load_checkpoint(&again, name).map_err(|e| e.to_string())?;
        bitwise &= p.values_equal(&q)
            && q.names().eq(p.names())
            && read(payload_path(&a.checkpoint(name))) == read(payload_path(&again));
    }

    let mut h = TrainHistory::default();
    for (e, acc) in [0.1, 0.5, 0.3, 0.2].iter().enumerate() {
        h.push(e + 1, 1.0, Some(*acc));
    }
    let stop_at_4 = early_stop_check(&h, 4);
    let mut rising = TrainHistory::default();
    for e in 1..=6 {
        rising.push(e, 1.0, Some(e as f64));
    }
    let continue_at_best = (1..=6).all(|e| !early_stop_check(&rising, e));
    check(
        same_report && bitwise && stop_at_4 && continue_at_best,
        format!(
            "identical eval reports: {same_report}; checkpoint round trips bitwise: {bitwise}; best=2@e=4 stops: {stop_at_4}; best=e continues: {continue_at_best}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", c1_gradients),
        ("reptile algebra", c2_reptile),
        ("maml/fomaml algebra", c3_fomaml),
        ("laed enumeration oracle", c4_enumeration),
        ("latent degeneracy", c5_degeneracy),
        ("target leakage", c6_leakage),
        ("metrics", c7_metrics),
        ("end-to-end adaptation trend", c8_trend),
        ("determinism and persistence", c9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS  {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL  {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
