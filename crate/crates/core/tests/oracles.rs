//! Crate numerics against independent reference implementations.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqmobo::acquisition::{
    ehvi_2d, log_ei, log_h, qehvi_mc, qnehvi_mc, AcquisitionContext, BaseSamples, NoisyBaseline,
};
use seqmobo::encoding::{encode_onehot, BlosumTable, Embedding, EncoderId, BLOSUM45};
use seqmobo::surrogate::{FitConfig, SurrogateModel};
use seqmobo::seqspace::Sequence;

fn random_embeddings(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Embedding> {
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.1..2.0) } else { 0.0 }).collect();
            v[rng.gen_range(0..dim)] += 1.0;
            Embedding::new(v, EncoderId::External)
        })
        .collect()
}

#[test]
fn builtin_blosum45_matches_published_table() {
    assert_eq!(load_blosum45(), BLOSUM45);
}

#[test]
fn blosum_gram_matches_jacobi_reconstruction() {
    let m = load_blosum45();
    let a: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let (vals, vecs) = jacobi_eigen(&a);
    let gram = BlosumTable::blosum45().gram();
    for i in 0..20 {
        for j in 0..20 {
            let expected: f64 = (0..20).map(|k| vecs[i][k] * vals[k].abs() * vecs[j][k]).sum();
            assert!((gram[i][j] - expected).abs() < 1e-8, "({i},{j}) {} vs {expected}", gram[i][j]);
        }
    }
}

#[test]
fn onehot_tanimoto_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let len = rng.gen_range(1..40);
        let a: Vec<u8> = (0..len).map(|_| ALPHABET[rng.gen_range(0..20)]).collect();
        let mut b = a.clone();
        for r in b.iter_mut() {
            if rng.gen_bool(0.3) {
                *r = ALPHABET[rng.gen_range(0..20)];
            }
        }
        let m = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        let sa = Sequence::parse(std::str::from_utf8(&a).unwrap()).unwrap();
        let sb = Sequence::parse(std::str::from_utf8(&b).unwrap()).unwrap();
        let t = seqmobo::encoding::tanimoto(&encode_onehot(&sa), &encode_onehot(&sb)).unwrap();
        assert_eq!(t, (len - m) as f64 / (len + m) as f64);
    }
}

#[test]
fn gp_matches_dense_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let n = rng.gen_range(4..25);
        let x = random_embeddings(n + 5, 12, &mut rng);
        let (train, query) = x.split_at(n);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let signal = rng.gen_range(0.2..5.0);
        let noise = rng.gen_range(1e-3..0.5);
        let model = SurrogateModel::fit(train, &[y.clone()], &FitConfig::fixed(signal, noise, 1e-6)).unwrap();
        let jitter = model.hyperparams(0).jitter;
        let raw: Vec<Vec<f64>> = train.iter().map(|e| e.values().to_vec()).collect();
        let dense = DenseGp::fit(&raw, &y, signal, noise + jitter);
        let lml = model.fitted_lml(0);
        assert!((lml - dense.lml).abs() < 1e-8 * dense.lml.abs().max(1.0), "trial {trial}: {lml} vs {}", dense.lml);
        let post = &model.posterior(query, false).unwrap()[0];
        for (a, q) in query.iter().enumerate() {
            let (mu, var) = dense.predict(q.values());
            assert!((post.mean[a] - mu).abs() < 1e-8, "trial {trial}: mean {} vs {mu}", post.mean[a]);
            assert!((post.variance[a] - var.max(0.0)).abs() < 1e-8, "trial {trial}: var {} vs {var}", post.variance[a]);
        }
    }
}

#[test]
fn fitted_hyperparameters_are_likelihood_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_embeddings(20, 10, &mut rng);
    let y: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
    let model = SurrogateModel::fit(&x, &[y.clone()], &FitConfig::default()).unwrap();
    let h = model.hyperparams(0);
    let raw: Vec<Vec<f64>> = x.iter().map(|e| e.values().to_vec()).collect();
    let dense = DenseGp::fit(&raw, &y, h.signal_variance, h.noise_variance + h.jitter);
    assert!((model.fitted_lml(0) - dense.lml).abs() < 1e-8 * dense.lml.abs().max(1.0));
}

fn random_front(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.gen_range(1..=5);
    (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect()
}

#[test]
fn ehvi_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let front = random_front(&mut rng);
        let ctx = AcquisitionContext::new(&front, vec![0.0, 0.0], 1, 0).unwrap();
        let mean = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
        let std = [rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6)];
        let exact = ehvi_2d(&mean, &std, &ctx).unwrap();
        let f2: Vec<[f64; 2]> = front.iter().map(|p| [p[0], p[1]]).collect();
        let (mc, se) = mc_ehvi_2d(&f2, [0.0, 0.0], mean, std, 200_000, trial);
        assert!((exact - mc).abs() <= 3.0 * se + 1e-12, "trial {trial}: {exact} vs {mc} ± {se}");
    }
}

#[test]
fn ehvi_collapses_to_improvement() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let front = random_front(&mut rng);
        let ctx = AcquisitionContext::new(&front, vec![0.0, 0.0], 1, 0).unwrap();
        let p = [rng.gen_range(0.0..1.2), rng.gen_range(0.0..1.2)];
        let exact = ehvi_2d(&p, &[1e-9, 1e-9], &ctx).unwrap();
        let mut f2: Vec<[f64; 2]> = front.iter().map(|p| [p[0], p[1]]).collect();
        let before = hv_2d_sweep(&f2, [0.0, 0.0]);
        f2.push(p);
        let hvi = hv_2d_sweep(&f2, [0.0, 0.0]) - before;
        assert!((exact - hvi).abs() < 1e-6, "{exact} vs {hvi}");
    }
}

#[test]
fn log_h_matches_high_precision_table() {
    for (z, reference) in load_log_h_reference() {
        let v = log_h(z);
        assert!(v.is_finite(), "z={z}");
        assert!((v - reference).abs() <= 1e-6 * reference.abs(), "z={z}: {v} vs {reference}");
    }
    let anchor = -0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((log_ei(0.0, 1.0, 0.0) - anchor).abs() < 1e-15);
}

fn two_objective_model(rng: &mut ChaCha8Rng, n: usize) -> (SurrogateModel, Vec<Embedding>) {
    let x = random_embeddings(n + 8, 10, rng);
    let (train, query) = x.split_at(n);
    let y0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let model = SurrogateModel::fit(train, &[y0, y1], &FitConfig::fixed(1.0, 0.05, 1e-6)).unwrap();
    (model, query.to_vec())
}

#[test]
fn single_point_qehvi_matches_ehvi() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (model, query) = two_objective_model(&mut rng, 15);
    let front: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9)]).collect();
    let ctx = AcquisitionContext::new(&front, vec![0.0, 0.0], 1, 0).unwrap();
    let queries = model.prepare(&query).unwrap();
    let base = BaseSamples::new(10_000, 1, 2, 9);
    for q in &queries {
        let marg = model.marginal(q);
        let exact = ehvi_2d(&[marg[0].0, marg[1].0], &[marg[0].1.sqrt(), marg[1].1.sqrt()], &ctx).unwrap();
        let mc = qehvi_mc(&model, &[q], &ctx, &base).unwrap();
        assert!((mc.value - exact).abs() <= 3.0 * mc.std_error + 1e-12, "{} ± {} vs {exact}", mc.value, mc.std_error);
    }
}

#[test]
fn noiseless_qnehvi_matches_qehvi() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 12;
    let x = random_embeddings(n + 4, 10, &mut rng);
    let (train, query) = x.split_at(n);
    let y0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let model = SurrogateModel::fit(train, &[y0.clone(), y1.clone()], &FitConfig::fixed(1.0, 0.0, 1e-9)).unwrap();
    let observed: Vec<Vec<f64>> = (0..n).map(|i| vec![y0[i], y1[i]]).collect();
    let reference = vec![-0.1, -0.1];
    let ctx = AcquisitionContext::new(&observed, reference.clone(), 1, 0).unwrap();
    let baseline_queries: Vec<_> = (0..n).map(|i| model.training_query(i)).collect();
    let samples = 10_000;
    let baseline = NoisyBaseline::new(&model, baseline_queries, reference, samples, 5).unwrap();
    let base = BaseSamples::new(samples, 2, 2, 6);
    let queries = model.prepare(query).unwrap();
    let batch = [&queries[0], &queries[1]];
    let noisy = qnehvi_mc(&model, &batch, &baseline, &base).unwrap();
    let plain = qehvi_mc(&model, &batch, &ctx, &base).unwrap();
    assert!(plain.value > 0.0);
    assert!((noisy.value - plain.value).abs() <= 3.0 * plain.std_error, "{} vs {} ± {}", noisy.value, plain.value, plain.std_error);
}
