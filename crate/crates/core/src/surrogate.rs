//! Independent Gaussian-process regression per objective with the Tanimoto
//! kernel.
//!
//! The Tanimoto Gram matrix of the training embeddings is shared by every
//! objective, so it is eigendecomposed once per fit: `T = U diag(λ) Uᵀ`.
//! For an objective with signal variance `s`, noise `σ²` and jitter `j`,
//! `K = s·T + (σ² + j)·I = U diag(κ) Uᵀ` with `κ = s·λ + σ² + j`, which makes
//! every marginal-likelihood evaluation linear in the number of points.

use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::encoding::{tanimoto_unchecked, Embedding};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_JITTER: f64 = 1e-2;
/// Smallest admissible ratio between the smallest and largest eigenvalue of K.
const MIN_CONDITION: f64 = 1e-12;
const SAMPLE_STABILIZER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        GpHyperparams { signal_variance: 1.0, noise_variance: 0.1, jitter: 1e-6 }
    }
}

/// Controls hyperparameter fitting. A fixed value skips the search over
/// that coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub signal_variance: Option<f64>,
    pub noise_variance: Option<f64>,
    pub jitter: f64,
    pub max_evaluations: usize,
    pub signal_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            signal_variance: None,
            noise_variance: None,
            jitter: 1e-6,
            max_evaluations: 50,
            signal_bounds: (1e-2, 1e2),
            noise_bounds: (1e-6, 1.0),
        }
    }
}

impl FitConfig {
    /// Fixed hyperparameters, no search.
    pub fn fixed(signal_variance: f64, noise_variance: f64, jitter: f64) -> Self {
        FitConfig {
            signal_variance: Some(signal_variance),
            noise_variance: Some(noise_variance),
            jitter,
            ..FitConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("surrogate: {what}")));
        if let Some(s) = self.signal_variance {
            if !(s > 0.0 && s.is_finite()) {
                return bad("signal variance must be positive");
            }
        }
        if let Some(n) = self.noise_variance {
            if !(n >= 0.0 && n.is_finite()) {
                return bad("noise variance must be non-negative");
            }
        }
        if !(self.jitter > 0.0 && self.jitter <= MAX_JITTER) {
            return bad("jitter must lie in (0, 1e-2]");
        }
        let (slo, shi) = self.signal_bounds;
        let (nlo, nhi) = self.noise_bounds;
        if !(slo > 0.0 && slo <= shi && nlo > 0.0 && nlo <= nhi) {
            return bad("hyperparameter bounds must be positive and ordered");
        }
        Ok(())
    }
}

/// Fitted state of one objective.
#[derive(Clone, Debug)]
struct ObjectiveFit {
    hyper: GpHyperparams,
    mean: f64,
    scale: f64,
    /// Standardized targets rotated into the eigenbasis.
    rotated: Vec<f64>,
    /// Eigenvalues of K.
    kappa: Vec<f64>,
    /// `rotated / kappa`.
    weights: Vec<f64>,
    lml: f64,
    degenerate: bool,
    evaluations: usize,
}

/// Per-objective Gaussian processes over a shared training set.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    x: Vec<Embedding>,
    /// Training embeddings as rows.
    xmat: Mat<f64>,
    eigvecs: Mat<f64>,
    eigvals: Vec<f64>,
    gram: Vec<Vec<f64>>,
    base_jitter: f64,
    objectives: Vec<ObjectiveFit>,
}

/// A query point projected onto the training eigenbasis, reusable across
/// objectives and acquisition calls.
#[derive(Clone, Debug)]
pub struct Query {
    embedding: Embedding,
    proj: Vec<f64>,
}

impl Query {
    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }
}

/// Predictive distribution of one objective over a set of query points,
/// in the original target scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
}

/// Log marginal likelihood from the spectrum of K and rotated targets.
fn spectral_lml(rotated: &[f64], kappa: &[f64]) -> f64 {
    let n = kappa.len() as f64;
    let fit: f64 = rotated.iter().zip(kappa).map(|(r, k)| r * r / k).sum();
    let logdet: f64 = kappa.iter().map(|k| k.ln()).sum();
    -0.5 * fit - 0.5 * logdet - 0.5 * n * LN_2PI
}

/// Eigenvalues of K, escalating the jitter by 10× from `jitter` until K is
/// numerically positive definite. Returns the spectrum and jitter used.
fn kernel_spectrum(eigvals: &[f64], signal: f64, noise: f64, jitter: f64) -> Option<(Vec<f64>, f64)> {
    let mut j = jitter;
    while j <= MAX_JITTER * (1.0 + 1e-9) {
        let kappa: Vec<f64> = eigvals.iter().map(|l| signal * l + noise + j).collect();
        let max = kappa.iter().cloned().fold(0.0, f64::max);
        let min = kappa.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 && min >= MIN_CONDITION * max && max.is_finite() {
            return Some((kappa, j));
        }
        j *= 10.0;
    }
    None
}

fn mean_and_std(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Golden-section maximization of `f` on `[lo, hi]` with `evals` evaluations;
/// every evaluated point is reported through `f`.
fn golden_section(lo: f64, hi: f64, evals: usize, f: &mut dyn FnMut(f64) -> f64) {
    if evals == 0 || hi <= lo {
        return;
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    if evals == 1 {
        return;
    }
    let mut fd = f(d);
    for _ in 2..evals {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
}

impl SurrogateModel {
    /// Fits one GP per objective. `targets[d][i]` is objective `d` of
    /// training point `i`, in the raw scale.
    pub fn fit(x: &[Embedding], targets: &[Vec<f64>], cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let n = x.len();
        if n < 2 {
            return Err(Error::config(format!("surrogate needs at least 2 training points, got {n}")));
        }
        if targets.is_empty() {
            return Err(Error::WrongObjectiveCount { expected: 1, found: 0 });
        }
        for t in targets {
            if t.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: t.len() });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("surrogate targets must be finite"));
            }
        }
        check_embeddings(&x[0], x)?;

        let xmat = embedding_rows(x);
        let dots: Mat<f64> = &xmat * xmat.transpose();
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            gram[i][i] = tanimoto_unchecked(&x[i], &x[i]);
            for j in 0..i {
                let t = tanimoto_from_dot(dots[(i, j)], x[i].norm_sq(), x[j].norm_sq());
                gram[i][j] = t;
                gram[j][i] = t;
            }
        }
        let t = Mat::<f64>::from_fn(n, n, |i, j| gram[i][j]);
        let evd = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::DecompositionFailure(format!("{e:?}")))?;
        let eigvecs = evd.U().to_owned();
        let s = evd.S().column_vector();
        let eigvals: Vec<f64> = (0..n).map(|k| s[k]).collect();

        let mut model = SurrogateModel {
            x: x.to_vec(),
            xmat,
            eigvecs,
            eigvals,
            gram,
            base_jitter: cfg.jitter,
            objectives: Vec::with_capacity(targets.len()),
        };
        for y in targets {
            let fit = model.fit_objective(y, cfg)?;
            model.objectives.push(fit);
        }
        Ok(model)
    }

    fn rotate(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|k| {
                let col = self.eigvecs.col_as_slice(k);
                col.iter().zip(y).map(|(u, v)| u * v).sum()
            })
            .collect()
    }

    fn fit_objective(&self, y: &[f64], cfg: &FitConfig) -> Result<ObjectiveFit> {
        let (mean, std) = mean_and_std(y);
        let spread = y.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
        if !(std > 0.0) || spread <= 1e-12 * mean.abs().max(1.0) {
            return Ok(ObjectiveFit {
                hyper: GpHyperparams { signal_variance: 1.0, noise_variance: 0.0, jitter: cfg.jitter },
                mean,
                scale: 1.0,
                rotated: Vec::new(),
                kappa: Vec::new(),
                weights: Vec::new(),
                lml: f64::NAN,
                degenerate: true,
                evaluations: 0,
            });
        }
        let standardized: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
        let rotated = self.rotate(&standardized);

        let mut evaluations = 0usize;
        let mut best: Option<(f64, f64, f64)> = None; // (lml, log10 s, log10 σ²)
        let eval = |ls: f64, ln: f64, evaluations: &mut usize, best: &mut Option<(f64, f64, f64)>| -> f64 {
            *evaluations += 1;
            let s = cfg.signal_variance.unwrap_or(10f64.powf(ls));
            let nv = cfg.noise_variance.unwrap_or(10f64.powf(ln));
            let value = match kernel_spectrum(&self.eigvals, s, nv, cfg.jitter) {
                Some((kappa, _)) => spectral_lml(&rotated, &kappa),
                None => f64::NEG_INFINITY,
            };
            if value.is_finite() && best.map_or(true, |b| value > b.0) {
                *best = Some((value, ls, ln));
            }
            value
        };

        let (slo, shi) = (cfg.signal_bounds.0.log10(), cfg.signal_bounds.1.log10());
        let (nlo, nhi) = (cfg.noise_bounds.0.log10(), cfg.noise_bounds.1.log10());
        let grid = |lo: f64, hi: f64, fixed: bool| -> Vec<f64> {
            if fixed {
                vec![0.0]
            } else {
                (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
            }
        };
        let s_grid = grid(slo, shi, cfg.signal_variance.is_some());
        let n_grid = grid(nlo, nhi, cfg.noise_variance.is_some());
        let searching = cfg.signal_variance.is_none() || cfg.noise_variance.is_none();

        if searching {
            let default = GpHyperparams::default();
            eval(
                default.signal_variance.log10(),
                default.noise_variance.log10(),
                &mut evaluations,
                &mut best,
            );
        }
        for &ls in &s_grid {
            for &ln in &n_grid {
                eval(ls, ln, &mut evaluations, &mut best);
            }
        }

        if searching {
            let mut s_step = (shi - slo) / 4.0;
            let mut n_step = (nhi - nlo) / 4.0;
            let per_line = 6;
            'refine: loop {
                for coord in 0..2 {
                    let fixed = if coord == 0 { cfg.signal_variance.is_some() } else { cfg.noise_variance.is_some() };
                    if fixed {
                        continue;
                    }
                    let remaining = cfg.max_evaluations.saturating_sub(evaluations);
                    if remaining == 0 || best.is_none() {
                        break 'refine;
                    }
                    let (_, bs, bn) = best.unwrap();
                    let evals = per_line.min(remaining);
                    if coord == 0 {
                        let (lo, hi) = ((bs - s_step).max(slo), (bs + s_step).min(shi));
                        golden_section(lo, hi, evals, &mut |v| eval(v, bn, &mut evaluations, &mut best));
                        s_step *= 0.5;
                    } else {
                        let (lo, hi) = ((bn - n_step).max(nlo), (bn + n_step).min(nhi));
                        golden_section(lo, hi, evals, &mut |v| eval(bs, v, &mut evaluations, &mut best));
                        n_step *= 0.5;
                    }
                }
            }
        }

        let (_, ls, ln) = best.ok_or(Error::SingularKernel { jitter: MAX_JITTER })?;
        let signal = cfg.signal_variance.unwrap_or(10f64.powf(ls));
        let noise = cfg.noise_variance.unwrap_or(10f64.powf(ln));
        let (kappa, jitter) = kernel_spectrum(&self.eigvals, signal, noise, cfg.jitter)
            .ok_or(Error::SingularKernel { jitter: MAX_JITTER })?;
        let lml = spectral_lml(&rotated, &kappa);
        let weights = rotated.iter().zip(&kappa).map(|(r, k)| r / k).collect();
        Ok(ObjectiveFit {
            hyper: GpHyperparams { signal_variance: signal, noise_variance: noise, jitter },
            mean,
            scale: std,
            rotated,
            kappa,
            weights,
            lml,
            degenerate: false,
            evaluations,
        })
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn n_objectives(&self) -> usize {
        self.objectives.len()
    }

    pub fn training_embeddings(&self) -> &[Embedding] {
        &self.x
    }

    pub fn hyperparams(&self, objective: usize) -> GpHyperparams {
        self.objectives[objective].hyper
    }

    /// Log marginal likelihood at the fitted hyperparameters; NaN for a
    /// degenerate objective.
    pub fn fitted_lml(&self, objective: usize) -> f64 {
        self.objectives[objective].lml
    }

    /// True when the objective had zero target variance and falls back to a
    /// constant-mean predictor.
    pub fn is_degenerate(&self, objective: usize) -> bool {
        self.objectives[objective].degenerate
    }

    /// Number of likelihood evaluations spent fitting the objective.
    pub fn fit_evaluations(&self, objective: usize) -> usize {
        self.objectives[objective].evaluations
    }

    /// Mean and standard deviation used to standardize the objective.
    pub fn standardization(&self, objective: usize) -> (f64, f64) {
        let o = &self.objectives[objective];
        (o.mean, o.scale)
    }

    /// Standardized training targets of the objective, recovered from the
    /// eigenbasis.
    pub fn standardized_targets(&self, objective: usize) -> Vec<f64> {
        let o = &self.objectives[objective];
        let n = self.n_train();
        if o.degenerate {
            return vec![0.0; n];
        }
        (0..n)
            .map(|i| (0..n).map(|k| self.eigvecs[(i, k)] * o.rotated[k]).sum())
            .collect()
    }

    /// Log marginal likelihood of the standardized targets under the given
    /// hyperparameters, using the model's base jitter with escalation.
    pub fn log_marginal_likelihood(&self, objective: usize, signal_variance: f64, noise_variance: f64) -> Result<f64> {
        let o = &self.objectives[objective];
        if o.degenerate {
            return Err(Error::config("objective has constant targets"));
        }
        let (kappa, _) = kernel_spectrum(&self.eigvals, signal_variance, noise_variance, self.base_jitter)
            .ok_or(Error::SingularKernel { jitter: MAX_JITTER })?;
        Ok(spectral_lml(&o.rotated, &kappa))
    }

    /// The Tanimoto Gram matrix of the training embeddings.
    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// Relative Frobenius error between the stored factorization of K and
    /// K built directly from the Gram matrix.
    pub fn factor_residual(&self, objective: usize) -> f64 {
        let o = &self.objectives[objective];
        if o.degenerate {
            return 0.0;
        }
        let n = self.n_train();
        let h = o.hyper;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut rebuilt = 0.0;
                for k in 0..n {
                    rebuilt += self.eigvecs[(i, k)] * o.kappa[k] * self.eigvecs[(j, k)];
                }
                let mut direct = h.signal_variance * self.gram[i][j];
                if i == j {
                    direct += h.noise_variance + h.jitter;
                }
                num += (rebuilt - direct).powi(2);
                den += direct * direct;
            }
        }
        (num / den).sqrt()
    }

    /// Projects query embeddings onto the training eigenbasis.
    pub fn prepare(&self, xq: &[Embedding]) -> Result<Vec<Query>> {
        if xq.is_empty() {
            return Ok(Vec::new());
        }
        check_embeddings(&self.x[0], xq)?;
        let n = self.n_train();
        let m = xq.len();
        let qmat = embedding_rows(xq);
        let dots: Mat<f64> = &self.xmat * qmat.transpose();
        let cross = Mat::<f64>::from_fn(n, m, |i, a| tanimoto_from_dot(dots[(i, a)], self.x[i].norm_sq(), xq[a].norm_sq()));
        let proj: Mat<f64> = self.eigvecs.transpose() * &cross;
        Ok(xq
            .iter()
            .enumerate()
            .map(|(a, e)| Query { embedding: e.clone(), proj: proj.col_as_slice(a).to_vec() })
            .collect())
    }

    /// The projection of training point `i`, which needs no kernel
    /// evaluations: `Uᵀ T e_i = λ ⊙ U[i, :]`.
    pub fn training_query(&self, i: usize) -> Query {
        let n = self.n_train();
        Query {
            embedding: self.x[i].clone(),
            proj: (0..n).map(|k| self.eigvals[k] * self.eigvecs[(i, k)]).collect(),
        }
    }

    /// Predictive mean and variance of every objective at one query.
    pub fn marginal(&self, q: &Query) -> Vec<(f64, f64)> {
        (0..self.n_objectives()).map(|d| self.marginal_one(d, q)).collect()
    }

    /// Posterior covariance of one objective between two queries.
    pub fn covariance(&self, objective: usize, a: &Query, b: &Query) -> f64 {
        let o = &self.objectives[objective];
        let t = tanimoto_unchecked(&a.embedding, &b.embedding);
        if o.degenerate {
            return t;
        }
        let s = o.hyper.signal_variance;
        let quad: f64 = a.proj.iter().zip(&b.proj).zip(&o.kappa).map(|((x, y), k)| x * y / k).sum();
        o.scale * o.scale * (s * t - s * s * quad)
    }

    /// Joint predictive mean and covariance of one objective over queries.
    pub fn joint(&self, objective: usize, queries: &[&Query]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = queries.len();
        let mut mean = Vec::with_capacity(m);
        let mut cov = vec![vec![0.0; m]; m];
        for (a, qa) in queries.iter().enumerate() {
            let (mu, var) = self.marginal_one(objective, qa);
            mean.push(mu);
            cov[a][a] = var;
            for b in 0..a {
                let c = self.covariance(objective, qa, queries[b]);
                cov[a][b] = c;
                cov[b][a] = c;
            }
        }
        (mean, cov)
    }

    fn marginal_one(&self, objective: usize, q: &Query) -> (f64, f64) {
        let o = &self.objectives[objective];
        let self_sim = tanimoto_unchecked(&q.embedding, &q.embedding);
        if o.degenerate {
            return (o.mean, self_sim.max(0.0));
        }
        let s = o.hyper.signal_variance;
        let mut dot = 0.0;
        let mut quad = 0.0;
        for ((p, w), k) in q.proj.iter().zip(&o.weights).zip(&o.kappa) {
            dot += p * w;
            quad += p * p / k;
        }
        let mean = o.mean + o.scale * s * dot;
        let var = o.scale * o.scale * (s * self_sim - s * s * quad);
        (mean, var.max(0.0))
    }

    /// Posterior per objective at the query embeddings.
    pub fn posterior(&self, xq: &[Embedding], full_cov: bool) -> Result<Vec<Posterior>> {
        let queries = self.prepare(xq)?;
        let refs: Vec<&Query> = queries.iter().collect();
        Ok((0..self.n_objectives())
            .map(|d| {
                if full_cov {
                    let (mean, cov) = self.joint(d, &refs);
                    let variance = (0..mean.len()).map(|a| cov[a][a]).collect();
                    Posterior { mean, variance, covariance: Some(cov) }
                } else {
                    let (mean, variance) = refs.iter().map(|q| self.marginal_one(d, q)).unzip();
                    Posterior { mean, variance, covariance: None }
                }
            })
            .collect())
    }

    /// Joint posterior samples indexed `[sample][point][objective]`.
    /// Objectives are sampled independently.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        xq: &[Embedding],
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let queries = self.prepare(xq)?;
        let refs: Vec<&Query> = queries.iter().collect();
        let m = refs.len();
        let k = self.n_objectives();
        let factors: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..k)
            .map(|d| {
                let (mean, cov) = self.joint(d, &refs);
                (mean, psd_cholesky(&cov))
            })
            .collect();
        let mut out = vec![vec![vec![0.0; k]; m]; n_samples];
        let mut z = vec![0.0; m];
        for sample in out.iter_mut() {
            for (d, (mean, l)) in factors.iter().enumerate() {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for a in 0..m {
                    let mut v = mean[a];
                    for (b, zb) in z.iter().enumerate().take(a + 1) {
                        v += l[a][b] * zb;
                    }
                    sample[a][d] = v;
                }
            }
        }
        Ok(out)
    }
}

fn embedding_rows(x: &[Embedding]) -> Mat<f64> {
    let dim = x.first().map_or(0, Embedding::dim);
    Mat::from_fn(x.len(), dim, |i, j| x[i].values()[j])
}

fn tanimoto_from_dot(dot: f64, a: f64, b: f64) -> f64 {
    let denom = a + b - dot;
    if denom <= 0.0 {
        1.0
    } else {
        dot / denom
    }
}

fn check_embeddings(first: &Embedding, xs: &[Embedding]) -> Result<()> {
    for e in xs {
        if e.encoder() != first.encoder() {
            return Err(Error::EncoderMismatch { left: first.encoder().to_string(), right: e.encoder().to_string() });
        }
        if e.dim() != first.dim() {
            return Err(Error::DimensionMismatch { left: first.dim(), right: e.dim() });
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a positive semidefinite matrix. A diagonal
/// stabilizer of 1e-10 times the largest variance is added; columns whose
/// pivot is not positive are zeroed, so a zero matrix yields a zero factor.
pub fn psd_cholesky(cov: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = cov.len();
    let max_diag = (0..m).map(|i| cov[i][i]).fold(0.0f64, f64::max);
    let eps = SAMPLE_STABILIZER * max_diag;
    let mut l = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut d = cov[j][j] + eps;
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > 0.0) {
            continue;
        }
        let pivot = d.sqrt();
        l[j][j] = pivot;
        for i in (j + 1)..m {
            let mut v = cov[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / pivot;
        }
    }
    l
}

/// Gaussian log likelihood `log N(y | 0, K)` through a dense Cholesky
/// factorization.
pub fn gaussian_log_likelihood(kernel: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = y.len();
    if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { left: kernel.len(), right: n });
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = kernel[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > 0.0) {
            return Err(Error::SingularKernel { jitter: 0.0 });
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..n {
            let mut v = kernel[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / l[j][j];
        }
    }
    let mut alpha = vec![0.0; n];
    for i in 0..n {
        let mut v = y[i];
        for k in 0..i {
            v -= l[i][k] * alpha[k];
        }
        alpha[i] = v / l[i][i];
    }
    let fit: f64 = alpha.iter().map(|a| a * a).sum();
    let logdet: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    Ok(-0.5 * fit - 0.5 * logdet - 0.5 * n as f64 * LN_2PI)
}
