//! Acquisition functions: LogEI, exact two-objective EHVI and Monte-Carlo
//! batch EHVI / noisy EHVI over a fitted surrogate.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::pareto::{hypervolume, pareto_indices};
use crate::surrogate::{psd_cholesky, Query, SurrogateModel};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const CF_TERMS: usize = 4000;

/// Which acquisition drives a Bayesian-optimization method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Logei,
    Ehvi,
    Qehvi,
    Qnehvi,
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcquisitionKind::Logei => "logei",
            AcquisitionKind::Ehvi => "ehvi",
            AcquisitionKind::Qehvi => "qehvi",
            AcquisitionKind::Qnehvi => "qnehvi",
        })
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logei" => Ok(AcquisitionKind::Logei),
            "ehvi" => Ok(AcquisitionKind::Ehvi),
            "qehvi" => Ok(AcquisitionKind::Qehvi),
            "qnehvi" => Ok(AcquisitionKind::Qnehvi),
            other => Err(Error::config(format!("unknown acquisition {other:?}"))),
        }
    }
}

/// Observed front and reference point an acquisition improves upon.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionContext {
    front: Vec<Vec<f64>>,
    reference: Vec<f64>,
    front_hv: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl AcquisitionContext {
    /// Keeps only the non-dominated points strictly above the reference.
    pub fn new(points: &[Vec<f64>], reference: Vec<f64>, mc_samples: usize, seed: u64) -> Result<Self> {
        let k = reference.len();
        if let Some(p) = points.iter().find(|p| p.len() != k) {
            return Err(Error::DimensionMismatch { left: p.len(), right: k });
        }
        if mc_samples == 0 {
            return Err(Error::config("mc_samples must be at least 1"));
        }
        let above: Vec<Vec<f64>> = points
            .iter()
            .filter(|p| p.iter().zip(&reference).all(|(x, r)| x > r))
            .cloned()
            .collect();
        let front: Vec<Vec<f64>> = pareto_indices(&above).into_iter().map(|i| above[i].clone()).collect();
        let front_hv = hypervolume(&front, &reference)?;
        Ok(AcquisitionContext { front, reference, front_hv, mc_samples, seed })
    }

    pub fn front(&self) -> &[Vec<f64>] {
        &self.front
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn front_hypervolume(&self) -> f64 {
        self.front_hv
    }

    pub fn n_objectives(&self) -> usize {
        self.reference.len()
    }

    /// Hypervolume improvement of `points` over the front.
    pub fn improvement(&self, points: &[Vec<f64>]) -> Result<f64> {
        improvement_over(&self.front, self.front_hv, &self.reference, points)
    }
}

fn weakly_dominated(front: &[Vec<f64>], p: &[f64]) -> bool {
    front.iter().any(|f| f.iter().zip(p).all(|(a, b)| a >= b))
}

fn improvement_over(front: &[Vec<f64>], front_hv: f64, reference: &[f64], points: &[Vec<f64>]) -> Result<f64> {
    let fresh: Vec<&Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x > r) && !weakly_dominated(front, p))
        .collect();
    if fresh.is_empty() {
        return Ok(0.0);
    }
    let mut all: Vec<&[f64]> = front.iter().map(|f| f.as_slice()).collect();
    all.extend(fresh.iter().map(|p| p.as_slice()));
    Ok((hypervolume(&all, reference)? - front_hv).max(0.0))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Evaluates `1 / (x + a / (x + (a + 1) / (x + ...)))` backwards.
fn mills_fraction(x: f64, first: usize) -> f64 {
    let mut tail = 0.0;
    for k in (first..CF_TERMS + first).rev() {
        tail = k as f64 / (x + tail);
    }
    1.0 / (x + tail)
}

/// `log(φ(z) + zΦ(z))`, accurate far into the lower tail.
pub fn log_h(z: f64) -> f64 {
    if z > -3.0 {
        return (normal_pdf(z) + z * normal_cdf(z)).ln();
    }
    let log_pdf = -0.5 * z * z - LN_SQRT_2PI;
    let x = -z;
    if x > 1e8 {
        return log_pdf - 2.0 * x.ln();
    }
    // h(z) = φ(z)·(1 − x·R(x)) with R the Mills ratio, and
    // 1 − x·R(x) = R(x)·(1/R(x) − x); both factors are continued fractions.
    let ratio = mills_fraction(x, 1);
    let remainder = mills_fraction(x, 2);
    log_pdf + ratio.ln() + remainder.ln()
}

/// Logarithm of expected improvement over `best` for a Gaussian with the
/// given mean and standard deviation.
pub fn log_ei(mean: f64, std: f64, best: f64) -> f64 {
    if !(std > 0.0) {
        let gain = mean - best;
        return if gain > 0.0 { gain.ln() } else { f64::NEG_INFINITY };
    }
    std.ln() + log_h((mean - best) / std)
}

/// `E[(F − c)+]` for `F ~ N(mean, std²)`.
fn expected_excess(mean: f64, std: f64, c: f64) -> f64 {
    if c == f64::INFINITY {
        return 0.0;
    }
    if !(std > 0.0) {
        return (mean - c).max(0.0);
    }
    let z = (mean - c) / std;
    (mean - c) * normal_cdf(z) + std * normal_pdf(z)
}

/// Exact expected hypervolume improvement for two independent Gaussian
/// objectives, by vertical strips between consecutive front points.
pub fn ehvi_2d(means: &[f64], stds: &[f64], ctx: &AcquisitionContext) -> Result<f64> {
    if ctx.n_objectives() != 2 {
        return Err(Error::WrongObjectiveCount { expected: 2, found: ctx.n_objectives() });
    }
    if means.len() != 2 || stds.len() != 2 {
        return Err(Error::WrongObjectiveCount { expected: 2, found: means.len().min(stds.len()) });
    }
    let r = &ctx.reference;
    let mut front: Vec<(f64, f64)> = ctx.front.iter().map(|p| (p[0], p[1])).collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = front.len();
    let mut total = 0.0;
    let mut left = r[0];
    for i in 0..=m {
        let right = if i < m { front[i].0 } else { f64::INFINITY };
        let floor = if i < m { front[i].1 } else { r[1] };
        let width = expected_excess(means[0], stds[0], left) - expected_excess(means[0], stds[0], right);
        if width > 0.0 {
            total += width * expected_excess(means[1], stds[1], floor);
        }
        left = right;
    }
    Ok(total.max(0.0))
}

/// A Monte-Carlo estimate and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McEstimate { value: mean, std_error: (var / n).sqrt() }
    }
}

/// Standard normal draws shared by every acquisition call of one
/// optimization step, so the acquisition surface is deterministic.
#[derive(Clone, Debug)]
pub struct BaseSamples {
    z: Vec<f64>,
    samples: usize,
    width: usize,
    objectives: usize,
}

impl BaseSamples {
    pub fn new(samples: usize, width: usize, objectives: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..samples * width * objectives).map(|_| StandardNormal.sample(&mut rng)).collect();
        BaseSamples { z, samples, width, objectives }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn get(&self, sample: usize, point: usize, objective: usize) -> f64 {
        self.z[(sample * self.width + point) * self.objectives + objective]
    }
}

/// Mean hypervolume improvement of sampled batches, `samples[s][j][d]`.
pub fn hvi_from_samples(ctx: &AcquisitionContext, samples: &[Vec<Vec<f64>>]) -> Result<McEstimate> {
    let values = samples.iter().map(|s| ctx.improvement(s)).collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_values(&values))
}

fn check_base(model: &SurrogateModel, base: &BaseSamples, q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::config("acquisition batch must hold at least one candidate"));
    }
    if base.width < q {
        return Err(Error::config(format!("base samples cover {} points, batch has {q}", base.width)));
    }
    if base.objectives != model.n_objectives() {
        return Err(Error::WrongObjectiveCount { expected: model.n_objectives(), found: base.objectives });
    }
    Ok(())
}

/// Monte-Carlo expected hypervolume improvement of a candidate batch.
pub fn qehvi_mc(
    model: &SurrogateModel,
    batch: &[&Query],
    ctx: &AcquisitionContext,
    base: &BaseSamples,
) -> Result<McEstimate> {
    check_base(model, base, batch.len())?;
    if ctx.n_objectives() != model.n_objectives() {
        return Err(Error::WrongObjectiveCount { expected: ctx.n_objectives(), found: model.n_objectives() });
    }
    let q = batch.len();
    let k = model.n_objectives();
    let factors: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..k)
        .map(|d| {
            let (mean, cov) = model.joint(d, batch);
            (mean, psd_cholesky(&cov))
        })
        .collect();
    let mut values = Vec::with_capacity(base.samples);
    let mut points = vec![vec![0.0; k]; q];
    for s in 0..base.samples {
        for (d, (mean, l)) in factors.iter().enumerate() {
            for j in 0..q {
                let mut v = mean[j];
                for b in 0..=j {
                    v += l[j][b] * base.get(s, b, d);
                }
                points[j][d] = v;
            }
        }
        values.push(ctx.improvement(&points)?);
    }
    Ok(McEstimate::from_values(&values))
}

/// Joint posterior samples over observed points, drawn once per
/// optimization step and reused to condition every candidate batch.
#[derive(Clone, Debug)]
pub struct NoisyBaseline {
    queries: Vec<Query>,
    /// Per objective: factor of the baseline covariance.
    factors: Vec<Vec<Vec<f64>>>,
    /// `[sample][point][objective]` standard normals behind the baseline draws.
    z: Vec<Vec<Vec<f64>>>,
    fronts: Vec<Vec<Vec<f64>>>,
    front_hvs: Vec<f64>,
    reference: Vec<f64>,
}

impl NoisyBaseline {
    /// Samples the baseline at `observed` (typically training points) using
    /// `samples` draws seeded by `seed`.
    pub fn new(
        model: &SurrogateModel,
        observed: Vec<Query>,
        reference: Vec<f64>,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let k = model.n_objectives();
        if reference.len() != k {
            return Err(Error::WrongObjectiveCount { expected: k, found: reference.len() });
        }
        let refs: Vec<&Query> = observed.iter().collect();
        let b = refs.len();
        let mut means = Vec::with_capacity(k);
        let mut factors = Vec::with_capacity(k);
        for d in 0..k {
            let (mean, cov) = model.joint(d, &refs);
            means.push(mean);
            factors.push(psd_cholesky(&cov));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::with_capacity(samples);
        let mut fronts = Vec::with_capacity(samples);
        let mut front_hvs = Vec::with_capacity(samples);
        for _ in 0..samples {
            let zs: Vec<Vec<f64>> =
                (0..b).map(|_| (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let mut values = vec![vec![0.0; k]; b];
            for d in 0..k {
                for i in 0..b {
                    let mut v = means[d][i];
                    for j in 0..=i {
                        v += factors[d][i][j] * zs[j][d];
                    }
                    values[i][d] = v;
                }
            }
            let above: Vec<Vec<f64>> =
                values.into_iter().filter(|p| p.iter().zip(&reference).all(|(x, r)| x > r)).collect();
            let front: Vec<Vec<f64>> = pareto_indices(&above).into_iter().map(|i| above[i].clone()).collect();
            front_hvs.push(hypervolume(&front, &reference)?);
            fronts.push(front);
            z.push(zs);
        }
        Ok(NoisyBaseline { queries: observed, factors, z, fronts, front_hvs, reference })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.z.len()
    }

    /// The sampled front of draw `s`.
    pub fn sample_front(&self, s: usize) -> &[Vec<f64>] {
        &self.fronts[s]
    }
}

/// Monte-Carlo noisy expected hypervolume improvement: candidate draws are
/// conditioned on the baseline draws of the same sample, and improvement is
/// measured against each sample's own front.
pub fn qnehvi_mc(
    model: &SurrogateModel,
    batch: &[&Query],
    baseline: &NoisyBaseline,
    base: &BaseSamples,
) -> Result<McEstimate> {
    check_base(model, base, batch.len())?;
    if base.samples < baseline.samples() {
        return Err(Error::config("fewer base samples than baseline draws"));
    }
    let q = batch.len();
    let k = model.n_objectives();
    let b = baseline.len();
    // Block Cholesky extension per objective: [L_B 0; L21 L22].
    let mut blocks = Vec::with_capacity(k);
    for d in 0..k {
        let (mean, cov_xx) = model.joint(d, batch);
        let lb = &baseline.factors[d];
        let mut l21 = vec![vec![0.0; b]; q];
        for (j, row) in l21.iter_mut().enumerate() {
            for i in 0..b {
                let mut v = model.covariance(d, batch[j], &baseline.queries[i]);
                for t in 0..i {
                    v -= row[t] * lb[i][t];
                }
                row[i] = if lb[i][i] > 0.0 { v / lb[i][i] } else { 0.0 };
            }
        }
        let mut schur = cov_xx;
        for a in 0..q {
            for c in 0..q {
                schur[a][c] -= l21[a].iter().zip(&l21[c]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        blocks.push((mean, l21, psd_cholesky(&schur)));
    }
    let mut values = Vec::with_capacity(baseline.samples());
    let mut points = vec![vec![0.0; k]; q];
    for s in 0..baseline.samples() {
        let zb = &baseline.z[s];
        for (d, (mean, l21, l22)) in blocks.iter().enumerate() {
            for j in 0..q {
                let mut v = mean[j];
                for i in 0..b {
                    v += l21[j][i] * zb[i][d];
                }
                for t in 0..=j {
                    v += l22[j][t] * base.get(s, t, d);
                }
                points[j][d] = v;
            }
        }
        values.push(improvement_over(&baseline.fronts[s], baseline.front_hvs[s], &baseline.reference, &points)?);
    }
    Ok(McEstimate::from_values(&values))
}

/// `log EI` against the best observed value, for the single-objective case.
pub fn log_ei_at(model: &SurrogateModel, query: &Query, best: f64) -> f64 {
    let (mean, var) = model.marginal(query)[0];
    log_ei(mean, var.sqrt(), best)
}

/// Exact EHVI of a query under the model's marginals.
pub fn ehvi_at(model: &SurrogateModel, query: &Query, ctx: &AcquisitionContext) -> Result<f64> {
    let marg = model.marginal(query);
    let means: Vec<f64> = marg.iter().map(|m| m.0).collect();
    let stds: Vec<f64> = marg.iter().map(|m| m.1.sqrt()).collect();
    ehvi_2d(&means, &stds, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(front: &[[f64; 2]], reference: [f64; 2]) -> AcquisitionContext {
        let pts: Vec<Vec<f64>> = front.iter().map(|p| p.to_vec()).collect();
        AcquisitionContext::new(&pts, reference.to_vec(), 128, 0).unwrap()
    }

    #[test]
    fn log_ei_examples() {
        assert!((log_ei(1.0, 1.0, 1.0) + LN_SQRT_2PI).abs() < 1e-12);
        assert_eq!(log_ei(2.0, 0.0, 1.0), 0.0);
        assert_eq!(log_ei(1.0, 0.0, 1.0), f64::NEG_INFINITY);
        assert!(log_ei(0.0, 1.0, 40.0).is_finite());
        assert!(log_h(-1e9).is_finite());
    }

    #[test]
    fn log_h_branches_agree() {
        for z in [-3.0f64, -3.5, -5.0] {
            let direct = (normal_pdf(z) + z * normal_cdf(z)).ln();
            assert!((log_h(z) - direct).abs() < 1e-9 * direct.abs(), "{z}");
        }
    }

    #[test]
    fn ehvi_degenerate_examples() {
        let c = ctx(&[[1.0, 1.0]], [0.0, 0.0]);
        assert!((ehvi_2d(&[2.0, 2.0], &[1e-12, 1e-12], &c).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(ehvi_2d(&[0.5, 0.5], &[0.0, 0.0], &c).unwrap(), 0.0);
        let three = AcquisitionContext::new(&[], vec![0.0; 3], 8, 0).unwrap();
        assert!(matches!(ehvi_2d(&[0.0; 2], &[1.0; 2], &three), Err(Error::WrongObjectiveCount { .. })));
    }

    #[test]
    fn context_drops_dominated_and_below_reference() {
        let c = ctx(&[[1.0, 1.0], [0.5, 0.5], [2.0, -1.0]], [0.0, 0.0]);
        assert_eq!(c.front(), &[vec![1.0, 1.0]]);
        assert_eq!(c.front_hypervolume(), 1.0);
    }

    #[test]
    fn sample_improvement_is_set_valued() {
        let c = ctx(&[[1.0, 1.0]], [0.0, 0.0]);
        let one = c.improvement(&[vec![2.0, 0.5]]).unwrap();
        let two = c.improvement(&[vec![2.0, 0.5], vec![2.0, 0.5]]).unwrap();
        assert_eq!(one, two);
        assert!((one - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kind_round_trip() {
        for k in [AcquisitionKind::Logei, AcquisitionKind::Ehvi, AcquisitionKind::Qehvi, AcquisitionKind::Qnehvi] {
            assert_eq!(k.to_string().parse::<AcquisitionKind>().unwrap(), k);
        }
        assert!("ei".parse::<AcquisitionKind>().is_err());
    }
}
