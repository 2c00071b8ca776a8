//! Maximum-likelihood linear mixed model with crossed random intercepts.
//!
//! The marginal covariance is `sigma^2 (I + sum_r theta_r^2 Z_r Z_r^T)`, where
//! `theta_r = sigma_r / sigma` is the relative scale of factor `r`. The residual
//! variance and the fixed effects are profiled out, leaving a smooth objective
//! in `theta` that is minimised with a Nelder-Mead simplex. Every quadratic form
//! in the inverse covariance goes through the Woodbury identity, and the
//! factor with the most levels is kept on a diagonal block so that the dense
//! work scales with the remaining (small) factors only.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::dist::normal_two_sided;
use super::{EvaluationRecord, Metric};
use crate::error::{Error, Result};

/// Which record label a random intercept is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RandomFactorKind {
    /// One level per (dataset, instance id).
    Instance,
    Model,
    Dataset,
}

impl RandomFactorKind {
    pub const ALL: [RandomFactorKind; 3] = [Self::Instance, Self::Model, Self::Dataset];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Instance => "instance",
            Self::Model => "model",
            Self::Dataset => "dataset",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

/// A grouping factor: the level index of every observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomFactor {
    pub name: String,
    pub levels: Vec<usize>,
    pub level_count: usize,
}

impl RandomFactor {
    /// Builds a factor from per-observation labels, numbering levels in sorted order.
    pub fn from_labels<L: Ord + Clone>(name: &str, labels: &[L]) -> Self {
        let mut index = BTreeMap::new();
        for label in labels {
            index.entry(label.clone()).or_insert(0usize);
        }
        for (i, slot) in index.values_mut().enumerate() {
            *slot = i;
        }
        Self {
            name: name.to_string(),
            levels: labels.iter().map(|l| index[l]).collect(),
            level_count: index.len(),
        }
    }
}

/// Response, dense fixed-effect design and random factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LmmProblem {
    pub response: Vec<f64>,
    /// Row-major `n x p` design matrix.
    pub design: Vec<f64>,
    pub column_names: Vec<String>,
    pub random: Vec<RandomFactor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmmOptions {
    /// Fixed-factor level absorbed into the intercept.
    pub reference: String,
    pub random: Vec<RandomFactorKind>,
    pub metric: Metric,
    pub max_iterations: usize,
    /// Simplex diameter, in relative-scale units, at which the search stops.
    pub tolerance: f64,
}

impl Default for LmmOptions {
    fn default() -> Self {
        Self {
            reference: "random".into(),
            random: RandomFactorKind::ALL.to_vec(),
            metric: Metric::FSyn,
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedEffect {
    pub name: String,
    pub beta: f64,
    pub std_err: f64,
    pub z: f64,
    pub p_value: f64,
    /// The reference level, reported with `beta = 0` and no test.
    pub reference: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceComponent {
    pub factor: String,
    pub levels: usize,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmmFit {
    /// Design columns in order; for record fits the intercept comes first,
    /// then the reference level, then the remaining levels.
    pub fixed: Vec<FixedEffect>,
    pub random: Vec<VarianceComponent>,
    pub sigma2_resid: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub observations: usize,
    /// Best log-likelihood after each simplex iteration.
    pub trace: Vec<f64>,
}

impl LmmFit {
    pub fn effect(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed.iter().find(|e| e.name == name)
    }

    /// Variance of a named random factor; `None` when it was not in the model.
    pub fn variance(&self, factor: &str) -> Option<f64> {
        self.random.iter().find(|c| c.factor == factor).map(|c| c.variance)
    }
}

/// Name of the intercept column in record fits.
pub const INTERCEPT: &str = "(intercept)";

/// Fits `metric ~ explainer + (1|instance) + (1|model) + (1|dataset)` by ML,
/// with the random factors chosen in `options`.
pub fn lmm_fit(records: &[EvaluationRecord], options: &LmmOptions) -> Result<LmmFit> {
    let levels: Vec<String> = {
        let mut l: Vec<String> = records.iter().map(|r| r.explainer.clone()).collect();
        l.sort();
        l.dedup();
        l
    };
    if !levels.contains(&options.reference) {
        return Err(Error::MissingReference(options.reference.clone()));
    }
    if levels.len() < 2 {
        return Err(Error::TooFewLevels { factor: "explainer".into(), found: levels.len() });
    }
    let others: Vec<&String> = levels.iter().filter(|l| **l != options.reference).collect();
    let p = others.len() + 1;
    let mut design = Vec::with_capacity(records.len() * p);
    for r in records {
        design.push(1.0);
        design.extend(others.iter().map(|l| if **l == r.explainer { 1.0 } else { 0.0 }));
    }
    let mut column_names = vec![String::from(INTERCEPT)];
    column_names.extend(others.iter().map(|l| (*l).clone()));

    let mut kinds = options.random.clone();
    kinds.sort();
    kinds.dedup();
    let random = kinds
        .iter()
        .map(|kind| match kind {
            RandomFactorKind::Instance => {
                let labels: Vec<(&str, &str)> =
                    records.iter().map(|r| (r.dataset.as_str(), r.instance_id.as_str())).collect();
                RandomFactor::from_labels(kind.as_str(), &labels)
            }
            RandomFactorKind::Model => {
                let labels: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
                RandomFactor::from_labels(kind.as_str(), &labels)
            }
            RandomFactorKind::Dataset => {
                let labels: Vec<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
                RandomFactor::from_labels(kind.as_str(), &labels)
            }
        })
        .collect();
    let problem = LmmProblem {
        response: records.iter().map(|r| r.get(options.metric)).collect(),
        design,
        column_names,
        random,
    };
    let mut fit = fit_lmm(&problem, options.max_iterations, options.tolerance)?;
    fit.fixed.insert(
        1,
        FixedEffect {
            name: options.reference.clone(),
            beta: 0.0,
            std_err: 0.0,
            z: 0.0,
            p_value: 1.0,
            reference: true,
        },
    );
    Ok(fit)
}

/// Fits a general problem by ML.
pub fn fit_lmm(problem: &LmmProblem, max_iterations: usize, tolerance: f64) -> Result<LmmFit> {
    let n = problem.response.len();
    let p = problem.column_names.len();
    if problem.design.len() != n * p {
        return Err(Error::LengthMismatch { left: problem.design.len(), right: n * p });
    }
    for factor in &problem.random {
        if factor.levels.len() != n {
            return Err(Error::LengthMismatch { left: factor.levels.len(), right: n });
        }
        if factor.level_count < 2 {
            return Err(Error::TooFewLevels { factor: factor.name.clone(), found: factor.level_count });
        }
    }
    let parameters = p + problem.random.len() + 1;
    if n < parameters {
        return Err(Error::InsufficientData { needed: parameters, found: n });
    }
    if problem.response.iter().chain(&problem.design).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite response or design value"));
    }
    check_rank(&problem.design, n, &problem.column_names)?;

    let model = Prepared::new(problem);
    let r = problem.random.len();
    let objective = |theta: &[f64]| model.deviance(theta).map(|e| e.deviance).unwrap_or(f64::INFINITY);
    let search = if r == 0 {
        Simplex { best: Vec::new(), iterations: 0, converged: true, trace: Vec::new() }
    } else {
        nelder_mead(objective, &vec![1.0; r], 0.5, tolerance, max_iterations)
    };
    let theta = search.best.iter().map(|t| t.abs()).collect::<Vec<_>>();
    let eval = model.deviance(&theta).ok_or(Error::Numerical("covariance factorisation failed at optimum"))?;
    let sigma2 = eval.sigma2;

    let cov = eval.xtx_inv * sigma2;
    let fixed = problem
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let beta = eval.beta[j];
            let std_err = libm::sqrt(cov[(j, j)].max(0.0));
            let z = beta / std_err;
            FixedEffect {
                name: name.clone(),
                beta,
                std_err,
                z,
                p_value: normal_two_sided(z),
                reference: false,
            }
        })
        .collect();
    let random = problem
        .random
        .iter()
        .zip(&theta)
        .map(|(f, t)| VarianceComponent { factor: f.name.clone(), levels: f.level_count, variance: t * t * sigma2 })
        .collect();
    Ok(LmmFit {
        fixed,
        random,
        sigma2_resid: sigma2,
        log_likelihood: -0.5 * eval.deviance,
        converged: search.converged,
        iterations: search.iterations,
        observations: n,
        trace: search.trace.iter().map(|d| -0.5 * d).collect(),
    })
}

// Modified Gram-Schmidt; columns that collapse onto earlier ones are aliased.
fn check_rank(design: &[f64], n: usize, names: &[String]) -> Result<()> {
    let p = names.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..p {
        let mut col: Vec<f64> = (0..n).map(|i| design[i * p + j]).collect();
        let norm0 = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>());
        for q in &basis {
            let dot: f64 = col.iter().zip(q).map(|(a, b)| a * b).sum();
            col.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>());
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            aliased.push(names[j].clone());
        } else {
            col.iter_mut().for_each(|v| *v /= norm);
            basis.push(col);
        }
    }
    if aliased.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { levels: aliased })
    }
}

struct Prepared {
    n: usize,
    p: usize,
    /// `[X y]^T [X y]`.
    wtw: DMatrix<f64>,
    /// Position of the factor on the diagonal block.
    big: usize,
    big_counts: Vec<f64>,
    /// `Z_r^T [X y]` per factor.
    ztw: Vec<DMatrix<f64>>,
    /// Offsets of the remaining factors inside the dense block.
    offsets: Vec<(usize, usize)>,
    dense_size: usize,
    /// `Z_big^T Z_rest`.
    cross: DMatrix<f64>,
    /// `Z_rest^T Z_rest`.
    rest: DMatrix<f64>,
}

struct Evaluation {
    deviance: f64,
    sigma2: f64,
    beta: DVector<f64>,
    xtx_inv: DMatrix<f64>,
}

impl Prepared {
    fn new(problem: &LmmProblem) -> Self {
        let n = problem.response.len();
        let p = problem.column_names.len();
        let c = p + 1;
        let row = |i: usize, j: usize| if j < p { problem.design[i * p + j] } else { problem.response[i] };
        let mut wtw = DMatrix::zeros(c, c);
        for i in 0..n {
            for a in 0..c {
                let va = row(i, a);
                for b in a..c {
                    wtw[(a, b)] += va * row(i, b);
                }
            }
        }
        for a in 0..c {
            for b in 0..a {
                wtw[(a, b)] = wtw[(b, a)];
            }
        }
        let ztw = problem
            .random
            .iter()
            .map(|f| {
                let mut m = DMatrix::zeros(f.level_count, c);
                for i in 0..n {
                    for j in 0..c {
                        m[(f.levels[i], j)] += row(i, j);
                    }
                }
                m
            })
            .collect();
        let big = (0..problem.random.len()).max_by_key(|&r| (problem.random[r].level_count, usize::MAX - r)).unwrap_or(0);
        let mut big_counts = Vec::new();
        let mut offsets = Vec::new();
        let mut dense_size = 0;
        for (r, f) in problem.random.iter().enumerate() {
            if r == big {
                big_counts = vec![0.0; f.level_count];
                for &l in &f.levels {
                    big_counts[l] += 1.0;
                }
                offsets.push((usize::MAX, 0));
            } else {
                offsets.push((dense_size, f.level_count));
                dense_size += f.level_count;
            }
        }
        let mut cross = DMatrix::zeros(big_counts.len(), dense_size);
        let mut rest = DMatrix::zeros(dense_size, dense_size);
        for i in 0..n {
            let dense: Vec<usize> = problem
                .random
                .iter()
                .enumerate()
                .filter(|(r, _)| *r != big)
                .map(|(r, f)| offsets[r].0 + f.levels[i])
                .collect();
            for &a in &dense {
                if !big_counts.is_empty() {
                    cross[(problem.random[big].levels[i], a)] += 1.0;
                }
                for &b in &dense {
                    rest[(a, b)] += 1.0;
                }
            }
        }
        Self { n, p, wtw, big, big_counts, ztw, offsets, dense_size, cross, rest }
    }

    /// Profiled deviance (`-2 log L`) at relative scales `theta`.
    fn deviance(&self, theta: &[f64]) -> Option<Evaluation> {
        let c = self.p + 1;
        let mut g = self.wtw.clone();
        let mut log_det = 0.0;
        if !theta.is_empty() {
            let tb = theta[self.big];
            let d: Vec<f64> = self.big_counts.iter().map(|k| 1.0 + tb * tb * k).collect();
            log_det += d.iter().map(|v| libm::log(*v)).sum::<f64>();
            let u1 = &self.ztw[self.big] * tb;
            // Columns of the dense block scaled by their factor's theta.
            let mut scale = vec![0.0; self.dense_size];
            let mut u2 = DMatrix::zeros(self.dense_size, c);
            for (r, &(start, len)) in self.offsets.iter().enumerate() {
                if r == self.big {
                    continue;
                }
                for l in 0..len {
                    scale[start + l] = theta[r];
                    for j in 0..c {
                        u2[(start + l, j)] = theta[r] * self.ztw[r][(l, j)];
                    }
                }
            }
            // d^-1 u1
            let mut dinv_u1 = u1.clone();
            for (i, di) in d.iter().enumerate() {
                for j in 0..c {
                    dinv_u1[(i, j)] /= di;
                }
            }
            let mut correction = u1.transpose() * &dinv_u1;
            if self.dense_size > 0 {
                let mut b = self.cross.clone() * tb;
                for (col, s) in scale.iter().enumerate() {
                    b.column_mut(col).scale_mut(*s);
                }
                let mut dinv_b = b.clone();
                for (i, di) in d.iter().enumerate() {
                    dinv_b.row_mut(i).unscale_mut(*di);
                }
                let mut s = DMatrix::identity(self.dense_size, self.dense_size);
                for a in 0..self.dense_size {
                    for bb in 0..self.dense_size {
                        s[(a, bb)] += scale[a] * self.rest[(a, bb)] * scale[bb];
                    }
                }
                s -= b.transpose() * &dinv_b;
                let chol = s.cholesky()?;
                log_det += 2.0 * chol.l().diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
                // Schur complement solve of the block system for the full U^T M^-1 U.
                let rhs2 = &u2 - b.transpose() * &dinv_u1;
                let x2 = chol.solve(&rhs2);
                correction += rhs2.transpose() * &x2;
            }
            g -= correction;
        }
        let p = self.p;
        let xtx = g.view((0, 0), (p, p)).into_owned();
        let xty = g.view((0, p), (p, 1)).column(0).into_owned();
        let chol = xtx.cholesky()?;
        let beta = chol.solve(&xty);
        let rss = g[(p, p)] - beta.dot(&xty);
        let n = self.n as f64;
        let sigma2 = (rss / n).max(f64::MIN_POSITIVE);
        let deviance = log_det + n * (1.0 + libm::log(2.0 * PI * sigma2));
        if !deviance.is_finite() {
            return None;
        }
        Some(Evaluation { deviance, sigma2, beta, xtx_inv: chol.inverse() })
    }
}

struct Simplex {
    best: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

// Standard Nelder-Mead with reflection 1, expansion 2, contraction 1/2 and
// shrink 1/2. Stops when every vertex is within `tolerance` of the best one.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], step: f64, tolerance: f64, max_iterations: usize) -> Simplex {
    let dim = start.len();
    let mut points: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += step;
        points.push(v);
    }
    let mut values: Vec<f64> = points.iter().map(|x| f(x)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while iterations < max_iterations {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        points = order.iter().map(|&i| points[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let diameter = points[1..]
            .iter()
            .map(|v| v.iter().zip(&points[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; dim];
        for v in &points[..dim] {
            centroid.iter_mut().zip(v).for_each(|(c, x)| *c += x / dim as f64);
        }
        let worst = points[dim].clone();
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            if fe < fr {
                points[dim] = expanded;
                values[dim] = fe;
            } else {
                points[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            points[dim] = reflected;
            values[dim] = fr;
        } else {
            let (candidate, fc) = if fr < values[dim] {
                let c = combine(&centroid, &reflected, 0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = combine(&centroid, &worst, 0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < values[dim].min(fr) {
                points[dim] = candidate;
                values[dim] = fc;
            } else {
                for i in 1..=dim {
                    points[i] = combine(&points[0], &points[i], 0.5);
                    values[i] = f(&points[i]);
                }
            }
        }
        trace.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Simplex { best: points[best].clone(), iterations, converged, trace }
}

impl core::fmt::Display for LmmFit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>10} {:>9} {:>10}", "effect", "beta", "se", "z", "p")?;
        for e in &self.fixed {
            if e.reference {
                writeln!(f, "{:<24} {:>10.4} {:>10} {:>9} {:>10}", e.name, 0.0, "ref", "", "")?;
            } else {
                writeln!(f, "{:<24} {:>10.4} {:>10.4} {:>9.3} {:>10.3e}", e.name, e.beta, e.std_err, e.z, e.p_value)?;
            }
        }
        for c in &self.random {
            writeln!(f, "var({}) = {:.6e} over {} levels", c.factor, c.variance, c.levels)?;
        }
        writeln!(f, "var(residual) = {:.6e}", self.sigma2_resid)?;
        write!(
            f,
            "log-likelihood = {:.4}, n = {}, iterations = {}, converged = {}",
            self.log_likelihood, self.observations, self.iterations, self.converged
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{simulate_planted, PlantedDesign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn balanced_one_way_matches_closed_form() {
        let (a, m) = (6usize, 5usize);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for g in 0..a {
            let u = 2.0 * noise.sample(&mut rng);
            for _ in 0..m {
                y.push(1.0 + u + noise.sample(&mut rng));
                groups.push(g);
            }
        }
        let problem = LmmProblem {
            response: y.clone(),
            design: vec![1.0; y.len()],
            column_names: vec!["(intercept)".into()],
            random: vec![RandomFactor::from_labels("g", &groups)],
        };
        let fit = fit_lmm(&problem, 10_000, 1e-10).unwrap();
        assert!(fit.converged);

        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let means: Vec<f64> = (0..a).map(|g| y[g * m..(g + 1) * m].iter().sum::<f64>() / m as f64).collect();
        let ssw: f64 = (0..a).map(|g| y[g * m..(g + 1) * m].iter().map(|v| (v - means[g]).powi(2)).sum::<f64>()).sum();
        let ssb: f64 = means.iter().map(|mu| m as f64 * (mu - grand).powi(2)).sum();
        let msw = ssw / (a * (m - 1)) as f64;
        let sigma_u = (ssb / a as f64 - msw) / m as f64;
        assert!(sigma_u > 0.0);
        assert!((fit.sigma2_resid - msw).abs() < 1e-7 * msw, "{} vs {msw}", fit.sigma2_resid);
        assert!((fit.random[0].variance - sigma_u).abs() < 1e-7 * sigma_u);
        assert!((fit.fixed[0].beta - grand).abs() < 1e-9);
        // Closed-form maximised log-likelihood of the balanced model.
        let n = (a * m) as f64;
        let ll = -0.5
            * (n * libm::log(2.0 * PI)
                + a as f64 * (m as f64 - 1.0) * libm::log(msw)
                + a as f64 * libm::log(msw + m as f64 * sigma_u)
                + n);
        assert!((fit.log_likelihood - ll).abs() < 1e-8);
    }

    #[test]
    fn trace_never_decreases() {
        let design = PlantedDesign { instances_per_dataset: 30, ..PlantedDesign::default() };
        let fit = lmm_fit(&simulate_planted(&design), &LmmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(fit.random.iter().all(|c| c.variance >= 0.0));
        assert_eq!(fit.effect("random").unwrap().beta, 0.0);
    }

    #[test]
    fn missing_reference_is_rejected() {
        let design = PlantedDesign { instances_per_dataset: 5, ..PlantedDesign::default() };
        let opts = LmmOptions { reference: "nope".into(), ..LmmOptions::default() };
        assert!(matches!(lmm_fit(&simulate_planted(&design), &opts), Err(Error::MissingReference(_))));
    }

    #[test]
    fn single_level_factor_is_rejected() {
        let mut records = simulate_planted(&PlantedDesign { instances_per_dataset: 5, ..PlantedDesign::default() });
        records.iter_mut().for_each(|r| r.model = "only".into());
        assert!(matches!(
            lmm_fit(&records, &LmmOptions::default()),
            Err(Error::TooFewLevels { ref factor, found: 1 }) if factor == "model"
        ));
        let opts = LmmOptions { random: vec![RandomFactorKind::Instance, RandomFactorKind::Dataset], ..LmmOptions::default() };
        assert!(lmm_fit(&records, &opts).is_ok());
    }

    #[test]
    fn aliased_columns_are_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut design = Vec::new();
        for v in &x {
            design.extend([1.0, *v, 2.0 * v]);
        }
        let problem = LmmProblem {
            response: x.clone(),
            design,
            column_names: vec!["a".into(), "b".into(), "c".into()],
            random: Vec::new(),
        };
        match fit_lmm(&problem, 100, 1e-8) {
            Err(Error::RankDeficient { levels }) => assert_eq!(levels, vec![String::from("c")]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_random_factor_is_ols() {
        let problem = LmmProblem {
            response: vec![1.0, 2.0, 4.0, 3.0],
            design: vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0],
            column_names: vec!["i".into(), "x".into()],
            random: Vec::new(),
        };
        let fit = fit_lmm(&problem, 100, 1e-8).unwrap();
        assert!((fit.fixed[1].beta - 0.8).abs() < 1e-12);
        assert!((fit.fixed[0].beta - 1.3).abs() < 1e-12);
    }
}
