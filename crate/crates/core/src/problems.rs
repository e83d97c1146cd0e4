//! Local cost ensembles `f(x) = (1/n) Σᵢ fᵢ(x)` and their gradient oracles.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{Domain, Streams};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem parameters: {0}")]
    InvalidParameters(String),
    #[error("sum of local Hessians is singular")]
    SingularHessianSum,
    #[error(
        "reference solve stopped after {iters} iterations with ‖∇f‖ = {grad_norm:e} > {tol:e}"
    )]
    NoConvergence {
        iters: usize,
        grad_norm: f64,
        tol: f64,
    },
    #[error("dataset file: {0}")]
    Dataset(String),
}

/// Per-agent data for the regularized logistic classification cost
/// `fᵢ(x) = (1/m) Σⱼ log(1 + exp(−uᵢⱼ xᵀvᵢⱼ)) + Σₛ λα xₛ² / (1 + α xₛ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationData {
    /// One `m × d` feature matrix per agent.
    pub features: Vec<DMatrix<f64>>,
    /// Labels in `{−1, +1}`, one vector per agent.
    pub labels: Vec<DVector<f64>>,
    pub lambda: f64,
    pub alpha: f64,
}

/// `fᵢ(x) = ½ (x − cᵢ)ᵀ Aᵢ (x − cᵢ)` with symmetric positive definite `Aᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticData {
    pub hessians: Vec<DMatrix<f64>>,
    pub centers: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemData {
    Classification(ClassificationData),
    Quadratic(QuadraticData),
}

/// Closed-form or numerically solved global optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub f_star: f64,
}

impl Reference {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    d: usize,
    data: ProblemData,
    smoothness_hint: Option<f64>,
}

/// Spectrum and heterogeneity of a random quadratic ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    /// Hessian eigenvalues are spaced linearly in `[eigen_min, eigen_max]`.
    pub eigen_min: f64,
    pub eigen_max: f64,
    /// Scale of the per-agent center offsets.
    pub heterogeneity: f64,
    /// All agents share one Hessian and the offsets sum to zero, so the
    /// global cost (and minimizer) is the same for every agent count.
    #[serde(default)]
    pub shared_curvature: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_iterator(
        d,
        d,
        (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let q = g.qr().q();
    let eig = DVector::from_iterator(
        d,
        (0..d).map(|j| {
            if d == 1 {
                lo
            } else {
                lo + (hi - lo) * j as f64 / (d - 1) as f64
            }
        }),
    );
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

/// Random logistic classification ensemble: standard Gaussian features,
/// uniform ±1 labels drawn independently of the features.
pub fn make_classification_problem(
    n: usize,
    m: usize,
    d: usize,
    lambda: f64,
    alpha: f64,
    streams: &Streams,
) -> Result<Problem, ProblemError> {
    if n == 0 || m == 0 || d == 0 {
        return Err(ProblemError::InvalidParameters(
            "n, m, d must be positive".into(),
        ));
    }
    if !(lambda >= 0.0) || !(alpha >= 0.0) {
        return Err(ProblemError::InvalidParameters(
            "lambda and alpha must be non-negative".into(),
        ));
    }
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.stream(Domain::Dataset, i as u64, 0);
        features.push(DMatrix::from_fn(m, d, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }));
        labels.push(DVector::from_fn(m, |_, _| {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }));
    }
    Problem::classification(ClassificationData {
        features,
        labels,
        lambda,
        alpha,
    })
}

/// Random strongly convex quadratic ensemble.
pub fn make_quadratic_problem(
    n: usize,
    d: usize,
    spec: &QuadraticSpec,
    streams: &Streams,
) -> Result<Problem, ProblemError> {
    if n == 0 || d == 0 {
        return Err(ProblemError::InvalidParameters(
            "n and d must be positive".into(),
        ));
    }
    if !(spec.eigen_min > 0.0) || !(spec.eigen_max >= spec.eigen_min) {
        return Err(ProblemError::InvalidParameters(format!(
            "spectrum [{}, {}] must be positive and ordered",
            spec.eigen_min, spec.eigen_max
        )));
    }
    if !(spec.heterogeneity >= 0.0) {
        return Err(ProblemError::InvalidParameters(
            "heterogeneity must be non-negative".into(),
        ));
    }
    // The shared part is drawn from a stream that does not depend on n.
    let mut base = streams.stream(Domain::Dataset, u64::MAX, 0);
    let shared_hessian = random_spd(d, spec.eigen_min, spec.eigen_max, &mut base);
    let shared_center = gaussian_vector(d, &mut base);

    let mut hessians = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.stream(Domain::Dataset, i as u64, 0);
        let h = if spec.shared_curvature {
            shared_hessian.clone()
        } else {
            random_spd(d, spec.eigen_min, spec.eigen_max, &mut rng)
        };
        hessians.push(h);
        offsets.push(gaussian_vector(d, &mut rng) * spec.heterogeneity);
    }
    if spec.shared_curvature {
        let mean = offsets.iter().fold(DVector::zeros(d), |acc, o| acc + o) / n as f64;
        for o in &mut offsets {
            *o -= &mean;
        }
    }
    let centers = offsets.into_iter().map(|o| &shared_center + o).collect();
    Problem::quadratic(QuadraticData { hessians, centers })
}

impl Problem {
    pub fn classification(data: ClassificationData) -> Result<Self, ProblemError> {
        let n = data.features.len();
        if n == 0 || data.labels.len() != n {
            return Err(ProblemError::InvalidParameters(
                "one feature matrix and label vector per agent".into(),
            ));
        }
        let d = data.features[0].ncols();
        for (f, l) in data.features.iter().zip(&data.labels) {
            if f.ncols() != d || f.nrows() != l.len() || f.nrows() == 0 {
                return Err(ProblemError::InvalidParameters(
                    "inconsistent dataset shapes".into(),
                ));
            }
            if l.iter().any(|&u| u != 1.0 && u != -1.0) {
                return Err(ProblemError::InvalidParameters("labels must be ±1".into()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::InvalidParameters(
                    "features must be finite".into(),
                ));
            }
        }
        let hint = data
            .features
            .iter()
            .map(|v| {
                let gram = v.transpose() * v / v.nrows() as f64;
                gram.symmetric_eigenvalues().max()
            })
            .fold(0.0, f64::max)
            / 4.0
            + 2.0 * data.lambda * data.alpha;
        Ok(Self {
            n,
            d,
            data: ProblemData::Classification(data),
            smoothness_hint: Some(hint),
        })
    }

    pub fn quadratic(data: QuadraticData) -> Result<Self, ProblemError> {
        let n = data.hessians.len();
        if n == 0 || data.centers.len() != n {
            return Err(ProblemError::InvalidParameters(
                "one Hessian and center per agent".into(),
            ));
        }
        let d = data.centers[0].len();
        for (a, c) in data.hessians.iter().zip(&data.centers) {
            if a.nrows() != d || a.ncols() != d || c.len() != d {
                return Err(ProblemError::InvalidParameters(
                    "inconsistent quadratic shapes".into(),
                ));
            }
        }
        let hint = data
            .hessians
            .iter()
            .map(|a| a.clone().symmetric_eigenvalues().max())
            .fold(0.0, f64::max);
        let problem = Self {
            n,
            d,
            data: ProblemData::Quadratic(data),
            smoothness_hint: Some(hint),
        };
        problem.closed_form_optimum().transpose()?;
        Ok(problem)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    /// Documented estimate of the smoothness constant `L_f`.
    pub fn smoothness_hint(&self) -> Option<f64> {
        self.smoothness_hint
    }

    pub fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        match &self.data {
            ProblemData::Classification(c) => {
                let v = &c.features[i];
                let u = &c.labels[i];
                let margins = v * x;
                let loss = margins
                    .iter()
                    .zip(u.iter())
                    .map(|(&z, &ui)| softplus(-ui * z))
                    .sum::<f64>()
                    / v.nrows() as f64;
                let reg: f64 = x
                    .iter()
                    .map(|&s| c.lambda * c.alpha * s * s / (1.0 + c.alpha * s * s))
                    .sum();
                loss + reg
            }
            ProblemData::Quadratic(q) => {
                let e = x - &q.centers[i];
                0.5 * e.dot(&(&q.hessians[i] * &e))
            }
        }
    }

    pub fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match &self.data {
            ProblemData::Classification(c) => {
                let v = &c.features[i];
                let u = &c.labels[i];
                let margins = v * x;
                // d/dz log(1+exp(-u z)) = -u σ(-u z)
                let weights = DVector::from_iterator(
                    v.nrows(),
                    margins
                        .iter()
                        .zip(u.iter())
                        .map(|(&z, &ui)| -ui * sigmoid(-ui * z)),
                );
                let mut g = v.tr_mul(&weights) / v.nrows() as f64;
                for (gs, &s) in g.iter_mut().zip(x.iter()) {
                    let den = 1.0 + c.alpha * s * s;
                    *gs += 2.0 * c.lambda * c.alpha * s / (den * den);
                }
                g
            }
            ProblemData::Quadratic(q) => &q.hessians[i] * (x - &q.centers[i]),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.n).map(|i| self.local_value(i, x)).sum::<f64>() / self.n as f64
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (0..self.n).fold(DVector::zeros(self.d), |acc, i| {
            acc + self.local_gradient(i, x)
        }) / self.n as f64
    }

    /// `x* = (Σ Aᵢ)⁻¹ Σ Aᵢ cᵢ` for quadratic ensembles.
    pub fn closed_form_optimum(&self) -> Option<Result<Reference, ProblemError>> {
        let ProblemData::Quadratic(q) = &self.data else {
            return None;
        };
        let sum_a = q
            .hessians
            .iter()
            .fold(DMatrix::zeros(self.d, self.d), |acc, a| acc + a);
        let sum_ac = q
            .hessians
            .iter()
            .zip(&q.centers)
            .fold(DVector::zeros(self.d), |acc, (a, c)| acc + a * c);
        Some(match sum_a.cholesky() {
            Some(chol) => {
                let x = chol.solve(&sum_ac);
                let f = self.value(&x);
                Ok(Reference {
                    x_star: x.iter().cloned().collect(),
                    f_star: f,
                })
            }
            None => Err(ProblemError::SingularHessianSum),
        })
    }

    /// Smallest eigenvalue of the average Hessian (the P-Ł constant) for
    /// quadratic ensembles.
    pub fn pl_constant(&self) -> Option<f64> {
        let ProblemData::Quadratic(q) = &self.data else {
            return None;
        };
        let avg = q
            .hessians
            .iter()
            .fold(DMatrix::zeros(self.d, self.d), |acc, a| acc + a)
            / self.n as f64;
        Some(avg.symmetric_eigenvalues().min())
    }

    /// Closed form when available, otherwise a descent solve from the origin.
    pub fn reference(&self, tol: f64, max_iters: usize) -> Result<Reference, ProblemError> {
        match self.closed_form_optimum() {
            Some(r) => r,
            None => solve_reference_optimum(self, &DVector::zeros(self.d), tol, max_iters),
        }
    }

    /// Keeps only the first `n` agents.
    pub fn truncated(&self, n: usize) -> Result<Self, ProblemError> {
        if n == 0 || n > self.n {
            return Err(ProblemError::InvalidParameters(format!(
                "cannot keep {n} of {} agents",
                self.n
            )));
        }
        match &self.data {
            ProblemData::Classification(c) => Self::classification(ClassificationData {
                features: c.features[..n].to_vec(),
                labels: c.labels[..n].to_vec(),
                lambda: c.lambda,
                alpha: c.alpha,
            }),
            ProblemData::Quadratic(q) => Self::quadratic(QuadraticData {
                hessians: q.hessians[..n].to_vec(),
                centers: q.centers[..n].to_vec(),
            }),
        }
    }

    /// Reorders agents: new agent `perm[i]` is old agent `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        fn apply<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
            let mut out: Vec<Option<T>> = vec![None; items.len()];
            for (i, item) in items.iter().enumerate() {
                out[perm[i]] = Some(item.clone());
            }
            out.into_iter()
                .map(|t| t.expect("perm is a permutation"))
                .collect()
        }
        let data = match &self.data {
            ProblemData::Classification(c) => ProblemData::Classification(ClassificationData {
                features: apply(&c.features, perm),
                labels: apply(&c.labels, perm),
                lambda: c.lambda,
                alpha: c.alpha,
            }),
            ProblemData::Quadratic(q) => ProblemData::Quadratic(QuadraticData {
                hessians: apply(&q.hessians, perm),
                centers: apply(&q.centers, perm),
            }),
        };
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn to_dataset(&self) -> Dataset {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().cloned().collect()).collect()
        };
        match &self.data {
            ProblemData::Classification(c) => Dataset::Classification {
                lambda: c.lambda,
                alpha: c.alpha,
                features: c.features.iter().map(rows).collect(),
                labels: c
                    .labels
                    .iter()
                    .map(|l| l.iter().map(|&u| u as i8).collect())
                    .collect(),
            },
            ProblemData::Quadratic(q) => Dataset::Quadratic {
                hessians: q.hessians.iter().map(rows).collect(),
                centers: q
                    .centers
                    .iter()
                    .map(|c| c.iter().cloned().collect())
                    .collect(),
            },
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self, ProblemError> {
        let matrix = |rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>, ProblemError> {
            let r = rows.len();
            let c = rows.first().map_or(0, |x| x.len());
            if rows.iter().any(|x| x.len() != c) {
                return Err(ProblemError::Dataset("ragged matrix".into()));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        match ds {
            Dataset::Classification {
                lambda,
                alpha,
                features,
                labels,
            } => Self::classification(ClassificationData {
                features: features.iter().map(matrix).collect::<Result<_, _>>()?,
                labels: labels
                    .iter()
                    .map(|l| DVector::from_iterator(l.len(), l.iter().map(|&u| u as f64)))
                    .collect(),
                lambda: *lambda,
                alpha: *alpha,
            }),
            Dataset::Quadratic { hessians, centers } => Self::quadratic(QuadraticData {
                hessians: hessians.iter().map(matrix).collect::<Result<_, _>>()?,
                centers: centers
                    .iter()
                    .map(|c| DVector::from_column_slice(c))
                    .collect(),
            }),
        }
    }

    pub fn save_dataset(&self, path: &Path) -> Result<(), ProblemError> {
        let text = serde_json::to_string(&self.to_dataset())
            .map_err(|e| ProblemError::Dataset(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| ProblemError::Dataset(format!("{}: {e}", path.display())))
    }

    pub fn load_dataset(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProblemError::Dataset(format!("{}: {e}", path.display())))?;
        let ds: Dataset =
            serde_json::from_str(&text).map_err(|e| ProblemError::Dataset(e.to_string()))?;
        Self::from_dataset(&ds)
    }

    /// SHA-256 of the canonical dataset JSON, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.to_dataset()).expect("dataset serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Portable dataset file: everything needed to rebuild a [`Problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dataset {
    Classification {
        lambda: f64,
        alpha: f64,
        /// `[agent][sample][coordinate]`
        features: Vec<Vec<Vec<f64>>>,
        /// `[agent][sample]`, each ±1
        labels: Vec<Vec<i8>>,
    },
    Quadratic {
        hessians: Vec<Vec<Vec<f64>>>,
        centers: Vec<Vec<f64>>,
    },
}

/// Additive Gaussian noise (and optional constant bias) on local gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-coordinate variance σ².
    pub variance: f64,
    /// Constant added to every coordinate of every stochastic gradient.
    #[serde(default)]
    pub bias: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            variance: 0.0,
            bias: 0.0,
        }
    }

    pub fn gaussian(variance: f64) -> Self {
        Self {
            variance,
            bias: 0.0,
        }
    }

    /// From a standard deviation instead of a variance.
    pub fn from_std_dev(sigma: f64) -> Self {
        Self::gaussian(sigma * sigma)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.variance >= 0.0) || !self.variance.is_finite() || !self.bias.is_finite() {
            return Err(ProblemError::InvalidParameters(format!(
                "bad noise spec {self:?}"
            )));
        }
        Ok(())
    }
}

/// Stochastic gradient oracle. The draw for `(agent, round)` comes from its
/// own keyed stream, so gradients are reproducible and mutually independent.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracle<'a> {
    pub problem: &'a Problem,
    pub noise: NoiseSpec,
    pub streams: Streams,
}

impl<'a> NoisyOracle<'a> {
    pub fn new(problem: &'a Problem, noise: NoiseSpec, streams: Streams) -> Self {
        Self {
            problem,
            noise,
            streams,
        }
    }

    pub fn exact(problem: &'a Problem) -> Self {
        Self::new(problem, NoiseSpec::none(), Streams::new(0))
    }

    /// `∇fᵢ(x) + δ + bias` with `δ ~ N(0, σ² I)`.
    pub fn stochastic_gradient(&self, agent: usize, x: &DVector<f64>, round: u64) -> DVector<f64> {
        let mut g = self.problem.local_gradient(agent, x);
        if self.noise.variance > 0.0 {
            let sigma = self.noise.std_dev();
            let mut rng = self
                .streams
                .stream(Domain::GradientNoise, agent as u64, round);
            for gs in g.iter_mut() {
                *gs += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if self.noise.bias != 0.0 {
            g.add_scalar_mut(self.noise.bias);
        }
        g
    }
}

/// Centralized full-gradient descent with Armijo backtracking, run until
/// `‖∇f‖ ≤ tol`.
pub fn solve_reference_optimum(
    problem: &Problem,
    start: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Reference, ProblemError> {
    // For t ≤ 1/L the Armijo condition holds, so that is where backtracking stops.
    let floor = problem.smoothness_hint().map_or(1e-12, |l| 1.0 / l);
    let mut x = start.clone();
    let mut fx = problem.value(&x);
    let mut t = floor;
    for _ in 0..max_iters {
        let g = problem.gradient(&x);
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= tol {
            return Ok(Reference {
                x_star: x.iter().cloned().collect(),
                f_star: fx,
            });
        }
        t = (t * 2.0).min(floor * 1e3);
        loop {
            let candidate = &x - &g * t;
            let fc = problem.value(&candidate);
            if fc <= fx - 0.5 * t * gn2 || t <= floor {
                x = candidate;
                fx = fc;
                break;
            }
            t = (t * 0.5).max(floor);
        }
    }
    let grad_norm = problem.gradient(&x).norm();
    if grad_norm <= tol {
        return Ok(Reference {
            x_star: x.iter().cloned().collect(),
            f_star: fx,
        });
    }
    Err(ProblemError::NoConvergence {
        iters: max_iters,
        grad_norm,
        tol,
    })
}
