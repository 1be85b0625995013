//! Numerical check of the linear-rate bound for noisy gradient descent on
//! strongly convex quadratic clients.
//!
//! Client `m` holds `f_m(w) = ½ wᵀ A_m w − b_mᵀ w` with `μ I ⪯ A_m ⪯ L I`.
//! The global objective is `F = Σ α_m f_m`. The simulated update is
//! `w ← w − η ∇F(w) + η ξ` with `η = 1/L` and `ξ` zero-mean Gaussian with
//! `E‖ξ‖² = σ² / M`. The bound being checked is
//!
//! ```text
//! E[F(w_R) − F(w*)] ≤ (1 − μ/L)^R (F(w_0) − F(w*)) + σ² / (μ M)
//! ```

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub alpha: Vec<f64>,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub noise_scale: f64,
}

fn gaussian_vector(dim: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
fn random_orthogonal(dim: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let g = DMatrix::from_iterator(dim, dim, (0..dim * dim).map(|_| StandardNormal.sample(rng)));
    g.qr().q()
}

/// Builds `clients` quadratics of dimension `dim`, each with a spectrum drawn
/// uniformly from `[mu, l]`, equal weights `α_m = 1/M`, and a shared minimizer
/// perturbed by `heterogeneity`.
pub fn gen_quadratic_clients(
    clients: usize,
    dim: usize,
    mu: f64,
    l: f64,
    heterogeneity: f64,
    seed: u64,
) -> Result<QuadraticProblem> {
    if clients == 0 || dim == 0 {
        return Err(Error::config("clients and dim must be positive"));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(Error::config(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    if !(heterogeneity >= 0.0) {
        return Err(Error::config("heterogeneity must be >= 0"));
    }
    let mut rng = rng_for(seed, &[stream::DATASET]);
    let common = gaussian_vector(dim, &mut rng);
    let mut a = Vec::with_capacity(clients);
    let mut b = Vec::with_capacity(clients);
    for _ in 0..clients {
        let am = if mu == l {
            DMatrix::identity(dim, dim) * l
        } else {
            let q = random_orthogonal(dim, &mut rng);
            let eig = DVector::from_iterator(
                dim,
                (0..dim).map(|_| rand::Rng::random_range(&mut rng, mu..=l)),
            );
            let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            (&m + m.transpose()) * 0.5
        };
        let noise = gaussian_vector(dim, &mut rng);
        b.push(&am * &common + noise * heterogeneity);
        a.push(am);
    }
    Ok(QuadraticProblem {
        a,
        b,
        alpha: vec![1.0 / clients as f64; clients],
        smoothness: l,
        strong_convexity: mu,
        noise_scale: 0.0,
    })
}

impl QuadraticProblem {
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_scale = sigma;
        self
    }

    pub fn clients(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.b.first().map_or(0, |v| v.len())
    }

    /// Checks `μ I ⪯ A_m ⪯ L I` (to 1e-9) and `Σ α = 1` (to 1e-12).
    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.b.len() || self.a.len() != self.alpha.len() || self.a.is_empty() {
            return Err(Error::shape("per-client arrays differ in length"));
        }
        if (self.alpha.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("aggregation weights must sum to 1"));
        }
        for (m, am) in self.a.iter().enumerate() {
            let eig = am.clone().symmetric_eigen().eigenvalues;
            let tol = 1e-9 * self.smoothness.max(1.0);
            if eig
                .iter()
                .any(|&e| e < self.strong_convexity - tol || e > self.smoothness + tol)
            {
                return Err(Error::config(format!(
                    "client {m} spectrum leaves [mu, L]"
                )));
            }
        }
        Ok(())
    }

    /// `(Σ α_m A_m, Σ α_m b_m)`.
    pub fn aggregate(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        let mut c = DVector::zeros(d);
        for ((am, bm), al) in self.a.iter().zip(&self.b).zip(&self.alpha) {
            h += am * *al;
            c += bm * *al;
        }
        (h, c)
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        let (h, c) = self.aggregate();
        0.5 * w.dot(&(&h * w)) - c.dot(w)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let (h, c) = self.aggregate();
        &h * w - c
    }
}

/// Minimizer of `F`, solving `(Σ α A) w = Σ α b` by Cholesky.
pub fn global_optimum(problem: &QuadraticProblem) -> Result<DVector<f64>> {
    let (h, c) = problem.aggregate();
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("aggregate Hessian is not positive definite".into()))?;
    let w = chol.solve(&c);
    let residual = (&h * &w - &c).norm();
    if !(residual <= 1e-10 * c.norm().max(1.0)) {
        return Err(Error::Numeric(format!("solve residual {residual:e} too large")));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `F(w_r) − F(w*)` for `r = 0..=R`.
    pub gaps: Vec<f64>,
    /// Bound value at each round.
    pub bounds: Vec<f64>,
}

/// `(1 − μ/L)^r · gap0 + σ² / (μ M)`.
pub fn rate_bound(problem: &QuadraticProblem, gap0: f64, r: usize) -> f64 {
    let rho = 1.0 - problem.strong_convexity / problem.smoothness;
    rho.powi(r as i32) * gap0 + noise_floor(problem)
}

pub fn noise_floor(problem: &QuadraticProblem) -> f64 {
    let s = problem.noise_scale;
    s * s / (problem.strong_convexity * problem.clients() as f64)
}

/// Runs `rounds` noisy gradient steps from `w_0 = 0` with step `1/L`.
pub fn run_bound_check(problem: &QuadraticProblem, rounds: usize, seed: u64) -> Result<TrajectoryRecord> {
    if rounds < 1 {
        return Err(Error::config("rounds must be >= 1"));
    }
    let w_star = global_optimum(problem)?;
    let (h, c) = problem.aggregate();
    let f = |w: &DVector<f64>| 0.5 * w.dot(&(&h * w)) - c.dot(w);
    let f_star = f(&w_star);
    // F(w) − F(w*) = ½ (w − w*)ᵀ H (w − w*) for a quadratic; this form avoids cancellation
    let gap = |w: &DVector<f64>| {
        let e = w - &w_star;
        0.5 * e.dot(&(&h * &e))
    };
    debug_assert!((gap(&DVector::zeros(problem.dim())) - (f(&DVector::zeros(problem.dim())) - f_star)).abs() < 1e-6);

    let eta = 1.0 / problem.smoothness;
    let dim = problem.dim();
    let per_coord = problem.noise_scale / ((problem.clients() * dim) as f64).sqrt();
    let normal = Normal::new(0.0, per_coord).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = rng_for(seed, &[stream::NOISE]);

    let mut w = DVector::zeros(dim);
    let gap0 = gap(&w);
    let mut gaps = Vec::with_capacity(rounds + 1);
    let mut bounds = Vec::with_capacity(rounds + 1);
    gaps.push(gap0);
    bounds.push(rate_bound(problem, gap0, 0));
    for r in 1..=rounds {
        let grad = &h * &w - &c;
        w -= grad * eta;
        if problem.noise_scale > 0.0 {
            let xi = DVector::from_iterator(dim, (0..dim).map(|_| normal.sample(&mut rng)));
            w += xi * eta;
        }
        gaps.push(gap(&w));
        bounds.push(rate_bound(problem, gap0, r));
    }
    Ok(TrajectoryRecord { gaps, bounds })
}

/// Per-round mean gap over many independent noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRecord {
    pub trials: usize,
    pub mean_gaps: Vec<f64>,
    pub bounds: Vec<f64>,
    pub noise_floor: f64,
}

pub fn monte_carlo_bound_check(
    problem: &QuadraticProblem,
    rounds: usize,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<MonteCarloRecord> {
    let mut sum: Vec<f64> = Vec::new();
    let mut bounds = Vec::new();
    let mut trials = 0;
    for s in seeds {
        let rec = run_bound_check(problem, rounds, s)?;
        if sum.is_empty() {
            sum = vec![0.0; rec.gaps.len()];
            bounds = rec.bounds.clone();
        }
        for (a, g) in sum.iter_mut().zip(&rec.gaps) {
            *a += g;
        }
        trials += 1;
    }
    if trials == 0 {
        return Err(Error::config("at least one seed is required"));
    }
    Ok(MonteCarloRecord {
        trials,
        mean_gaps: sum.into_iter().map(|s| s / trials as f64).collect(),
        bounds,
        noise_floor: noise_floor(problem),
    })
}
