//! Rasch (1PL) calibration by joint MAP estimation.
//!
//! P(correct_ij) = logistic(θ_j − b_i), with independent N(0, s²) priors on
//! every θ and b. The posterior is strictly concave, so the optimizer
//! alternates exact-ish Newton sweeps over abilities and difficulties; each
//! coordinate update is a damped Newton step that never lowers the
//! objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PsychError, ResponseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaschConfig {
    pub prior_sd: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest parameter change in a sweep.
    pub tol: f64,
    pub seed: u64,
    /// Half-width of the uniform jitter added to the zero start.
    pub jitter: f64,
}

impl Default for RaschConfig {
    fn default() -> Self {
        RaschConfig {
            prior_sd: 1.0,
            max_iters: 5000,
            tol: 1e-6,
            seed: 0,
            jitter: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub prior_sd: f64,
    pub n_iters: usize,
    pub converged: bool,
    pub final_nll: f64,
}

/// Fitted abilities (`subjects`) and difficulties (`items`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtFit {
    pub subjects: BTreeMap<String, f64>,
    pub items: BTreeMap<String, f64>,
    pub meta: FitMeta,
    /// Log-posterior after each sweep; not part of the fit file.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl IrtFit {
    pub fn theta(&self, subject: &str) -> Option<f64> {
        self.subjects.get(subject).copied()
    }

    pub fn b(&self, item: &str) -> Option<f64> {
        self.items.get(item).copied()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-likelihood of one response at logit `x`.
fn cell_ll(y: u8, x: f64) -> f64 {
    if y == 1 {
        -softplus(-x)
    } else {
        -softplus(x)
    }
}

/// Penalized log-likelihood (log-posterior up to a constant).
/// `theta` is indexed by subject row, `b` by item column.
pub fn log_posterior(m: &ResponseMatrix, theta: &[f64], b: &[f64], prior_sd: f64) -> f64 {
    let ll: f64 = m
        .rows()
        .iter()
        .zip(theta)
        .map(|(row, &t)| row.iter().zip(b).map(|(&y, &bi)| cell_ll(y, t - bi)).sum::<f64>())
        .sum();
    let v = prior_sd * prior_sd;
    let prior = theta.iter().chain(b).map(|x| x * x).sum::<f64>() / (2.0 * v);
    ll - prior
}

/// Analytic gradient of [`log_posterior`] with respect to (θ, b).
pub fn log_posterior_gradient(
    m: &ResponseMatrix,
    theta: &[f64],
    b: &[f64],
    prior_sd: f64,
) -> (Vec<f64>, Vec<f64>) {
    let v = prior_sd * prior_sd;
    let mut gt: Vec<f64> = theta.iter().map(|t| -t / v).collect();
    let mut gb: Vec<f64> = b.iter().map(|x| -x / v).collect();
    for (j, row) in m.rows().iter().enumerate() {
        for (i, &y) in row.iter().enumerate() {
            let r = y as f64 - logistic(theta[j] - b[i]);
            gt[j] += r;
            gb[i] -= r;
        }
    }
    (gt, gb)
}

/// Maximizes a concave 1-D function starting from `x`, given a closure that
/// returns (value, first derivative, second derivative). Returns the new
/// point; never returns a point with a lower value.
fn newton_1d(x: f64, f: impl Fn(f64) -> (f64, f64, f64)) -> f64 {
    let (f0, g, h) = f(x);
    if g == 0.0 {
        return x;
    }
    let mut step = -g / h.min(-1e-12);
    for _ in 0..30 {
        let cand = x + step;
        if f(cand).0 >= f0 {
            return cand;
        }
        step *= 0.5;
    }
    x
}

fn sweep_theta(m: &ResponseMatrix, theta: &mut [f64], b: &[f64], inv_v: f64) -> f64 {
    let mut max_change: f64 = 0.0;
    for (j, row) in m.rows().iter().enumerate() {
        let f = |t: f64| {
            let (mut val, mut g, mut h) = (-0.5 * t * t * inv_v, -t * inv_v, -inv_v);
            for (&y, &bi) in row.iter().zip(b) {
                let x = t - bi;
                let p = logistic(x);
                val += cell_ll(y, x);
                g += y as f64 - p;
                h -= p * (1.0 - p);
            }
            (val, g, h)
        };
        let new = newton_1d(theta[j], f);
        max_change = max_change.max((new - theta[j]).abs());
        theta[j] = new;
    }
    max_change
}

fn sweep_b(m: &ResponseMatrix, theta: &[f64], b: &mut [f64], inv_v: f64) -> f64 {
    let mut max_change: f64 = 0.0;
    let rows = m.rows();
    for i in 0..b.len() {
        let f = |bi: f64| {
            let (mut val, mut g, mut h) = (-0.5 * bi * bi * inv_v, -bi * inv_v, -inv_v);
            for (row, &t) in rows.iter().zip(theta) {
                let x = t - bi;
                let p = logistic(x);
                val += cell_ll(row[i], x);
                g -= row[i] as f64 - p;
                h -= p * (1.0 - p);
            }
            (val, g, h)
        };
        let new = newton_1d(b[i], f);
        max_change = max_change.max((new - b[i]).abs());
        b[i] = new;
    }
    max_change
}

/// Joint MAP fit. Not reaching `tol` within `max_iters` is reported through
/// `meta.converged` rather than as an error.
pub fn fit_rasch_1pl(m: &ResponseMatrix, config: &RaschConfig) -> Result<IrtFit, PsychError> {
    if m.n_subjects() < 2 || m.n_items() < 2 {
        return Err(PsychError::DegenerateMatrix {
            subjects: m.n_subjects(),
            items: m.n_items(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut jitter = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if config.jitter > 0.0 {
                    rng.random_range(-config.jitter..=config.jitter)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut theta = jitter(m.n_subjects());
    let mut b = jitter(m.n_items());
    let inv_v = 1.0 / (config.prior_sd * config.prior_sd);

    let mut trace = vec![log_posterior(m, &theta, &b, config.prior_sd)];
    let mut converged = false;
    let mut n_iters = 0;
    while n_iters < config.max_iters {
        n_iters += 1;
        let dt = sweep_theta(m, &mut theta, &b, inv_v);
        let db = sweep_b(m, &theta, &mut b, inv_v);
        trace.push(log_posterior(m, &theta, &b, config.prior_sd));
        if dt.max(db) < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("rasch fit stopped after {n_iters} sweeps without reaching tol {}", config.tol);
    }
    let final_nll = -*trace.last().expect("trace has the start point");
    Ok(IrtFit {
        subjects: m.subjects().iter().cloned().zip(theta).collect(),
        items: m.items().iter().cloned().zip(b).collect(),
        meta: FitMeta {
            prior_sd: config.prior_sd,
            n_iters,
            converged,
            final_nll,
        },
        trace,
    })
}

/// logistic(θ − b), kept strictly inside (0, 1).
pub fn predict_prob(fit: &IrtFit, subject: &str, item: &str) -> Result<f64, PsychError> {
    let t = fit.theta(subject).ok_or_else(|| PsychError::UnknownId(subject.to_string()))?;
    let b = fit.b(item).ok_or_else(|| PsychError::UnknownId(item.to_string()))?;
    Ok(logistic(t - b).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}
