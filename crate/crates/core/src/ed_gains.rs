//! Deflection-maximizing power allocation for the energy detector.
//!
//! The large-`M` deflection is bounded above by `σ⁴_θ (xᵀd)² / xᵀB̃x` on
//! `eᵀx = P`, where `B̃ = B + σ⁴_n/(M P²) eeᵀ`. The ratio is scale-invariant,
//! so the allocation is the solution of
//!
//! ```text
//! min −xᵀd   s.t.   xᵀB̃x ≤ 1,  x ≥ 0
//! ```
//!
//! rescaled to total power `P`. `B̃` is diagonal plus rank one, so every
//! linear solve below is `O(N)`.

use serde::{Deserialize, Serialize};

use crate::energy::{DeflectionMetric, DeflectionTerms};
use crate::error::{Error, Result};
use crate::scenario::{GainVector, Scenario};

/// Certificate tolerance, relative to `max d_i`.
pub const KKT_TOL: f64 = 1e-8;
const PG_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EdAllocationProblem {
    pub d_vec: Vec<f64>,
    pub b_diag: Vec<f64>,
    pub b_vec: Vec<f64>,
    /// Weight `σ⁴_n/(M P²)` of the all-ones outer product in `B̃`.
    pub rank_one: f64,
    pub p: f64,
    pub m: usize,
    pub metric: DeflectionMetric,
    signal_var: f64,
    fc_noise_var: f64,
}

impl EdAllocationProblem {
    pub fn new(scenario: &Scenario, m: usize, p: f64, metric: DeflectionMetric) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("sum power must be positive, got {p}")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("antenna count must be at least 1".into()));
        }
        let t = DeflectionTerms::new(scenario, metric);
        let sn2 = scenario.fc_noise_var();
        Ok(EdAllocationProblem {
            d_vec: t.d,
            b_diag: t.b_diag,
            b_vec: t.b,
            rank_one: sn2 * sn2 / (m as f64 * p * p),
            p,
            m,
            metric,
            signal_var: scenario.signal_var(),
            fc_noise_var: sn2,
        })
    }

    pub fn n(&self) -> usize {
        self.d_vec.len()
    }

    /// `B̃ x`.
    pub fn b_tilde_mul(&self, x: &[f64]) -> Vec<f64> {
        let s: f64 = x.iter().sum();
        x.iter()
            .zip(&self.b_diag)
            .map(|(xi, bi)| bi * xi + self.rank_one * s)
            .collect()
    }

    fn quad(&self, x: &[f64]) -> f64 {
        dot(x, &self.b_tilde_mul(x))
    }

    /// Solves `B̃_AA y = d_A` on the active set by Sherman–Morrison; zero off `A`.
    fn solve_active(&self, active: &[bool]) -> Vec<f64> {
        let dinv_d: Vec<f64> = (0..self.n())
            .map(|i| if active[i] { self.d_vec[i] / self.b_diag[i] } else { 0.0 })
            .collect();
        let sum_dinv_d: f64 = dinv_d.iter().sum();
        let sum_dinv: f64 = (0..self.n()).filter(|&i| active[i]).map(|i| 1.0 / self.b_diag[i]).sum();
        let tau = self.rank_one * sum_dinv_d / (1.0 + self.rank_one * sum_dinv);
        (0..self.n())
            .map(|i| {
                if active[i] {
                    (self.d_vec[i] - tau) / self.b_diag[i]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `σ⁴_θ (xᵀd)² / (xᵀBx + σ⁴_n/M)`, the objective being maximized.
    pub fn upper_bound_objective(&self, x: &[f64]) -> f64 {
        let (xbx, _) = self.quadratic_terms(x);
        let sn2 = self.fc_noise_var;
        self.signal_var.powi(2) * dot(x, &self.d_vec).powi(2) / (xbx + sn2 * sn2 / self.m as f64)
    }

    /// The full large-`M` deflection including the `(2σ²_n/M) bᵀx` term.
    pub fn full_objective(&self, x: &[f64]) -> f64 {
        let (xbx, bx) = self.quadratic_terms(x);
        let sn2 = self.fc_noise_var;
        let mf = self.m as f64;
        self.signal_var.powi(2) * dot(x, &self.d_vec).powi(2) / (xbx + 2.0 * sn2 / mf * bx + sn2 * sn2 / mf)
    }

    fn quadratic_terms(&self, x: &[f64]) -> (f64, f64) {
        let xbx = x.iter().zip(&self.b_diag).map(|(a, b)| a * a * b).sum();
        (xbx, dot(x, &self.b_vec))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QclpMethod {
    ActiveSet,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QclpSolution {
    /// Powers rescaled so that `Σ x_i = P`.
    pub x: Vec<f64>,
    /// Solution of the normalized problem, `x̃ᵀB̃x̃ = 1`.
    pub direction: Vec<f64>,
    /// Multiplier `ν` of the quadratic constraint.
    pub multiplier: f64,
    pub kkt_residual: f64,
    pub method: QclpMethod,
    pub upper_bound_objective: f64,
    pub full_objective: f64,
}

impl QclpSolution {
    pub fn gains(&self) -> GainVector {
        GainVector::from_powers(&self.x).expect("allocation powers are nonnegative")
    }
}

/// Largest violation, relative to `max d_i`, of the conditions
/// `d − 2νB̃x̃ + μ = 0`, `μ ≥ 0`, `μ_i x̃_i = 0`, `x̃ᵀB̃x̃ = 1`, `ν > 0`,
/// with `ν = dᵀx̃/2` and `μ = 2νB̃x̃ − d`.
pub fn qclp_kkt_residual(problem: &EdAllocationProblem, direction: &[f64]) -> f64 {
    let scale = problem.d_vec.iter().cloned().fold(0.0, f64::max);
    let nu = 0.5 * dot(&problem.d_vec, direction);
    if nu.is_nan() || nu <= 0.0 || direction.iter().any(|&x| x < 0.0) {
        return f64::INFINITY;
    }
    let bx = problem.b_tilde_mul(direction);
    let mut worst = (problem.quad(direction) - 1.0).abs();
    for i in 0..problem.n() {
        let mu = 2.0 * nu * bx[i] - problem.d_vec[i];
        let r = if direction[i] > 0.0 {
            // active: stationarity with μ_i = 0 (also covers μ_i x̃_i = 0)
            mu.abs() / scale
        } else {
            (-mu).max(0.0) / scale
        };
        worst = worst.max(r);
    }
    worst
}

/// Solves the allocation problem.
///
/// Active-set scheme: solve `B̃_AA x = d_A`, drop negative components, repeat.
/// The Sherman–Morrison shift `τ` only grows as sensors are dropped, so a
/// dropped sensor never needs to come back and the loop ends in at most `N`
/// passes. If the KKT certificate still fails, projected gradient ascent on
/// `xᵀd / sqrt(xᵀB̃x)` takes over.
pub fn solve_qclp(problem: &EdAllocationProblem) -> Result<QclpSolution> {
    let n = problem.n();
    let mut active = vec![true; n];
    let mut y = problem.solve_active(&active);
    for _ in 0..n {
        let mut changed = false;
        for i in 0..n {
            if active[i] && y[i] < 0.0 {
                active[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        y = problem.solve_active(&active);
    }
    let y: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
    let direction = normalize(problem, &y);
    let res = qclp_kkt_residual(problem, &direction);
    if res <= KKT_TOL {
        return Ok(finish(problem, direction, res, QclpMethod::ActiveSet));
    }

    let pg = projected_gradient(problem);
    let res_pg = qclp_kkt_residual(problem, &pg);
    if res_pg <= KKT_TOL {
        return Ok(finish(problem, pg, res_pg, QclpMethod::ProjectedGradient));
    }
    Err(Error::NoConvergence(format!(
        "allocation KKT residual {res:e} (active set), {res_pg:e} (projected gradient)"
    )))
}

fn normalize(problem: &EdAllocationProblem, y: &[f64]) -> Vec<f64> {
    let q = problem.quad(y).sqrt();
    y.iter().map(|v| v / q).collect()
}

fn finish(problem: &EdAllocationProblem, direction: Vec<f64>, res: f64, method: QclpMethod) -> QclpSolution {
    let total: f64 = direction.iter().sum();
    let x: Vec<f64> = direction.iter().map(|v| v * problem.p / total).collect();
    QclpSolution {
        multiplier: 0.5 * dot(&problem.d_vec, &direction),
        upper_bound_objective: problem.upper_bound_objective(&x),
        full_objective: problem.full_objective(&x),
        x,
        direction,
        kkt_residual: res,
        method,
    }
}

fn projected_gradient(problem: &EdAllocationProblem) -> Vec<f64> {
    let ratio = |x: &[f64]| {
        let q = problem.quad(x);
        if q > 0.0 {
            dot(&problem.d_vec, x) / q.sqrt()
        } else {
            0.0
        }
    };
    let mut x = normalize(problem, &vec![1.0; problem.n()]);
    let mut f = ratio(&x);
    let mut step = 1.0;
    for _ in 0..PG_MAX_ITERS {
        let bx = problem.b_tilde_mul(&x);
        let q = dot(&x, &bx);
        let xd = dot(&problem.d_vec, &x);
        let grad: Vec<f64> = (0..problem.n())
            .map(|i| problem.d_vec[i] / q.sqrt() - xd * bx[i] / q.powf(1.5))
            .collect();
        let mut improved = false;
        while step > 1e-300 {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| (a + step * g).max(0.0)).collect();
            if cand.iter().all(|&v| v == 0.0) {
                step *= 0.5;
                continue;
            }
            let cand = normalize(problem, &cand);
            let fc = ratio(&cand);
            if fc > f {
                let gain = fc - f;
                x = cand;
                f = fc;
                step *= 2.0;
                improved = gain > 1e-16 * f.abs();
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// High-power limit: `x ∝ B⁻¹d`, i.e.
/// `|a_i| = sqrt(P / Σ_j d_j^α/σ⁴_{v,j}) · d_i^{α/2}/σ²_{v,i}`.
pub fn closed_form_high_snr(scenario: &Scenario, p: f64) -> Result<GainVector> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("sum power must be positive, got {p}")));
    }
    let w: Vec<f64> = (0..scenario.n_sensors())
        .map(|i| scenario.path_loss(i) / scenario.meas_noise_vars()[i].powi(2))
        .collect();
    let total: f64 = w.iter().sum();
    GainVector::from_powers(&w.iter().map(|wi| p * wi / total).collect::<Vec<_>>())
}

/// Low-power limit: all power to the closest sensor (lowest index on ties).
pub fn closed_form_low_snr(scenario: &Scenario, p: f64) -> Result<GainVector> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("sum power must be positive, got {p}")));
    }
    let closest =
        scenario
            .distances()
            .iter()
            .enumerate()
            .fold(0, |best, (i, &d)| if d < scenario.distances()[best] { i } else { best });
    let mut x = vec![0.0; scenario.n_sensors()];
    x[closest] = p;
    GainVector::from_powers(&x)
}
