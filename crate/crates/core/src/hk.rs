//! Static Hellinger–Kantorovich distance by entropic unbalanced Sinkhorn, and the
//! secondary-space action built from it.
//!
//! `HK²(μ, ν) = min_π ⟨C, π⟩ + λ·KL(π1 | μ) + λ·KL(πᵀ1 | ν)` with `λ = 4/β` and the
//! cost `C = −(8/β)·log cos(min(√(β/4α)·d, π/2))`. The solver adds `ε·KL(π | μ⊗ν)`,
//! iterates in the log domain, and after each sweep applies the closed-form
//! optimal dual translation `(f + t, g − t)`, which removes the slow mode of
//! plain unbalanced Sinkhorn when `ε ≪ λ`. Reported values exclude the entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::MarkovKernel;

/// Cost entries at or beyond the cutoff are stored as `SENTINEL_FACTOR·8/β`.
pub const SENTINEL_FACTOR: f64 = 1e10;

/// `c_HK` for one distance; `+∞` at or beyond the cutoff `π·√(α/β)`.
pub fn hk_cost_scalar(d: f64, alpha: f64, beta: f64) -> f64 {
    let s = (beta / (4.0 * alpha)).sqrt() * d;
    if s >= std::f64::consts::FRAC_PI_2 {
        f64::INFINITY
    } else {
        -(8.0 / beta) * s.cos().ln()
    }
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Param(format!(
            "HK weights must be positive, got alpha={alpha} beta={beta}"
        )));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dense `c_HK` matrix between two point sets, with the cutoff stored as a sentinel.
pub fn hk_cost(
    points0: &[Vec<f64>],
    points1: &[Vec<f64>],
    alpha: f64,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    check_weights(alpha, beta)?;
    let sentinel = SENTINEL_FACTOR * 8.0 / beta;
    Ok(points0
        .iter()
        .map(|x| {
            points1
                .iter()
                .map(|y| {
                    let c = hk_cost_scalar(dist(x, y), alpha, beta);
                    if c.is_finite() {
                        c
                    } else {
                        sentinel
                    }
                })
                .collect()
        })
        .collect())
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HkOptions {
    /// Absolute entropic regularization; `None` selects `eps_rel·median(C)`.
    pub eps: Option<f64>,
    pub eps_rel: f64,
    /// Number of halvings from `16ε` (cold starts only).
    pub anneal: usize,
    pub max_iters: usize,
    /// Stop when the ℓ¹ marginal violation is below `tol·(Σμ + Σν)`.
    pub tol: f64,
    pub check_every: usize,
    /// Costs above this value are treated as beyond the cutoff.
    pub truncate: Option<f64>,
    pub keep_plan: bool,
}

impl Default for HkOptions {
    fn default() -> Self {
        Self {
            eps: None,
            eps_rel: 1e-3,
            anneal: 4,
            max_iters: 5000,
            tol: 1e-8,
            check_every: 10,
            truncate: None,
            keep_plan: false,
        }
    }
}

/// A cost matrix in compressed row and column form with `+∞` entries dropped.
#[derive(Debug, Clone)]
pub struct HkProblem {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_cost: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_cost: Vec<f64>,
    lambda: f64,
    eps: f64,
    opts: HkOptions,
}

impl HkProblem {
    /// Problem between two point clouds under `c_HK`.
    pub fn new(
        points0: &[Vec<f64>],
        points1: &[Vec<f64>],
        alpha: f64,
        beta: f64,
        opts: HkOptions,
    ) -> Result<Self> {
        check_weights(alpha, beta)?;
        let mut entries = Vec::new();
        let rows: Vec<Vec<(usize, f64)>> = points0
            .par_iter()
            .map(|x| {
                points1
                    .iter()
                    .enumerate()
                    .filter_map(|(j, y)| {
                        let c = hk_cost_scalar(dist(x, y), alpha, beta);
                        c.is_finite().then_some((j, c))
                    })
                    .collect()
            })
            .collect();
        for (i, row) in rows.into_iter().enumerate() {
            for (j, c) in row {
                entries.push((i, j, c));
            }
        }
        Self::from_entries(points0.len(), points1.len(), entries, 4.0 / beta, opts)
    }

    /// Problem from an explicit cost matrix; entries `≥ SENTINEL_FACTOR·8/β` or `+∞`
    /// are beyond the cutoff.
    pub fn from_cost_matrix(cost: &[Vec<f64>], beta: f64, opts: HkOptions) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Param(format!("beta must be positive, got {beta}")));
        }
        let cols = cost.first().map_or(0, Vec::len);
        let sentinel = SENTINEL_FACTOR * 8.0 / beta;
        let mut entries = Vec::new();
        for (i, row) in cost.iter().enumerate() {
            check_len("cost row", cols, row.len())?;
            for (j, &c) in row.iter().enumerate() {
                if c.is_nan() || c < 0.0 {
                    return Err(Error::Param(format!("cost entry ({i}, {j}) is {c}")));
                }
                if c < sentinel && c.is_finite() {
                    entries.push((i, j, c));
                }
            }
        }
        Self::from_entries(cost.len(), cols, entries, 4.0 / beta, opts)
    }

    fn from_entries(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
        lambda: f64,
        opts: HkOptions,
    ) -> Result<Self> {
        if let Some(t) = opts.truncate {
            entries.retain(|e| e.2 <= t);
        }
        let eps = match opts.eps {
            Some(e) if e > 0.0 && e.is_finite() => e,
            Some(e) => return Err(Error::Param(format!("entropic eps must be positive, got {e}"))),
            None => {
                let mut c: Vec<f64> = entries.iter().map(|e| e.2).collect();
                let med = if c.is_empty() {
                    0.0
                } else {
                    let mid = c.len() / 2;
                    *c.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
                };
                opts.eps_rel * if med > 0.0 { med } else { lambda }
            }
        };
        let build = |major: usize, key: fn(&(usize, usize, f64)) -> (usize, usize)| {
            let mut ptr = vec![0usize; major + 1];
            for e in &entries {
                ptr[key(e).0 + 1] += 1;
            }
            for k in 0..major {
                ptr[k + 1] += ptr[k];
            }
            let mut fill = ptr.clone();
            let mut idx = vec![0u32; entries.len()];
            let mut cost = vec![0.0; entries.len()];
            for e in &entries {
                let (a, b) = key(e);
                idx[fill[a]] = b as u32;
                cost[fill[a]] = e.2;
                fill[a] += 1;
            }
            (ptr, idx, cost)
        };
        let (row_ptr, row_idx, row_cost) = build(rows, |e| (e.0, e.1));
        let (col_ptr, col_idx, col_cost) = build(cols, |e| (e.1, e.0));
        Ok(Self {
            rows,
            cols,
            row_ptr,
            row_idx,
            row_cost,
            col_ptr,
            col_idx,
            col_cost,
            lambda,
            eps,
            opts,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn options(&self) -> &HkOptions {
        &self.opts
    }
    /// Number of finite cost entries kept.
    pub fn nnz(&self) -> usize {
        self.row_cost.len()
    }
}

/// Result of one HK solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HkSolution {
    /// `⟨C, π⟩ + λKL(p|μ) + λKL(q|ν)` at the final plan.
    pub value: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Row-major dense plan when requested.
    pub plan: Option<Vec<Vec<f64>>>,
    pub converged: bool,
    pub iterations: usize,
    /// `Σ|p − μe^{−f/λ}| + Σ|q − νe^{−g/λ}|` at exit.
    pub marginal_violation: f64,
    pub eps: f64,
}

/// `−κ·ε·LSE_k((h_k − C_k)/ε + log w_k)` over the kept entries of one row or column.
#[inline]
fn soft_min(idx: &[u32], cost: &[f64], h: &[f64], logw: &[f64], eps: f64, kappa: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (&k, &c) in idx.iter().zip(cost) {
        let k = k as usize;
        if logw[k].is_finite() && h[k].is_finite() {
            mx = mx.max((h[k] - c) / eps + logw[k]);
        }
    }
    if mx == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let mut s = 0.0;
    for (&k, &c) in idx.iter().zip(cost) {
        let k = k as usize;
        if logw[k].is_finite() && h[k].is_finite() {
            s += ((h[k] - c) / eps + logw[k] - mx).exp();
        }
    }
    -kappa * eps * (mx + s.ln())
}

#[inline]
fn relax(old: f64, new: f64, omega: f64) -> f64 {
    if omega == 1.0 || !old.is_finite() || !new.is_finite() {
        new
    } else {
        (1.0 - omega) * old + omega * new
    }
}

/// Largest finite `|f| + |g|` plus the largest cost, for the rounding floor of the
/// marginal check.
fn exponent_scale(f: &[f64], g: &[f64], cmax: f64) -> f64 {
    let m = |h: &[f64]| h.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
    m(f) + m(g) + cmax
}

struct Marginals {
    p: Vec<f64>,
    q: Vec<f64>,
    transport: f64,
}

impl HkProblem {
    fn update_f(&self, f: &mut [f64], g: &[f64], lognu: &[f64], eps: f64, kappa: f64, omega: f64) {
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            let v = soft_min(
                &self.row_idx[span.clone()],
                &self.row_cost[span],
                g,
                lognu,
                eps,
                kappa,
            );
            *fi = relax(*fi, v, omega);
        });
    }

    fn update_g(&self, g: &mut [f64], f: &[f64], logmu: &[f64], eps: f64, kappa: f64, omega: f64) {
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            let span = self.col_ptr[j]..self.col_ptr[j + 1];
            let v = soft_min(
                &self.col_idx[span.clone()],
                &self.col_cost[span],
                f,
                logmu,
                eps,
                kappa,
            );
            *gj = relax(*gj, v, omega);
        });
    }

    fn marginals(&self, f: &[f64], g: &[f64], logmu: &[f64], lognu: &[f64], eps: f64) -> Marginals {
        let rows: Vec<(f64, f64)> = (0..self.rows)
            .into_par_iter()
            .map(|i| {
                if !logmu[i].is_finite() || !f[i].is_finite() {
                    return (0.0, 0.0);
                }
                let (mut p, mut t) = (0.0, 0.0);
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let j = self.row_idx[k] as usize;
                    if lognu[j].is_finite() && g[j].is_finite() {
                        let c = self.row_cost[k];
                        let pi = ((f[i] + g[j] - c) / eps + logmu[i] + lognu[j]).exp();
                        p += pi;
                        t += c * pi;
                    }
                }
                (p, t)
            })
            .collect();
        let q: Vec<f64> = (0..self.cols)
            .into_par_iter()
            .map(|j| {
                if !lognu[j].is_finite() || !g[j].is_finite() {
                    return 0.0;
                }
                let mut q = 0.0;
                for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                    let i = self.col_idx[k] as usize;
                    if logmu[i].is_finite() && f[i].is_finite() {
                        q += ((f[i] + g[j] - self.col_cost[k]) / eps + logmu[i] + lognu[j]).exp();
                    }
                }
                q
            })
            .collect();
        Marginals {
            p: rows.iter().map(|r| r.0).collect(),
            transport: rows.iter().map(|r| r.1).sum(),
            q,
        }
    }

    fn violation(&self, m: &Marginals, mu: &[f64], nu: &[f64], f: &[f64], g: &[f64]) -> f64 {
        let lam = self.lambda;
        let side = |p: &[f64], w: &[f64], h: &[f64]| -> f64 {
            p.iter()
                .zip(w)
                .zip(h)
                .map(|((p, w), h)| if *w > 0.0 { (p - w * (-h / lam).exp()).abs() } else { 0.0 })
                .sum()
        };
        side(&m.p, mu, f) + side(&m.q, nu, g)
    }

    /// Optimal `t` for `(f + t, g − t)`; `f ⊕ g` and hence the plan shape are unchanged.
    fn translate(&self, f: &mut [f64], g: &mut [f64], mu: &[f64], nu: &[f64]) {
        let lam = self.lambda;
        let mass = |w: &[f64], h: &[f64]| -> f64 {
            w.iter()
                .zip(h)
                .filter(|(w, h)| **w > 0.0 && h.is_finite())
                .map(|(w, h)| w * (-h / lam).exp())
                .sum()
        };
        let (a, b) = (mass(mu, f), mass(nu, g));
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            let t = 0.5 * lam * (a / b).ln();
            f.iter_mut().for_each(|v| *v += t);
            g.iter_mut().for_each(|v| *v -= t);
        }
    }

    fn dense_plan(&self, f: &[f64], g: &[f64], logmu: &[f64], lognu: &[f64]) -> Vec<Vec<f64>> {
        let mut plan = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in plan.iter_mut().enumerate() {
            if !logmu[i].is_finite() || !f[i].is_finite() {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.row_idx[k] as usize;
                if lognu[j].is_finite() && g[j].is_finite() {
                    row[j] = ((f[i] + g[j] - self.row_cost[k]) / self.eps + logmu[i] + lognu[j]).exp();
                }
            }
        }
        plan
    }
}

fn kl(p: &[f64], w: &[f64]) -> f64 {
    p.iter()
        .zip(w)
        .map(|(&p, &w)| {
            if p > 0.0 {
                p * (p / w).ln() - p + w
            } else {
                w
            }
        })
        .sum()
}

/// Cold-start solve with `ε`-annealing.
pub fn hk_solve(mu: &[f64], nu: &[f64], prob: &HkProblem) -> Result<HkSolution> {
    hk_solve_warm(mu, nu, prob, None)
}

/// Solve from given duals (no annealing), or cold with annealing when `warm` is `None`.
pub fn hk_solve_warm(
    mu: &[f64],
    nu: &[f64],
    prob: &HkProblem,
    warm: Option<(&[f64], &[f64])>,
) -> Result<HkSolution> {
    check_len("HK source masses", prob.rows, mu.len())?;
    check_len("HK target masses", prob.cols, nu.len())?;
    if mu.iter().chain(nu).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Param("HK marginals must be finite and nonnegative".into()));
    }
    let mass: f64 = mu.iter().sum::<f64>() + nu.iter().sum::<f64>();
    if !(mass > 0.0) {
        return Err(Error::Param("HK marginals are both zero".into()));
    }
    let logmu: Vec<f64> = mu.iter().map(|v| v.ln()).collect();
    let lognu: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
    let lam = prob.lambda;
    let opts = &prob.opts;

    let (mut f, mut g, schedule) = match warm {
        Some((f0, g0)) if f0.len() == prob.rows && g0.len() == prob.cols => {
            (f0.to_vec(), g0.to_vec(), vec![prob.eps])
        }
        _ => {
            let sched = (0..=opts.anneal)
                .map(|k| prob.eps * 2f64.powi((opts.anneal - k) as i32))
                .collect();
            (vec![0.0; prob.rows], vec![0.0; prob.cols], sched)
        }
    };

    let cmax = prob.row_cost.iter().fold(0.0f64, |a, c| a.max(*c));
    let mut iterations = 0;
    let mut converged = false;
    let check_every = opts.check_every.max(1);
    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tol = if last { opts.tol } else { (opts.tol * 100.0).max(1e-6) };
        let kappa = lam / (lam + eps);
        // over-relaxation tuned to the slowest linearized mode, whose Jacobi factor is κ
        let omega_opt = 2.0 / (1.0 + (1.0 - kappa * kappa).sqrt());
        let mut omega = 1.0;
        let mut best = f64::INFINITY;
        let mut cooldown = 0;
        converged = false;
        for it in 0..opts.max_iters {
            if it > 0 && omega == 1.0 {
                prob.translate(&mut f, &mut g, mu, nu);
            }
            prob.update_f(&mut f, &g, &lognu, eps, kappa, omega);
            prob.update_g(&mut g, &f, &logmu, eps, kappa, omega);
            iterations += 1;
            if (it + 1) % check_every == 0 || it + 1 == opts.max_iters {
                let m = prob.marginals(&f, &g, &logmu, &lognu, eps);
                let violation = prob.violation(&m, mu, nu, &f, &g);
                let floor = 64.0 * f64::EPSILON * exponent_scale(&f, &g, cmax) / eps;
                if violation <= tol.max(floor) * mass {
                    converged = true;
                    break;
                }
                // the relaxed iteration has a transient bump near ω_opt, so only a real blow-up resets it
                if !violation.is_finite() || violation > 1e3 * best {
                    omega = 1.0;
                    cooldown = 5;
                } else if cooldown > 0 {
                    cooldown -= 1;
                } else {
                    omega = omega_opt;
                }
                best = best.min(violation);
            }
        }
    }

    let m = prob.marginals(&f, &g, &logmu, &lognu, prob.eps);
    let violation = prob.violation(&m, mu, nu, &f, &g);
    let value = m.transport + lam * kl(&m.p, mu) + lam * kl(&m.q, nu);
    let plan = opts
        .keep_plan
        .then(|| prob.dense_plan(&f, &g, &logmu, &lognu));
    Ok(HkSolution {
        value,
        f,
        g,
        plan,
        converged,
        iterations,
        marginal_violation: violation,
        eps: prob.eps,
    })
}

/// `(∂value/∂μ, ∂value/∂ν) = (λ(1 − e^{−f/λ}), λ(1 − e^{−g/λ}))`.
///
/// The boolean is `false` when the solve did not converge and the gradient is approximate.
pub fn hk_gradient(sol: &HkSolution, prob: &HkProblem) -> (Vec<f64>, Vec<f64>, bool) {
    let lam = prob.lambda;
    let d = |h: &[f64]| h.iter().map(|v| lam * (1.0 - (-v / lam).exp())).collect();
    (d(&sol.f), d(&sol.g), sol.converged)
}

/// `Σ_k HK²(Πρ_k, Πρ_{k+1}) / Δt_k` over consecutive density slices, with the
/// HK duals of each interval kept for warm starts.
#[derive(Debug, Clone)]
pub struct SecondaryAction {
    kernel: MarkovKernel,
    problem: HkProblem,
    vol: f64,
    dts: Vec<f64>,
    warm: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

/// Value, gradient slices and a convergence flag of the secondary action.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryEval {
    pub value: f64,
    /// One gradient per density slice; the first and last are zero.
    pub gradient: Vec<Vec<f64>>,
    pub converged: bool,
}

impl SecondaryAction {
    /// `vol` is the spatial cell volume used by the kernel push-forward.
    pub fn new(
        kernel: MarkovKernel,
        alpha: f64,
        beta: f64,
        dts: Vec<f64>,
        vol: f64,
        opts: HkOptions,
    ) -> Result<Self> {
        if dts.is_empty() || dts.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Param("time partition must have positive steps".into()));
        }
        let pts = kernel.support().to_vec();
        let problem = HkProblem::new(&pts, &pts, alpha, beta, opts)?;
        let warm = vec![None; dts.len()];
        Ok(Self {
            kernel,
            problem,
            vol,
            dts,
            warm,
        })
    }

    pub fn problem(&self) -> &HkProblem {
        &self.problem
    }

    pub fn kernel(&self) -> &MarkovKernel {
        &self.kernel
    }

    /// Drops stored duals so the next evaluation starts cold.
    pub fn reset(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    fn solve_pairs(&mut self, rho: &[f64]) -> Result<(Vec<HkSolution>, Vec<Vec<f64>>)> {
        let s = self.kernel.rows();
        let q = self.dts.len();
        check_len("density slices", s * (q + 1), rho.len())?;
        let xi: Vec<Vec<f64>> = (0..=q)
            .into_par_iter()
            .map(|k| {
                let xi = self.kernel.apply(&rho[k * s..(k + 1) * s], self.vol)?;
                Ok(xi.into_iter().map(|v: f64| v.max(0.0)).collect())
            })
            .collect::<Result<_>>()?;
        let sols: Vec<HkSolution> = (0..q)
            .into_par_iter()
            .map(|k| {
                let w = self.warm[k].as_ref().map(|(f, g)| (f.as_slice(), g.as_slice()));
                if xi[k].iter().chain(&xi[k + 1]).all(|v| *v == 0.0) {
                    let n = self.problem.rows;
                    return Ok(HkSolution {
                        value: 0.0,
                        f: vec![0.0; n],
                        g: vec![0.0; n],
                        plan: None,
                        converged: true,
                        iterations: 0,
                        marginal_violation: 0.0,
                        eps: self.problem.eps,
                    });
                }
                hk_solve_warm(&xi[k], &xi[k + 1], &self.problem, w)
            })
            .collect::<Result<_>>()?;
        for (w, s) in self.warm.iter_mut().zip(&sols) {
            *w = Some((s.f.clone(), s.g.clone()));
        }
        Ok((sols, xi))
    }

    /// `rho` holds `Q + 1` contiguous slices of `kernel.rows()` values.
    pub fn value(&mut self, rho: &[f64]) -> Result<f64> {
        let (sols, _) = self.solve_pairs(rho)?;
        Ok(sols.iter().zip(&self.dts).map(|(s, dt)| s.value / dt).sum())
    }

    /// Value and `∂/∂ρ_k`, including the push-forward volume factor.
    pub fn evaluate(&mut self, rho: &[f64]) -> Result<SecondaryEval> {
        let (sols, _) = self.solve_pairs(rho)?;
        let q = self.dts.len();
        let s = self.kernel.rows();
        let value = sols.iter().zip(&self.dts).map(|(s, dt)| s.value / dt).sum();
        let converged = sols.iter().all(|s| s.converged);
        let grads: Vec<(Vec<f64>, Vec<f64>)> = sols
            .iter()
            .map(|sol| {
                let (a, b, _) = hk_gradient(sol, &self.problem);
                (a, b)
            })
            .collect();
        let mut gradient = vec![vec![0.0; s]; q + 1];
        gradient[1..q]
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(km1, out)| -> Result<()> {
                let k = km1 + 1;
                let mut sec: Vec<f64> = grads[k - 1]
                    .1
                    .iter()
                    .map(|v| v / self.dts[k - 1])
                    .collect();
                for (a, b) in sec.iter_mut().zip(&grads[k].0) {
                    *a += b / self.dts[k];
                }
                let back = self.kernel.adjoint_apply(&sec)?;
                for (o, b) in out.iter_mut().zip(back) {
                    *o = self.vol * b;
                }
                Ok(())
            })?;
        Ok(SecondaryEval {
            value,
            gradient,
            converged,
        })
    }
}

/// One-shot secondary action of `Q + 1` contiguous density slices.
pub fn secondary_action(
    rho: &[f64],
    kernel: &MarkovKernel,
    dts: &[f64],
    alpha: f64,
    beta: f64,
    vol: f64,
    opts: HkOptions,
) -> Result<f64> {
    SecondaryAction::new(kernel.clone(), alpha, beta, dts.to_vec(), vol, opts)?.value(rho)
}

/// Gradient slices of [`secondary_action`]; boundary slices are zero.
pub fn secondary_action_gradient(
    rho: &[f64],
    kernel: &MarkovKernel,
    dts: &[f64],
    alpha: f64,
    beta: f64,
    vol: f64,
    opts: HkOptions,
) -> Result<Vec<Vec<f64>>> {
    Ok(SecondaryAction::new(kernel.clone(), alpha, beta, dts.to_vec(), vol, opts)?
        .evaluate(rho)?
        .gradient)
}
