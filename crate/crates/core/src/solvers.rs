//! Primal-dual solvers.
//!
//! The primal unknown is `x = (U_s, H_c)` constrained to the affine set of the
//! discrete continuity equation with prescribed endpoint densities. The linear map
//! `K x = (I U_s, H_c)` sends it to centered cells, where the action `J` lives.
//!
//! [`solve_chambolle_pock`] handles WFR and the Monge form (a metric per cell).
//! [`solve_yan`] adds the smooth secondary HK action of the Kantorovich form through
//! the PD3O three-operator iteration. Both stop when the windowed mean objective
//! settles and the constraint residual is small.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MarkovKernel, MetricField};
use crate::grid::{
    axpy, dot, interpolate_adjoint_into, interpolate_into, BoundaryData, CenteredField, GridSpec,
    StaggeredField,
};
use crate::helmholtz::{ConstraintForm, HelmholtzPlan, HelmholtzScratch};
use crate::hk::{HkOptions, SecondaryAction};
use crate::prox::{eval_j, prox_j_field, CellFieldMut, CellState, ProxParams, Sym2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Wfr,
    Monge,
    Kantorovich,
}

/// Solver settings. Unset step sizes are chosen by [`estimate_step_sizes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub kind: ProblemKind,
    pub alpha: f64,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    pub max_iters: usize,
    /// Relative change of the windowed mean objective.
    pub stop_tol: f64,
    /// Bound on `‖A(U, H)‖_∞ / (1 + max density)`.
    pub residual_tol: f64,
    pub window: usize,
    /// Fraction of `2/L` allowed for the primal step of the Kantorovich solver.
    pub grad_step_safety: f64,
    pub constraint_form: ConstraintForm,
    pub hk: HkOptions,
    /// Seeds the power iteration and the Lipschitz probes.
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Wfr,
            alpha: 1.0,
            beta: 1.0,
            c1: 1.0,
            c2: 0.0,
            tau: None,
            sigma: None,
            max_iters: 20000,
            stop_tol: 1e-6,
            residual_tol: 1e-8,
            window: 50,
            grad_step_safety: 0.9,
            constraint_form: ConstraintForm::default(),
            hk: HkOptions::default(),
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Param(format!("{what} is invalid: {v}")));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha", self.alpha);
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta", self.beta);
        }
        if !(self.c1 >= 0.0) || !(self.c2 >= 0.0) || !(self.c1 + self.c2 > 0.0) {
            return Err(Error::Param(format!(
                "weights must be nonnegative with positive sum, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.kind == ProblemKind::Kantorovich && !(self.c1 > 0.0) {
            return bad("c1", self.c1);
        }
        for (what, v) in [("tau", self.tau), ("sigma", self.sigma)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(what, v);
                }
            }
        }
        if !(self.stop_tol > 0.0) {
            return bad("stop_tol", self.stop_tol);
        }
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol", self.residual_tol);
        }
        if !(self.grad_step_safety > 0.0) {
            return bad("grad_step_safety", self.grad_step_safety);
        }
        if self.window == 0 || self.max_iters == 0 {
            return Err(Error::Param("window and max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Final iterate and per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: StaggeredField,
    pub h: Vec<f64>,
    /// `vol·ΣJ` (plus the weighted secondary action for the Kantorovich form).
    pub objective: Vec<f64>,
    /// Secondary HK action per iteration; empty unless Kantorovich with `c₂ > 0`.
    pub secondary: Vec<f64>,
    /// `‖A(U, H)‖_∞` per iteration.
    pub residual: Vec<f64>,
    /// `Σρ·vol` on each time face of the final iterate.
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tau: f64,
    pub sigma: f64,
    pub step_halvings: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub tau: f64,
    pub sigma: f64,
    /// Measured `‖K‖`.
    pub k_norm: f64,
    /// Measured Lipschitz constant of the smooth gradient; zero without one.
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
struct Primal {
    u: StaggeredField,
    h: Vec<f64>,
}

impl Primal {
    fn zeros(g: &GridSpec) -> Self {
        Self {
            u: StaggeredField::zeros(g),
            h: vec![0.0; g.centered_len()],
        }
    }

    fn norm_sq(&self) -> f64 {
        self.u.norm_sq() + dot(&self.h, &self.h)
    }

    fn scale(&mut self, s: f64) {
        for v in self
            .u
            .m
            .iter_mut()
            .chain(self.u.n.iter_mut())
            .chain(self.u.rho.iter_mut())
            .chain(self.h.iter_mut())
        {
            *v *= s;
        }
    }
}

#[derive(Debug, Clone)]
struct Dual {
    c: CenteredField,
    h: Vec<f64>,
}

impl Dual {
    fn zeros(g: &GridSpec) -> Self {
        Self {
            c: CenteredField::zeros(g),
            h: vec![0.0; g.centered_len()],
        }
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.c.m, &mut self.c.n, &mut self.c.rho, &mut self.h]
    }

    fn field(&mut self) -> CellFieldMut<'_> {
        CellFieldMut {
            m: &mut self.c.m,
            n: &mut self.c.n,
            rho: &mut self.c.rho,
            h: &mut self.h,
        }
    }
}

fn apply_k(x: &Primal, g: &GridSpec, out: &mut Dual) {
    interpolate_into(&x.u, g, &mut out.c);
    out.h.copy_from_slice(&x.h);
}

fn apply_kt(y: &Dual, g: &GridSpec, out: &mut Primal) {
    interpolate_adjoint_into(&y.c, g, &mut out.u);
    out.h.copy_from_slice(&y.h);
}

fn plan_for(g: &GridSpec, cfg: &SolveConfig) -> Result<HelmholtzPlan> {
    HelmholtzPlan::new(*g, cfg.alpha, cfg.beta, cfg.constraint_form)
}

/// Feasible starting point: density linear in time, zero momentum, growth matching
/// the linear mass drift, then one projection.
pub fn initialize(
    b0: &BoundaryData,
    g: &GridSpec,
    plan: &HelmholtzPlan,
) -> Result<(StaggeredField, Vec<f64>)> {
    let s = g.spatial_len();
    let q = g.q();
    let mut u = StaggeredField::zeros(g);
    for k in 0..=q {
        let t = k as f64 / q as f64;
        let slice = &mut u.rho[k * s..(k + 1) * s];
        for (r, (a, b)) in slice.iter_mut().zip(b0.mu.iter().zip(&b0.nu)) {
            *r = (1.0 - t) * a + t * b;
        }
    }
    let mut h = vec![0.0; g.centered_len()];
    if plan.beta() > 0.0 {
        let wt = match plan.form() {
            ConstraintForm::Uniform => plan.alpha(),
            ConstraintForm::Continuity => 1.0,
        };
        for k in 0..q {
            for c in 0..s {
                h[k * s + c] = wt * (b0.nu[c] - b0.mu[c]) / plan.beta();
            }
        }
    }
    plan.project(&mut u, &mut h, b0, &mut HelmholtzScratch::default())?;
    Ok((u, h))
}

/// `‖K‖` by power iteration on `KᵀK`.
fn k_norm(g: &GridSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Primal::zeros(g);
    for v in x
        .u
        .m
        .iter_mut()
        .chain(x.u.n.iter_mut())
        .chain(x.u.rho.iter_mut())
        .chain(x.h.iter_mut())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut kx = Dual::zeros(g);
    let mut ktkx = Primal::zeros(g);
    let mut est = 0.0;
    for _ in 0..50 {
        let n = x.norm_sq().sqrt();
        x.scale(1.0 / n);
        apply_k(&x, g, &mut kx);
        apply_kt(&kx, g, &mut ktkx);
        est = ktkx.norm_sq().sqrt().sqrt();
        std::mem::swap(&mut x, &mut ktkx);
    }
    est
}

/// Chooses `τ = σ = 0.99/‖K‖`. With a smooth term, caps `τ ≤ grad_step_safety·2/L`
/// for `L` from symmetric secant probes around `base`, and raises `σ` to keep
/// `τσ‖K‖² = 0.99²`.
///
/// User-supplied `τ`, `σ` in `cfg` take precedence.
pub fn estimate_step_sizes(
    cfg: &SolveConfig,
    g: &GridSpec,
    smooth: Option<(&mut SecondaryAction, &StaggeredField, f64)>,
) -> Result<StepSizes> {
    let k = k_norm(g, cfg.seed);
    let base_step = 0.99 / k;
    let mut tau = cfg.tau.unwrap_or(base_step);
    let mut sigma = cfg.sigma.unwrap_or(base_step);
    let mut lipschitz = 0.0;
    if let Some((sec, u, weight)) = smooth {
        if weight > 0.0 {
            lipschitz = weight * probe_lipschitz(sec, &u.rho, g, cfg.seed)?;
            if cfg.tau.is_none() && lipschitz > 0.0 {
                tau = tau.min(cfg.grad_step_safety * 2.0 / lipschitz);
                if cfg.sigma.is_none() {
                    sigma = base_step * base_step / tau;
                }
            }
        }
    }
    Ok(StepSizes {
        tau,
        sigma,
        k_norm: k,
        lipschitz,
    })
}

fn probe_lipschitz(sec: &mut SecondaryAction, rho: &[f64], g: &GridSpec, seed: u64) -> Result<f64> {
    let s = g.spatial_len();
    let q = g.q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = rho.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut best = 0.0f64;
    for _ in 0..10 {
        let delta: Vec<f64> = (0..rho.len())
            .map(|i| {
                let k = i / s;
                if k == 0 || k == q {
                    0.0
                } else {
                    1e-3 * scale * rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let plus: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r + d).collect();
        let minus: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r - d).collect();
        let gp = sec.evaluate(&plus)?.gradient.concat();
        let gm = sec.evaluate(&minus)?.gradient.concat();
        let num: f64 = gp.iter().zip(&gm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = 2.0 * delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    sec.reset();
    Ok(best)
}

fn check_marginals(b0: &BoundaryData, g: &GridSpec, cfg: &SolveConfig) -> Result<()> {
    if b0.mu.len() != g.spatial_len() || b0.nu.len() != g.spatial_len() {
        return Err(Error::Shape {
            what: "marginals",
            expected: g.spatial_len(),
            got: b0.mu.len().min(b0.nu.len()),
        });
    }
    if b0.mu.iter().chain(&b0.nu).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Param("marginal densities must be finite and nonnegative".into()));
    }
    if cfg.beta == 0.0 {
        let (a, b) = b0.masses(g);
        if (a - b).abs() > 1e-8 * a.max(b) {
            return Err(Error::Param(format!(
                "balanced transport (beta = 0) needs equal masses, got {a} and {b}"
            )));
        }
    }
    Ok(())
}

/// Smooth secondary term `weight·H(ρ)` in the units of the unweighted `ΣJ`.
struct Smooth<'a> {
    action: &'a mut SecondaryAction,
    /// `(c₂/c₁)/vol`: the reported objective weights `H` by `c₂/c₁`, the iteration
    /// works with `ΣJ = objective/vol`.
    weight: f64,
}

impl Smooth<'_> {
    /// Gradient on the density channel and the unweighted action value.
    fn eval(&mut self, x: &Primal, g: &GridSpec) -> Result<(StaggeredField, f64)> {
        let ev = self.action.evaluate(&x.u.rho)?;
        let mut grad = StaggeredField::zeros(g);
        let s = g.spatial_len();
        for (k, slice) in ev.gradient.iter().enumerate() {
            for (d, v) in grad.rho[k * s..(k + 1) * s].iter_mut().zip(slice) {
                *d = self.weight * v;
            }
        }
        Ok((grad, ev.value))
    }
}

/// Windowed stopping rule.
fn settled(objective: &[f64], window: usize, tol: f64) -> bool {
    let n = objective.len();
    if n < 2 * window {
        return false;
    }
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let cur = mean(&objective[n - window..]);
    let prev = mean(&objective[n - 2 * window..n - window]);
    cur.is_finite() && (cur - prev).abs() <= tol * cur.abs().max(prev.abs()).max(1e-12)
}

#[allow(clippy::too_many_arguments)]
fn run(
    b0: &BoundaryData,
    g: &GridSpec,
    cfg: &SolveConfig,
    metric: &[Sym2],
    mut smooth: Option<Smooth<'_>>,
    steps: StepSizes,
    plan: &HelmholtzPlan,
    start: (StaggeredField, Vec<f64>),
) -> Result<SolveReport> {
    let clock = Instant::now();
    let vol = g.cell_volume();
    let mut tau = steps.tau;
    let sigma = steps.sigma;
    let density_scale = b0.mu.iter().chain(&b0.nu).fold(0.0f64, |a, v| a.max(*v));
    let residual_bound = cfg.residual_tol * (1.0 + density_scale);
    let base = ProxParams::new(cfg.alpha, cfg.beta, Sym2::IDENTITY, 1.0 / sigma)?;

    let mut scratch = HelmholtzScratch::default();
    let mut x = Primal {
        u: start.0,
        h: start.1,
    };
    let mut xbar = x.clone();
    let mut y = Dual::zeros(g);
    let mut z = Dual::zeros(g);
    let mut p = Dual::zeros(g);
    let mut kty = Primal::zeros(g);
    let (mut grad, _) = match smooth.as_mut() {
        Some(sm) => sm.eval(&x, g)?,
        None => (StaggeredField::zeros(g), 0.0),
    };

    let mut objective = Vec::new();
    let mut secondary = Vec::new();
    let mut residual = Vec::new();
    let mut converged = false;
    let mut halvings = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        // dual step: y ← prox_{σJ*}(y + σ K x̄), with the primal prox point kept
        apply_k(&xbar, g, &mut z);
        for (zc, yc) in z.channels_mut().into_iter().zip([&y.c.m, &y.c.n, &y.c.rho, &y.h]) {
            zc.iter_mut().zip(yc).for_each(|(a, b)| *a = b + sigma * *a);
        }
        for (pc, zc) in p.channels_mut().into_iter().zip([&z.c.m, &z.c.n, &z.c.rho, &z.h]) {
            pc.iter_mut().zip(zc).for_each(|(a, b)| *a = b / sigma);
        }
        prox_j_field(&mut p.field(), metric, cfg.alpha, cfg.beta, 1.0 / sigma)?;
        let y_new = {
            let mut yn = z.clone();
            for (yc, pc) in yn.channels_mut().into_iter().zip([&p.c.m, &p.c.n, &p.c.rho, &p.h]) {
                axpy(yc, -sigma, pc);
            }
            yn
        };

        // primal step with the gradient at the previous primal iterate
        apply_kt(&y_new, g, &mut kty);
        let mut x_new = x.clone();
        axpy(&mut x_new.u.m, -tau, &kty.u.m);
        axpy(&mut x_new.u.n, -tau, &kty.u.n);
        axpy(&mut x_new.u.rho, -tau, &kty.u.rho);
        axpy(&mut x_new.u.rho, -tau, &grad.rho);
        axpy(&mut x_new.h, -tau, &kty.h);
        plan.project(&mut x_new.u, &mut x_new.h, b0, &mut scratch)?;

        let (grad_new, sec_new) = match smooth.as_mut() {
            Some(sm) => sm.eval(&x_new, g)?,
            None => (StaggeredField::zeros(g), 0.0),
        };
        if smooth.is_some() {
            let dg: f64 = grad_new
                .rho
                .iter()
                .zip(&grad.rho)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let dx: f64 = x_new
                .u
                .rho
                .iter()
                .zip(&x.u.rho)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dx > 0.0 && tau * dg / dx > 2.0 {
                halvings += 1;
                if halvings > 8 {
                    break;
                }
                tau *= 0.5;
                continue;
            }
        }

        let obj_j = {
            let pv = &p;
            let cells = pv.c.rho.len();
            let ml = metric.len();
            (0..cells)
                .into_par_iter()
                .map(|c| {
                    let cell = CellState {
                        m: [pv.c.m[c], if pv.c.n.is_empty() { 0.0 } else { pv.c.n[c] }],
                        rho: pv.c.rho[c],
                        h: pv.h[c],
                    };
                    eval_j(&cell, &ProxParams { a: metric[c % ml], ..base })
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum::<f64>()
        };
        let obj = vol * obj_j + smooth.as_ref().map_or(0.0, |sm| sm.weight * vol * sec_new);
        objective.push(obj);
        if smooth.is_some() {
            secondary.push(sec_new);
        }
        let res = plan.constraint_residual(&x_new.u, &x_new.h)?;
        residual.push(res);

        // x̄ = 2x⁺ − x + τ(∇f(x) − ∇f(x⁺))
        xbar = x_new.clone();
        xbar.scale(2.0);
        axpy(&mut xbar.u.m, -1.0, &x.u.m);
        axpy(&mut xbar.u.n, -1.0, &x.u.n);
        axpy(&mut xbar.u.rho, -1.0, &x.u.rho);
        axpy(&mut xbar.h, -1.0, &x.h);
        if smooth.is_some() {
            axpy(&mut xbar.u.rho, tau, &grad.rho);
            axpy(&mut xbar.u.rho, -tau, &grad_new.rho);
        }
        x = x_new;
        y = y_new;
        grad = grad_new;
        iterations += 1;

        if iterations % cfg.window == 0
            && res <= residual_bound
            && settled(&objective, cfg.window, cfg.stop_tol)
        {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        masses: x.u.slice_masses(g),
        u: x.u,
        h: x.h,
        objective,
        secondary,
        residual,
        iterations,
        converged,
        tau,
        sigma,
        step_halvings: halvings,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Chambolle–Pock for WFR (`metric` = identity) and the Monge form.
pub fn solve_chambolle_pock(
    b0: &BoundaryData,
    metric: &MetricField,
    g: &GridSpec,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    check_marginals(b0, g, cfg)?;
    let cells = metric.cells();
    if cells.len() != g.spatial_len() {
        return Err(Error::Shape {
            what: "metric field",
            expected: g.spatial_len(),
            got: cells.len(),
        });
    }
    if let Some((cell, a)) = cells.iter().enumerate().find(|(_, a)| {
        let e = if g.dim() == 1 { a.a11 } else { a.min_eig() };
        !(e > 0.0)
    }) {
        return Err(Error::NotSpd {
            cell,
            min_eig: a.min_eig(),
        });
    }
    let plan = plan_for(g, cfg)?;
    let start = initialize(b0, g, &plan)?;
    let steps = estimate_step_sizes(cfg, g, None)?;
    run(b0, g, cfg, cells, None, steps, &plan, start)
}

/// PD3O for the Kantorovich form: `vol·ΣJ + (c₂/c₁)·Σ_k HK²(Πρ_k, Πρ_{k+1})/Δt`.
///
/// The primary action uses the identity metric. `c₂ = 0` reproduces
/// [`solve_chambolle_pock`] iterate for iterate.
pub fn solve_yan(
    b0: &BoundaryData,
    kernel: &MarkovKernel,
    g: &GridSpec,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    check_marginals(b0, g, cfg)?;
    if kernel.rows() != g.spatial_len() {
        return Err(Error::Shape {
            what: "kernel rows",
            expected: g.spatial_len(),
            got: kernel.rows(),
        });
    }
    let plan = plan_for(g, cfg)?;
    let start = initialize(b0, g, &plan)?;
    let metric = [Sym2::IDENTITY];
    let ratio = cfg.c2 / cfg.c1;
    if ratio == 0.0 {
        let steps = estimate_step_sizes(cfg, g, None)?;
        return run(b0, g, cfg, &metric, None, steps, &plan, start);
    }
    let dts = vec![g.dt(); g.q()];
    let mut action = SecondaryAction::new(
        kernel.clone(),
        cfg.alpha,
        cfg.beta.max(f64::MIN_POSITIVE),
        dts,
        g.spatial_volume(),
        cfg.hk,
    )?;
    let weight = ratio / g.cell_volume();
    let steps = estimate_step_sizes(cfg, g, Some((&mut action, &start.0, weight)))?;
    let smooth = Smooth {
        action: &mut action,
        weight,
    };
    run(b0, g, cfg, &metric, Some(smooth), steps, &plan, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::truncated_gaussian;

    fn pair_1d(g: &GridSpec, m1: f64) -> BoundaryData {
        let mu = truncated_gaussian([0.35, 0.0], 0.08, 1.0, g).unwrap();
        let nu = truncated_gaussian([0.65, 0.0], 0.08, m1, g).unwrap();
        BoundaryData::new(g, mu, nu).unwrap()
    }

    #[test]
    fn start_is_feasible_with_linear_masses() {
        let g = GridSpec::new_1d(32, 16).unwrap();
        let b0 = pair_1d(&g, 1.3);
        for form in [ConstraintForm::Uniform, ConstraintForm::Continuity] {
            let cfg = SolveConfig {
                beta: 4.0,
                constraint_form: form,
                ..Default::default()
            };
            let plan = plan_for(&g, &cfg).unwrap();
            let (u, h) = initialize(&b0, &g, &plan).unwrap();
            assert!(plan.constraint_residual(&u, &h).unwrap() <= 1e-10);
            let m = u.slice_masses(&g);
            for w in m.windows(3) {
                assert!((w[1] - 0.5 * (w[0] + w[2])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn equal_marginals_start_has_zero_objective() {
        let g = GridSpec::new_1d(16, 8).unwrap();
        let mu = truncated_gaussian([0.5, 0.0], 0.1, 1.0, &g).unwrap();
        let b0 = BoundaryData::new(&g, mu.clone(), mu).unwrap();
        let cfg = SolveConfig {
            beta: 2.0,
            max_iters: 100,
            ..Default::default()
        };
        let r = solve_chambolle_pock(&b0, &MetricField::identity(&g), &g, &cfg).unwrap();
        assert!(r.final_objective() <= 1e-10);
        for w in r.masses.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn operator_norm_is_one() {
        for g in [
            GridSpec::new_1d(8, 4).unwrap(),
            GridSpec::new_2d(6, 5, 4).unwrap(),
            GridSpec::new_1d(64, 32).unwrap(),
        ] {
            let s = estimate_step_sizes(&SolveConfig::default(), &g, None).unwrap();
            assert!((0.99..=1.0 + 1e-12).contains(&s.k_norm), "{}", s.k_norm);
            assert_eq!(s.tau, s.sigma);
            assert!(s.tau * s.sigma * s.k_norm * s.k_norm < 1.0);
        }
    }

    #[test]
    fn output_is_feasible_with_exact_boundary() {
        let g = GridSpec::new_1d(24, 12).unwrap();
        let b0 = pair_1d(&g, 0.8);
        let cfg = SolveConfig {
            beta: 4.0,
            max_iters: 300,
            ..Default::default()
        };
        let r = solve_chambolle_pock(&b0, &MetricField::identity(&g), &g, &cfg).unwrap();
        let plan = plan_for(&g, &cfg).unwrap();
        assert!(plan.constraint_residual(&r.u, &r.h).unwrap() <= 1e-8);
        assert_eq!(r.u.rho_slice(&g, 0), &b0.mu[..]);
        assert_eq!(r.u.rho_slice(&g, g.q()), &b0.nu[..]);
        let (m0, m1) = b0.masses(&g);
        assert_eq!(r.masses[0], m0);
        assert_eq!(r.masses[g.q()], m1);
    }

    #[test]
    fn best_objective_decreases_over_windows() {
        let g = GridSpec::new_1d(24, 12).unwrap();
        let b0 = pair_1d(&g, 1.2);
        let cfg = SolveConfig {
            beta: 4.0,
            max_iters: 1000,
            stop_tol: 1e-12,
            ..Default::default()
        };
        let r = solve_chambolle_pock(&b0, &MetricField::identity(&g), &g, &cfg).unwrap();
        let mut best = f64::INFINITY;
        let mut bests = Vec::new();
        for (i, v) in r.objective.iter().enumerate() {
            best = best.min(*v);
            if i >= 200 && (i - 200) % 200 == 0 {
                bests.push(best);
            }
        }
        assert!(bests.windows(2).all(|w| w[1] <= w[0]));
        // the objective rises from the infeasible-looking zero dual start and then settles
        let tail = &r.objective[r.objective.len() - 50..];
        let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - tail.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-3 * tail[0].abs());
    }

    #[test]
    fn balanced_requires_equal_masses() {
        let g = GridSpec::new_1d(16, 8).unwrap();
        let b0 = pair_1d(&g, 1.1);
        let cfg = SolveConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve_chambolle_pock(&b0, &MetricField::identity(&g), &g, &cfg),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn yan_without_secondary_matches_chambolle_pock() {
        let g = GridSpec::new_1d(16, 8).unwrap();
        let b0 = pair_1d(&g, 1.2);
        let cfg = SolveConfig {
            kind: ProblemKind::Kantorovich,
            beta: 4.0,
            max_iters: 400,
            ..Default::default()
        };
        let kernel = MarkovKernel::identity(
            g.cell_centers().iter().map(|c| vec![c[0]]).collect(),
        );
        let a = solve_yan(&b0, &kernel, &g, &cfg).unwrap();
        let b = solve_chambolle_pock(&b0, &MetricField::identity(&g), &g, &cfg).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.u, b.u);
    }

    fn yan_case(c2: f64, safety: f64) -> (SolveReport, StepSizes) {
        let g = GridSpec::new_1d(12, 6).unwrap();
        let b0 = pair_1d(&g, 1.2);
        let cfg = SolveConfig {
            kind: ProblemKind::Kantorovich,
            beta: 4.0,
            c1: 1.0,
            c2,
            max_iters: 60,
            grad_step_safety: safety,
            hk: HkOptions {
                eps_rel: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let pts: Vec<Vec<f64>> = g.cell_centers().iter().map(|c| vec![c[0]]).collect();
        let kernel = MarkovKernel::identity(pts);
        let plan = plan_for(&g, &cfg).unwrap();
        let start = initialize(&b0, &g, &plan).unwrap();
        let mut action = SecondaryAction::new(
            kernel.clone(),
            cfg.alpha,
            cfg.beta,
            vec![g.dt(); g.q()],
            g.spatial_volume(),
            cfg.hk,
        )
        .unwrap();
        let steps =
            estimate_step_sizes(&cfg, &g, Some((&mut action, &start.0, c2 / g.cell_volume()))).unwrap();
        (solve_yan(&b0, &kernel, &g, &cfg).unwrap(), steps)
    }

    #[test]
    fn stiff_smooth_term_caps_the_step() {
        let (r, s) = yan_case(1e3, 0.9);
        assert!(s.lipschitz > 0.0);
        assert!(s.tau < s.sigma);
        assert!((s.tau - 0.9 * 2.0 / s.lipschitz).abs() <= 1e-12 * s.tau);
        assert!(r.objective.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn oversized_gradient_step_is_shrunk() {
        let (r, _) = yan_case(1e3, 8.0);
        assert!(r.step_halvings > 0);
    }
}
