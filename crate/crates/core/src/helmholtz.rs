//! Exact projection onto the discrete continuity-with-source constraint.
//!
//! The constraint operator is `A(U, H) = w_x·D_x m + w_y·D_y n + w_t·D_t ρ − β·H`
//! with `w = (α, α, α)` by default, or `w = (α, α, 1)` for the continuity form.
//! `A A*` is the Neumann Helmholtz operator `β² − Σ_q w_q² D_q²`, which is
//! diagonal in the separable DCT-II basis.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{
    apply_boundary, weighted_divergence_into, weighted_gradient_into, AxisWeights, BoundaryData,
    GridSpec, StaggeredField,
};

/// Which axes the transport weight `α` multiplies in the constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintForm {
    /// `α·div(U) − β·H`, time derivative included.
    #[default]
    Uniform,
    /// `D_t ρ + α·div_x(m) − β·H`.
    Continuity,
}

mod dct {
    use super::*;

    /// Unnormalized DCT-II / DCT-III pair of one length, through a 2N complex FFT.
    pub(super) struct Dct {
        n: usize,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
        /// `e^{-iπk/(2N)}`
        twiddle: Vec<Complex64>,
    }

    pub(super) struct DctScratch {
        buf: Vec<Complex64>,
        work: Vec<Complex64>,
    }

    impl Dct {
        pub fn new(n: usize, planner: &mut FftPlanner<f64>) -> Self {
            let fwd = planner.plan_fft_forward(2 * n);
            let inv = planner.plan_fft_inverse(2 * n);
            let twiddle = (0..n)
                .map(|k| Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * n) as f64))
                .collect();
            Self { n, fwd, inv, twiddle }
        }

        pub fn scratch(&self) -> DctScratch {
            let len = self
                .fwd
                .get_inplace_scratch_len()
                .max(self.inv.get_inplace_scratch_len());
            DctScratch {
                buf: vec![Complex64::default(); 2 * self.n],
                work: vec![Complex64::default(); len],
            }
        }

        /// `X_k = Σ_n x_n cos(πk(n+½)/N)`
        pub fn forward(&self, x: &mut [f64], s: &mut DctScratch) {
            let n = self.n;
            for i in 0..n {
                s.buf[i] = Complex64::new(x[i], 0.0);
                s.buf[2 * n - 1 - i] = Complex64::new(x[i], 0.0);
            }
            self.fwd.process_with_scratch(&mut s.buf, &mut s.work);
            for k in 0..n {
                x[k] = 0.5 * (self.twiddle[k] * s.buf[k]).re;
            }
        }

        /// Inverse of [`Dct::forward`].
        pub fn inverse(&self, x: &mut [f64], s: &mut DctScratch) {
            let n = self.n;
            let nf = n as f64;
            for k in 0..n {
                let w = if k == 0 { 1.0 / nf } else { 2.0 / nf };
                s.buf[k] = self.twiddle[k].conj() * (w * x[k]);
            }
            for v in &mut s.buf[n..] {
                *v = Complex64::default();
            }
            self.inv.process_with_scratch(&mut s.buf, &mut s.work);
            for i in 0..n {
                x[i] = s.buf[i].re;
            }
        }
    }
}

use dct::Dct;

/// Precomputed Helmholtz solver for one grid and weight set.
///
/// Immutable after construction and safe to share between threads.
pub struct HelmholtzPlan {
    grid: GridSpec,
    alpha: f64,
    beta: f64,
    form: ConstraintForm,
    weights: AxisWeights,
    symbol: Vec<f64>,
    dct_x: Dct,
    dct_y: Option<Dct>,
    dct_t: Dct,
}

impl std::fmt::Debug for HelmholtzPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzPlan")
            .field("grid", &self.grid)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("form", &self.form)
            .finish()
    }
}

/// Caller-owned work buffer for [`HelmholtzPlan::solve_into`].
#[derive(Debug, Default, Clone)]
pub struct HelmholtzScratch {
    transposed: Vec<f64>,
    rhs: Vec<f64>,
    s: Vec<f64>,
}

fn axis_symbol(n: usize, h: f64, w: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / n as f64;
            w * w * (2.0 - 2.0 * t.cos()) / (h * h)
        })
        .collect()
}

impl HelmholtzPlan {
    pub fn new(grid: GridSpec, alpha: f64, beta: f64, form: ConstraintForm) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Param(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Param(format!("beta must be nonnegative, got {beta}")));
        }
        let weights = match form {
            ConstraintForm::Uniform => AxisWeights {
                x: alpha,
                y: alpha,
                t: alpha,
            },
            ConstraintForm::Continuity => AxisWeights {
                x: alpha,
                y: alpha,
                t: 1.0,
            },
        };
        let sx = axis_symbol(grid.m(), grid.dx(), weights.x);
        let sy = if grid.dim() == 2 {
            axis_symbol(grid.n(), grid.dy(), weights.y)
        } else {
            vec![0.0]
        };
        let st = axis_symbol(grid.q(), grid.dt(), weights.t);
        let mut symbol = Vec::with_capacity(grid.centered_len());
        for k in 0..grid.q() {
            for j in 0..grid.n() {
                for i in 0..grid.m() {
                    symbol.push(beta * beta + sx[i] + sy[j] + st[k]);
                }
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            alpha,
            beta,
            form,
            weights,
            symbol,
            dct_x: Dct::new(grid.m(), &mut planner),
            dct_y: (grid.dim() == 2).then(|| Dct::new(grid.n(), &mut planner)),
            dct_t: Dct::new(grid.q(), &mut planner),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn form(&self) -> ConstraintForm {
        self.form
    }

    /// Eigenvalue of `A A*` for DCT mode `(i, j, k)`, in centered storage order.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Applies a transform along every axis. `forward` selects DCT-II or DCT-III.
    fn transform(&self, data: &mut [f64], scratch: &mut Vec<f64>, forward: bool) {
        let g = &self.grid;
        let (mm, nn, qq) = (g.m(), g.n(), g.q());
        let run = |dct: &Dct, lines: &mut [f64], len: usize| {
            lines
                .par_chunks_mut(len)
                .for_each_init(|| dct.scratch(), |s, line| {
                    if forward {
                        dct.forward(line, s)
                    } else {
                        dct.inverse(line, s)
                    }
                });
        };

        run(&self.dct_x, data, mm);

        scratch.resize(data.len(), 0.0);
        if let Some(dct_y) = &self.dct_y {
            // y fastest: index (k*M + i)*N + j
            scratch
                .par_chunks_mut(nn)
                .enumerate()
                .for_each(|(line, out)| {
                    let (k, i) = (line / mm, line % mm);
                    for (j, v) in out.iter_mut().enumerate() {
                        *v = data[(k * nn + j) * mm + i];
                    }
                });
            run(dct_y, scratch, nn);
            data.par_chunks_mut(mm * nn)
                .enumerate()
                .for_each(|(k, slab)| {
                    for j in 0..nn {
                        for i in 0..mm {
                            slab[j * mm + i] = scratch[(k * mm + i) * nn + j];
                        }
                    }
                });
        }

        // t fastest: index s*Q + k with s the spatial index
        let sl = mm * nn;
        scratch.par_chunks_mut(qq).enumerate().for_each(|(s, out)| {
            for (k, v) in out.iter_mut().enumerate() {
                *v = data[k * sl + s];
            }
        });
        run(&self.dct_t, scratch, qq);
        data.par_chunks_mut(sl).enumerate().for_each(|(k, slab)| {
            for (s, v) in slab.iter_mut().enumerate() {
                *v = scratch[s * qq + k];
            }
        });
    }

    /// Solves `(β² − Σ_q w_q² D_q²) s = rhs` with Neumann ghost cells.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.centered_len()];
        let mut scratch = HelmholtzScratch::default();
        self.solve_into(rhs, &mut out, &mut scratch)?;
        Ok(out)
    }

    pub fn solve_into(
        &self,
        rhs: &[f64],
        out: &mut [f64],
        scratch: &mut HelmholtzScratch,
    ) -> Result<()> {
        self.solve_with_floor(rhs, out, scratch, 0.0)
    }

    /// `floor` raises the zero-mode tolerance to `max(‖rhs‖, floor)·1e-10`, for right-hand
    /// sides that are differences of much larger terms.
    fn solve_with_floor(
        &self,
        rhs: &[f64],
        out: &mut [f64],
        scratch: &mut HelmholtzScratch,
        floor: f64,
    ) -> Result<()> {
        check_len("helmholtz rhs", self.grid.centered_len(), rhs.len())?;
        check_len("helmholtz solution", self.grid.centered_len(), out.len())?;
        out.copy_from_slice(rhs);
        self.transform(out, &mut scratch.transposed, true);
        if self.beta == 0.0 {
            // forward coefficient of the constant mode is the plain sum
            let n = out.len() as f64;
            let zero_mode = out[0].abs() / n.sqrt();
            let norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = 1e-10 * norm.max(floor);
            if zero_mode > bound {
                return Err(Error::Incompatible { zero_mode, bound });
            }
            out[0] = 0.0;
            out[1..]
                .par_iter_mut()
                .zip(&self.symbol[1..])
                .for_each(|(v, l)| *v /= l);
        } else {
            out.par_iter_mut()
                .zip(&self.symbol)
                .for_each(|(v, l)| *v /= l);
        }
        self.transform(out, &mut scratch.transposed, false);
        Ok(())
    }

    /// `A(U, H)` on the centered grid.
    pub fn apply_constraint(&self, u: &StaggeredField, h: &[f64]) -> Result<Vec<f64>> {
        u.check(&self.grid)?;
        check_len("growth", self.grid.centered_len(), h.len())?;
        let mut out = vec![0.0; self.grid.centered_len()];
        self.constraint_into(u, h, &mut out);
        Ok(out)
    }

    fn constraint_into(&self, u: &StaggeredField, h: &[f64], out: &mut [f64]) {
        weighted_divergence_into(u, &self.grid, self.weights, out);
        if self.beta != 0.0 {
            for (o, hv) in out.iter_mut().zip(h) {
                *o -= self.beta * hv;
            }
        }
    }

    /// `A*s`: staggered part is zero on boundary faces.
    pub fn apply_adjoint(&self, s: &[f64]) -> Result<(StaggeredField, Vec<f64>)> {
        check_len("centered scalar", self.grid.centered_len(), s.len())?;
        let mut u = StaggeredField::zeros(&self.grid);
        weighted_gradient_into(s, &self.grid, self.weights, -1.0, &mut u);
        Ok((u, s.iter().map(|v| -self.beta * v).collect()))
    }

    /// `‖A(U, H)‖_∞`.
    pub fn constraint_residual(&self, u: &StaggeredField, h: &[f64]) -> Result<f64> {
        Ok(self
            .apply_constraint(u, h)?
            .iter()
            .fold(0.0, |a: f64, v| a.max(v.abs())))
    }

    /// Projects `(U, H)` in place onto `{A(U, H) = 0, b(U) = b₀}`.
    pub fn project(
        &self,
        u: &mut StaggeredField,
        h: &mut [f64],
        b0: &BoundaryData,
        scratch: &mut HelmholtzScratch,
    ) -> Result<()> {
        let g = &self.grid;
        u.check(g)?;
        check_len("growth", g.centered_len(), h.len())?;
        check_len("initial density", g.spatial_len(), b0.mu.len())?;
        check_len("terminal density", g.spatial_len(), b0.nu.len())?;
        apply_boundary(u, b0, g);
        let mut rhs = std::mem::take(&mut scratch.rhs);
        let mut s = std::mem::take(&mut scratch.s);
        rhs.resize(g.centered_len(), 0.0);
        s.resize(g.centered_len(), 0.0);
        self.constraint_into(u, h, &mut rhs);
        let floor = if self.beta == 0.0 {
            let w = self.weights;
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.x / g.dx() * norm(&u.m) + w.y / g.dy() * norm(&u.n) + w.t / g.dt() * norm(&u.rho)
        } else {
            0.0
        };
        let solved = self.solve_with_floor(&rhs, &mut s, scratch, floor);
        if solved.is_ok() {
            weighted_gradient_into(&s, g, self.weights, 1.0, u);
            if self.beta != 0.0 {
                for (hv, sv) in h.iter_mut().zip(&s) {
                    *hv += self.beta * sv;
                }
            }
        }
        scratch.rhs = rhs;
        scratch.s = s;
        solved
    }
}

/// Returns the projection of `(U, H)` onto the constraint set with boundary data `b₀`.
pub fn project_constraints(
    u: &StaggeredField,
    h: &[f64],
    b0: &BoundaryData,
    plan: &HelmholtzPlan,
) -> Result<(StaggeredField, Vec<f64>)> {
    let mut u = u.clone();
    let mut h = h.to_vec();
    plan.project(&mut u, &mut h, b0, &mut HelmholtzScratch::default())?;
    Ok((u, h))
}
