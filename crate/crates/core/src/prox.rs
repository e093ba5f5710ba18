//! The per-cell action `J(m, ρ, H) = α·mᵀAm/ρ + β·H²/ρ`, its proximal map and the
//! proximal map of its convex conjugate.
//!
//! `prox_{cJ}` reduces to a scalar equation `ρ̃ = φ(ρ̃)` for the output density,
//! where `φ` is convex and decreasing. The root is found by plain fixed-point
//! iteration, with a monotone Newton fallback on `ψ(ρ̃) = ρ̃ − φ(ρ̃)` (concave,
//! increasing) whenever the fixed-point map stops contracting.
//!
//! One-dimensional cells are stored as two-dimensional ones with `m[1] = 0` and
//! `A = diag(a, 1)`; every formula below is then exact for both dimensions.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    /// Symmetrized from a general 2×2 matrix given row-major.
    pub fn from_rows(r: [[f64; 2]; 2]) -> Self {
        Self {
            a11: r[0][0],
            a12: 0.5 * (r[0][1] + r[1][0]),
            a22: r[1][1],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a11: s * self.a11,
            a12: s * self.a12,
            a22: s * self.a22,
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a11 + self.a22);
        let half = 0.5 * (self.a11 - self.a22);
        let r = (half * half + self.a12 * self.a12).sqrt();
        [mean - r, mean + r]
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    #[inline]
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * x[0] + self.a12 * x[1],
            self.a12 * x[0] + self.a22 * x[1],
        ]
    }

    #[inline]
    pub fn quad(&self, x: [f64; 2]) -> f64 {
        self.a11 * x[0] * x[0] + 2.0 * self.a12 * x[0] * x[1] + self.a22 * x[1] * x[1]
    }

    #[inline]
    pub fn solve(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.det();
        [
            (self.a22 * x[0] - self.a12 * x[1]) / d,
            (self.a11 * x[1] - self.a12 * x[0]) / d,
        ]
    }
}

/// One centered cell `(m, ρ, H)`. In 1D `m[1]` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellState {
    pub m: [f64; 2],
    pub rho: f64,
    pub h: f64,
}

impl CellState {
    pub const ZERO: CellState = CellState {
        m: [0.0, 0.0],
        rho: 0.0,
        h: 0.0,
    };

    pub fn new(m: [f64; 2], rho: f64, h: f64) -> Self {
        Self { m, rho, h }
    }

    pub fn new_1d(m: f64, rho: f64, h: f64) -> Self {
        Self {
            m: [m, 0.0],
            rho,
            h,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            m: [s * self.m[0], s * self.m[1]],
            rho: s * self.rho,
            h: s * self.h,
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self {
            m: [self.m[0] - o.m[0], self.m[1] - o.m[1]],
            rho: self.rho - o.rho,
            h: self.h - o.h,
        }
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.m[0] * o.m[0] + self.m[1] * o.m[1] + self.rho * o.rho + self.h * o.h
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Parameters of one cell prox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub alpha: f64,
    /// `β = 0` drops the reaction term; `H` then passes through the prox unchanged.
    pub beta: f64,
    pub a: Sym2,
    pub c: f64,
    pub fp_tol: f64,
    pub fp_max: usize,
    /// Non-contracting fixed-point steps tolerated before switching to Newton.
    pub stall_limit: usize,
}

impl ProxParams {
    /// Validated constructor with default tolerances.
    pub fn new(alpha: f64, beta: f64, a: Sym2, c: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Param(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Param(format!("beta must be nonnegative, got {beta}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Param(format!("prox step must be positive, got {c}")));
        }
        let e = a.min_eig();
        if !(e > 0.0) {
            return Err(Error::NotSpd { cell: 0, min_eig: e });
        }
        Ok(Self::unchecked(alpha, beta, a, c))
    }

    pub(crate) fn unchecked(alpha: f64, beta: f64, a: Sym2, c: f64) -> Self {
        Self {
            alpha,
            beta,
            a,
            c,
            fp_tol: 1e-11,
            fp_max: 200,
            stall_limit: 50,
        }
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..*self }
    }
}

/// `J` on the extended reals.
pub fn eval_j(cell: &CellState, p: &ProxParams) -> f64 {
    let reaction = p.beta > 0.0;
    if cell.rho > 0.0 {
        let mut v = p.alpha * p.a.quad(cell.m) / cell.rho;
        if reaction {
            v += p.beta * cell.h * cell.h / cell.rho;
        }
        v
    } else if cell.rho == 0.0 && cell.m == [0.0, 0.0] && (!reaction || cell.h == 0.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `φ` together with its derivative.
#[inline]
fn phi_and_slope(r: f64, x: &CellState, p: &ProxParams) -> (f64, f64) {
    let k = 2.0 * p.c * p.alpha;
    let b = Sym2 {
        a11: k * p.a.a11 + r,
        a12: k * p.a.a12,
        a22: k * p.a.a22 + r,
    };
    let v = b.solve(x.m);
    let av = p.a.apply(v);
    let bv = b.solve(v);
    let mut phi = x.rho + p.c * p.alpha * (v[0] * av[0] + v[1] * av[1]);
    let mut slope = -2.0 * p.c * p.alpha * (bv[0] * av[0] + bv[1] * av[1]);
    if p.beta > 0.0 {
        let d = 2.0 * p.c * p.beta + r;
        let t = p.c * p.beta * x.h * x.h;
        phi += t / (d * d);
        slope -= 2.0 * t / (d * d * d);
    }
    (phi, slope)
}

/// `φ(ρ̃) = ρ + cα·vᵀAv + cβH²/(2cβ + ρ̃)²` with `v = (2cαA + ρ̃I)⁻¹m`.
///
/// Defined for `ρ̃ ≥ 0`; the value at `0` is the limit `φ(0⁺)`.
pub fn phi(rho_t: f64, cell: &CellState, p: &ProxParams) -> f64 {
    phi_and_slope(rho_t, cell, p).0
}

/// Closed-form `φ(0⁺) = ρ + mᵀ(αA)⁻¹m/(4c) + H²/(4cβ)`.
pub fn phi_at_zero(cell: &CellState, p: &ProxParams) -> f64 {
    let w = p.a.solve(cell.m);
    let mut v = cell.rho + (cell.m[0] * w[0] + cell.m[1] * w[1]) / (4.0 * p.c * p.alpha);
    if p.beta > 0.0 {
        v += cell.h * cell.h / (4.0 * p.c * p.beta);
    }
    v
}

/// Root of `ρ̃ = φ(ρ̃)` on `[max(ρ,0), φ(0⁺)]`, assuming `φ(0⁺) > 0`.
fn density_root(x: &CellState, p: &ProxParams) -> Result<f64> {
    let lo = x.rho.max(0.0);
    if x.m == [0.0, 0.0] && (p.beta == 0.0 || x.h == 0.0) {
        return Ok(lo);
    }

    let mut r = x.rho.max(1e-12);
    let mut last_step = f64::INFINITY;
    let mut stalls = 0;
    for _ in 0..p.fp_max {
        let next = phi(r, x, p);
        if !(next > 0.0) || !next.is_finite() {
            break;
        }
        let step = (next - r).abs();
        r = next;
        if step <= p.fp_tol * r.max(1.0) {
            return Ok(r);
        }
        if step >= last_step {
            stalls += 1;
            if stalls >= p.stall_limit {
                break;
            }
        }
        last_step = step;
    }

    // ψ is concave and increasing with ψ(lo) ≤ 0, so Newton from the left end
    // increases monotonically to the root.
    let hi = phi_at_zero(x, p);
    let mut r = lo;
    for _ in 0..200 {
        let (f, s) = phi_and_slope(r, x, p);
        let psi = r - f;
        if psi >= 0.0 {
            return Ok(r);
        }
        let next = (r - psi / (1.0 - s)).min(hi);
        if next - r <= p.fp_tol * r.max(1.0) {
            return Ok(next);
        }
        r = next;
    }
    Err(Error::Convergence {
        what: "prox density root",
        last: r,
    })
}

/// `prox_{cJ}(x) = argmin_y J(y) + ‖y − x‖²/(2c)`.
pub fn prox_j(cell: &CellState, p: &ProxParams) -> Result<CellState> {
    if phi_at_zero(cell, p) <= 0.0 {
        return Ok(CellState::ZERO);
    }
    let r = density_root(cell, p)?;
    if r <= 0.0 {
        return Ok(CellState::ZERO);
    }
    let k = 2.0 * p.c * p.alpha;
    let b = Sym2 {
        a11: k * p.a.a11 + r,
        a12: k * p.a.a12,
        a22: k * p.a.a22 + r,
    };
    let v = b.solve(cell.m);
    let h = if p.beta > 0.0 {
        r * cell.h / (2.0 * p.c * p.beta + r)
    } else {
        cell.h
    };
    Ok(CellState {
        m: [r * v[0], r * v[1]],
        rho: r,
        h,
    })
}

/// `prox_{σJ*}(x) = x − σ·prox_{J/σ}(x/σ)`.
pub fn prox_j_conjugate(dual: &CellState, sigma: f64, p: &ProxParams) -> Result<CellState> {
    if !(sigma > 0.0) {
        return Err(Error::Param(format!("dual step must be positive, got {sigma}")));
    }
    let y = prox_j(&dual.scaled(1.0 / sigma), &p.with_c(1.0 / sigma))?;
    Ok(dual.sub(&y.scaled(sigma)))
}

/// Scaled gradient `c·∇_y[J(y) + ‖y − x‖²/(2c)]` at `y` with `y.rho > 0`.
///
/// Vanishes exactly at `y = prox_{cJ}(x)` when the prox has positive density.
pub fn stationarity_residual(y: &CellState, x: &CellState, p: &ProxParams) -> CellState {
    let am = p.a.apply(y.m);
    let s = 2.0 * p.c * p.alpha / y.rho;
    let mut rho_term = y.rho - x.rho - p.c * p.alpha * p.a.quad(y.m) / (y.rho * y.rho);
    let h = if p.beta > 0.0 {
        rho_term -= p.c * p.beta * y.h * y.h / (y.rho * y.rho);
        y.h - x.h + 2.0 * p.c * p.beta * y.h / y.rho
    } else {
        y.h - x.h
    };
    CellState {
        m: [y.m[0] - x.m[0] + s * am[0], y.m[1] - x.m[1] + s * am[1]],
        rho: rho_term,
        h,
    }
}

/// Distance of a dual point from `dom J* = {b + aᵀ(αA)⁻¹a/4 + h²/(4β) ≤ 0}`;
/// nonpositive inside.
pub fn conjugate_constraint(z: &CellState, p: &ProxParams) -> f64 {
    let w = p.a.solve(z.m);
    let mut v = z.rho + (z.m[0] * w[0] + z.m[1] * w[1]) / (4.0 * p.alpha);
    if p.beta > 0.0 {
        v += z.h * z.h / (4.0 * p.beta);
    } else if z.h != 0.0 {
        return f64::INFINITY;
    }
    v
}

/// Cellwise view over centered momentum, density and growth arrays.
pub struct CellFieldMut<'a> {
    pub m: &'a mut [f64],
    /// Empty in 1D.
    pub n: &'a mut [f64],
    pub rho: &'a mut [f64],
    pub h: &'a mut [f64],
}

impl CellFieldMut<'_> {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize) -> CellState {
        CellState {
            m: [self.m[c], if self.n.is_empty() { 0.0 } else { self.n[c] }],
            rho: self.rho[c],
            h: self.h[c],
        }
    }

    #[inline]
    pub fn set(&mut self, c: usize, v: &CellState) {
        self.m[c] = v.m[0];
        if !self.n.is_empty() {
            self.n[c] = v.m[1];
        }
        self.rho[c] = v.rho;
        self.h[c] = v.h;
    }
}

/// Applies `f(cell_index, state)` to every cell in parallel and writes the result back.
///
/// `metric[c % metric.len()]` is the metric of cell `c`, so a per-spatial-cell
/// field broadcasts over time slices.
pub fn map_cells<F>(field: &mut CellFieldMut<'_>, f: F) -> Result<()>
where
    F: Fn(usize, &CellState) -> Result<CellState> + Sync,
{
    let len = field.len();
    let out: Vec<CellState> = {
        let view = &*field;
        (0..len)
            .into_par_iter()
            .map(|c| f(c, &view.get(c)))
            .collect::<Result<_>>()?
    };
    for (c, v) in out.iter().enumerate() {
        field.set(c, v);
    }
    Ok(())
}

/// `prox_{cJ}` at every cell, cell `c` using `metric[c % metric.len()]`.
pub fn prox_j_field(
    field: &mut CellFieldMut<'_>,
    metric: &[Sym2],
    alpha: f64,
    beta: f64,
    c: f64,
) -> Result<()> {
    if metric.is_empty() {
        return Err(Error::Param("empty metric field".into()));
    }
    let base = ProxParams::new(alpha, beta, Sym2::IDENTITY, c)?;
    map_cells(field, |i, x| {
        let p = ProxParams {
            a: metric[i % metric.len()],
            ..base
        };
        prox_j(x, &p)
    })
}
