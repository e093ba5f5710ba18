//! Uniform staggered and centered space-time grids on `[0,1]^dim × [0,1]`.
//!
//! Unknowns live on three staggered index sets: x-momentum on x-faces
//! (`(M+1)×N×Q`), y-momentum on y-faces (`M×(N+1)×Q`, absent in 1D) and density
//! on time faces (`M×N×(Q+1)`). Growth and all dual variables live on the
//! centered set `M×N×Q`. Every array is flat with `x` fastest and `t` slowest,
//! so a density time slice is one contiguous block of `M·N` values.
//!
//! In 1D the y-axis is compiled out: `N = 1` and the `n` channel is empty.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Cell counts of the space-time grid. Cell widths are `1/M`, `1/N`, `1/Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    m: usize,
    n: usize,
    q: usize,
}

impl GridSpec {
    pub fn new_1d(m: usize, q: usize) -> Result<Self> {
        Self::new(1, m, 1, q)
    }

    pub fn new_2d(m: usize, n: usize, q: usize) -> Result<Self> {
        Self::new(2, m, n, q)
    }

    pub fn new(dim: usize, m: usize, n: usize, q: usize) -> Result<Self> {
        match dim {
            1 => {
                if m < 2 || q < 2 {
                    return Err(Error::Param(format!("grid needs M, Q >= 2, got M={m} Q={q}")));
                }
                Ok(Self { dim, m, n: 1, q })
            }
            2 => {
                if m < 2 || n < 2 || q < 2 {
                    return Err(Error::Param(format!(
                        "grid needs M, N, Q >= 2, got M={m} N={n} Q={q}"
                    )));
                }
                Ok(Self { dim, m, n, q })
            }
            _ => Err(Error::Param(format!("dimension must be 1 or 2, got {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn dx(&self) -> f64 {
        1.0 / self.m as f64
    }
    /// `1` in 1D so that spatial volumes stay `Δx`.
    pub fn dy(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            1.0 / self.n as f64
        }
    }
    pub fn dt(&self) -> f64 {
        1.0 / self.q as f64
    }

    /// Spatial cell volume `Δx·Δy` (just `Δx` in 1D).
    pub fn spatial_volume(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Space-time cell volume.
    pub fn cell_volume(&self) -> f64 {
        self.spatial_volume() * self.dt()
    }

    /// Number of spatial cells `M·N`.
    pub fn spatial_len(&self) -> usize {
        self.m * self.n
    }

    pub fn centered_len(&self) -> usize {
        self.m * self.n * self.q
    }

    pub fn m_len(&self) -> usize {
        (self.m + 1) * self.n * self.q
    }

    pub fn n_len(&self) -> usize {
        if self.dim == 1 {
            0
        } else {
            self.m * (self.n + 1) * self.q
        }
    }

    pub fn rho_len(&self) -> usize {
        self.m * self.n * (self.q + 1)
    }

    #[inline]
    pub fn idx_c(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.m + i
    }

    /// x-face `i` sits at `x = iΔx`, between cells `i-1` and `i`.
    #[inline]
    pub fn idx_m(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * (self.m + 1) + i
    }

    #[inline]
    pub fn idx_n(&self, i: usize, j: usize, k: usize) -> usize {
        (k * (self.n + 1) + j) * self.m + i
    }

    /// Time face `k` sits at `t = kΔt`.
    #[inline]
    pub fn idx_rho(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.m + i
    }

    /// Center `((i+½)Δx, (j+½)Δy)` of spatial cell `j·M + i`; `y = 0` in 1D.
    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell % self.m, cell / self.m);
        let y = if self.dim == 1 {
            0.0
        } else {
            (j as f64 + 0.5) * self.dy()
        };
        [(i as f64 + 0.5) * self.dx(), y]
    }

    /// All spatial cell centers in storage order.
    pub fn cell_centers(&self) -> Vec<[f64; 2]> {
        (0..self.spatial_len()).map(|c| self.cell_center(c)).collect()
    }
}

/// Primal unknowns `(m_s, n_s, ρ_s)` on the staggered index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    pub m: Vec<f64>,
    /// Empty in 1D.
    pub n: Vec<f64>,
    pub rho: Vec<f64>,
}

impl StaggeredField {
    pub fn zeros(g: &GridSpec) -> Self {
        Self {
            m: vec![0.0; g.m_len()],
            n: vec![0.0; g.n_len()],
            rho: vec![0.0; g.rho_len()],
        }
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        check_len("staggered m", g.m_len(), self.m.len())?;
        check_len("staggered n", g.n_len(), self.n.len())?;
        check_len("staggered rho", g.rho_len(), self.rho.len())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.m, &other.m) + dot(&self.n, &other.n) + dot(&self.rho, &other.rho)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self += a·other`
    pub fn add_scaled(&mut self, a: f64, other: &Self) {
        axpy(&mut self.m, a, &other.m);
        axpy(&mut self.n, a, &other.n);
        axpy(&mut self.rho, a, &other.rho);
    }

    /// One density time slice (`M·N` values) at time face `k`.
    pub fn rho_slice(&self, g: &GridSpec, k: usize) -> &[f64] {
        let s = g.spatial_len();
        &self.rho[k * s..(k + 1) * s]
    }

    /// `Σ_ij ρ_{ij,k}·Δx·Δy` for every time face `k = 0..=Q`.
    pub fn slice_masses(&self, g: &GridSpec) -> Vec<f64> {
        (0..=g.q())
            .map(|k| self.rho_slice(g, k).iter().sum::<f64>() * g.spatial_volume())
            .collect()
    }
}

/// Centered samples of the interpolated primal `(m_c, n_c, ρ_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredField {
    pub m: Vec<f64>,
    /// Empty in 1D.
    pub n: Vec<f64>,
    pub rho: Vec<f64>,
}

impl CenteredField {
    pub fn zeros(g: &GridSpec) -> Self {
        let len = g.centered_len();
        Self {
            m: vec![0.0; len],
            n: if g.dim() == 2 { vec![0.0; len] } else { Vec::new() },
            rho: vec![0.0; len],
        }
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        let len = g.centered_len();
        check_len("centered m", len, self.m.len())?;
        check_len("centered n", if g.dim() == 2 { len } else { 0 }, self.n.len())?;
        check_len("centered rho", len, self.rho.len())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.m, &other.m) + dot(&self.n, &other.n) + dot(&self.rho, &other.rho)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Initial and terminal densities on the spatial centered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl BoundaryData {
    pub fn new(g: &GridSpec, mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        check_len("initial density", g.spatial_len(), mu.len())?;
        check_len("terminal density", g.spatial_len(), nu.len())?;
        if mu.iter().chain(nu.iter()).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Param("marginal densities must be finite and nonnegative".into()));
        }
        Ok(Self { mu, nu })
    }

    pub fn masses(&self, g: &GridSpec) -> (f64, f64) {
        let v = g.spatial_volume();
        (self.mu.iter().sum::<f64>() * v, self.nu.iter().sum::<f64>() * v)
    }
}

/// The six boundary slabs of a staggered field.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    /// x-faces `i = 0` and `i = M`, each `N·Q` values.
    pub m_lo: Vec<f64>,
    pub m_hi: Vec<f64>,
    /// y-faces `j = 0` and `j = N`, each `M·Q` values (empty in 1D).
    pub n_lo: Vec<f64>,
    pub n_hi: Vec<f64>,
    /// Time faces `k = 0` and `k = Q`, each `M·N` values.
    pub rho_lo: Vec<f64>,
    pub rho_hi: Vec<f64>,
}

/// Per-axis weights of a weighted space-time divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AxisWeights {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Midpoint interpolation from staggered faces to cell centers.
pub fn interpolate(u: &StaggeredField, g: &GridSpec) -> Result<CenteredField> {
    u.check(g)?;
    let mut out = CenteredField::zeros(g);
    interpolate_into(u, g, &mut out);
    Ok(out)
}

pub(crate) fn interpolate_into(u: &StaggeredField, g: &GridSpec, out: &mut CenteredField) {
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    for k in 0..qq {
        for j in 0..nn {
            for i in 0..mm {
                let c = g.idx_c(i, j, k);
                out.m[c] = 0.5 * (u.m[g.idx_m(i, j, k)] + u.m[g.idx_m(i + 1, j, k)]);
                if g.dim() == 2 {
                    out.n[c] = 0.5 * (u.n[g.idx_n(i, j, k)] + u.n[g.idx_n(i, j + 1, k)]);
                }
                out.rho[c] = 0.5 * (u.rho[g.idx_rho(i, j, k)] + u.rho[g.idx_rho(i, j, k + 1)]);
            }
        }
    }
}

/// Exact adjoint of [`interpolate`].
pub fn interpolate_adjoint(v: &CenteredField, g: &GridSpec) -> Result<StaggeredField> {
    v.check(g)?;
    let mut out = StaggeredField::zeros(g);
    interpolate_adjoint_into(v, g, &mut out);
    Ok(out)
}

pub(crate) fn interpolate_adjoint_into(v: &CenteredField, g: &GridSpec, out: &mut StaggeredField) {
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    out.m.iter_mut().for_each(|x| *x = 0.0);
    out.n.iter_mut().for_each(|x| *x = 0.0);
    out.rho.iter_mut().for_each(|x| *x = 0.0);
    for k in 0..qq {
        for j in 0..nn {
            for i in 0..mm {
                let c = g.idx_c(i, j, k);
                let hm = 0.5 * v.m[c];
                out.m[g.idx_m(i, j, k)] += hm;
                out.m[g.idx_m(i + 1, j, k)] += hm;
                if g.dim() == 2 {
                    let hn = 0.5 * v.n[c];
                    out.n[g.idx_n(i, j, k)] += hn;
                    out.n[g.idx_n(i, j + 1, k)] += hn;
                }
                let hr = 0.5 * v.rho[c];
                out.rho[g.idx_rho(i, j, k)] += hr;
                out.rho[g.idx_rho(i, j, k + 1)] += hr;
            }
        }
    }
}

/// Space-time divergence `D_x m + D_y n + D_t ρ` on the centered grid.
pub fn divergence(u: &StaggeredField, g: &GridSpec) -> Result<Vec<f64>> {
    u.check(g)?;
    let mut out = vec![0.0; g.centered_len()];
    weighted_divergence_into(u, g, AxisWeights { x: 1.0, y: 1.0, t: 1.0 }, &mut out);
    Ok(out)
}

pub(crate) fn weighted_divergence_into(
    u: &StaggeredField,
    g: &GridSpec,
    w: AxisWeights,
    out: &mut [f64],
) {
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    let (cx, cy, ct) = (w.x / g.dx(), w.y / g.dy(), w.t / g.dt());
    for k in 0..qq {
        for j in 0..nn {
            for i in 0..mm {
                let mut d = cx * (u.m[g.idx_m(i + 1, j, k)] - u.m[g.idx_m(i, j, k)])
                    + ct * (u.rho[g.idx_rho(i, j, k + 1)] - u.rho[g.idx_rho(i, j, k)]);
                if g.dim() == 2 {
                    d += cy * (u.n[g.idx_n(i, j + 1, k)] - u.n[g.idx_n(i, j, k)]);
                }
                out[g.idx_c(i, j, k)] = d;
            }
        }
    }
}

/// Adjoint of the constraint operator `(U, H) ↦ α·div(U) − β·H`.
///
/// Staggered components are `−α·(backward difference of s)` on interior faces and
/// zero on boundary faces (Neumann ghost cells); the centered component is `−β·s`.
pub fn divergence_adjoint(
    s: &[f64],
    g: &GridSpec,
    alpha: f64,
    beta: f64,
) -> Result<(StaggeredField, Vec<f64>)> {
    check_len("centered scalar", g.centered_len(), s.len())?;
    let mut u = StaggeredField::zeros(g);
    weighted_gradient_into(
        s,
        g,
        AxisWeights {
            x: alpha,
            y: alpha,
            t: alpha,
        },
        -1.0,
        &mut u,
    );
    let h = s.iter().map(|v| -beta * v).collect();
    Ok((u, h))
}

/// `u[interior faces] += scale·w_q·(s_i − s_{i−1})/Δq`; boundary faces untouched.
pub(crate) fn weighted_gradient_into(
    s: &[f64],
    g: &GridSpec,
    w: AxisWeights,
    scale: f64,
    u: &mut StaggeredField,
) {
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    let (cx, cy, ct) = (scale * w.x / g.dx(), scale * w.y / g.dy(), scale * w.t / g.dt());
    for k in 0..qq {
        for j in 0..nn {
            for i in 1..mm {
                u.m[g.idx_m(i, j, k)] += cx * (s[g.idx_c(i, j, k)] - s[g.idx_c(i - 1, j, k)]);
            }
        }
    }
    if g.dim() == 2 {
        for k in 0..qq {
            for j in 1..nn {
                for i in 0..mm {
                    u.n[g.idx_n(i, j, k)] += cy * (s[g.idx_c(i, j, k)] - s[g.idx_c(i, j - 1, k)]);
                }
            }
        }
    }
    for k in 1..qq {
        for j in 0..nn {
            for i in 0..mm {
                u.rho[g.idx_rho(i, j, k)] += ct * (s[g.idx_c(i, j, k)] - s[g.idx_c(i, j, k - 1)]);
            }
        }
    }
}

pub fn boundary_read(u: &StaggeredField, g: &GridSpec) -> Result<BoundaryTrace> {
    u.check(g)?;
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    let mut t = BoundaryTrace {
        m_lo: Vec::with_capacity(nn * qq),
        m_hi: Vec::with_capacity(nn * qq),
        n_lo: Vec::new(),
        n_hi: Vec::new(),
        rho_lo: u.rho_slice(g, 0).to_vec(),
        rho_hi: u.rho_slice(g, qq).to_vec(),
    };
    for k in 0..qq {
        for j in 0..nn {
            t.m_lo.push(u.m[g.idx_m(0, j, k)]);
            t.m_hi.push(u.m[g.idx_m(mm, j, k)]);
        }
    }
    if g.dim() == 2 {
        for k in 0..qq {
            for i in 0..mm {
                t.n_lo.push(u.n[g.idx_n(i, 0, k)]);
                t.n_hi.push(u.n[g.idx_n(i, nn, k)]);
            }
        }
    }
    Ok(t)
}

/// Overwrite the boundary slabs with zero flux and the prescribed marginals.
pub fn boundary_write(u: &mut StaggeredField, b0: &BoundaryData, g: &GridSpec) -> Result<()> {
    u.check(g)?;
    check_len("initial density", g.spatial_len(), b0.mu.len())?;
    check_len("terminal density", g.spatial_len(), b0.nu.len())?;
    apply_boundary(u, b0, g);
    Ok(())
}

pub(crate) fn apply_boundary(u: &mut StaggeredField, b0: &BoundaryData, g: &GridSpec) {
    let (mm, nn, qq) = (g.m(), g.n(), g.q());
    for k in 0..qq {
        for j in 0..nn {
            u.m[g.idx_m(0, j, k)] = 0.0;
            u.m[g.idx_m(mm, j, k)] = 0.0;
        }
    }
    if g.dim() == 2 {
        for k in 0..qq {
            for i in 0..mm {
                u.n[g.idx_n(i, 0, k)] = 0.0;
                u.n[g.idx_n(i, nn, k)] = 0.0;
            }
        }
    }
    let s = g.spatial_len();
    u.rho[..s].copy_from_slice(&b0.mu);
    u.rho[qq * s..].copy_from_slice(&b0.nu);
}
