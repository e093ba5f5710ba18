//! Metrics induced by embedding maps, and Markov kernels into a secondary space.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::GridSpec;
use crate::prox::Sym2;

/// An embedding `T` of the unit square (or interval) into `ℝⁿ`.
///
/// Graph maps have the form `T(x) = (x, F(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// `T(x) = x`.
    Identity,
    /// Graph of `height·exp(−|x − center|²/(2·width²))`.
    GaussianBump {
        #[serde(default = "default_center")]
        center: [f64; 2],
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
    /// Graph of `sin 2πx · sin 2πy` (`sin 2πx` in 1D).
    Sine,
    /// Graph of `scale · z` for a distance field `z` sampled at cell centers.
    DistanceLift { scale: f64, field: Vec<f64> },
    /// `T(x) = B x` with `B` given row by row (`n` rows of `dim` entries).
    Linear { matrix: Vec<Vec<f64>> },
    /// Target points per spatial cell, optionally with Jacobians (`n` rows of `dim`).
    Sampled {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        jacobians: Option<Vec<Vec<Vec<f64>>>>,
    },
}

fn default_center() -> [f64; 2] {
    [0.5, 0.5]
}
fn default_width() -> f64 {
    0.15
}
fn default_height() -> f64 {
    1.0
}

/// Jacobian rows `∂T_r/∂x`; the second column is zero in 1D.
pub type Jacobian = Vec<[f64; 2]>;

const TAU: f64 = 2.0 * std::f64::consts::PI;

impl MapSpec {
    pub fn gaussian_bump() -> Self {
        MapSpec::GaussianBump {
            center: default_center(),
            width: default_width(),
            height: default_height(),
        }
    }

    fn check(&self, g: &GridSpec) -> Result<()> {
        let s = g.spatial_len();
        match self {
            MapSpec::DistanceLift { field, .. } => check_len("distance field", s, field.len()),
            MapSpec::Linear { matrix } => {
                if matrix.is_empty() || matrix.iter().any(|r| r.len() != g.dim()) {
                    return Err(Error::Ingest(format!(
                        "linear map needs rows of length {}",
                        g.dim()
                    )));
                }
                Ok(())
            }
            MapSpec::Sampled { points, jacobians } => {
                check_len("sampled map points", s, points.len())?;
                let n = points.first().map_or(0, Vec::len);
                if n == 0 || points.iter().any(|p| p.len() != n) {
                    return Err(Error::Ingest("sampled map points must share one nonzero dimension".into()));
                }
                if let Some(j) = jacobians {
                    check_len("sampled map jacobians", s, j.len())?;
                    for jac in j {
                        if jac.len() != n || jac.iter().any(|r| r.len() != g.dim()) {
                            return Err(Error::Ingest(format!(
                                "each jacobian must be {n}×{}",
                                g.dim()
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `T` at spatial cell `cell` of grid `g`.
    pub fn point(&self, g: &GridSpec, cell: usize) -> Vec<f64> {
        let c = g.cell_center(cell);
        let base: Vec<f64> = c[..g.dim()].to_vec();
        let with = |f: f64| {
            let mut v = base.clone();
            v.push(f);
            v
        };
        match self {
            MapSpec::Identity => base,
            MapSpec::GaussianBump {
                center,
                width,
                height,
            } => {
                let r2: f64 = (0..g.dim()).map(|d| (c[d] - center[d]).powi(2)).sum();
                with(height * (-r2 / (2.0 * width * width)).exp())
            }
            MapSpec::Sine => {
                let f = if g.dim() == 1 {
                    (TAU * c[0]).sin()
                } else {
                    (TAU * c[0]).sin() * (TAU * c[1]).sin()
                };
                with(f)
            }
            MapSpec::DistanceLift { scale, field } => with(scale * field[cell]),
            MapSpec::Linear { matrix } => matrix
                .iter()
                .map(|row| row.iter().zip(&base).map(|(a, x)| a * x).sum())
                .collect(),
            MapSpec::Sampled { points, .. } => points[cell].clone(),
        }
    }

    /// Image of every spatial cell center, in storage order.
    pub fn mapped_points(&self, g: &GridSpec) -> Result<Vec<Vec<f64>>> {
        self.check(g)?;
        Ok((0..g.spatial_len()).map(|c| self.point(g, c)).collect())
    }
}

/// `∇T` at spatial cell `cell`.
///
/// Analytic for closed-form maps; for sampled data a central difference across
/// neighbouring cells (one-sided at the boundary) with step `Δx`, `Δy`.
pub fn jacobian(map: &MapSpec, g: &GridSpec, cell: usize) -> Result<Jacobian> {
    map.check(g)?;
    Ok(jacobian_unchecked(map, g, cell))
}

fn graph_jacobian(g: &GridSpec, grad: [f64; 2]) -> Jacobian {
    let mut rows = vec![[1.0, 0.0]];
    if g.dim() == 2 {
        rows.push([0.0, 1.0]);
    }
    rows.push(grad);
    rows
}

fn jacobian_unchecked(map: &MapSpec, g: &GridSpec, cell: usize) -> Jacobian {
    let c = g.cell_center(cell);
    match map {
        MapSpec::Identity => graph_jacobian(g, [0.0, 0.0])[..g.dim()].to_vec(),
        MapSpec::GaussianBump {
            center,
            width,
            height,
        } => {
            let w2 = width * width;
            let r2: f64 = (0..g.dim()).map(|d| (c[d] - center[d]).powi(2)).sum();
            let f = height * (-r2 / (2.0 * w2)).exp();
            let gx = -(c[0] - center[0]) / w2 * f;
            let gy = if g.dim() == 2 {
                -(c[1] - center[1]) / w2 * f
            } else {
                0.0
            };
            graph_jacobian(g, [gx, gy])
        }
        MapSpec::Sine => {
            let grad = if g.dim() == 1 {
                [TAU * (TAU * c[0]).cos(), 0.0]
            } else {
                [
                    TAU * (TAU * c[0]).cos() * (TAU * c[1]).sin(),
                    TAU * (TAU * c[0]).sin() * (TAU * c[1]).cos(),
                ]
            };
            graph_jacobian(g, grad)
        }
        MapSpec::Linear { matrix } => matrix
            .iter()
            .map(|r| [r[0], if g.dim() == 2 { r[1] } else { 0.0 }])
            .collect(),
        MapSpec::Sampled {
            jacobians: Some(j), ..
        } => j[cell]
            .iter()
            .map(|r| [r[0], if g.dim() == 2 { r[1] } else { 0.0 }])
            .collect(),
        MapSpec::DistanceLift { .. } | MapSpec::Sampled { .. } => {
            let (i, j) = (cell % g.m(), cell / g.m());
            let pt = |i: usize, j: usize| map.point(g, j * g.m() + i);
            let diff = |lo: Vec<f64>, hi: Vec<f64>, h: f64| -> Vec<f64> {
                lo.iter().zip(&hi).map(|(a, b)| (b - a) / h).collect()
            };
            let fd = |n: usize, idx: usize, h: f64, at: &dyn Fn(usize) -> Vec<f64>| {
                if idx == 0 {
                    diff(at(0), at(1), h)
                } else if idx == n - 1 {
                    diff(at(n - 2), at(n - 1), h)
                } else {
                    diff(at(idx - 1), at(idx + 1), 2.0 * h)
                }
            };
            let dx = fd(g.m(), i, g.dx(), &|ii| pt(ii, j));
            let dy = if g.dim() == 2 {
                fd(g.n(), j, g.dy(), &|jj| pt(i, jj))
            } else {
                vec![0.0; dx.len()]
            };
            dx.into_iter().zip(dy).map(|(a, b)| [a, b]).collect()
        }
    }
}

/// Per-spatial-cell metric `A = c₁I + c₂∇Tᵀ∇T` with `c₁ + c₂ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    cells: Vec<Sym2>,
    c1: f64,
    c2: f64,
}

impl MetricField {
    pub fn identity(g: &GridSpec) -> Self {
        Self {
            cells: vec![Sym2::IDENTITY; g.spatial_len()],
            c1: 1.0,
            c2: 0.0,
        }
    }

    pub fn cells(&self) -> &[Sym2] {
        &self.cells
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// Smallest eigenvalue over all cells.
    pub fn min_eig(&self) -> f64 {
        self.cells.iter().map(Sym2::min_eig).fold(f64::INFINITY, f64::min)
    }
}

/// Normalizes `(c₁, c₂)` to sum one.
pub fn normalize_weights(c1: f64, c2: f64) -> Result<(f64, f64)> {
    if !(c1 >= 0.0 && c2 >= 0.0) || !(c1 + c2 > 0.0) || !(c1 + c2).is_finite() {
        return Err(Error::Param(format!(
            "metric weights must be nonnegative with positive sum, got c1={c1} c2={c2}"
        )));
    }
    Ok((c1 / (c1 + c2), c2 / (c1 + c2)))
}

pub fn build_metric(map: &MapSpec, c1: f64, c2: f64, g: &GridSpec) -> Result<MetricField> {
    map.check(g)?;
    let (c1, c2) = normalize_weights(c1, c2)?;
    let mut cells = Vec::with_capacity(g.spatial_len());
    for cell in 0..g.spatial_len() {
        let jac = jacobian_unchecked(map, g, cell);
        let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
        for r in &jac {
            g11 += r[0] * r[0];
            g12 += r[0] * r[1];
            g22 += r[1] * r[1];
        }
        let a = if g.dim() == 1 {
            Sym2::new(c1 + c2 * g11, 0.0, 1.0)
        } else {
            Sym2::new(c1 + c2 * g11, c2 * g12, c1 + c2 * g22)
        };
        let e = if g.dim() == 1 { a.a11 } else { a.min_eig() };
        if !(e > 1e-12) {
            return Err(Error::NotSpd { cell, min_eig: e });
        }
        cells.push(a);
    }
    Ok(MetricField { cells, c1, c2 })
}

/// Row-stochastic kernel `Π` from primary cells to secondary support points, in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    support: Vec<Vec<f64>>,
}

impl MarkovKernel {
    /// Builds from `(row, col, weight)` triplets; rows are normalized to sum one.
    pub fn from_triplets(
        rows: usize,
        support: Vec<Vec<f64>>,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let ncols = support.len();
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= ncols {
                return Err(Error::Ingest(format!(
                    "kernel entry ({r}, {c}) outside {rows}×{ncols}"
                )));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Ingest(format!("kernel entry ({r}, {c}) is {v}")));
            }
            if v > 0.0 {
                per_row[r].push((c, v));
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (r, mut entries) in per_row.into_iter().enumerate() {
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            let sum: f64 = merged.iter().map(|e| e.1).sum();
            if !(sum > 0.0) {
                return Err(Error::Ingest(format!("kernel row {r} has no mass")));
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v / sum);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            row_ptr,
            cols,
            vals,
            support,
        })
    }

    /// `Π = I` onto the given points (one per primary cell).
    pub fn identity(support: Vec<Vec<f64>>) -> Self {
        let n = support.len();
        Self {
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
            support,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>], support: Vec<Vec<f64>>) -> Result<Self> {
        let mut trip = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            check_len("kernel row", support.len(), row.len())?;
            for (c, &v) in row.iter().enumerate() {
                trip.push((r, c, v));
            }
        }
        Self::from_triplets(rows.len(), support, &trip)
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    /// Nonzeros of row `r` as `(column, weight)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `ξ_j = Σ_i ρ_i Π_ij · vol`.
    pub fn apply(&self, rho: &[f64], vol: f64) -> Result<Vec<f64>> {
        check_len("kernel input density", self.rows(), rho.len())?;
        let mut out = vec![0.0; self.cols()];
        for (r, &v) in rho.iter().enumerate() {
            if v != 0.0 {
                for (c, w) in self.row(r) {
                    out[c] += v * w * vol;
                }
            }
        }
        Ok(out)
    }

    /// `(T*φ)_i = Σ_j Π_ij φ_j`.
    pub fn adjoint_apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_len("kernel secondary function", self.cols(), phi.len())?;
        Ok((0..self.rows())
            .map(|r| self.row(r).map(|(c, w)| w * phi[c]).sum())
            .collect())
    }
}

pub fn kernel_apply(k: &MarkovKernel, rho: &[f64], vol: f64) -> Result<Vec<f64>> {
    k.apply(rho, vol)
}

pub fn kernel_adjoint_apply(k: &MarkovKernel, phi: &[f64]) -> Result<Vec<f64>> {
    k.adjoint_apply(phi)
}

/// Row-normalizes a static transport plan.
pub fn kernel_from_coupling(plan: &[Vec<f64>], support: Vec<Vec<f64>>) -> Result<MarkovKernel> {
    MarkovKernel::from_dense(plan, support)
}
