use std::fs;
use std::path::Path;

use serde::Serialize;
use usot::geometry::{build_metric, MapSpec, MarkovKernel, MetricField};
use usot::grid::{BoundaryData, GridSpec};
use usot::hk::{hk_solve, HkProblem, HkSolution};
use usot::oracles::{
    fr_geodesic, hellinger_sq, hk_two_dirac, hk_two_dirac_closed_form, mass_curve, truncated_gaussian,
    two_gaussian_distance_field, w2_1d,
};
use usot::solvers::{solve_chambolle_pock, solve_yan, ProblemKind, SolveReport};

use crate::config::{DensitySpec, ExperimentConfig};
use crate::failure::Failure;
use crate::formats::{density_from_bytes, pgm, write_atomic, KernelFile, Trajectory};

pub fn density(spec: &DensitySpec, g: &GridSpec) -> Result<Vec<f64>, Failure> {
    let vol = g.spatial_volume();
    let n = g.spatial_len();
    let v = match spec {
        DensitySpec::Gaussian { center, sigma, mass } => truncated_gaussian(*center, *sigma, *mass, g)?,
        DensitySpec::Constant { mass } => vec![mass / (n as f64 * vol); n],
        DensitySpec::Atoms { atoms } => {
            let mut v = vec![0.0; n];
            for &(c, m) in atoms {
                if c >= n {
                    return Err(Failure::config(format!("atom cell {c} outside {n} cells")));
                }
                v[c] += m / vol;
            }
            v
        }
        DensitySpec::Values { values } => values.clone(),
        DensitySpec::File { path } => {
            let bytes = fs::read(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
            density_from_bytes(&bytes, g)?
        }
    };
    if v.len() != n {
        return Err(Failure::config(format!("density has {} values, grid has {n} cells", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Failure::config(format!("density entry {i} is {}", v[i])));
    }
    Ok(v)
}

pub fn boundary(cfg: &ExperimentConfig, g: &GridSpec) -> Result<BoundaryData, Failure> {
    let mu = density(&cfg.marginals.mu, g)?;
    let nu = density(&cfg.marginals.nu, g)?;
    BoundaryData::new(g, mu, nu).map_err(Failure::from)
}

fn map_spec(cfg: &ExperimentConfig, g: &GridSpec) -> MapSpec {
    match cfg.geometry.lift {
        Some(l) => MapSpec::DistanceLift {
            scale: l.scale,
            field: two_gaussian_distance_field(g, l.threshold, cfg.solver.seed),
        },
        None => cfg.geometry.map.clone(),
    }
}

fn kernel(cfg: &ExperimentConfig, g: &GridSpec) -> Result<MarkovKernel, Failure> {
    match &cfg.geometry.kernel {
        Some(path) => {
            let k = KernelFile::load(path)?;
            if k.rows() != g.spatial_len() {
                return Err(Failure::ingest(format!(
                    "kernel has {} rows, grid has {} cells",
                    k.rows(),
                    g.spatial_len()
                )));
            }
            Ok(k)
        }
        None => Ok(MarkovKernel::identity(map_spec(cfg, g).mapped_points(g)?)),
    }
}

pub fn run_solver(cfg: &ExperimentConfig, g: &GridSpec) -> Result<SolveReport, Failure> {
    let b0 = boundary(cfg, g)?;
    let s = &cfg.solver;
    let report = match s.kind {
        ProblemKind::Wfr => solve_chambolle_pock(&b0, &MetricField::identity(g), g, s)?,
        ProblemKind::Monge => {
            if cfg.geometry.kernel.is_some() {
                return Err(Failure::config("the monge form takes a map, not a kernel"));
            }
            let metric = build_metric(&map_spec(cfg, g), s.c1, s.c2, g)?;
            solve_chambolle_pock(&b0, &metric, g, s)?
        }
        ProblemKind::Kantorovich => solve_yan(&b0, &kernel(cfg, g)?, g, s)?,
    };
    Ok(report)
}

#[derive(Serialize)]
struct Frame {
    k: usize,
    file: String,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct Timing {
    wall_time_s: f64,
}

#[derive(Serialize)]
struct SolveJson<'a> {
    command: &'static str,
    converged: bool,
    iterations: usize,
    final_objective: f64,
    final_residual: f64,
    tau: f64,
    sigma: f64,
    step_halvings: usize,
    masses: &'a [f64],
    objective: &'a [f64],
    secondary: &'a [f64],
    residual: &'a [f64],
    frames: Vec<Frame>,
    /// The only field that differs between repeated runs.
    timing: Timing,
    resolved_config: &'a ExperimentConfig,
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path, Failure> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable report");
    b.push(b'\n');
    b
}

/// Runs the configured solve and writes all artifacts; unconverged runs still write them.
pub fn cmd_solve(cfg: &ExperimentConfig, quiet: bool) -> Result<(), Failure> {
    let g = cfg.grid_spec()?;
    let dir = out_dir(cfg)?;
    let r = run_solver(cfg, &g)?;
    if !quiet {
        eprintln!(
            "solve: {} iterations, objective {:.6e}, converged {}",
            r.iterations,
            r.final_objective(),
            r.converged
        );
    }
    let traj = Trajectory {
        grid: g,
        u: r.u.clone(),
        h: r.h.clone(),
    };
    write_atomic(&dir.join("trajectory.f64"), &traj.to_bytes())?;

    let mut csv = String::from("k,t_k,mass\n");
    for (k, m) in r.masses.iter().enumerate() {
        csv.push_str(&format!("{k},{},{m}\n", k as f64 * g.dt()));
    }
    write_atomic(&dir.join("masses.csv"), csv.as_bytes())?;

    let mut frames = Vec::new();
    if cfg.output.emit_frames {
        for k in 0..=g.q() {
            let (img, min, max) = pgm(&g, r.u.rho_slice(&g, k));
            let file = format!("frame_{k:04}.pgm");
            write_atomic(&dir.join(&file), &img)?;
            frames.push(Frame { k, file, min, max });
        }
    }

    let report = SolveJson {
        command: "solve",
        converged: r.converged,
        iterations: r.iterations,
        final_objective: r.final_objective(),
        final_residual: r.residual.last().copied().unwrap_or(f64::NAN),
        tau: r.tau,
        sigma: r.sigma,
        step_halvings: r.step_halvings,
        masses: &r.masses,
        objective: &r.objective,
        secondary: &r.secondary,
        residual: &r.residual,
        frames,
        timing: Timing {
            wall_time_s: r.wall_time,
        },
        resolved_config: cfg,
    };
    write_atomic(&dir.join("report.json"), &json_bytes(&report))?;
    if r.converged {
        Ok(())
    } else {
        Err(Failure::unconverged(format!(
            "solver stopped after {} iterations without meeting the tolerances",
            r.iterations
        )))
    }
}

/// HK² between the configured marginals, pushed through the kernel or map.
pub fn hk_between(cfg: &ExperimentConfig, g: &GridSpec) -> Result<HkSolution, Failure> {
    let b0 = boundary(cfg, g)?;
    let k = kernel(cfg, g)?;
    let vol = g.spatial_volume();
    let a = k.apply(&b0.mu, vol)?;
    let b = k.apply(&b0.nu, vol)?;
    let s = &cfg.solver;
    let prob = HkProblem::new(k.support(), k.support(), s.alpha, s.beta, s.hk)?;
    Ok(hk_solve(&a, &b, &prob)?)
}

#[derive(Serialize)]
struct HkJson<'a> {
    command: &'static str,
    hk2: f64,
    converged: bool,
    iterations: usize,
    eps: f64,
    marginal_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g: Option<&'a [f64]>,
    resolved_config: &'a ExperimentConfig,
}

pub fn cmd_hk(cfg: &ExperimentConfig) -> Result<f64, Failure> {
    let g = cfg.grid_spec()?;
    let dir = out_dir(cfg)?;
    let sol = hk_between(cfg, &g)?;
    let duals = cfg.output.write_duals;
    let out = HkJson {
        command: "hk",
        hk2: sol.value,
        converged: sol.converged,
        iterations: sol.iterations,
        eps: sol.eps,
        marginal_violation: sol.marginal_violation,
        f: duals.then_some(sol.f.as_slice()),
        g: duals.then_some(sol.g.as_slice()),
        resolved_config: cfg,
    };
    write_atomic(&dir.join("hk.json"), &json_bytes(&out))?;
    println!("{}", serde_json::json!({ "hk2": sol.value, "converged": sol.converged }));
    if sol.converged {
        Ok(sol.value)
    } else {
        Err(Failure::unconverged(format!(
            "HK scaling stopped with marginal violation {:e}",
            sol.marginal_violation
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    MassCurve,
    Fr,
    W2,
    TwoDirac,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TwoDiracArgs {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Reference values as one JSON document.
pub fn cmd_oracle(
    kind: OracleKind,
    cfg: Option<&ExperimentConfig>,
    two: TwoDiracArgs,
) -> Result<serde_json::Value, Failure> {
    use serde_json::json;
    if kind == OracleKind::TwoDirac {
        let TwoDiracArgs { a, b, d, alpha, beta } = two;
        if !(a >= 0.0 && b >= 0.0 && d >= 0.0 && alpha > 0.0 && beta > 0.0) {
            return Err(Failure::config("two-dirac needs a, b, d >= 0 and alpha, beta > 0"));
        }
        return Ok(json!({
            "kind": "two_dirac",
            "hk2": hk_two_dirac(a, b, d, alpha, beta),
            "closed_form": hk_two_dirac_closed_form(a, b, d, alpha, beta),
        }));
    }
    let cfg = cfg.ok_or_else(|| Failure::config("this oracle needs --config"))?;
    let g = cfg.grid_spec()?;
    let b0 = boundary(cfg, &g)?;
    let vol = g.spatial_volume();
    Ok(match kind {
        OracleKind::Fr => {
            let (_, action) = fr_geodesic(&b0.mu, &b0.nu, 0.5, vol)?;
            json!({
                "kind": "fr",
                "hellinger_sq": hellinger_sq(&b0.mu, &b0.nu, vol)?,
                "action": action,
            })
        }
        OracleKind::W2 => {
            if g.dim() != 1 {
                return Err(Failure::config("the w2 oracle is one-dimensional"));
            }
            json!({ "kind": "w2", "w2_sq": w2_1d(&b0.mu, &b0.nu)? })
        }
        OracleKind::MassCurve => {
            let sol = hk_between(cfg, &g)?;
            let (m0, m1) = b0.masses(&g);
            let rows: Vec<_> = (0..=g.q())
                .map(|k| {
                    let t = k as f64 * g.dt();
                    json!({ "k": k, "t": t, "mass": mass_curve(m0, m1, sol.value, t) })
                })
                .collect();
            json!({ "kind": "mass_curve", "hk2": sol.value, "converged": sol.converged, "table": rows })
        }
        OracleKind::TwoDirac => unreachable!(),
    })
}
