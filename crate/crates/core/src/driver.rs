//! Dimension-independent run plumbing used by the 2D and 3D drivers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::lattice::{coarse_grain, initial_grid, spin_insertions, CoarseRun, Grid, LevelDiag, LevelKind, TnsConfig};
use crate::logscalar::LogScalar;
use crate::models::{site_tensors, Couplings, IsingSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub dim: usize,
    pub n: usize,
    pub beta: f64,
    pub chi: usize,
    pub log_z: LogScalar,
    pub log_z_per_site: f64,
    /// `−log Z / (βN)`; infinite at β = 0.
    pub free_energy_per_site: f64,
    pub levels: Vec<LevelDiag>,
    pub seconds: f64,
    /// Mean wall time of the full (non-bootstrap) levels.
    pub seconds_per_iteration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnetization: Option<f64>,
}

impl RunResult {
    pub(crate) fn from_run(spec: &IsingSpec, cfg: &TnsConfig, run: &CoarseRun, seconds: f64) -> Self {
        let sites = spec.lattice().sites() as f64;
        let log_z = run.log_z();
        let lzps = log_z.log_abs() / sites;
        let levels = run.diagnostics();
        let full: Vec<f64> = levels.iter().filter(|d| d.kind == LevelKind::Full).map(|d| d.seconds).collect();
        let spi = if full.is_empty() { 0.0 } else { full.iter().sum::<f64>() / full.len() as f64 };
        Self {
            dim: spec.dim,
            n: spec.n(),
            beta: spec.beta,
            chi: cfg.chi,
            log_z,
            log_z_per_site: lzps,
            free_energy_per_site: -lzps / spec.beta,
            levels,
            seconds,
            seconds_per_iteration: spi,
            internal_energy: None,
            magnetization: None,
        }
    }
}

pub(crate) fn check_dim(spec: &IsingSpec, dim: usize) -> Result<()> {
    if spec.dim != dim {
        return Err(arg_err!("this driver handles {}D lattices, spec is {}D", dim, spec.dim));
    }
    spec.validate()
}

pub(crate) fn run_spec(spec: &IsingSpec, cfg: &TnsConfig) -> Result<(CoarseRun, RunResult)> {
    let start = Instant::now();
    let run = coarse_grain(initial_grid(spec)?, cfg)?;
    let res = RunResult::from_run(spec, cfg, &run, start.elapsed().as_secs_f64());
    Ok((run, res))
}

/// Which observables to evaluate by the impurity method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRequest {
    pub internal_energy: bool,
    /// Field used for the magnetization run; `None` skips it.
    pub magnetization_field: Option<f64>,
}

impl Default for ObservableRequest {
    fn default() -> Self {
        Self { internal_energy: true, magnetization_field: Some(DEFAULT_OBSERVABLE_FIELD) }
    }
}

/// Small symmetry-breaking field for the magnetization.
pub const DEFAULT_OBSERVABLE_FIELD: f64 = 1e-5;

/// `⟨σ_i σ_{i+e_x}⟩` at the center, scaled to the energy per site.
///
/// `U = ∂_β(−log Z) = ⟨H⟩ = −Σ_{⟨ij⟩} J⟨σ_iσ_j⟩ − Σ_i h_i⟨σ_i⟩`; with uniform `J`
/// and no field this is `−(N_e/N)·J·⟨σ_iσ_j⟩` with `N_e/N = D`.
pub(crate) fn internal_energy(spec: &IsingSpec, cfg: &TnsConfig, run: &CoarseRun) -> Result<f64> {
    let j = match spec.couplings {
        Couplings::Uniform(j) => j,
        Couplings::PerEdge(_) => return Err(arg_err!("internal energy needs uniform couplings")),
    };
    let lat = spec.lattice();
    let c = lat.center();
    let i = lat.index(c);
    let corr = run.impurity_ratio(spin_insertions(spec, &[i, lat.step(i, 0)])?, cfg)?;
    let mut u = -(spec.dim as f64) * j * corr;
    if spec.field_b != 0.0 {
        let m = run.impurity_ratio(spin_insertions(spec, &[i])?, cfg)?;
        u -= spec.field_b * m;
    }
    Ok(u)
}

/// `⟨σ_i⟩` at the center.
pub(crate) fn magnetization(spec: &IsingSpec, cfg: &TnsConfig, run: &CoarseRun) -> Result<f64> {
    let lat = spec.lattice();
    run.impurity_ratio(spin_insertions(spec, &[lat.index(lat.center())])?, cfg)
}

pub(crate) fn run_observables(spec: &IsingSpec, cfg: &TnsConfig, req: &ObservableRequest) -> Result<RunResult> {
    if spec.site_fields.is_some() || !spec.is_translation_invariant() {
        return Err(arg_err!("observables need a homogeneous spec"));
    }
    let (run, mut res) = run_spec(spec, cfg)?;
    if req.internal_energy {
        res.internal_energy = Some(internal_energy(spec, cfg, &run)?);
    }
    if let Some(b) = req.magnetization_field {
        if !(b > 0.0) {
            return Err(arg_err!("magnetization needs a positive field, got {}", b));
        }
        if b == spec.field_b {
            res.magnetization = Some(magnetization(spec, cfg, &run)?);
        } else {
            let fspec = spec.clone().with_field(b);
            let (frun, _) = run_spec(&fspec, cfg)?;
            res.magnetization = Some(magnetization(&fspec, cfg, &frun)?);
        }
    }
    Ok(res)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisorderResult {
    pub run: RunResult,
    /// `⟨σ_i⟩` for every site, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_magnetizations: Option<Vec<f64>>,
    /// `(1/N) Σ ⟨σ_i⟩²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

/// Per-site `⟨σ_i⟩` by impurity runs on the cached bulk levels.
pub(crate) fn site_magnetizations(spec: &IsingSpec, cfg: &TnsConfig, run: &CoarseRun) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let sites = spec.lattice().sites();
    (0..sites).into_par_iter().map(|i| run.impurity_ratio(spin_insertions(spec, &[i])?, cfg)).collect()
}

/// Runs on the full per-site grid even when the couplings happen to be
/// uniform, so every plaquette gets its own solve.
pub(crate) fn run_disordered(spec: &IsingSpec, cfg: &TnsConfig, per_site: bool) -> Result<DisorderResult> {
    let start = Instant::now();
    let grid = Grid::from_sites(spec.dim, spec.n(), site_tensors(spec, &[])?)?;
    let run = coarse_grain(grid, cfg)?;
    let res = RunResult::from_run(spec, cfg, &run, start.elapsed().as_secs_f64());
    let (mags, q) = if per_site {
        let m = site_magnetizations(spec, cfg, &run)?;
        let q = m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64;
        (Some(m), Some(q))
    } else {
        (None, None)
    };
    Ok(DisorderResult { run: res, site_magnetizations: mags, q })
}
