//! The 2D driver: standard and modified iterations, impurity propagation,
//! free energy, observables and disordered couplings.

use crate::driver;
pub use crate::driver::{DisorderResult, ObservableRequest, RunResult, DEFAULT_OBSERVABLE_FIELD};
use crate::error::{arg_err, Result};
use crate::lattice::{self, initial_grid, spin_insertions, LevelKind, LevelState, TnsConfig, Variant};
use crate::models::IsingSpec;

pub type LevelState2D = LevelState;

/// Level-0 network of `spec` after the merge-only rounds.
pub fn bootstrap(spec: &IsingSpec, cfg: &TnsConfig) -> Result<LevelState2D> {
    driver::check_dim(spec, 2)?;
    lattice::bootstrap(LevelState::new(initial_grid(spec)?)?, cfg)
}

/// As [`bootstrap`], with spin insertions at `sites` carried as impurities.
pub fn bootstrap_impurity(spec: &IsingSpec, cfg: &TnsConfig, sites: &[usize]) -> Result<LevelState2D> {
    driver::check_dim(spec, 2)?;
    let st = LevelState::new(initial_grid(spec)?)?.with_impurity(spin_insertions(spec, sites)?)?;
    lattice::bootstrap(st, cfg)
}

fn iterate(state: LevelState2D, cfg: &TnsConfig, variant: Variant) -> Result<LevelState2D> {
    if state.grid.dim != 2 {
        return Err(arg_err!("expected a 2D state"));
    }
    let cfg = TnsConfig { variant, ..cfg.clone() };
    state.step(LevelKind::Full, &cfg)
}

pub fn iterate_standard(state: LevelState2D, cfg: &TnsConfig) -> Result<LevelState2D> {
    iterate(state, cfg, Variant::Standard)
}

pub fn iterate_modified(state: LevelState2D, cfg: &TnsConfig) -> Result<LevelState2D> {
    iterate(state, cfg, Variant::Modified)
}

/// Modified iteration that also carries the impurity block.
pub fn iterate_impurity(state: LevelState2D, cfg: &TnsConfig) -> Result<LevelState2D> {
    if state.impurity.is_none() {
        return Err(arg_err!("state carries no impurity block"));
    }
    iterate(state, cfg, Variant::Modified)
}

pub fn run_free_energy(spec: &IsingSpec, cfg: &TnsConfig) -> Result<RunResult> {
    driver::check_dim(spec, 2)?;
    Ok(driver::run_spec(spec, cfg)?.1)
}

pub fn run_observables(spec: &IsingSpec, cfg: &TnsConfig, req: &ObservableRequest) -> Result<RunResult> {
    driver::check_dim(spec, 2)?;
    driver::run_observables(spec, cfg, req)
}

pub fn run_disordered(spec: &IsingSpec, cfg: &TnsConfig, per_site: bool) -> Result<DisorderResult> {
    driver::check_dim(spec, 2)?;
    driver::run_disordered(spec, cfg, per_site)
}
