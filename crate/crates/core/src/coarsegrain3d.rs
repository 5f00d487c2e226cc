//! The 3D driver: cube contraction, projections, cube skeletonization and
//! the free energy of the simple-cubic model.

use crate::driver;
pub use crate::driver::{DisorderResult, ObservableRequest, RunResult};
use crate::error::{arg_err, Result};
use crate::lattice::{self, initial_grid, spin_insertions, LevelKind, LevelState, TnsConfig, Variant};
use crate::models::IsingSpec;

pub type LevelState3D = LevelState;

/// Impurity runs in 3D are limited to small lattices.
pub const MAX_IMPURITY_SIDE: usize = 4;

pub fn bootstrap3d(spec: &IsingSpec, cfg: &TnsConfig) -> Result<LevelState3D> {
    driver::check_dim(spec, 3)?;
    lattice::bootstrap(LevelState::new(initial_grid(spec)?)?, cfg)
}

pub fn bootstrap3d_impurity(spec: &IsingSpec, cfg: &TnsConfig, sites: &[usize]) -> Result<LevelState3D> {
    check_impurity_size(spec)?;
    let st = LevelState::new(initial_grid(spec)?)?.with_impurity(spin_insertions(spec, sites)?)?;
    lattice::bootstrap(st, cfg)
}

fn check_impurity_size(spec: &IsingSpec) -> Result<()> {
    driver::check_dim(spec, 3)?;
    if spec.n() > MAX_IMPURITY_SIDE {
        return Err(arg_err!("3D impurity runs need n <= {}, got {}", MAX_IMPURITY_SIDE, spec.n()));
    }
    Ok(())
}

/// One full level with the variant taken from `cfg`, bond target `chi`.
pub fn iterate3d(state: LevelState3D, chi: usize, cfg: &TnsConfig) -> Result<LevelState3D> {
    if state.grid.dim != 3 {
        return Err(arg_err!("expected a 3D state"));
    }
    let cfg = TnsConfig { chi, ..cfg.clone() };
    state.step(LevelKind::Full, &cfg)
}

pub fn iterate3d_standard(state: LevelState3D, cfg: &TnsConfig) -> Result<LevelState3D> {
    iterate3d(state, cfg.chi, &TnsConfig { variant: Variant::Standard, ..cfg.clone() })
}

pub fn iterate3d_modified(state: LevelState3D, cfg: &TnsConfig) -> Result<LevelState3D> {
    iterate3d(state, cfg.chi, &TnsConfig { variant: Variant::Modified, ..cfg.clone() })
}

pub fn run_free_energy_3d(spec: &IsingSpec, cfg: &TnsConfig) -> Result<RunResult> {
    driver::check_dim(spec, 3)?;
    Ok(driver::run_spec(spec, cfg)?.1)
}

pub fn run_observables_3d(spec: &IsingSpec, cfg: &TnsConfig, req: &ObservableRequest) -> Result<RunResult> {
    check_impurity_size(spec)?;
    driver::run_observables(spec, cfg, req)
}

pub fn run_disordered_3d(spec: &IsingSpec, cfg: &TnsConfig, per_site: bool) -> Result<DisorderResult> {
    check_impurity_size(spec)?;
    driver::run_disordered(spec, cfg, per_site)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ImpurityKind;
    use crate::reference::brute_force;

    #[test]
    fn beta_zero_gives_ln2() {
        for chi in [2, 3] {
            let r = run_free_energy_3d(&IsingSpec::uniform(3, 2, 0.0), &TnsConfig::with_chi(chi)).unwrap();
            assert!((r.log_z_per_site - 2f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn two_site_cube_matches_enumeration() {
        let spec = IsingSpec::uniform(3, 1, 0.22);
        let r = run_free_energy_3d(&spec, &TnsConfig::with_chi(16)).unwrap();
        let z = brute_force(&spec, &ImpurityKind::None).unwrap();
        assert!((r.log_z.log_abs() - z.log_abs()).abs() < 1e-8 * z.log_abs());
    }

    #[test]
    fn bonds_come_out_at_chi() {
        let spec = IsingSpec::uniform(3, 2, 0.2);
        let cfg = TnsConfig::with_chi(2);
        let st = iterate3d_standard(bootstrap3d(&spec, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(st.grid.side, 2);
        for t in &st.grid.cells {
            assert_eq!(t.rank(), 6);
            assert!(t.shape().iter().all(|&d| d == 2), "{:?}", t.shape());
        }
    }

    #[test]
    fn impurity_runs_are_size_gated() {
        let spec = IsingSpec::uniform(3, 3, 0.2);
        assert!(run_observables_3d(&spec, &TnsConfig::with_chi(2), &ObservableRequest::default()).is_err());
    }
}
