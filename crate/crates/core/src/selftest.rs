//! Quick end-to-end sanity checks behind `tns selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coarsegrain2d;
use crate::coarsegrain3d;
use crate::error::Result;
use crate::lattice::TnsConfig;
use crate::models::{
    build_network, gauge_transform, sample_ea_couplings, CouplingDistribution, Couplings, ImpurityKind, IsingSpec,
};
use crate::network::contract_exact;
use crate::reference::{brute_force, onsager_log_z_per_site, onsager_log_z_per_site_1d};
use crate::skeleton::{als_skeletonize, AlsConfig};
use crate::tensor::{contract, svd_truncate, DenseTensor};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    /// Only run checks whose name contains this.
    pub filter: Option<String>,
    /// Debug aid: flips the sign of the reference in the enumeration check,
    /// which must then fail.
    pub inject_fault: bool,
}

type Check = fn(&SelftestOptions) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("contract_matches_loops", contract_matches_loops),
    ("svd_reconstructs", svd_reconstructs),
    ("onsager_forms_agree", onsager_forms_agree),
    ("ising_network_matches_enumeration", network_matches_enumeration),
    ("beta_zero_is_ln2", beta_zero_is_ln2),
    ("tns_2d_small_torus", tns_small_torus),
    ("tns_2d_onsager", tns_onsager),
    ("tns_3d_small_cube", tns_small_cube),
    ("als_exact_at_full_rank", als_exact_at_full_rank),
    ("als_objective_monotone", als_monotone),
    ("spin_flip_kills_magnetization", spin_flip),
    ("gauge_invariance", gauge_invariance),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

pub fn run(opts: &SelftestOptions) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .filter(|(name, _)| opts.filter.as_deref().is_none_or(|f| name.contains(f)))
        .map(|(name, f)| {
            let t0 = Instant::now();
            let (passed, detail) = f(opts).unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckOutcome { name: name.to_string(), passed, detail, seconds: t0.elapsed().as_secs_f64() }
        })
        .collect()
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> (bool, String) {
    let err = (got - want).abs();
    (err <= tol, format!("{name} err {err:.2e} (tol {tol:.0e})"))
}

fn random(shape: Vec<usize>, legs: &[&str], rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseTensor::new(shape, data, legs.iter().copied())
}

fn contract_matches_loops(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(vec![3, 4, 5], &["i", "k", "j"], &mut rng)?;
    let b = random(vec![5, 2, 4], &["j", "l", "k"], &mut rng)?;
    let c = contract(&a, &b, &[("k", "k"), ("j", "j")])?.permute(&["i", "l"])?;
    let mut worst = 0f64;
    for i in 0..3 {
        for l in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                for j in 0..5 {
                    s += a.get(&[i, k, j]) * b.get(&[j, l, k]);
                }
            }
            worst = worst.max((c.get(&[i, l]) - s).abs());
        }
    }
    Ok(within("max entry", worst, 0.0, 1e-13))
}

fn svd_reconstructs(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random(vec![4, 3, 6], &["a", "b", "c"], &mut rng)?;
    let s = svd_truncate(&t, &["a", "b"], usize::MAX, 0.0)?;
    // U diag(s) Vᵀ, with s folded into U's trailing bond leg
    let bond = s.left.legs().last().unwrap().clone();
    let mut us = s.left.data().to_vec();
    for row in us.chunks_mut(s.rank()) {
        row.iter_mut().zip(&s.singular_values).for_each(|(x, sigma)| *x *= sigma);
    }
    let us = DenseTensor::new(s.left.shape().to_vec(), us, ["a", "b", "k"])?;
    let v = s.right.relabel(&[(bond.as_str(), "k")])?;
    let back = contract(&us, &v, &[("k", "k")])?.permute(&["a", "b", "c"])?;
    let err = back.data().iter().zip(t.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(within("reconstruction", err, 0.0, 1e-12))
}

fn onsager_forms_agree(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut worst = 0f64;
    for beta in [0.2, 0.4406867935097715, 0.7] {
        worst = worst.max((onsager_log_z_per_site(beta) - onsager_log_z_per_site_1d(beta)).abs());
    }
    Ok(within("2D vs 1D quadrature", worst, 0.0, 1e-12))
}

fn network_matches_enumeration(opts: &SelftestOptions) -> Result<(bool, String)> {
    let spec = IsingSpec::uniform(2, 1, 0.37).with_field(0.2);
    let z = contract_exact(&build_network(&spec, &ImpurityKind::None)?, None, 1 << 24)?.into_scalar()?;
    let mut want = brute_force(&spec, &ImpurityKind::None)?.log_abs();
    if opts.inject_fault {
        want = -want;
    }
    Ok(within("log Z", z.log_abs(), want, 1e-10 * want.abs()))
}

fn beta_zero_is_ln2(_: &SelftestOptions) -> Result<(bool, String)> {
    let r = coarsegrain2d::run_free_energy(&IsingSpec::uniform(2, 4, 0.0), &TnsConfig::with_chi(2))?;
    Ok(within("log Z per site", r.log_z_per_site, 2f64.ln(), 1e-10))
}

fn tns_small_torus(_: &SelftestOptions) -> Result<(bool, String)> {
    let spec = IsingSpec::uniform(2, 2, 0.45).with_field(0.1);
    let r = coarsegrain2d::run_free_energy(&spec, &TnsConfig::with_chi(16))?;
    let want = brute_force(&spec, &ImpurityKind::None)?.log_abs();
    Ok(within("log Z", r.log_z.log_abs(), want, 1e-9 * want))
}

fn tns_onsager(_: &SelftestOptions) -> Result<(bool, String)> {
    let spec = IsingSpec::uniform(2, 6, 0.3);
    let r = coarsegrain2d::run_free_energy(&spec, &TnsConfig::with_chi(4))?;
    let want = onsager_log_z_per_site(spec.beta);
    let (_, detail) = within("log Z per site", r.log_z_per_site, want, 1e-6);
    let rel = ((r.log_z_per_site - want) / want).abs();
    Ok((rel < 1e-6, format!("{detail}; relative {rel:.2e}")))
}

fn tns_small_cube(_: &SelftestOptions) -> Result<(bool, String)> {
    let spec = IsingSpec::uniform(3, 1, 0.22);
    let r = coarsegrain3d::run_free_energy_3d(&spec, &TnsConfig::with_chi(4))?;
    let want = brute_force(&spec, &ImpurityKind::None)?.log_abs();
    Ok(within("log Z", r.log_z.log_abs(), want, 1e-8 * want))
}

fn als_exact_at_full_rank(_: &SelftestOptions) -> Result<(bool, String)> {
    // a loop tensor of bond 3 is reproduced exactly with 3 states on the new bond
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random(vec![3, 3, 5], &["a", "b", "x"], &mut rng)?;
    let s = als_skeletonize(&t, 3, &AlsConfig::default())?;
    Ok((s.residual_rel < 1e-10, format!("residual {:.2e}", s.residual_rel)))
}

fn als_monotone(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    for _ in 0..20 {
        let t = random(vec![4, 4, 6], &["a", "b", "x"], &mut rng)?;
        let s = als_skeletonize(&t, 2, &AlsConfig::default())?;
        // rounding in the objective is relative to ‖tr_e T‖², not to the objective itself
        let scale: f64 = (0..6).map(|x| (0..4).map(|a| t.get(&[a, a, x])).sum::<f64>().powi(2)).sum();
        for w in s.history.windows(2) {
            worst = worst.max((w[1] - w[0]) / scale);
        }
    }
    Ok((worst <= 1e-12, format!("largest relative increase {worst:.2e}")))
}

fn spin_flip(_: &SelftestOptions) -> Result<(bool, String)> {
    // at zero field <σ> vanishes by symmetry, and the graded run keeps it exactly
    let spec = IsingSpec::uniform(2, 3, 0.3);
    let lat = spec.lattice();
    let c = lat.index(lat.center());
    let cfg = TnsConfig::with_chi(4);
    let mut st = coarsegrain2d::bootstrap_impurity(&spec, &cfg, &[c])?;
    while !st.is_final() {
        st = coarsegrain2d::iterate_impurity(st, &cfg)?;
    }
    let (run, imp) = st.finish(&cfg)?;
    let ratio = imp.map(|i| i.ratio(&run.final_value)).unwrap_or(f64::NAN);
    Ok(within("<σ> at B=0", ratio, 0.0, 1e-10))
}

fn gauge_invariance(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut spec = IsingSpec::uniform(2, 2, 0.8);
    let lat = spec.lattice();
    spec.couplings = Couplings::PerEdge(sample_ea_couplings(&lat, CouplingDistribution::Gaussian, 7));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps: Vec<i8> = (0..lat.sites()).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
    let cfg = TnsConfig::with_chi(8);
    let a = coarsegrain2d::run_free_energy(&spec, &cfg)?.log_z.log_abs();
    let b = coarsegrain2d::run_free_energy(&gauge_transform(&spec, &eps), &cfg)?.log_z.log_abs();
    Ok(within("log Z difference", a, b, 1e-9 * a.abs()))
}
