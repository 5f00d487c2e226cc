//! Acceptance run: one line per criterion, non-zero exit if any fails.
//! Criteria run one after another so the timing checks see an idle machine.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tns::coarsegrain2d::{run_disordered, run_free_energy, run_observables, ObservableRequest};
use tns::coarsegrain3d::run_free_energy_3d;
use tns::lattice::{LevelKind, TnsConfig};
use tns::models::{
    gauge_transform, sample_ea_couplings, CouplingDistribution, DisorderRealization, ImpurityKind, IsingSpec,
};
use tns::network::{contract_exact, TensorNetwork, DEFAULT_SIZE_CAP};
use tns::reference::{brute_force, onsager_log_z_per_site, t_c_2d, yang_magnetization, T_C_3D};
use tns::skeleton::{als_skeletonize, AlsConfig};
use tns::tensor::svd_truncate;
use tns::{DenseTensor, Result};

type Check = Result<(bool, String)>;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn brute_log_z(spec: &IsingSpec) -> Result<f64> {
    Ok(brute_force(spec, &ImpurityKind::None)?.log_abs())
}

fn beta_zero() -> Check {
    let mut worst: f64 = 0.0;
    for chi in [2, 4] {
        for l in [1, 2, 5, 10] {
            let r = run_free_energy(&IsingSpec::uniform(2, l, 0.0), &TnsConfig::with_chi(chi))?;
            worst = worst.max((r.log_z_per_site - 2f64.ln()).abs());
        }
        for l in [1, 2, 3] {
            let r = run_free_energy_3d(&IsingSpec::uniform(3, l, 0.0), &TnsConfig::with_chi(chi))?;
            worst = worst.max((r.log_z_per_site - 2f64.ln()).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max |log Z/N - ln 2| = {worst:.2e}")))
}

fn oracle(dim: usize, l: u32, betas: &[f64]) -> Check {
    let mut worst: f64 = 0.0;
    for &beta in betas {
        let spec = IsingSpec::uniform(dim, l, beta);
        let cfg = TnsConfig::with_chi(16);
        let r = if dim == 2 { run_free_energy(&spec, &cfg)? } else { run_free_energy_3d(&spec, &cfg)? };
        worst = worst.max(rel(r.log_z.log_abs(), brute_log_z(&spec)?));
    }
    Ok((worst <= 1e-8, format!("max relative log Z error {worst:.2e}")))
}

fn delta_f(chi: usize, t: f64) -> Result<f64> {
    let beta = 1.0 / t;
    let r = run_free_energy(&IsingSpec::uniform(2, 10, beta), &TnsConfig::with_chi(chi))?;
    Ok(rel(r.log_z_per_site, onsager_log_z_per_site(beta)))
}

fn free_energy_sweep() -> Check {
    let grid: Vec<f64> = (0..9).map(|i| 2.1 + 0.3 * i as f64 / 8.0).collect();
    let (mut w2, mut w4): (f64, f64) = (0.0, 0.0);
    for &t in &grid {
        w2 = w2.max(delta_f(2, t)?);
        w4 = w4.max(delta_f(4, t)?);
    }
    let tc = delta_f(4, t_c_2d())?;
    let ok = w2 <= 1e-2 && w4 <= 1e-4 && tc <= 1e-5;
    Ok((ok, format!("max df chi=2 {w2:.2e} (<=1e-2), chi=4 {w4:.2e} (<=1e-4), chi=4 at Tc {tc:.2e} (<=1e-5)")))
}

fn observables() -> Check {
    let cfg = TnsConfig::with_chi(4);
    let tc = t_c_2d();
    let r = run_observables(
        &IsingSpec::uniform(2, 10, 1.0 / tc),
        &cfg,
        &ObservableRequest { internal_energy: true, magnetization_field: None },
    )?;
    let du = (r.internal_energy.unwrap() + 2f64.sqrt()).abs();
    let m_only = ObservableRequest { internal_energy: false, magnetization_field: Some(1e-5) };
    let mut dm_low: f64 = 0.0;
    for t in [1.5, 1.8, 2.0] {
        let r = run_observables(&IsingSpec::uniform(2, 10, 1.0 / t), &cfg, &m_only)?;
        dm_low = dm_low.max((r.magnetization.unwrap() - yang_magnetization(1.0 / t)).abs());
    }
    let mut m_high: f64 = 0.0;
    for t in [2.4, 2.6] {
        let r = run_observables(&IsingSpec::uniform(2, 10, 1.0 / t), &cfg, &m_only)?;
        m_high = m_high.max(r.magnetization.unwrap().abs());
    }
    let ok = du <= 2e-2 && dm_low <= 5e-2 && m_high <= 5e-2;
    Ok((ok, format!("|u(Tc)+sqrt2| {du:.2e}, max |m-m+| {dm_low:.2e}, max |m| above Tc {m_high:.2e}")))
}

fn timing() -> Check {
    // per-level minimum over repeats filters scheduler noise
    let spec = IsingSpec::uniform(2, 10, 1.0 / t_c_2d());
    let mut best: Vec<(usize, f64)> = Vec::new();
    for _ in 0..3 {
        let r = run_free_energy(&spec, &TnsConfig::with_chi(4))?;
        let full: Vec<(usize, f64)> =
            r.levels.iter().filter(|d| d.kind == LevelKind::Full).map(|d| (d.level, d.seconds)).collect();
        if best.is_empty() {
            best = full;
        } else {
            for (b, f) in best.iter_mut().zip(full) {
                b.1 = b.1.min(f.1);
            }
        }
    }
    let base = best.iter().find(|(l, _)| *l == 2).map(|p| p.1).unwrap_or(f64::NAN);
    let worst = best.iter().filter(|(l, _)| *l > 2).map(|p| p.1 / base).fold(0.0, f64::max);
    let times: Vec<String> = best.iter().map(|(l, s)| format!("{l}:{s:.3}s")).collect();
    Ok((worst <= 2.0, format!("max t_l/t_2 over l>2 = {worst:.2}; {}", times.join(" "))))
}

fn disorder() -> Check {
    let cfg = TnsConfig::with_chi(8);
    let lat = IsingSpec::uniform(2, 2, 0.5).lattice();
    let beta = 0.5;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let j = sample_ea_couplings(&lat, CouplingDistribution::PlusMinusOne, seed);
        let spec = DisorderRealization::new(&lat, seed, "pm1", &j).to_spec(beta, 0.0)?;
        let r = run_disordered(&spec, &cfg, false)?;
        worst = worst.max(rel(r.run.log_z.log_abs(), brute_log_z(&spec)?));
    }
    // q with a small field so it is not identically zero
    let j = sample_ea_couplings(&lat, CouplingDistribution::PlusMinusOne, 11);
    let spec = DisorderRealization::new(&lat, 11, "pm1", &j).to_spec(beta, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eps: Vec<i8> = (0..lat.sites()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    let q = run_disordered(&spec, &cfg, true)?.q.unwrap();
    let qg = run_disordered(&gauge_transform(&spec, &eps), &cfg, true)?.q.unwrap();
    let dq = (q - qg).abs();
    let ferro = DisorderRealization::new(&lat, 0, "ferro", &vec![1.0; lat.edges()]).to_spec(beta, 0.0)?;
    let hom = run_free_energy(&IsingSpec::uniform(2, 2, beta), &cfg)?;
    let df = rel(run_disordered(&ferro, &cfg, false)?.run.log_z.log_abs(), hom.log_z.log_abs());
    let ok = worst <= 1e-3 && dq <= 1e-8 && df <= 1e-8;
    Ok((ok, format!("max |dlogZ|/|logZ| {worst:.2e}, q={q:.6} gauge |dq| {dq:.2e}, ferro vs homogeneous {df:.2e}")))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], legs: &[&str]) -> Result<DenseTensor> {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), legs.iter().copied())
}

fn properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = AlsConfig::default();
    let mut worst_rise: f64 = 0.0;
    let mut worst_full: f64 = 0.0;
    for _ in 0..100 {
        let chi_e = rng.gen_range(2..=4);
        let f = rng.gen_range(2..=6);
        let t = random_tensor(&mut rng, &[chi_e, chi_e, f], &["a", "b", "f"])?;
        let p = als_skeletonize(&t, rng.gen_range(1..chi_e), &cfg)?;
        // slack is relative to ‖tr_e T‖², the scale the objective is evaluated at
        let vv: f64 = (0..f).map(|k| (0..chi_e).map(|e| t.get(&[e, e, k])).sum::<f64>().powi(2)).sum();
        for w in p.history.windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / vv);
        }
        worst_full = worst_full.max(als_skeletonize(&t, chi_e, &cfg)?.residual_rel);
    }
    let mut worst_svd: f64 = 0.0;
    for _ in 0..100 {
        let (m, n) = (rng.gen_range(2..=9), rng.gen_range(2..=9));
        let t = random_tensor(&mut rng, &[m, n], &["r", "c"])?;
        let k = rng.gen_range(1..=m.min(n));
        let s = svd_truncate(&t, &["r"], k, 0.0)?;
        let mut us = s.left.clone();
        let sv = us.shape()[1];
        let mut data = us.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v *= s.singular_values[i % sv];
        }
        us = DenseTensor::new(us.shape().to_vec(), data, ["r", "bond"])?;
        let back = tns::tensor::contract(&us, &s.right, &[("bond", "bond")])?;
        let err = back.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst_svd = worst_svd.max((err - s.discarded_weight).abs() / t.norm());
    }
    let mut regroup_ok = true;
    for _ in 0..20 {
        let t = random_tensor(&mut rng, &[2, 3, 4], &["a", "b", "c"])?;
        let g = t.regroup(&[("x", &["a", "b"]), ("c", &["c"])])?;
        regroup_ok &= g.ungroup("x", &[("a", 2), ("b", 3)])? == t;
    }
    let mut worst_order: f64 = 0.0;
    for _ in 0..30 {
        let (net, nedges) = random_network(&mut rng)?;
        let a = contract_exact(&net, None, DEFAULT_SIZE_CAP)?.into_scalar()?;
        let mut order: Vec<usize> = (0..nedges).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let b = contract_exact(&net, Some(&order), DEFAULT_SIZE_CAP)?.into_scalar()?;
        worst_order = worst_order.max((a.ratio(&b) - 1.0).abs());
    }
    let ok = worst_rise <= 1e-12 && worst_full <= 1e-8 && worst_svd <= 1e-10 && regroup_ok && worst_order <= 1e-10;
    Ok((
        ok,
        format!(
            "ALS max rise {worst_rise:.1e}, full-rank residual {worst_full:.1e}, svd weight gap {worst_svd:.1e}, regroup round-trip {regroup_ok}, order gap {worst_order:.1e}"
        ),
    ))
}

/// Random closed network on 3–6 vertices: a ring plus random chords.
fn random_network(rng: &mut ChaCha8Rng) -> Result<(TensorNetwork, usize)> {
    let nv = rng.gen_range(3..=6);
    let mut pairs: Vec<(usize, usize)> = (0..nv).map(|i| (i, (i + 1) % nv)).collect();
    for _ in 0..rng.gen_range(0..=3) {
        let a = rng.gen_range(0..nv);
        let b = rng.gen_range(0..nv);
        if a != b {
            pairs.push((a, b));
        }
    }
    let dims: Vec<usize> = pairs.iter().map(|_| rng.gen_range(1..=3)).collect();
    let mut legs: Vec<Vec<(String, usize)>> = vec![Vec::new(); nv];
    for (e, &(a, b)) in pairs.iter().enumerate() {
        legs[a].push((format!("e{e}a"), dims[e]));
        legs[b].push((format!("e{e}b"), dims[e]));
    }
    let mut net = TensorNetwork::new();
    for l in &legs {
        let shape: Vec<usize> = l.iter().map(|x| x.1).collect();
        let names: Vec<&str> = l.iter().map(|x| x.0.as_str()).collect();
        let n: usize = shape.iter().product();
        // positive entries keep the value away from zero
        let data = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        net.add_vertex(DenseTensor::new(shape, data, names)?);
    }
    for (e, &(a, b)) in pairs.iter().enumerate() {
        net.connect(a, &format!("e{e}a"), b, &format!("e{e}b"))?;
    }
    Ok((net, pairs.len()))
}

fn cubic_self_consistency() -> Check {
    let spec = IsingSpec::uniform(3, 4, 1.0 / T_C_3D);
    let f2 = run_free_energy_3d(&spec, &TnsConfig::with_chi(2))?.free_energy_per_site;
    let f3 = run_free_energy_3d(&spec, &TnsConfig::with_chi(3))?.free_energy_per_site;
    let d = rel(f2, f3);
    Ok((d <= 5e-2, format!("f(chi=2) {f2:.6}, f(chi=3) {f3:.6}, relative gap {d:.2e}")))
}

/// (id, name, time budget in seconds, check)
type Criterion = (usize, &'static str, f64, fn() -> Check);

fn main() {
    // `cargo test -- --list` and filters from the default harness
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned();
    let criteria: Vec<Criterion> = vec![
        (1, "beta=0 exactness", 10.0, beta_zero),
        (2, "2D oracle equivalence", 30.0, || oracle(2, 2, &[0.2, 0.4406868, 0.6])),
        (3, "3D oracle equivalence", 60.0, || oracle(3, 1, &[0.1, 0.2217, 0.3])),
        (4, "2D free-energy sweep", 600.0, free_energy_sweep),
        (5, "2D observables", 600.0, observables),
        (6, "per-level timing", f64::INFINITY, timing),
        (7, "Edwards-Anderson 4x4", 300.0, disorder),
        (8, "property suites", f64::INFINITY, properties),
        (9, "3D self-consistency", f64::INFINITY, cubic_self_consistency),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str()) && *f != id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && secs < budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if budget.is_finite() { format!(" (budget {budget:.0}s)") } else { String::new() };
        println!("criterion {id} [{}] {name}: {detail}; {secs:.1}s{limit}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
