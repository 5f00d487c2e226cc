//! Exact oracles: spin enumeration and the closed-form 2D Ising results.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Result, TnsError};
use crate::logscalar::LogScalar;
use crate::models::{ImpurityKind, IsingSpec};

/// Largest lattice the enumeration accepts.
pub const MAX_BRUTE_SPINS: usize = 24;

/// Inverse critical temperature of the square-lattice model, `ln(1+√2)/2`.
pub fn beta_c_2d() -> f64 {
    (1.0 + 2f64.sqrt()).ln() / 2.0
}

/// Critical temperature of the square-lattice model, `2/ln(1+√2)`.
pub fn t_c_2d() -> f64 {
    1.0 / beta_c_2d()
}

/// Commonly quoted critical temperature of the simple-cubic model.
pub const T_C_3D: f64 = 4.5115;

/// `Σ_σ O(σ) e^{-βH(σ)}` by enumeration, where `O` is the product of the
/// impurity spins (1 for [`ImpurityKind::None`]).
pub fn brute_force(spec: &IsingSpec, impurity: &ImpurityKind) -> Result<LogScalar> {
    spec.validate()?;
    let lat = spec.lattice();
    let n = lat.sites();
    if n > MAX_BRUTE_SPINS {
        return Err(TnsError::Resource(format!("brute force over {n} spins exceeds the {MAX_BRUTE_SPINS}-spin cap")));
    }
    let beta = spec.beta;
    // neighbour lists with multiplicity; self-bonds (n = 1) are constant
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut const_e = 0.0;
    for e in 0..lat.edges() {
        let (u, v, _) = lat.edge_ends(e);
        let j = spec.coupling(e);
        if u == v {
            const_e -= j;
        } else {
            nbrs[u].push((v, j));
            nbrs[v].push((u, j));
        }
    }
    let h: Vec<f64> = (0..n).map(|i| spec.field(i)).collect();
    let obs = impurity.sites();
    // bound on -E keeps every exponent ≤ 0
    let shift =
        beta * ((0..lat.edges()).map(|e| spec.coupling(e).abs()).sum::<f64>() + h.iter().map(|x| x.abs()).sum::<f64>());

    // each bond appears in both endpoint lists; `j > i` keeps one copy while
    // parallel bonds between the same pair stay separate
    let energy = |cfg: u64| -> f64 {
        let s = |i: usize| if cfg >> i & 1 == 0 { 1.0 } else { -1.0 };
        let mut e = const_e;
        for i in 0..n {
            for &(j, c) in &nbrs[i] {
                if j > i {
                    e -= c * s(i) * s(j);
                }
            }
            e -= h[i] * s(i);
        }
        e
    };
    let chunk_bits = n.min(6);
    let low_bits = n - chunk_bits;
    let chunks: Vec<f64> = (0..1u64 << chunk_bits)
        .into_par_iter()
        .map(|hi| {
            let base = hi << low_bits;
            let mut cfg = base;
            let mut e = energy(cfg);
            let mut acc = 0.0;
            for step in 0..1u64 << low_bits {
                if step > 0 {
                    // Gray code: flip the lowest set bit position of `step`
                    let k = step.trailing_zeros() as usize;
                    let sk = if cfg >> k & 1 == 0 { 1.0 } else { -1.0 };
                    let mut local = h[k];
                    for &(j, c) in &nbrs[k] {
                        let sj = if cfg >> j & 1 == 0 { 1.0 } else { -1.0 };
                        local += c * sj;
                    }
                    e += 2.0 * sk * local;
                    cfg ^= 1 << k;
                    if step & 0xfff == 0 {
                        e = energy(cfg);
                    }
                }
                let mut w = (-beta * e - shift).exp();
                for &i in &obs {
                    if cfg >> i & 1 == 1 {
                        w = -w;
                    }
                }
                acc += w;
            }
            acc
        })
        .collect();
    let total: f64 = chunks.iter().sum();
    Ok(LogScalar::from_f64(total) * LogScalar::from_log(shift))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Panel boundaries on `[0, π]`, geometrically refined towards 0 when `graded`.
fn panels(graded: bool, levels: usize) -> Vec<f64> {
    if !graded {
        return (0..=4).map(|k| PI * k as f64 / 4.0).collect();
    }
    let mut b: Vec<f64> = (0..levels).rev().map(|k| PI * 0.5f64.powi(k as i32 + 1)).collect();
    b.insert(0, 0.0);
    b.push(PI);
    b
}

/// Quadrature rule on `[0, π]` as (nodes, weights).
fn rule(graded: bool, levels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let b = panels(graded, levels);
    let mut x = Vec::new();
    let mut w = Vec::new();
    for p in b.windows(2) {
        let (lo, hi) = (p[0], p[1]);
        let half = 0.5 * (hi - lo);
        for (xi, wi) in gx.iter().zip(&gw) {
            x.push(lo + half * (xi + 1.0));
            w.push(half * wi);
        }
    }
    (x, w)
}

/// `-βf` of the infinite square lattice by the double integral, using a
/// rule with `order` points per panel and `levels` graded panels.
pub fn onsager_log_z_per_site_with(beta: f64, order: usize, levels: usize) -> f64 {
    let graded = (beta - beta_c_2d()).abs() < 0.02;
    let (x, w) = rule(graded, levels, order);
    // cosh²2β − sinh2β (cos a + cos b), written without cancellation
    let s = (2.0 * beta).sinh();
    let gap = (1.0 - s).powi(2);
    let hav: Vec<f64> = x.iter().map(|t| 2.0 * (t / 2.0).sin().powi(2)).collect();
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let mut row = 0.0;
        for (j, wj) in w.iter().enumerate() {
            row += wj * (gap + s * (hav[i] + hav[j])).ln();
        }
        acc += wi * row;
    }
    // ∫∫ over [0,2π]² equals 4 × the integral over [0,π]²
    2f64.ln() + acc * 4.0 / (8.0 * PI * PI)
}

/// `−βf` of the infinite square lattice.
pub fn onsager_log_z_per_site(beta: f64) -> f64 {
    onsager_log_z_per_site_with(beta, 24, 40)
}

/// Onsager free energy per site `f(β)`.
pub fn onsager_free_energy(beta: f64) -> f64 {
    -onsager_log_z_per_site(beta) / beta
}

/// Same quantity from the one-dimensional elliptic form; an independent check.
pub fn onsager_log_z_per_site_1d(beta: f64) -> f64 {
    let k = 2.0 * (2.0 * beta).sinh() / (2.0 * beta).cosh().powi(2);
    let (gx, gw) = gauss_legendre(64);
    let mut acc = 0.0;
    for p in 0..8 {
        let lo = PI / 2.0 * p as f64 / 8.0;
        let hi = PI / 2.0 * (p + 1) as f64 / 8.0;
        let half = 0.5 * (hi - lo);
        for (xi, wi) in gx.iter().zip(&gw) {
            let t = lo + half * (xi + 1.0);
            let r = (1.0 - k * k * t.sin().powi(2)).max(0.0).sqrt();
            acc += half * wi * ((1.0 + r) / 2.0).ln();
        }
    }
    (2.0 * (2.0 * beta).cosh()).ln() + acc / PI
}

/// Complete elliptic integral of the first kind via the AGM.
pub fn elliptic_k(k: f64) -> f64 {
    elliptic_k_comp((1.0 - k * k).max(0.0).sqrt())
}

/// `K` as a function of the complementary modulus `k' = √(1 − k²)`.
fn elliptic_k_comp(kp: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, kp);
    if b == 0.0 {
        return f64::INFINITY;
    }
    for _ in 0..64 {
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
    }
    PI / (2.0 * a)
}

/// Exact internal energy per site of the infinite square lattice.
pub fn exact_internal_energy(beta: f64) -> f64 {
    if beta == beta_c_2d() {
        return -2f64.sqrt();
    }
    let t2 = (2.0 * beta).tanh();
    let (s, c) = ((2.0 * beta).sinh(), (2.0 * beta).cosh());
    // c⁴ − 4s² = (1 − s²)², so k' needs no subtraction near the critical point
    let kp = (1.0 - s * s).abs() / (c * c);
    let bracket = 1.0 + 2.0 / PI * (2.0 * t2 * t2 - 1.0) * elliptic_k_comp(kp);
    -bracket / t2
}

/// Spontaneous magnetization `(1 − sinh(2β)^{-4})^{1/8}` below `T_c`, else 0.
pub fn yang_magnetization(beta: f64) -> f64 {
    if beta <= beta_c_2d() {
        return 0.0;
    }
    (1.0 - (2.0 * beta).sinh().powi(-4)).powf(0.125)
}
