//! Structure-preserving skeletonization.
//!
//! The core problem: given a 3-tensor `T_{abf}` whose legs `a`, `b` close a
//! loop, find `X`, `Y` (χ_e × χ_c) with `Σ_e T_{eef} ≈ Σ_{abc} X_{ac} T_{abf} Y_{bc}`.
//! Everything is expressed through the loop Gram
//! `K_{(ab),(a'b')} = Σ_f T_{abf} T_{a'b'f}`, so callers that can assemble `K`
//! without forming `T` (plaquettes, cubes) never materialize the exterior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::linalg;
use crate::network::{contract_exact, TensorNetwork, DEFAULT_SIZE_CAP};
use crate::tensor::{combine_parity, contract, DenseTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsConfig {
    /// `α = alpha_rel · ‖tr_e T‖²`.
    pub alpha_rel: f64,
    pub max_iters: usize,
    /// Stop once an iteration lowers the objective by less than this fraction.
    pub rel_obj_tol: f64,
    /// Total number of starts: the SVD start plus `restarts − 1` random ones.
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { alpha_rel: 1e-12, max_iters: 100, rel_obj_tol: 1e-11, restarts: 1, rng_seed: 0 }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_rel > 0.0) {
            return Err(arg_err!("alpha_rel must be positive"));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(arg_err!("max_iters and restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SkeletonPair {
    /// Legs `(e, c)`, attached to the `a` side.
    pub x: DenseTensor,
    /// Legs `(e, c)`, attached to the `b` side.
    pub y: DenseTensor,
    /// Data term of the objective relative to `‖tr_e T‖²`.
    pub residual_rel: f64,
    pub iters_used: usize,
    /// Objective after the initial guess and after every half-step of the
    /// returned start.
    pub history: Vec<f64>,
}

/// Loop Gram of a tensor whose first two legs close the loop; all further
/// legs form the exterior.
pub fn loop_gram(t: &DenseTensor) -> Result<(Vec<f64>, usize)> {
    if t.rank() < 3 {
        return Err(arg_err!("loop tensor needs at least three legs"));
    }
    let (chi_a, chi_b) = (t.shape()[0], t.shape()[1]);
    if chi_a != chi_b {
        return Err(arg_err!("loop legs have dims {} and {}", chi_a, chi_b));
    }
    let n2 = chi_a * chi_a;
    let f = t.len() / n2;
    Ok((linalg::matmul_nt(t.data(), n2, f, t.data(), n2), chi_a))
}

pub fn als_skeletonize(t: &DenseTensor, chi_c: usize, cfg: &AlsConfig) -> Result<SkeletonPair> {
    let (k, chi_e) = loop_gram(t)?;
    als_from_gram(&k, chi_e, chi_c, cfg)
}

struct Problem<'a> {
    chi: usize,
    k: &'a [f64],
    /// `K` with the roles of `a` and `b` swapped.
    k_swap: Vec<f64>,
    q: Vec<f64>,
    q_t: Vec<f64>,
    vv: f64,
    alpha: f64,
}

impl Problem<'_> {
    /// `(objective, data term)` at `W = XYᵀ`.
    fn objective(&self, x: &[f64], y: &[f64], c: usize) -> (f64, f64) {
        let n = self.chi;
        let w = linalg::matmul_nt(x, n, c, y, n);
        let kw = linalg::matmul(self.k, n * n, n * n, &w, 1);
        let quad: f64 = w.iter().zip(&kw).map(|(a, b)| a * b).sum();
        let lin: f64 = w.iter().zip(&self.q).map(|(a, b)| a * b).sum();
        let data = quad - 2.0 * lin + self.vv;
        let reg = self.alpha * (x.iter().map(|v| v * v).sum::<f64>() + y.iter().map(|v| v * v).sum::<f64>());
        (data + reg, data)
    }

    /// Exact ridge minimizer over the factor on `p` with the other factor
    /// (`other`, on `o`) fixed. `kk` is indexed `[p][o][p'][o']`, `qq` `[p][o]`.
    /// With a grading only the entries listed in `free` are unknowns; the
    /// rest stay zero.
    fn half_step(&self, kk: &[f64], qq: &[f64], other: &[f64], c: usize, free: Option<&[usize]>) -> Vec<f64> {
        let n = self.chi;
        // t1[p][c][p'][o'] = Σ_o other[o][c] kk[p][o][p'][o']
        let mut t1 = vec![0.0; n * c * n * n];
        for p in 0..n {
            let blk = linalg::matmul_tn(other, n, c, &kk[p * n * n * n..(p + 1) * n * n * n], n * n);
            t1[p * c * n * n..(p + 1) * c * n * n].copy_from_slice(&blk);
        }
        // a[p][c][p'][c'] = Σ_o' t1[p][c][p'][o'] other[o'][c']
        let mut a = linalg::matmul(&t1, n * c * n, n, other, c);
        let dim = n * c;
        for i in 0..dim {
            a[i * dim + i] += self.alpha;
        }
        let rhs = linalg::matmul(qq, n, n, other, c);
        let Some(free) = free else {
            return linalg::solve_spd(&a, dim, &rhs);
        };
        let nf = free.len();
        let mut sub = Vec::with_capacity(nf * nf);
        for &i in free {
            sub.extend(free.iter().map(|&j| a[i * dim + j]));
        }
        let sol = linalg::solve_spd(&sub, nf, &free.iter().map(|&i| rhs[i]).collect::<Vec<_>>());
        let mut out = vec![0.0; dim];
        for (&i, v) in free.iter().zip(sol) {
            out[i] = v;
        }
        out
    }
}

fn orthonormal_columns(m: &mut [f64], rows: usize, cols: usize) {
    for c in 0..cols {
        for prev in 0..c {
            let dot: f64 = (0..rows).map(|r| m[r * cols + c] * m[r * cols + prev]).sum();
            for r in 0..rows {
                m[r * cols + c] -= dot * m[r * cols + prev];
            }
        }
        let nrm = (0..rows).map(|r| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
        if nrm > 0.0 {
            for r in 0..rows {
                m[r * cols + c] /= nrm;
            }
        }
    }
}

/// Regularized ALS on a loop Gram `K` (row-major, `(χ_e²) × (χ_e²)`).
pub fn als_from_gram(k: &[f64], chi_e: usize, chi_c: usize, cfg: &AlsConfig) -> Result<SkeletonPair> {
    als_from_graded_gram(k, chi_e, chi_c, cfg, None)
}

/// [`als_from_gram`] for a loop whose edge carries the Z2 grading `parity`.
/// `X` and `Y` are then block diagonal between the edge grading and the
/// grading picked for the new bond, so a symmetric network stays symmetric
/// to the last bit. The returned factors carry the grading on `(e, c)`.
pub fn als_from_graded_gram(
    k: &[f64],
    chi_e: usize,
    chi_c: usize,
    cfg: &AlsConfig,
    parity: Option<&[i8]>,
) -> Result<SkeletonPair> {
    cfg.validate()?;
    if parity.is_some_and(|p| p.len() != chi_e) {
        return Err(arg_err!("edge grading has the wrong length"));
    }
    if chi_c == 0 || chi_c > chi_e {
        return Err(arg_err!("target bond {} must lie in 1..={}", chi_c, chi_e));
    }
    let n = chi_e;
    let n2 = n * n;
    if k.len() != n2 * n2 {
        return Err(arg_err!("loop Gram has {} entries, expected {}", k.len(), n2 * n2));
    }
    let mut q = vec![0.0; n2];
    for (i, qi) in q.iter_mut().enumerate() {
        *qi = (0..n).map(|e| k[i * n2 + e * n + e]).sum();
    }
    let vv: f64 = (0..n).map(|e| q[e * n + e]).sum();
    let mut k_swap = vec![0.0; n2 * n2];
    let mut q_t = vec![0.0; n2];
    for a in 0..n {
        for b in 0..n {
            q_t[b * n + a] = q[a * n + b];
            for a2 in 0..n {
                for b2 in 0..n {
                    k_swap[((b * n + a) * n + b2) * n + a2] = k[((a * n + b) * n + a2) * n + b2];
                }
            }
        }
    }
    // SVD start: top left singular vectors of the (a)×(b·f) matricization.
    let mut gram_a = vec![0.0; n2];
    for a in 0..n {
        for a2 in 0..n {
            gram_a[a * n + a2] = (0..n).map(|b| k[((a * n + b) * n + a2) * n + b]).sum();
        }
    }
    let (vecs, bond_par) = match parity {
        Some(p) => {
            let (_, v, cp) = linalg::sym_eig_graded(&gram_a, n, p);
            (v, Some(cp[..chi_c].to_vec()))
        }
        None => (linalg::sym_eig(&gram_a, n).1, None),
    };
    let free: Option<Vec<usize>> = parity
        .zip(bond_par.as_ref())
        .map(|(pe, pc)| (0..n * chi_c).filter(|&i| pe[i / chi_c] == pc[i % chi_c]).collect());
    let graded = parity.zip(bond_par.clone()).map(|(pe, pc)| vec![pe.to_vec(), pc]);
    let tensor = |v: Vec<f64>| {
        DenseTensor::from_parts(vec![n, chi_c], v, vec!["e".into(), "c".into()]).set_parity(graded.clone())
    };
    if !(vv > 0.0) {
        // the loop closes to zero; the zero insertion is exact
        return Ok(SkeletonPair {
            x: tensor(vec![0.0; n * chi_c]),
            y: tensor(vec![0.0; n * chi_c]),
            residual_rel: 0.0,
            iters_used: 0,
            history: vec![0.0],
        });
    }
    let prob = Problem { chi: n, k, k_swap, q, q_t, vv, alpha: cfg.alpha_rel * vv };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(cfg.restarts);
    starts.push((0..n * chi_c).map(|i| vecs[(i / chi_c) * n + i % chi_c]).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    for _ in 1..cfg.restarts {
        let mut m: Vec<f64> = (0..n * chi_c).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(free) = &free {
            let mut masked = vec![0.0; m.len()];
            free.iter().for_each(|&i| masked[i] = m[i]);
            m = masked;
        }
        orthonormal_columns(&mut m, n, chi_c);
        starts.push(m);
    }

    let mut best: Option<(f64, SkeletonPair)> = None;
    for start in starts {
        let mut x = start.clone();
        let mut y = start;
        let (mut obj, _) = prob.objective(&x, &y, chi_c);
        let mut history = vec![obj];
        let mut iters = 0;
        for it in 1..=cfg.max_iters {
            iters = it;
            let prev = obj;
            x = prob.half_step(prob.k, &prob.q, &y, chi_c, free.as_deref());
            history.push(prob.objective(&x, &y, chi_c).0);
            y = prob.half_step(&prob.k_swap, &prob.q_t, &x, chi_c, free.as_deref());
            let (o, data) = prob.objective(&x, &y, chi_c);
            obj = o;
            history.push(obj);
            if prev - obj <= cfg.rel_obj_tol * prev.abs() || data <= 1e-15 * vv {
                break;
            }
        }
        let (obj, data) = prob.objective(&x, &y, chi_c);
        let pair =
            SkeletonPair { x: tensor(x), y: tensor(y), residual_rel: (data / vv).max(0.0), iters_used: iters, history };
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, pair));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// How the boundary of each half-plaquette is treated before forming the
/// loop Gram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Use the full half-plaquette Gram; no truncation at all.
    Exact,
    /// Keep only the top `k` eigen-directions of each half-plaquette Gram,
    /// i.e. cut the boundary bond to `k` by a `UU'T`-projection.
    Rank(usize),
}

/// Diagnostics of one interior-edge insertion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeReport {
    pub axis: usize,
    /// Corner at the lower end of the edge.
    pub corner: usize,
    pub chi_in: usize,
    pub chi_out: usize,
    pub residual_rel: f64,
    pub iters: usize,
    pub skipped: bool,
}

/// Exterior leg of a corner tensor.
pub const DIAG: &str = "d";
const AXIS: [&str; 3] = ["x", "y", "z"];
const AXIS_BRA: [&str; 3] = ["X", "Y", "Z"];

/// Name of the plaquette leg of a corner along `axis`.
pub fn axis_leg(axis: usize) -> &'static str {
    AXIS[axis]
}

fn corner_gram(r: &DenseTensor, dim: usize) -> Result<DenseTensor> {
    let pairs: Vec<(&str, &str)> = (0..dim).map(|j| (AXIS[j], AXIS_BRA[j])).collect();
    let bra = r.clone().relabel(&pairs)?;
    contract(r, &bra, &[(DIAG, DIAG)])
}

/// Gram over the exterior of one face: rows/cols run over the face's
/// `axis` legs, listed for the corners in `order`.
fn face_gram(grams: &[DenseTensor], face: &[usize], order: &[usize], axis: usize, dim: usize) -> Result<DenseTensor> {
    let mut net = TensorNetwork::new();
    let ids: Vec<usize> = face.iter().map(|&c| net.add_vertex(grams[c].clone())).collect();
    let pos = |c: usize| face.iter().position(|&x| x == c).expect("corner in face");
    for (i, &c1) in face.iter().enumerate() {
        for &c2 in &face[i + 1..] {
            let diff = c1 ^ c2;
            if diff.count_ones() == 1 {
                let k = diff.trailing_zeros() as usize;
                debug_assert_ne!(k, axis);
                net.connect(ids[i], AXIS[k], ids[pos(c2)], AXIS[k])?;
                net.connect(ids[i], AXIS_BRA[k], ids[pos(c2)], AXIS_BRA[k])?;
            }
        }
    }
    for (i, &c) in order.iter().enumerate() {
        net.open(ids[pos(c)], AXIS[axis], &format!("k{i}"))?;
    }
    for (i, &c) in order.iter().enumerate() {
        net.open(ids[pos(c)], AXIS_BRA[axis], &format!("b{i}"))?;
    }
    let _ = dim;
    contract_exact(&net, None, DEFAULT_SIZE_CAP)?.into_tensor()
}

/// Keeps the top-`k` spectral part of a PSD matrix, sector-wise when graded.
fn truncate_psd(g: &[f64], n: usize, k: usize, parity: Option<&[i8]>) -> Vec<f64> {
    if k >= n {
        return g.to_vec();
    }
    let (vals, vecs) = match parity {
        Some(p) => {
            let (v, e, _) = linalg::sym_eig_graded(g, n, p);
            (v, e)
        }
        None => linalg::sym_eig(g, n),
    };
    let mut scaled = vec![0.0; n * k];
    for i in 0..n {
        for c in 0..k {
            scaled[i * k + c] = vecs[i * n + c] * vals[c].max(0.0);
        }
    }
    let mut vk = vec![0.0; n * k];
    for i in 0..n {
        vk[i * k..(i + 1) * k].copy_from_slice(&vecs[i * n..i * n + k]);
    }
    linalg::matmul_nt(&scaled, n, k, &vk, n)
}

/// Loop Gram for the edge `(c0, c0 | 1<<axis)`.
fn edge_loop_gram(
    corners: &[DenseTensor],
    dim: usize,
    axis: usize,
    c0: usize,
    boundary: BoundaryMode,
) -> Result<(Vec<f64>, usize)> {
    let ncorner = 1 << dim;
    let bit = 1 << axis;
    let grams: Vec<DenseTensor> = corners.iter().map(|r| corner_gram(r, dim)).collect::<Result<_>>()?;
    let face0: Vec<usize> = (0..ncorner).filter(|c| c & bit == 0).collect();
    let face1: Vec<usize> = face0.iter().map(|c| c | bit).collect();
    let mut order0 = vec![c0];
    order0.extend(face0.iter().copied().filter(|&c| c != c0));
    let order1: Vec<usize> = order0.iter().map(|c| c | bit).collect();
    let g0 = face_gram(&grams, &face0, &order0, axis, dim)?;
    let g1 = face_gram(&grams, &face1, &order1, axis, dim)?;

    let chi_e = g0.shape()[0];
    let side: usize = g0.shape()[..order0.len()].iter().product();
    let sib = side / chi_e;
    let side_parity = |g: &DenseTensor| {
        g.parity().map(|p| {
            let parts: Vec<&[i8]> = p[..order0.len()].iter().map(|v| v.as_slice()).collect();
            combine_parity(&parts)
        })
    };
    let (p0, p1) = (side_parity(&g0), side_parity(&g1));
    let (mut g0d, mut g1d) = (g0.into_data(), g1.into_data());
    if let BoundaryMode::Rank(k) = boundary {
        g0d = truncate_psd(&g0d, side, k, p0.as_deref());
        g1d = truncate_psd(&g1d, side, k, p1.as_deref());
    }
    // [a][s][a'][s'] -> [a][a'][s][s']
    let reorder = |g: &[f64]| {
        let t = DenseTensor::from_parts(
            vec![chi_e, sib, chi_e, sib],
            g.to_vec(),
            vec!["a".into(), "s".into(), "A".into(), "S".into()],
        );
        t.permute(&["a", "A", "s", "S"]).map(|t| t.into_data())
    };
    let m0 = reorder(&g0d)?;
    let m1 = reorder(&g1d)?;
    let kk = linalg::matmul_nt(&m0, chi_e * chi_e, sib * sib, &m1, chi_e * chi_e);
    // [a][a'][b][b'] -> [a][b][a'][b']
    let t = DenseTensor::from_parts(vec![chi_e; 4], kk, vec!["a".into(), "A".into(), "b".into(), "B".into()]);
    Ok((t.permute(&["a", "b", "A", "B"])?.into_data(), chi_e))
}

fn attach(r: &DenseTensor, axis: usize, m: &DenseTensor) -> Result<DenseTensor> {
    let order: Vec<String> = r.legs().to_vec();
    let t = contract(r, m, &[(AXIS[axis], "e")])?.relabel(&[("c", AXIS[axis])])?;
    t.permute(&order)
}

/// Reduces every interior bond of a plaquette (`dim = 2`, four corners) or
/// cube (`dim = 3`, eight corners) to at most `chi`.
///
/// Corner `c` sits at bit position `(c & 1, c >> 1 & 1, c >> 2 & 1)` and
/// carries the exterior leg [`DIAG`] plus one leg per axis (see
/// [`axis_leg`]). Edges are processed axis by axis, and within an axis in
/// increasing order of their lower corner; every insertion is applied before
/// the next edge is considered.
pub fn skeletonize_corners(
    dim: usize,
    corners: &[DenseTensor],
    chi: usize,
    boundary: BoundaryMode,
    cfg: &AlsConfig,
) -> Result<(Vec<DenseTensor>, Vec<EdgeReport>)> {
    if dim != 2 && dim != 3 {
        return Err(arg_err!("skeletonization is defined for 2 or 3 dimensions"));
    }
    if corners.len() != 1 << dim {
        return Err(arg_err!("expected {} corners, got {}", 1 << dim, corners.len()));
    }
    if chi == 0 {
        return Err(arg_err!("target bond must be positive"));
    }
    for (c, r) in corners.iter().enumerate() {
        if r.rank() != dim + 1 || !r.has_leg(DIAG) || (0..dim).any(|j| !r.has_leg(AXIS[j])) {
            return Err(arg_err!("corner {} must carry legs d and one per axis, has {:?}", c, r.legs()));
        }
    }
    for c in 0..corners.len() {
        for j in 0..dim {
            let o = c ^ (1 << j);
            if corners[c].dim(AXIS[j])? != corners[o].dim(AXIS[j])? {
                return Err(arg_err!("edge between corners {} and {} has mismatched dims", c, o));
            }
        }
    }
    let mut rs = corners.to_vec();
    let mut reports = Vec::new();
    for axis in 0..dim {
        let bit = 1 << axis;
        for c0 in (0..1usize << dim).filter(|c| c & bit == 0) {
            let c1 = c0 | bit;
            let chi_e = rs[c0].dim(AXIS[axis])?;
            if chi_e <= chi {
                reports.push(EdgeReport {
                    axis,
                    corner: c0,
                    chi_in: chi_e,
                    chi_out: chi_e,
                    residual_rel: 0.0,
                    iters: 0,
                    skipped: true,
                });
                continue;
            }
            let (k, _) = edge_loop_gram(&rs, dim, axis, c0, boundary)?;
            let parity = match (rs[c0].leg_parity(AXIS[axis]), rs[c1].leg_parity(AXIS[axis])) {
                (Some(p), Some(q)) if p == q => Some(p.to_vec()),
                _ => None,
            };
            let pair = als_from_graded_gram(&k, chi_e, chi, cfg, parity.as_deref())?;
            rs[c0] = attach(&rs[c0], axis, &pair.x)?;
            rs[c1] = attach(&rs[c1], axis, &pair.y)?;
            reports.push(EdgeReport {
                axis,
                corner: c0,
                chi_in: chi_e,
                chi_out: chi,
                residual_rel: pair.residual_rel,
                iters: pair.iters_used,
                skipped: false,
            });
        }
    }
    Ok((rs, reports))
}

pub fn skeletonize_plaquette(
    corners: &[DenseTensor; 4],
    chi: usize,
    boundary: BoundaryMode,
    cfg: &AlsConfig,
) -> Result<(Vec<DenseTensor>, Vec<EdgeReport>)> {
    skeletonize_corners(2, corners, chi, boundary, cfg)
}

pub fn skeletonize_cube(
    corners: &[DenseTensor; 8],
    chi: usize,
    boundary: BoundaryMode,
    cfg: &AlsConfig,
) -> Result<(Vec<DenseTensor>, Vec<EdgeReport>)> {
    skeletonize_corners(3, corners, chi, boundary, cfg)
}

/// Exterior tensor of a plaquette/cube: all interior edges contracted, one
/// leg `d{c}` per corner.
pub fn exterior_tensor(dim: usize, corners: &[DenseTensor]) -> Result<DenseTensor> {
    let mut net = TensorNetwork::new();
    let ids: Vec<usize> = corners.iter().map(|r| net.add_vertex(r.clone())).collect();
    for c in 0..corners.len() {
        for j in 0..dim {
            if c & (1 << j) == 0 {
                net.connect(ids[c], AXIS[j], ids[c | (1 << j)], AXIS[j])?;
            }
        }
    }
    for (c, &id) in ids.iter().enumerate() {
        net.open(id, DIAG, &format!("d{c}"))?;
    }
    contract_exact(&net, None, DEFAULT_SIZE_CAP)?.into_tensor()
}
