//! Level machinery shared by the 2D and 3D drivers.
//!
//! A level maps a periodic hypercubic network of side `s` to one of side
//! `s/2`: merge each `(0,…,0)_2` block into one vertex, insert `UU'T`
//! projectors on the merged bonds, then skeletonize the designated
//! plaquettes/cubes so every bond is back to `χ`. The bulk is stored as a
//! periodic cell pattern; impurity runs carry a sparse set of overridden
//! vertices on top of a cached bulk run and recompute only what touches them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result, TnsError};
use crate::linalg;
use crate::logscalar::LogScalar;
use crate::models::{leg, legs_for, site_tensors, Couplings, IsingSpec};
use crate::network::{contract_exact, TensorNetwork, DEFAULT_SIZE_CAP};
use crate::skeleton::{axis_leg, skeletonize_corners, AlsConfig, BoundaryMode, EdgeReport, DIAG};
use crate::tensor::{combine_parity, contract, ur_project, DenseTensor, BOND, DEFAULT_REL_CUTOFF};

pub type Coord = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Both parity classes are skeletonized every level.
    Standard,
    /// Only the `(1,…,1)_2` class; the other class is merged right away.
    Modified,
}

impl Variant {
    /// Parity classes skeletonized per level, in processing order.
    pub fn classes(self) -> &'static [usize] {
        match self {
            Variant::Standard => &[1, 0],
            Variant::Modified => &[1],
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = TnsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "modified" => Ok(Variant::Modified),
            _ => Err(arg_err!("unknown variant '{}'", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TnsConfig {
    pub chi: usize,
    pub variant: Variant,
    /// Half-plaquette boundary treatment; `None` picks `Exact` in 2D and
    /// `Rank(χ⁴)` in 3D.
    pub boundary: Option<BoundaryMode>,
    /// Cap on merged bonds after projection; `None` picks `χ²` in 2D and
    /// `min(χ², χ+2)` in 3D.
    pub projector_cap: Option<usize>,
    /// Cap on the exterior bond of a corner's UR split; `None` keeps all in
    /// 2D and `χ³` in 3D.
    pub corner_cap: Option<usize>,
    /// Relative singular-value cutoff for SVD-based splits.
    pub rel_cutoff: f64,
    /// Eigenvalues of a projector Gram below this fraction of the largest
    /// one are dropped.
    pub gram_cutoff: f64,
    pub size_cap: usize,
    pub als: AlsConfig,
}

impl Default for TnsConfig {
    fn default() -> Self {
        Self {
            chi: 4,
            variant: Variant::Standard,
            boundary: None,
            projector_cap: None,
            corner_cap: None,
            rel_cutoff: DEFAULT_REL_CUTOFF,
            gram_cutoff: 1e-12,
            size_cap: DEFAULT_SIZE_CAP,
            als: AlsConfig::default(),
        }
    }
}

impl TnsConfig {
    pub fn with_chi(chi: usize) -> Self {
        Self { chi, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chi == 0 {
            return Err(arg_err!("chi must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rel_cutoff) || !(0.0..1.0).contains(&self.gram_cutoff) {
            return Err(arg_err!("cutoffs must lie in [0, 1)"));
        }
        if matches!(self.boundary, Some(BoundaryMode::Rank(0))) {
            return Err(arg_err!("boundary rank must be positive"));
        }
        if self.projector_cap == Some(0) || self.corner_cap == Some(0) {
            return Err(arg_err!("caps must be positive"));
        }
        self.als.validate()
    }

    pub fn boundary_mode(&self, dim: usize) -> BoundaryMode {
        self.boundary.unwrap_or(if dim == 2 {
            BoundaryMode::Exact
        } else {
            BoundaryMode::Rank(self.chi.saturating_pow(4))
        })
    }

    pub fn projector_cap(&self, dim: usize) -> usize {
        let sq = self.chi.saturating_mul(self.chi);
        self.projector_cap.unwrap_or(if dim == 2 { sq } else { sq.min(self.chi + 2) })
    }

    pub fn corner_cap(&self, dim: usize) -> usize {
        self.corner_cap.unwrap_or(if dim == 2 { usize::MAX } else { self.chi.saturating_pow(3) })
    }

    /// Number of merge-only rounds applied to a side-`side` lattice with
    /// bond 2 before the first full level. A round squares the bond in 2D
    /// and raises it to the fourth power in 3D. 2D stops at the smallest
    /// bond ≥ χ, 3D at the largest bond ≤ χ; rounds never take the side
    /// below 2.
    pub fn bootstrap_rounds(&self, dim: usize, side: usize) -> usize {
        let grow = 1usize << (dim - 1);
        let mut rounds = 0;
        let mut bond = 2usize;
        let mut s = side;
        while s > 2 {
            let next = bond.saturating_pow(grow as u32);
            let go = if dim == 2 { bond < self.chi } else { next <= self.chi };
            if !go {
                break;
            }
            bond = next;
            s /= 2;
            rounds += 1;
        }
        rounds
    }
}

/// Periodic grid of vertex tensors stored as a `period^D` cell pattern.
#[derive(Clone, Debug)]
pub struct Grid {
    pub dim: usize,
    pub side: usize,
    pub period: usize,
    pub cells: Vec<Arc<DenseTensor>>,
}

/// All coordinates of a `p^D` box, x fastest.
pub fn coords_box(dim: usize, p: usize) -> Vec<Coord> {
    let total = p.pow(dim as u32);
    (0..total)
        .map(|i| {
            let mut c = [0; 3];
            let mut r = i;
            for x in c.iter_mut().take(dim) {
                *x = r % p;
                r /= p;
            }
            c
        })
        .collect()
}

fn bits_of(k: usize) -> Coord {
    [k & 1, (k >> 1) & 1, (k >> 2) & 1]
}

impl Grid {
    pub fn uniform(dim: usize, side: usize, t: DenseTensor) -> Self {
        Self { dim, side, period: 1, cells: vec![Arc::new(t)] }
    }

    /// One cell per site, sites numbered x fastest.
    pub fn from_sites(dim: usize, side: usize, tensors: Vec<DenseTensor>) -> Result<Self> {
        if tensors.len() != side.pow(dim as u32) {
            return Err(arg_err!("{} tensors for a side-{} lattice", tensors.len(), side));
        }
        Ok(Self { dim, side, period: side, cells: tensors.into_iter().map(Arc::new).collect() })
    }

    fn cell_index(&self, c: Coord) -> usize {
        let mut i = 0;
        let mut m = 1;
        for &x in c.iter().take(self.dim) {
            i += (x % self.period) * m;
            m *= self.period;
        }
        i
    }

    pub fn at(&self, c: Coord) -> &Arc<DenseTensor> {
        &self.cells[self.cell_index(c)]
    }

    fn expanded(&self, p: usize) -> Grid {
        if p == self.period {
            return self.clone();
        }
        let cells = coords_box(self.dim, p).into_iter().map(|c| self.at(c).clone()).collect();
        Grid { dim: self.dim, side: self.side, period: p, cells }
    }

    pub fn max_bond(&self) -> usize {
        self.cells.iter().flat_map(|t| t.shape().to_vec()).max().unwrap_or(0)
    }

    fn wrap(&self, c: Coord, delta: Coord, sign: isize) -> Coord {
        let mut out = [0; 3];
        for d in 0..self.dim {
            let s = self.side as isize;
            out[d] = ((c[d] as isize + sign * delta[d] as isize).rem_euclid(s)) as usize;
        }
        out
    }
}

/// Vertices that differ from the bulk pattern, keyed by absolute coordinate.
pub type Specials = BTreeMap<Coord, Arc<DenseTensor>>;

fn pick<'a>(g: &'a Grid, s: &'a Specials, c: Coord) -> &'a Arc<DenseTensor> {
    s.get(&c).unwrap_or_else(|| g.at(c))
}

fn unit(d: usize) -> Coord {
    let mut u = [0; 3];
    u[d] = 1;
    u
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    MergeOnly,
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelDiag {
    pub level: usize,
    pub kind: LevelKind,
    pub side_in: usize,
    pub side_out: usize,
    pub bond_in: usize,
    /// Largest merged bond before projection.
    pub bond_merged: usize,
    /// Largest bond after projection.
    pub bond_projected: usize,
    pub bond_out: usize,
    pub skeletonized_edges: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub seconds: f64,
}

/// Everything a level computed for the bulk, kept so impurity runs can
/// reuse it.
#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub kind: LevelKind,
    pub input: Grid,
    /// Normalization of each merged cell.
    pub scales: Vec<f64>,
    /// Projector per merged cell and axis, for the edge entering the cell
    /// from below; empty for merge-only levels.
    pub projectors: Vec<Vec<Arc<DenseTensor>>>,
    /// Merged (and projected) grid, then the grid after each class pass.
    pub stages: Vec<Grid>,
    pub diag: LevelDiag,
}

impl LevelRecord {
    pub fn output(&self) -> &Grid {
        self.stages.last().expect("at least one stage")
    }
}

struct Ctx<'a> {
    dim: usize,
    cfg: &'a TnsConfig,
}

fn member_label(d: usize, plus: bool, i: usize) -> String {
    format!("{}{}", leg(d, plus), i)
}

fn members(dim: usize, d: usize, plus: bool) -> Vec<usize> {
    (0..1usize << dim).filter(|k| ((k >> d) & 1 == 1) == plus).collect()
}

impl Ctx<'_> {
    fn block_corners(&self, g: &Grid, s: &Specials, x: Coord) -> Vec<Arc<DenseTensor>> {
        (0..1usize << self.dim)
            .map(|k| {
                let b = bits_of(k);
                let mut c = [0; 3];
                for d in 0..self.dim {
                    c[d] = 2 * x[d] + b[d];
                }
                pick(g, s, c).clone()
            })
            .collect()
    }

    /// Network of a block with its internal bonds joined.
    fn block_network(&self, net: &mut TensorNetwork, corners: &[Arc<DenseTensor>]) -> Result<Vec<usize>> {
        let ids: Vec<usize> = corners.iter().map(|t| net.add_vertex((**t).clone())).collect();
        for k in 0..corners.len() {
            for d in 0..self.dim {
                if (k >> d) & 1 == 0 {
                    net.connect(ids[k], leg(d, true), ids[k | (1 << d)], leg(d, false))?;
                }
            }
        }
        Ok(ids)
    }

    fn merge_block(&self, corners: &[Arc<DenseTensor>]) -> Result<DenseTensor> {
        let mut net = TensorNetwork::new();
        let ids = self.block_network(&mut net, corners)?;
        let mut groups: Vec<(String, Vec<String>)> = Vec::new();
        for d in 0..self.dim {
            for plus in [false, true] {
                let mut labels = Vec::new();
                for (i, k) in members(self.dim, d, plus).into_iter().enumerate() {
                    let l = member_label(d, plus, i);
                    net.open(ids[k], leg(d, plus), &l)?;
                    labels.push(l);
                }
                groups.push((leg(d, plus).to_string(), labels));
            }
        }
        let t = contract_exact(&net, None, self.cfg.size_cap)?.into_tensor()?;
        let refs: Vec<Vec<&str>> = groups.iter().map(|(_, m)| m.iter().map(|s| s.as_str()).collect()).collect();
        let spec: Vec<(&str, &[&str])> =
            groups.iter().zip(&refs).map(|((n, _), m)| (n.as_str(), m.as_slice())).collect();
        t.regroup(&spec)
    }

    /// Gram of the block's merged minus leg along `axis`, formed from the
    /// corners without building the merged tensor.
    fn block_gram(&self, corners: &[Arc<DenseTensor>], axis: usize) -> Result<DenseTensor> {
        let mut net = TensorNetwork::new();
        let ket = self.block_network(&mut net, corners)?;
        let bra = self.block_network(&mut net, corners)?;
        let open = members(self.dim, axis, false);
        for k in 0..corners.len() {
            for d in 0..self.dim {
                let plus = (k >> d) & 1 == 1;
                if d == axis && !plus {
                    continue;
                }
                net.connect(ket[k], leg(d, plus), bra[k], leg(d, plus))?;
            }
        }
        for (i, &k) in open.iter().enumerate() {
            net.open(ket[k], leg(axis, false), &format!("k{i}"))?;
        }
        for (i, &k) in open.iter().enumerate() {
            net.open(bra[k], leg(axis, false), &format!("b{i}"))?;
        }
        contract_exact(&net, None, self.cfg.size_cap)?.into_tensor()
    }

    /// Top eigenvectors of a block Gram (legs `k0…, b0…`) as a tensor with
    /// one leg per member (`u0`, `u1`, …) plus the new bond `k`. A graded
    /// Gram is diagonalized per sector and the projector inherits the grading.
    fn projector(&self, gram: &DenseTensor) -> Result<DenseTensor> {
        let nm = gram.rank() / 2;
        let dims = &gram.shape()[..nm];
        let m: usize = dims.iter().product();
        let member_par: Option<Vec<Vec<i8>>> = gram.parity().map(|p| p[..nm].to_vec());
        let (vals, vecs, col_par) = match &member_par {
            Some(p) => {
                let parts: Vec<&[i8]> = p.iter().map(|v| v.as_slice()).collect();
                let (vals, vecs, cp) = linalg::sym_eig_graded(gram.data(), m, &combine_parity(&parts));
                (vals, vecs, Some(cp))
            }
            None => {
                let (vals, vecs) = linalg::sym_eig(gram.data(), m);
                (vals, vecs, None)
            }
        };
        let top = vals[0];
        if !(top > 0.0) || !top.is_finite() {
            return Err(TnsError::Numerical(format!("projector Gram has top eigenvalue {top}")));
        }
        let keep = vals.iter().take_while(|&&v| v > self.cfg.gram_cutoff * top).count();
        let k = keep.clamp(1, self.cfg.projector_cap(self.dim));
        let mut u = vec![0.0; m * k];
        for r in 0..m {
            u[r * k..(r + 1) * k].copy_from_slice(&vecs[r * m..r * m + k]);
        }
        linalg::fix_column_signs(&mut u, m, k, &mut [], 0);
        let mut shape = dims.to_vec();
        shape.push(k);
        let mut legs: Vec<String> = (0..dims.len()).map(|i| format!("u{i}")).collect();
        legs.push("k".into());
        let parity = member_par.zip(col_par).map(|(mut p, cp)| {
            p.push(cp[..k].to_vec());
            p
        });
        Ok(DenseTensor::new(shape, u, legs)?.set_parity(parity))
    }

    /// Merged tensor with projectors on every merged leg: `minus[d]` on the
    /// block's own lower edge, `plus[d]` on the edge to the next block.
    fn project_block(
        &self,
        corners: &[Arc<DenseTensor>],
        minus: &[Arc<DenseTensor>],
        plus: &[Arc<DenseTensor>],
    ) -> Result<DenseTensor> {
        let mut net = TensorNetwork::new();
        let ids = self.block_network(&mut net, corners)?;
        for d in 0..self.dim {
            for (side, u) in [(false, &minus[d]), (true, &plus[d])] {
                let uid = net.add_vertex((**u).clone());
                for (i, k) in members(self.dim, d, side).into_iter().enumerate() {
                    net.connect(ids[k], leg(d, side), uid, &format!("u{i}"))?;
                }
                net.open(uid, "k", leg(d, side))?;
            }
        }
        contract_exact(&net, None, self.cfg.size_cap)?.into_tensor()
    }

    /// UR-splits each corner of a plaquette/cube, skeletonizes the cores and
    /// recombines. Corners are given in bit order `x + 2y + 4z`.
    fn plaquette(&self, corners: &[Arc<DenseTensor>]) -> Result<(Vec<DenseTensor>, Vec<EdgeReport>)> {
        let dim = self.dim;
        let mut us = Vec::with_capacity(corners.len());
        let mut cores = Vec::with_capacity(corners.len());
        for (k, t) in corners.iter().enumerate() {
            let b = bits_of(k);
            // plaquette legs point inward: plus side for bit 0, minus for bit 1
            let inner: Vec<&str> = (0..dim).map(|d| leg(d, b[d] == 0)).collect();
            let outer: Vec<&str> = (0..dim).map(|d| leg(d, b[d] == 1)).collect();
            let (u, core) = ur_project(t, &outer, self.cfg.corner_cap(dim), self.cfg.rel_cutoff)?;
            let mut pairs: Vec<(&str, &str)> = vec![(BOND, DIAG)];
            pairs.extend(inner.iter().enumerate().map(|(d, l)| (*l, axis_leg(d))));
            cores.push(core.relabel(&pairs)?);
            us.push(u);
        }
        let (new, reports) =
            skeletonize_corners(dim, &cores, self.cfg.chi, self.cfg.boundary_mode(dim), &self.cfg.als)?;
        let canon = legs_for(dim);
        let mut out = Vec::with_capacity(new.len());
        for (k, (u, r)) in us.iter().zip(new).enumerate() {
            let b = bits_of(k);
            let back: Vec<(&str, &str)> = (0..dim).map(|d| (axis_leg(d), leg(d, b[d] == 0))).collect();
            let r = r.relabel(&back)?;
            out.push(contract(u, &r, &[(BOND, DIAG)])?.permute(canon)?);
        }
        Ok((out, reports))
    }

    fn plaquette_corners(&self, g: &Grid, s: &Specials, q: Coord) -> Vec<Arc<DenseTensor>> {
        (0..1usize << self.dim).map(|k| pick(g, s, g.wrap(q, bits_of(k), 1)).clone()).collect()
    }

    fn in_class(&self, q: Coord, class: usize) -> bool {
        (0..self.dim).all(|d| q[d] % 2 == class)
    }
}

fn summarize(reports: &[EdgeReport]) -> (usize, f64, f64) {
    let done: Vec<f64> = reports.iter().filter(|r| !r.skipped).map(|r| r.residual_rel).collect();
    let max = done.iter().cloned().fold(0.0, f64::max);
    let mean = if done.is_empty() { 0.0 } else { done.iter().sum::<f64>() / done.len() as f64 };
    (done.len(), max, mean)
}

fn check_finite(t: &DenseTensor, what: &str) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TnsError::Numerical(format!("non-finite entries after {what}")))
    }
}

/// Runs one bulk level; returns the record and the level's contribution to
/// `log Z` (sum over all merged vertices of their log-normalizations).
pub fn run_level(input: &Grid, kind: LevelKind, cfg: &TnsConfig, level: usize) -> Result<(LevelRecord, f64)> {
    let start = Instant::now();
    let dim = input.dim;
    if input.side <= 2 || !input.side.is_multiple_of(2) {
        return Err(arg_err!("cannot coarse-grain a side-{} lattice", input.side));
    }
    let ctx = Ctx { dim, cfg };
    let none = Specials::new();
    let side = input.side / 2;
    let pm = (input.period / 2).max(1);
    let cells = coords_box(dim, pm);
    let blocks: Vec<Vec<Arc<DenseTensor>>> = cells.iter().map(|&x| ctx.block_corners(input, &none, x)).collect();

    let mut bond_merged = 0;
    let mut projectors = Vec::new();
    let raw: Vec<DenseTensor> = match kind {
        LevelKind::MergeOnly => blocks.par_iter().map(|b| ctx.merge_block(b)).collect::<Result<_>>()?,
        LevelKind::Full => {
            projectors = blocks
                .par_iter()
                .map(|b| {
                    (0..dim).map(|d| Ok(Arc::new(ctx.projector(&ctx.block_gram(b, d)?)?))).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for p in &projectors {
                for u in p {
                    bond_merged = bond_merged.max(u.shape()[..u.rank() - 1].iter().product());
                }
            }
            let merged = Grid { dim, side, period: pm, cells: vec![] };
            cells
                .par_iter()
                .zip(&blocks)
                .map(|(&x, b)| {
                    let plus: Vec<Arc<DenseTensor>> = (0..dim)
                        .map(|d| projectors[merged.cell_index(merged.wrap(x, unit(d), 1))][d].clone())
                        .collect();
                    ctx.project_block(b, &projectors[merged.cell_index(x)], &plus)
                })
                .collect::<Result<_>>()?
        }
    };
    if kind == LevelKind::MergeOnly {
        bond_merged = raw.iter().map(|t| t.shape().iter().copied().max().unwrap_or(0)).max().unwrap_or(0);
    }
    let mult = ((side / pm) as f64).powi(dim as i32);
    let mut log_factor = 0.0;
    let mut scales = Vec::with_capacity(raw.len());
    let mut merged_cells = Vec::with_capacity(raw.len());
    for t in raw {
        check_finite(&t, "merging")?;
        let s = t.max_abs();
        if !(s > 0.0) {
            return Err(TnsError::Numerical("merged tensor vanished".into()));
        }
        log_factor += mult * s.ln();
        scales.push(s);
        merged_cells.push(Arc::new(t.scaled(1.0 / s)));
    }
    let merged = Grid { dim, side, period: pm, cells: merged_cells };
    let bond_projected = merged.max_bond();
    let mut stages = vec![merged];
    let mut reports = Vec::new();
    if kind == LevelKind::Full {
        let period = pm.max(2);
        for &class in cfg.variant.classes() {
            let cur = stages.last().unwrap().expanded(period);
            let plaqs: Vec<Coord> = coords_box(dim, period).into_iter().filter(|&q| ctx.in_class(q, class)).collect();
            let results: Vec<(Vec<DenseTensor>, Vec<EdgeReport>)> = plaqs
                .par_iter()
                .map(|&q| ctx.plaquette(&ctx.plaquette_corners(&cur, &none, q)))
                .collect::<Result<_>>()?;
            let mut next = cur.clone();
            for (&q, (outs, reps)) in plaqs.iter().zip(results) {
                for (k, t) in outs.into_iter().enumerate() {
                    check_finite(&t, "skeletonization")?;
                    let idx = next.cell_index(next.wrap(q, bits_of(k), 1));
                    next.cells[idx] = Arc::new(t);
                }
                reports.extend(reps);
            }
            stages.push(next);
        }
    }
    let (count, max_residual, mean_residual) = summarize(&reports);
    let diag = LevelDiag {
        level,
        kind,
        side_in: input.side,
        side_out: side,
        bond_in: input.max_bond(),
        bond_merged,
        bond_projected,
        bond_out: stages.last().unwrap().max_bond(),
        skeletonized_edges: count,
        max_residual,
        mean_residual,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::debug!(
        "level {} ({:?}): side {}->{}, bonds {}->{}->{}->{}, {} edges skeletonized, max residual {:.3e}, {:.3}s",
        level,
        kind,
        diag.side_in,
        diag.side_out,
        diag.bond_in,
        diag.bond_merged,
        diag.bond_projected,
        diag.bond_out,
        count,
        max_residual,
        diag.seconds
    );
    Ok((LevelRecord { kind, input: input.clone(), scales, projectors, stages, diag }, log_factor))
}

/// Pushes a set of overridden vertices through a cached bulk level.
///
/// A projector is recomputed only for edges whose both endpoints are
/// special; every class plaquette touching a special vertex is recomputed
/// and all its corners become special. Special merged tensors share the bulk
/// normalization, so their ratio to the bulk is carried exactly.
pub fn propagate_level(rec: &LevelRecord, specials: &Specials, cfg: &TnsConfig) -> Result<Specials> {
    let dim = rec.input.dim;
    let ctx = Ctx { dim, cfg };
    let merged = &rec.stages[0];
    let blocks: BTreeSet<Coord> = specials
        .keys()
        .map(|c| {
            let mut x = [0; 3];
            for d in 0..dim {
                x[d] = c[d] / 2;
            }
            x
        })
        .collect();
    let corners: BTreeMap<Coord, Vec<Arc<DenseTensor>>> =
        blocks.iter().map(|&x| (x, ctx.block_corners(&rec.input, specials, x))).collect();
    let mut out = Specials::new();
    match rec.kind {
        LevelKind::MergeOnly => {
            for (&x, b) in &corners {
                let t = ctx.merge_block(b)?;
                out.insert(x, Arc::new(t.scaled(1.0 / rec.scales[merged.cell_index(x)])));
            }
            return Ok(out);
        }
        LevelKind::Full => {
            let mut special_u: BTreeMap<(Coord, usize), Arc<DenseTensor>> = BTreeMap::new();
            for (&x, b) in &corners {
                for d in 0..dim {
                    if blocks.contains(&merged.wrap(x, unit(d), -1)) {
                        special_u.insert((x, d), Arc::new(ctx.projector(&ctx.block_gram(b, d)?)?));
                    }
                }
            }
            let u_at = |x: Coord, d: usize| -> Arc<DenseTensor> {
                special_u.get(&(x, d)).cloned().unwrap_or_else(|| rec.projectors[merged.cell_index(x)][d].clone())
            };
            for (&x, b) in &corners {
                let minus: Vec<_> = (0..dim).map(|d| u_at(x, d)).collect();
                let plus: Vec<_> = (0..dim).map(|d| u_at(merged.wrap(x, unit(d), 1), d)).collect();
                let t = ctx.project_block(b, &minus, &plus)?;
                out.insert(x, Arc::new(t.scaled(1.0 / rec.scales[merged.cell_index(x)])));
            }
        }
    }
    for (pass, &class) in cfg.variant.classes().iter().enumerate() {
        let grid = &rec.stages[pass];
        let mut plaqs = BTreeSet::new();
        for &v in out.keys() {
            for k in 0..1usize << dim {
                let q = grid.wrap(v, bits_of(k), -1);
                if ctx.in_class(q, class) {
                    plaqs.insert(q);
                }
            }
        }
        let plaqs: Vec<Coord> = plaqs.into_iter().collect();
        let results: Vec<Vec<DenseTensor>> = plaqs
            .par_iter()
            .map(|&q| ctx.plaquette(&ctx.plaquette_corners(grid, &out, q)).map(|r| r.0))
            .collect::<Result<_>>()?;
        for (&q, outs) in plaqs.iter().zip(results) {
            for (k, t) in outs.into_iter().enumerate() {
                out.insert(grid.wrap(q, bits_of(k), 1), Arc::new(t));
            }
        }
    }
    Ok(out)
}

/// Exact value of a side-1 or side-2 periodic network.
pub fn close_network(g: &Grid, specials: &Specials, size_cap: usize) -> Result<LogScalar> {
    if g.side > 2 {
        return Err(arg_err!("final contraction expects side ≤ 2, got {}", g.side));
    }
    let mut net = TensorNetwork::new();
    let coords = coords_box(g.dim, g.side);
    let ids: Vec<usize> = coords.iter().map(|&c| net.add_vertex((**pick(g, specials, c)).clone())).collect();
    for (i, &c) in coords.iter().enumerate() {
        for d in 0..g.dim {
            let n = g.wrap(c, unit(d), 1);
            let j = coords.iter().position(|&x| x == n).expect("neighbor in box");
            net.connect(ids[i], leg(d, true), ids[j], leg(d, false))?;
        }
    }
    contract_exact(&net, None, size_cap)?.into_scalar()
}

/// A finished bulk run with everything needed for impurity evaluations.
#[derive(Clone, Debug)]
pub struct CoarseRun {
    pub dim: usize,
    pub side: usize,
    pub records: Vec<LevelRecord>,
    /// Sum of all level normalizations, `ln` scale.
    pub log_factor: f64,
    pub final_grid: Grid,
    pub final_value: LogScalar,
}

impl CoarseRun {
    pub fn log_z(&self) -> LogScalar {
        LogScalar::from_log(self.log_factor) * self.final_value
    }

    pub fn diagnostics(&self) -> Vec<LevelDiag> {
        self.records.iter().map(|r| r.diag.clone()).collect()
    }

    /// Pushes level-0 overrides through every cached level; returns the
    /// override set at each level boundary (entry `0` is the input).
    pub fn propagate(&self, specials: Specials, cfg: &TnsConfig) -> Result<Vec<Specials>> {
        for c in specials.keys() {
            if (0..self.dim).any(|d| c[d] >= self.side) || (self.dim..3).any(|d| c[d] != 0) {
                return Err(arg_err!("override at {:?} lies outside the lattice", c));
            }
        }
        let mut all = vec![specials];
        for rec in &self.records {
            let next = propagate_level(rec, all.last().unwrap(), cfg)?;
            all.push(next);
        }
        Ok(all)
    }

    /// Network value with the given level-0 overrides, relative to the bulk
    /// value (`Z_imp / Z`).
    pub fn impurity_ratio(&self, specials: Specials, cfg: &TnsConfig) -> Result<f64> {
        let last = self.propagate(specials, cfg)?.pop().unwrap();
        let v = close_network(&self.final_grid, &last, cfg.size_cap)?;
        Ok(v.ratio(&self.final_value))
    }

    /// `log` of the network value with overrides, on the same scale as [`log_z`](Self::log_z).
    pub fn impurity_value(&self, specials: Specials, cfg: &TnsConfig) -> Result<LogScalar> {
        let last = self.propagate(specials, cfg)?.pop().unwrap();
        Ok(LogScalar::from_log(self.log_factor) * close_network(&self.final_grid, &last, cfg.size_cap)?)
    }
}

/// State between levels: the bulk grid, an optional impurity overlay, the
/// accumulated normalization and the cached bulk records.
#[derive(Clone, Debug)]
pub struct LevelState {
    pub level: usize,
    pub grid: Grid,
    pub impurity: Option<Specials>,
    pub log_factor: f64,
    pub records: Vec<LevelRecord>,
    side0: usize,
}

impl LevelState {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.side.is_power_of_two() {
            return Err(arg_err!("lattice side {} is not a power of two", grid.side));
        }
        let side0 = grid.side;
        Ok(Self { level: 0, grid, impurity: None, log_factor: 0.0, records: Vec::new(), side0 })
    }

    /// Attaches level-0 overrides; only valid before the first level.
    pub fn with_impurity(mut self, specials: Specials) -> Result<Self> {
        if self.level != 0 {
            return Err(arg_err!("impurities must be attached before coarse-graining starts"));
        }
        for c in specials.keys() {
            if (0..self.grid.dim).any(|d| c[d] >= self.grid.side) || (self.grid.dim..3).any(|d| c[d] != 0) {
                return Err(arg_err!("override at {:?} lies outside the lattice", c));
            }
        }
        self.impurity = Some(specials);
        Ok(self)
    }

    pub fn is_final(&self) -> bool {
        self.grid.side <= 2
    }

    /// One level of the given kind; an impurity overlay is carried along
    /// using the level's bulk data.
    pub fn step(mut self, kind: LevelKind, cfg: &TnsConfig) -> Result<Self> {
        let (rec, lf) = run_level(&self.grid, kind, cfg, self.level)?;
        if let Some(sp) = &self.impurity {
            self.impurity = Some(propagate_level(&rec, sp, cfg)?);
        }
        self.log_factor += lf;
        self.grid = rec.output().clone();
        self.records.push(rec);
        self.level += 1;
        Ok(self)
    }

    /// Exact closing contraction of the bulk and, if present, the impurity
    /// network.
    pub fn finish(self, cfg: &TnsConfig) -> Result<(CoarseRun, Option<LogScalar>)> {
        if !self.is_final() {
            return Err(arg_err!("side {} still needs coarse-graining", self.grid.side));
        }
        let final_value = close_network(&self.grid, &Specials::new(), cfg.size_cap)?;
        if final_value.is_zero() || !final_value.log_abs().is_finite() {
            return Err(TnsError::Numerical(format!("final contraction gave {:?}", final_value)));
        }
        let imp = match &self.impurity {
            Some(sp) => Some(close_network(&self.grid, sp, cfg.size_cap)?),
            None => None,
        };
        let run = CoarseRun {
            dim: self.grid.dim,
            side: self.side0,
            records: self.records,
            log_factor: self.log_factor,
            final_grid: self.grid,
            final_value,
        };
        Ok((run, imp))
    }
}

/// Merge-only rounds per [`TnsConfig::bootstrap_rounds`].
pub fn bootstrap(state: LevelState, cfg: &TnsConfig) -> Result<LevelState> {
    let rounds = cfg.bootstrap_rounds(state.grid.dim, state.grid.side);
    let mut state = state;
    for _ in 0..rounds {
        state = state.step(LevelKind::MergeOnly, cfg)?;
    }
    Ok(state)
}

/// Bootstrap rounds followed by full levels down to side ≤ 2, then the exact
/// closing contraction.
pub fn coarse_grain(initial: Grid, cfg: &TnsConfig) -> Result<CoarseRun> {
    cfg.validate()?;
    let mut state = bootstrap(LevelState::new(initial)?, cfg)?;
    while !state.is_final() {
        state = state.step(LevelKind::Full, cfg)?;
    }
    Ok(state.finish(cfg)?.0)
}

/// A translation-invariant copy on the smallest lattice; its site 0 tensor
/// equals every site tensor of `spec`.
fn small_uniform(spec: &IsingSpec) -> IsingSpec {
    let j = spec.coupling(0);
    IsingSpec { l: 1, site_fields: None, field_b: spec.field(0), couplings: Couplings::Uniform(j), ..spec.clone() }
}

/// Level-0 grid of a spec; translation-invariant specs get a single cell.
pub fn initial_grid(spec: &IsingSpec) -> Result<Grid> {
    spec.validate()?;
    let n = spec.n();
    if spec.is_translation_invariant() {
        let t = site_tensors(&small_uniform(spec), &[])?.swap_remove(0);
        Ok(Grid::uniform(spec.dim, n, t))
    } else {
        Grid::from_sites(spec.dim, n, site_tensors(spec, &[])?)
    }
}

/// Level-0 overrides for spin insertions at `sites` (a site listed twice
/// carries `σ²`).
pub fn spin_insertions(spec: &IsingSpec, sites: &[usize]) -> Result<Specials> {
    let lat = spec.lattice();
    let mut out = Specials::new();
    if sites.iter().any(|&s| s >= lat.sites()) {
        return Err(arg_err!("insertion site out of range"));
    }
    if spec.is_translation_invariant() {
        for &s in sites {
            let mult = sites.iter().filter(|&&x| x == s).count();
            let t = site_tensors(&small_uniform(spec), &vec![0; mult])?.swap_remove(0);
            out.insert(lat.coords(s), Arc::new(t));
        }
    } else {
        let t = site_tensors(spec, sites)?;
        for &s in sites {
            out.insert(lat.coords(s), Arc::new(t[s].clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_network, ImpurityKind};
    use crate::reference::brute_force;

    fn exact_log_z(spec: &IsingSpec) -> f64 {
        let net = build_network(spec, &ImpurityKind::None).unwrap();
        contract_exact(&net, None, DEFAULT_SIZE_CAP).unwrap().into_scalar().unwrap().log_abs()
    }

    #[test]
    fn grading_survives_coarse_graining() {
        let spec = IsingSpec::uniform(2, 4, 0.4);
        let run = coarse_grain(initial_grid(&spec).unwrap(), &TnsConfig::with_chi(4)).unwrap();
        for t in &run.final_grid.cells {
            assert!(t.parity().is_some());
            assert_eq!(t.odd_weight(), 0.0);
        }
        // a field breaks the symmetry, so no grading is attached
        let g = initial_grid(&spec.with_field(0.1)).unwrap();
        assert!(g.cells.iter().all(|t| t.parity().is_none()));
    }

    #[test]
    fn bootstrap_rounds_follow_bond_growth() {
        let c = |chi| TnsConfig::with_chi(chi);
        assert_eq!(c(2).bootstrap_rounds(2, 1024), 0);
        assert_eq!(c(4).bootstrap_rounds(2, 1024), 1);
        assert_eq!(c(8).bootstrap_rounds(2, 1024), 2);
        assert_eq!(c(16).bootstrap_rounds(2, 4), 1);
        assert_eq!(c(3).bootstrap_rounds(3, 16), 0);
        assert_eq!(c(16).bootstrap_rounds(3, 16), 1);
        assert_eq!(c(16).bootstrap_rounds(3, 2), 0);
    }

    #[test]
    fn merge_only_run_is_exact() {
        let spec = IsingSpec::uniform(2, 2, 0.3);
        let run = coarse_grain(initial_grid(&spec).unwrap(), &TnsConfig::with_chi(16)).unwrap();
        assert!(run.records.iter().all(|r| r.kind == LevelKind::MergeOnly));
        let want = exact_log_z(&spec);
        assert!((run.log_z().log_abs() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn beta_zero_is_exact_at_small_chi() {
        for (dim, l) in [(2, 4), (3, 2)] {
            for chi in [2, 4] {
                let spec = IsingSpec::uniform(dim, l, 0.0);
                let run = coarse_grain(initial_grid(&spec).unwrap(), &TnsConfig::with_chi(chi)).unwrap();
                let per_site = run.log_z().log_abs() / (spec.n() as f64).powi(dim as i32);
                assert!((per_site - 2f64.ln()).abs() < 1e-10, "{dim}D chi {chi}: {per_site}");
            }
        }
    }

    #[test]
    fn one_full_level_is_close_to_exact() {
        let spec = IsingSpec::uniform(2, 3, 0.3);
        let run = coarse_grain(initial_grid(&spec).unwrap(), &TnsConfig::with_chi(4)).unwrap();
        assert!(run.records.iter().any(|r| r.kind == LevelKind::Full));
        let want = brute_force(&IsingSpec::uniform(2, 2, 0.3), &ImpurityKind::None).unwrap();
        let got = run.log_z().log_abs() / 64.0;
        let exact = exact_log_z(&spec) / 64.0;
        assert!((got - exact).abs() < 1e-4, "{got} vs {exact}");
        assert!(want.log_abs() > 0.0);
        for r in run.records.iter().filter(|r| r.kind == LevelKind::Full) {
            assert!(r.output().max_bond() <= 4);
        }
    }

    #[test]
    fn fake_impurity_is_bit_identical() {
        let spec = IsingSpec::uniform(2, 4, 0.4);
        let mut cfg = TnsConfig::with_chi(2);
        cfg.variant = Variant::Modified;
        let run = coarse_grain(initial_grid(&spec).unwrap(), &cfg).unwrap();
        let lat = spec.lattice();
        let c = lat.center();
        let mut s = Specials::new();
        for dx in 0..2 {
            for dy in 0..2 {
                let p = [c[0] + dx, c[1] + dy, 0];
                s.insert(p, run.records[0].input.at(p).clone());
            }
        }
        let levels = run.propagate(s, &cfg).unwrap();
        for (rec, sp) in run.records.iter().zip(&levels[1..]) {
            assert!(!sp.is_empty() && sp.len() <= 4);
            for (&p, t) in sp {
                assert_eq!(t.data(), rec.output().at(p).data());
            }
        }
        let v = close_network(&run.final_grid, levels.last().unwrap(), DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(v.log_abs(), run.final_value.log_abs());
    }

    #[test]
    fn inhomogeneous_grid_matches_homogeneous() {
        let spec = IsingSpec::uniform(2, 3, 0.35);
        let cfg = TnsConfig::with_chi(2);
        let a = coarse_grain(initial_grid(&spec).unwrap(), &cfg).unwrap();
        let g = Grid::from_sites(2, 8, site_tensors(&spec, &[]).unwrap()).unwrap();
        let b = coarse_grain(g, &cfg).unwrap();
        let (x, y) = (a.log_z().log_abs(), b.log_z().log_abs());
        assert!((x - y).abs() < 1e-10 * x.abs(), "{x} vs {y}");
    }
}
