//! Ising models on periodic square and cubic lattices as tensor networks.
//!
//! Spin `+1` is index 0 and `-1` is index 1. Site tensors carry one leg per
//! half-edge in the global order `(xm, xp, ym, yp[, zm, zp])`, where `xm` points
//! towards decreasing `x`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::linalg;
use crate::network::TensorNetwork;
use crate::tensor::DenseTensor;

pub const LEG_NAMES: [&str; 6] = ["xm", "xp", "ym", "yp", "zm", "zp"];

/// Leg label for axis `d`, `plus` selecting the increasing direction.
pub fn leg(d: usize, plus: bool) -> &'static str {
    LEG_NAMES[2 * d + plus as usize]
}

pub fn legs_for(dim: usize) -> &'static [&'static str] {
    &LEG_NAMES[..2 * dim]
}

const SPIN: [f64; 2] = [1.0, -1.0];

/// Periodic hypercubic lattice of side `n`; sites are numbered with `x` fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub dim: usize,
    pub n: usize,
}

impl Lattice {
    pub fn new(dim: usize, n: usize) -> Self {
        Self { dim, n }
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn edges(&self) -> usize {
        self.dim * self.sites()
    }

    pub fn coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut s = site;
        for k in c.iter_mut().take(self.dim) {
            *k = s % self.n;
            s /= self.n;
        }
        c
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let mut s = 0;
        for d in (0..self.dim).rev() {
            s = s * self.n + c[d] % self.n;
        }
        s
    }

    /// Site reached from `site` by one step along `+d`.
    pub fn step(&self, site: usize, d: usize) -> usize {
        let mut c = self.coords(site);
        c[d] = (c[d] + 1) % self.n;
        self.index(c)
    }

    /// Edge id of the bond from `site` towards `+d`.
    pub fn edge_id(&self, site: usize, d: usize) -> usize {
        d * self.sites() + site
    }

    /// `(tail, head, axis)` of an edge id.
    pub fn edge_ends(&self, e: usize) -> (usize, usize, usize) {
        let d = e / self.sites();
        let s = e % self.sites();
        (s, self.step(s, d), d)
    }

    /// Lower corner of the central `2^dim` block.
    pub fn center(&self) -> [usize; 3] {
        let c = (self.n / 2).saturating_sub(1);
        let mut out = [0; 3];
        out[..self.dim].fill(c);
        out
    }

    pub fn in_center_block(&self, site: usize) -> bool {
        let c = self.center();
        let x = self.coords(site);
        (0..self.dim).all(|d| x[d] == c[d] || (self.n > 1 && x[d] == c[d] + 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Couplings {
    Uniform(f64),
    /// One coupling per edge id (see [`Lattice::edge_id`]).
    PerEdge(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingSpec {
    pub dim: usize,
    /// Lattice side is `2^l`.
    pub l: u32,
    pub beta: f64,
    #[serde(default)]
    pub field_b: f64,
    /// Optional per-site fields; when present they replace `field_b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_fields: Option<Vec<f64>>,
    pub couplings: Couplings,
    #[serde(default)]
    pub rng_seed: u64,
}

impl IsingSpec {
    pub fn uniform(dim: usize, l: u32, beta: f64) -> Self {
        Self { dim, l, beta, field_b: 0.0, site_fields: None, couplings: Couplings::Uniform(1.0), rng_seed: 0 }
    }

    pub fn with_field(mut self, b: f64) -> Self {
        self.field_b = b;
        self
    }

    pub fn n(&self) -> usize {
        1usize << self.l
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.dim, self.n())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(arg_err!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.l > 20 {
            return Err(arg_err!("L = {} is too large", self.l));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(arg_err!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !self.field_b.is_finite() {
            return Err(arg_err!("field must be finite"));
        }
        let lat = self.lattice();
        if let Couplings::PerEdge(j) = &self.couplings {
            if j.len() != lat.edges() {
                return Err(arg_err!("{} couplings given for {} edges", j.len(), lat.edges()));
            }
            if j.iter().any(|v| !v.is_finite()) {
                return Err(arg_err!("non-finite coupling"));
            }
        }
        if let Some(h) = &self.site_fields {
            if h.len() != lat.sites() {
                return Err(arg_err!("{} site fields given for {} sites", h.len(), lat.sites()));
            }
        }
        Ok(())
    }

    pub fn coupling(&self, edge: usize) -> f64 {
        match &self.couplings {
            Couplings::Uniform(j) => *j,
            Couplings::PerEdge(v) => v[edge],
        }
    }

    pub fn field(&self, site: usize) -> f64 {
        self.site_fields.as_ref().map_or(self.field_b, |h| h[site])
    }

    /// True when every site tensor is identical.
    pub fn is_translation_invariant(&self) -> bool {
        let uniform_j = match &self.couplings {
            Couplings::Uniform(_) => true,
            Couplings::PerEdge(v) => v.iter().all(|&x| x == v[0]),
        };
        let uniform_h = self.site_fields.as_ref().is_none_or(|h| h.iter().all(|&x| x == h[0]));
        uniform_j && uniform_h
    }

    /// Copy with all couplings and fields made explicit per edge/site.
    pub fn to_per_edge(&self) -> Self {
        let lat = self.lattice();
        let mut s = self.clone();
        s.couplings = Couplings::PerEdge((0..lat.edges()).map(|e| self.coupling(e)).collect());
        s.site_fields = Some((0..lat.sites()).map(|i| self.field(i)).collect());
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpurityKind {
    None,
    SingleSpin(usize),
    BondProduct(usize, usize),
}

impl ImpurityKind {
    pub fn sites(&self) -> Vec<usize> {
        match *self {
            ImpurityKind::None => vec![],
            ImpurityKind::SingleSpin(i) => vec![i],
            ImpurityKind::BondProduct(i, j) => vec![i, j],
        }
    }
}

/// `S_{σσ'} = exp(βJσσ' + β(h_1σ + h_2σ'))` with legs `(s, t)`.
pub fn bond_matrix(beta: f64, j: f64, field_shares: (f64, f64)) -> DenseTensor {
    let mut data = [0.0; 4];
    for a in 0..2 {
        for b in 0..2 {
            let (s, t) = (SPIN[a], SPIN[b]);
            data[2 * a + b] = (beta * (j * s * t + field_shares.0 * s + field_shares.1 * t)).exp();
        }
    }
    DenseTensor::from_parts(vec![2, 2], data.to_vec(), vec!["s".into(), "t".into()])
}

/// Factors `S = A·B` of a symmetric 2×2 bond matrix.
#[derive(Clone, Debug)]
pub struct BondFactors {
    /// Legs `(s, a)`: attached to the edge tail.
    pub tail: DenseTensor,
    /// Legs `(a, t)`: attached to the edge head.
    pub head: DenseTensor,
}

/// Splits `S` as `Σ_a A_{sa} B_{at}`.
///
/// A positive semidefinite `S` gets its symmetric square root (`A = B`). An
/// indefinite one (antiferromagnetic coupling) gets `A = Q|Λ|^{1/2}sgn(Λ)`,
/// `B = |Λ|^{1/2}Qᵀ`.
pub fn bond_root(s: &DenseTensor) -> Result<BondFactors> {
    if s.shape() != [2, 2] {
        return Err(arg_err!("bond matrix must be 2x2"));
    }
    let m = s.data();
    if (m[1] - m[2]).abs() > 1e-12 * m.iter().fold(0.0f64, |a, v| a.max(v.abs())) {
        return Err(arg_err!("bond matrix must be symmetric"));
    }
    let (vals, vecs) = linalg::sym_eig(m, 2);
    let q = |i: usize, k: usize| vecs[i * 2 + k];
    let psd = vals[1] >= -1e-14 * vals[0].abs();
    let mut a = vec![0.0; 4];
    let mut b = vec![0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            if psd {
                let r: f64 = (0..2).map(|k| q(i, k) * vals[k].max(0.0).sqrt() * q(j, k)).sum();
                a[i * 2 + j] = r;
                b[i * 2 + j] = r;
            } else {
                // column k of A is q_k sqrt|λ_k| sgn λ_k, row k of B is sqrt|λ_k| q_kᵀ
                a[i * 2 + j] = q(i, j) * vals[j].abs().sqrt() * vals[j].signum();
                b[i * 2 + j] = vals[i].abs().sqrt() * q(j, i);
            }
        }
    }
    Ok(BondFactors {
        tail: DenseTensor::from_parts(vec![2, 2], a, vec!["s".into(), "a".into()]),
        head: DenseTensor::from_parts(vec![2, 2], b, vec!["a".into(), "t".into()]),
    })
}

/// Split of a spin-flip symmetric bond matrix `[[p, q], [q, p]]` in the
/// eigenbasis of the flip: `A = H diag(√|λ| sgn λ)`, `B = diag(√|λ|) H` with
/// `H = [[1, 1], [1, −1]]/√2`, `λ = (p + q, p − q)`. Bond index 0 is even
/// and 1 odd under `σ → −σ`; for `p ≥ |q|` this is the symmetric root
/// times `H`.
pub fn graded_bond_root(s: &DenseTensor) -> Result<BondFactors> {
    if s.shape() != [2, 2] {
        return Err(arg_err!("bond matrix must be 2x2"));
    }
    let m = s.data();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if (m[1] - m[2]).abs() > 1e-12 * scale || (m[0] - m[3]).abs() > 1e-12 * scale {
        return Err(arg_err!("bond matrix is not flip symmetric"));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let lam = [m[0] + m[1], m[0] - m[1]];
    let hm = [h, h, h, -h];
    let mut a = vec![0.0; 4];
    let mut b = vec![0.0; 4];
    for i in 0..2 {
        for k in 0..2 {
            a[i * 2 + k] = hm[i * 2 + k] * lam[k].abs().sqrt() * lam[k].signum();
            b[k * 2 + i] = lam[k].abs().sqrt() * hm[k * 2 + i];
        }
    }
    Ok(BondFactors {
        tail: DenseTensor::from_parts(vec![2, 2], a, vec!["s".into(), "a".into()]),
        head: DenseTensor::from_parts(vec![2, 2], b, vec!["a".into(), "t".into()]),
    })
}

/// Grading of every bond leg produced by [`graded_bond_root`].
pub const BOND_PARITY: [i8; 2] = [1, -1];

/// Site tensors for every site, legs in global order. Sites listed in
/// `insert_spin` carry an extra factor `σ` inside the site sum. Bonds use the
/// graded split, and without any field the tensors carry that grading.
pub fn site_tensors(spec: &IsingSpec, insert_spin: &[usize]) -> Result<Vec<DenseTensor>> {
    spec.validate()?;
    let lat = spec.lattice();
    let dim = spec.dim;
    let factors: Vec<BondFactors> = (0..lat.edges())
        .map(|e| graded_bond_root(&bond_matrix(spec.beta, spec.coupling(e), (0.0, 0.0))))
        .collect::<Result<_>>()?;
    let symmetric = (0..lat.sites()).all(|i| spec.field(i) == 0.0);
    let mut out = Vec::with_capacity(lat.sites());
    for site in 0..lat.sites() {
        // per leg: 2x2 factor f[σ][a]
        let mut legf: Vec<[f64; 4]> = Vec::with_capacity(2 * dim);
        let c = lat.coords(site);
        for d in 0..dim {
            // incoming edge from site - e_d: head factor B[a][σ]
            let mut prev = c;
            prev[d] = (c[d] + lat.n - 1) % lat.n;
            let e_in = lat.edge_id(lat.index(prev), d);
            let h = factors[e_in].head.data();
            legf.push([h[0], h[2], h[1], h[3]]);
            let e_out = lat.edge_id(site, d);
            let t = factors[e_out].tail.data();
            legf.push([t[0], t[1], t[2], t[3]]);
        }
        let h = spec.field(site);
        let mult = insert_spin.iter().filter(|&&s| s == site).count() as i32;
        let nleg = 2 * dim;
        let mut data = vec![0.0; 1 << nleg];
        for sigma in 0..2 {
            let w = (spec.beta * h * SPIN[sigma]).exp() * SPIN[sigma].powi(mult);
            for (idx, v) in data.iter_mut().enumerate() {
                let mut p = w;
                for (k, f) in legf.iter().enumerate() {
                    let a = (idx >> (nleg - 1 - k)) & 1;
                    p *= f[sigma * 2 + a];
                }
                *v += p;
            }
        }
        let t = DenseTensor::from_parts(vec![2; nleg], data, legs_for(dim).iter().map(|s| s.to_string()).collect());
        out.push(if symmetric { t.set_parity(Some(vec![BOND_PARITY.to_vec(); nleg])) } else { t });
    }
    Ok(out)
}

/// Network representation of the (impurity-weighted) partition function.
pub fn build_network(spec: &IsingSpec, impurity: &ImpurityKind) -> Result<TensorNetwork> {
    let lat = spec.lattice();
    for &s in &impurity.sites() {
        if s >= lat.sites() || !lat.in_center_block(s) {
            return Err(arg_err!("impurity site {} is outside the central block", s));
        }
    }
    if let ImpurityKind::BondProduct(i, j) = impurity {
        let adjacent = (0..spec.dim).any(|d| lat.step(*i, d) == *j || lat.step(*j, d) == *i);
        if !adjacent {
            return Err(arg_err!("bond impurity sites {} and {} are not neighbours", i, j));
        }
    }
    network_from_tensors(&lat, site_tensors(spec, &impurity.sites())?)
}

/// Wires per-site tensors into the periodic lattice network.
pub fn network_from_tensors(lat: &Lattice, tensors: Vec<DenseTensor>) -> Result<TensorNetwork> {
    let mut net = TensorNetwork::new();
    for t in tensors {
        net.add_vertex(t);
    }
    for site in 0..lat.sites() {
        for d in 0..lat.dim {
            net.connect(site, leg(d, true), lat.step(site, d), leg(d, false))?;
        }
    }
    Ok(net)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingDistribution {
    PlusMinusOne,
    Gaussian,
}

/// Draws one coupling per edge, deterministically from `seed`.
pub fn sample_ea_couplings(lat: &Lattice, dist: CouplingDistribution, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        CouplingDistribution::PlusMinusOne => {
            let u = Uniform::new(0u8, 2);
            (0..lat.edges()).map(|_| if u.sample(&mut rng) == 0 { 1.0 } else { -1.0 }).collect()
        }
        CouplingDistribution::Gaussian => {
            let g = Normal::new(0.0, 1.0).expect("unit normal");
            (0..lat.edges()).map(|_| g.sample(&mut rng)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderEdge {
    pub u: usize,
    pub v: usize,
    /// Axis of the bond; disambiguates the doubled bonds of tiny lattices.
    pub dir: usize,
    #[serde(rename = "J")]
    pub j: f64,
}

/// Serializable coupling realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub seed: u64,
    pub distribution: String,
    pub dim: usize,
    pub n: usize,
    pub edges: Vec<DisorderEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
}

impl DisorderRealization {
    pub fn new(lat: &Lattice, seed: u64, distribution: &str, couplings: &[f64]) -> Self {
        let edges = couplings
            .iter()
            .enumerate()
            .map(|(e, &j)| {
                let (u, v, dir) = lat.edge_ends(e);
                DisorderEdge { u, v, dir, j }
            })
            .collect();
        Self { seed, distribution: distribution.into(), dim: lat.dim, n: lat.n, edges, fields: None }
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.dim, self.n)
    }

    /// Couplings indexed by edge id.
    pub fn couplings(&self) -> Result<Vec<f64>> {
        let lat = self.lattice();
        let mut out = vec![f64::NAN; lat.edges()];
        for e in &self.edges {
            if e.u >= lat.sites() || e.dir >= lat.dim || lat.step(e.u, e.dir) != e.v {
                return Err(arg_err!("edge ({}, {}) along axis {} is not a lattice bond", e.u, e.v, e.dir));
            }
            let id = lat.edge_id(e.u, e.dir);
            if !out[id].is_nan() {
                return Err(arg_err!("edge ({}, {}) listed twice", e.u, e.v));
            }
            out[id] = e.j;
        }
        if out.iter().any(|x| x.is_nan()) {
            return Err(arg_err!("realization does not cover every edge"));
        }
        Ok(out)
    }

    pub fn to_spec(&self, beta: f64, field_b: f64) -> Result<IsingSpec> {
        if !self.n.is_power_of_two() {
            return Err(arg_err!("lattice side {} is not a power of two", self.n));
        }
        let spec = IsingSpec {
            dim: self.dim,
            l: self.n.trailing_zeros(),
            beta,
            field_b,
            site_fields: self.fields.clone(),
            couplings: Couplings::PerEdge(self.couplings()?),
            rng_seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies the gauge map `σ_i → ε_iσ_i`: `J_ij → ε_iε_jJ_ij`, `h_i → ε_ih_i`.
pub fn gauge_transform(spec: &IsingSpec, eps: &[i8]) -> IsingSpec {
    let lat = spec.lattice();
    let mut out = spec.to_per_edge();
    let j: Vec<f64> = (0..lat.edges())
        .map(|e| {
            let (u, v, _) = lat.edge_ends(e);
            spec.coupling(e) * (eps[u] * eps[v]) as f64
        })
        .collect();
    out.couplings = Couplings::PerEdge(j);
    out.site_fields = Some((0..lat.sites()).map(|i| spec.field(i) * eps[i] as f64).collect());
    out
}
