//! Dense labelled tensors and the local-replacement primitives.
//!
//! Storage is row-major with the last leg varying fastest. Grouping a run of
//! legs into one leg therefore flattens them with the first member slowest,
//! which is the convention every higher module relies on when it reuses a
//! matricization across levels.

use std::fmt;

use crate::error::{arg_err, shape_err, Result, TnsError};
use crate::linalg;

/// Name of the new leg created by the SVD-based factorizations.
pub const BOND: &str = "bond";

/// Default relative singular-value cutoff.
pub const DEFAULT_REL_CUTOFF: f64 = 1e-14;

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    legs: Vec<String>,
    /// Optional Z2 grading per leg (`+1` even, `-1` odd per index). Present
    /// only for tensors of spin-flip symmetric models; factorizations then
    /// work sector by sector so the symmetry survives rounding.
    parity: Option<Vec<Vec<i8>>>,
}

/// Grading of a grouped leg, first member slowest.
pub(crate) fn combine_parity(parts: &[&[i8]]) -> Vec<i8> {
    let mut out = vec![1i8];
    for p in parts {
        out = out.iter().flat_map(|&a| p.iter().map(move |&b| a * b)).collect();
    }
    out
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("legs", &self.legs)
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl DenseTensor {
    pub fn new<S: Into<String>>(shape: Vec<usize>, data: Vec<f64>, legs: impl IntoIterator<Item = S>) -> Result<Self> {
        let legs: Vec<String> = legs.into_iter().map(Into::into).collect();
        if legs.len() != shape.len() {
            return Err(shape_err!("{} legs for a rank-{} shape", legs.len(), shape.len()));
        }
        if shape.contains(&0) {
            return Err(shape_err!("zero dimension in shape {:?}", shape));
        }
        let size: usize = shape.iter().product();
        if size != data.len() {
            return Err(shape_err!("shape {:?} needs {} entries, got {}", shape, size, data.len()));
        }
        for (i, l) in legs.iter().enumerate() {
            if legs[..i].contains(l) {
                return Err(arg_err!("duplicate leg label '{}'", l));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TnsError::Numerical("non-finite tensor entry".into()));
        }
        Ok(Self { shape, data, legs, parity: None })
    }

    /// Constructor for internal call sites whose invariants hold by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, legs: Vec<String>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert_eq!(shape.len(), legs.len());
        Self { shape, data, legs, parity: None }
    }

    /// Attaches a Z2 grading, one `±1` vector per leg.
    pub fn with_parity(mut self, parity: Vec<Vec<i8>>) -> Result<Self> {
        if parity.len() != self.rank() {
            return Err(arg_err!("parity for {} legs, tensor has {}", parity.len(), self.rank()));
        }
        for (p, &d) in parity.iter().zip(&self.shape) {
            if p.len() != d || p.iter().any(|&x| x != 1 && x != -1) {
                return Err(arg_err!("leg parity must be ±1 with one entry per index"));
            }
        }
        self.parity = Some(parity);
        Ok(self)
    }

    pub(crate) fn set_parity(mut self, parity: Option<Vec<Vec<i8>>>) -> Self {
        debug_assert!(parity
            .as_ref()
            .is_none_or(|p| p.len() == self.rank() && p.iter().zip(&self.shape).all(|(x, &d)| x.len() == d)));
        self.parity = parity;
        self
    }

    pub fn without_parity(mut self) -> Self {
        self.parity = None;
        self
    }

    pub fn parity(&self) -> Option<&[Vec<i8>]> {
        self.parity.as_deref()
    }

    pub fn leg_parity(&self, leg: &str) -> Option<&[i8]> {
        let i = self.leg_index(leg).ok()?;
        self.parity.as_ref().map(|p| p[i].as_slice())
    }

    /// Largest entry magnitude outside the even sector; zero without grading.
    pub fn odd_weight(&self) -> f64 {
        let Some(p) = &self.parity else { return 0.0 };
        let parts: Vec<&[i8]> = p.iter().map(|v| v.as_slice()).collect();
        combine_parity(&parts).iter().zip(&self.data).filter(|(q, _)| **q < 0).fold(0.0f64, |m, (_, v)| m.max(v.abs()))
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![], vec![v], vec![])
    }

    pub fn zeros<S: Into<String>>(shape: Vec<usize>, legs: impl IntoIterator<Item = S>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n], legs)
    }

    pub fn identity(dim: usize, a: &str, b: &str) -> Result<Self> {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self::new(vec![dim, dim], data, [a, b])
    }

    /// Matrix with the given row-major entries and leg labels `(row, col)`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>, row: &str, col: &str) -> Result<Self> {
        Self::new(vec![rows, cols], data, [row, col])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn legs(&self) -> &[String] {
        &self.legs
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn has_leg(&self, leg: &str) -> bool {
        self.legs.iter().any(|l| l == leg)
    }

    pub fn leg_index(&self, leg: &str) -> Result<usize> {
        self.legs
            .iter()
            .position(|l| l == leg)
            .ok_or_else(|| arg_err!("unknown leg '{}' (tensor has {:?})", leg, self.legs))
    }

    pub fn dim(&self, leg: &str) -> Result<usize> {
        Ok(self.shape[self.leg_index(leg)?])
    }

    /// Entry at a multi-index given in leg order.
    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in idx.iter().zip(self.shape.iter()) {
            off = off * d + i;
        }
        self.data[off]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|v| v * f).collect(), self.legs.clone())
            .set_parity(self.parity.clone())
    }

    pub fn scale_in_place(&mut self, f: f64) {
        self.data.iter_mut().for_each(|v| *v *= f);
    }

    /// Renames legs; pairs are `(old, new)`.
    pub fn relabel(mut self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut seen = vec![false; self.legs.len()];
        let mut renamed = self.legs.clone();
        for (old, new) in pairs {
            let i = self.leg_index(old)?;
            if seen[i] {
                return Err(arg_err!("leg '{}' renamed twice", old));
            }
            seen[i] = true;
            renamed[i] = (*new).to_string();
        }
        for (i, l) in renamed.iter().enumerate() {
            if renamed[..i].contains(l) {
                return Err(arg_err!("relabel produces duplicate leg '{}'", l));
            }
        }
        self.legs = renamed;
        Ok(self)
    }

    /// Reorders legs to `order`, which must list every leg exactly once.
    pub fn permute<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.legs.len() {
            return Err(arg_err!("permutation lists {} legs, tensor has {}", order.len(), self.legs.len()));
        }
        let mut perm = Vec::with_capacity(order.len());
        for o in order {
            let i = self.leg_index(o.as_ref())?;
            if perm.contains(&i) {
                return Err(arg_err!("leg '{}' listed twice in permutation", o.as_ref()));
            }
            perm.push(i);
        }
        Ok(self.permute_axes(&perm))
    }

    /// Reorders axes so that output axis `k` is input axis `perm[k]`.
    pub(crate) fn permute_axes(&self, perm: &[usize]) -> Self {
        let legs = perm.iter().map(|&i| self.legs[i].clone()).collect();
        let shape: Vec<usize> = perm.iter().map(|&i| self.shape[i]).collect();
        let parity = self.parity.as_ref().map(|p| perm.iter().map(|&i| p[i].clone()).collect());
        if perm.iter().enumerate().all(|(k, &i)| k == i) {
            return Self::from_parts(shape, self.data.clone(), legs).set_parity(parity);
        }
        let data = permute_data(&self.data, &self.shape, perm);
        Self::from_parts(shape, data, legs).set_parity(parity)
    }

    /// Merges legs into grouped legs. Each group keeps the listed member
    /// order (first member slowest); the group leg is labelled by `name`.
    pub fn regroup(&self, groups: &[(&str, &[&str])]) -> Result<Self> {
        let mut order: Vec<&str> = Vec::with_capacity(self.legs.len());
        for (_, members) in groups {
            if members.is_empty() {
                return Err(arg_err!("empty leg group"));
            }
            order.extend_from_slice(members);
        }
        let t = self.permute(&order)?;
        let mut shape = Vec::with_capacity(groups.len());
        let mut pos = 0;
        for (_, members) in groups {
            shape.push(t.shape[pos..pos + members.len()].iter().product());
            pos += members.len();
        }
        let legs: Vec<String> = groups.iter().map(|(n, _)| (*n).to_string()).collect();
        let parity = t.parity.as_ref().map(|p| {
            let mut pos = 0;
            groups
                .iter()
                .map(|(_, members)| {
                    let parts: Vec<&[i8]> = p[pos..pos + members.len()].iter().map(|v| v.as_slice()).collect();
                    pos += members.len();
                    combine_parity(&parts)
                })
                .collect()
        });
        Ok(Self::new(shape, t.data, legs)?.set_parity(parity))
    }

    /// Splits one leg into several; inverse of [`regroup`](Self::regroup) for a single group.
    pub fn ungroup(&self, leg: &str, parts: &[(&str, usize)]) -> Result<Self> {
        let i = self.leg_index(leg)?;
        let prod: usize = parts.iter().map(|p| p.1).product();
        if prod != self.shape[i] {
            return Err(shape_err!("cannot split leg '{}' of dim {} into {:?}", leg, self.shape[i], parts));
        }
        let mut shape = self.shape[..i].to_vec();
        let mut legs = self.legs[..i].to_vec();
        for (n, d) in parts {
            shape.push(*d);
            legs.push((*n).to_string());
        }
        shape.extend_from_slice(&self.shape[i + 1..]);
        legs.extend_from_slice(&self.legs[i + 1..]);
        Self::new(shape, self.data.clone(), legs)
    }

    /// Flattens into a matrix whose rows run over `row_legs` and columns over
    /// the remaining legs (in their current order).
    pub(crate) fn matricize(&self, row_legs: &[&str]) -> Result<(Vec<f64>, usize, usize, Vec<String>)> {
        let mut order: Vec<String> = row_legs.iter().map(|s| s.to_string()).collect();
        for l in &self.legs {
            if !row_legs.contains(&l.as_str()) {
                order.push(l.clone());
            }
        }
        let t = self.permute(&order)?;
        let rows: usize = t.shape[..row_legs.len()].iter().product();
        let cols = t.data.len() / rows;
        let rest = order[row_legs.len()..].to_vec();
        Ok((t.data, rows, cols, rest))
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let mut in_strides = vec![1usize; r];
    for k in (0..r.saturating_sub(1)).rev() {
        in_strides[k] = in_strides[k + 1] * shape[k + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&i| shape[i]).collect();
    let strides: Vec<usize> = perm.iter().map(|&i| in_strides[i]).collect();
    let mut out = Vec::with_capacity(data.len());
    if r == 0 {
        out.extend_from_slice(data);
        return out;
    }
    let inner = out_shape[r - 1];
    let inner_stride = strides[r - 1];
    let mut idx = vec![0usize; r];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            let mut p = base;
            for _ in 0..inner {
                out.push(data[p]);
                p += inner_stride;
            }
        }
        // odometer over the outer axes
        let mut k = r - 1;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            base += strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            base -= strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
}

fn check_pairs(a: &DenseTensor, b: &DenseTensor, pairs: &[(&str, &str)]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut ia = Vec::with_capacity(pairs.len());
    let mut ib = Vec::with_capacity(pairs.len());
    for (la, lb) in pairs {
        let i = a.leg_index(la)?;
        let j = b.leg_index(lb)?;
        if ia.contains(&i) || ib.contains(&j) {
            return Err(arg_err!("leg paired twice in ({}, {})", la, lb));
        }
        if a.shape[i] != b.shape[j] {
            return Err(shape_err!("cannot pair '{}' (dim {}) with '{}' (dim {})", la, a.shape[i], lb, b.shape[j]));
        }
        ia.push(i);
        ib.push(j);
    }
    Ok((ia, ib))
}

/// Sums over the paired legs of `a` and `b`. The result carries `a`'s free
/// legs followed by `b`'s free legs, each in original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(&str, &str)]) -> Result<DenseTensor> {
    let (ia, ib) = check_pairs(a, b, pairs)?;
    let free_a: Vec<usize> = (0..a.rank()).filter(|i| !ia.contains(i)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|i| !ib.contains(i)).collect();
    let mut legs: Vec<String> = free_a.iter().map(|&i| a.legs[i].clone()).collect();
    for &j in &free_b {
        let l = &b.legs[j];
        if legs.contains(l) {
            return Err(arg_err!("contraction result would repeat leg '{}'", l));
        }
        legs.push(l.clone());
    }
    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&j| b.shape[j]));
    let parity = match (&a.parity, &b.parity) {
        (Some(pa), Some(pb)) => {
            Some(free_a.iter().map(|&i| pa[i].clone()).chain(free_b.iter().map(|&j| pb[j].clone())).collect())
        }
        _ => None,
    };

    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let n: usize = free_b.iter().map(|&j| b.shape[j]).product();
    let k: usize = ia.iter().map(|&i| a.shape[i]).product();

    // A as (free, paired) or its transpose, whichever needs no copy.
    let pa: Vec<usize> = free_a.iter().chain(ia.iter()).copied().collect();
    let pa_t: Vec<usize> = ia.iter().chain(free_a.iter()).copied().collect();
    let pb: Vec<usize> = ib.iter().chain(free_b.iter()).copied().collect();
    let pb_t: Vec<usize> = free_b.iter().chain(ib.iter()).copied().collect();
    let ident = |p: &[usize]| p.iter().enumerate().all(|(x, &y)| x == y);

    let a_trans = !ident(&pa) && ident(&pa_t);
    let b_trans = !ident(&pb) && ident(&pb_t);
    let a_data: std::borrow::Cow<[f64]> = if ident(&pa) || a_trans {
        std::borrow::Cow::Borrowed(&a.data)
    } else {
        std::borrow::Cow::Owned(permute_data(&a.data, &a.shape, &pa))
    };
    let b_data: std::borrow::Cow<[f64]> = if ident(&pb) || b_trans {
        std::borrow::Cow::Borrowed(&b.data)
    } else {
        std::borrow::Cow::Owned(permute_data(&b.data, &b.shape, &pb))
    };
    let data = match (a_trans, b_trans) {
        (false, false) => linalg::matmul(&a_data, m, k, &b_data, n),
        (true, false) => linalg::matmul_tn(&a_data, k, m, &b_data, n),
        (false, true) => linalg::matmul_nt(&a_data, m, k, &b_data, n),
        (true, true) => {
            let bt = permute_data(&b.data, &b.shape, &pb);
            linalg::matmul_tn(&a_data, k, m, &bt, n)
        }
    };
    Ok(DenseTensor::from_parts(shape, data, legs).set_parity(parity))
}

/// Outer product; legs of `a` then legs of `b`.
pub fn outer(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    contract(a, b, &[])
}

/// Traces over each pair of legs of one tensor; remaining legs keep their order.
pub fn self_trace(t: &DenseTensor, pairs: &[(&str, &str)]) -> Result<DenseTensor> {
    let mut firsts = Vec::new();
    let mut seconds = Vec::new();
    for (x, y) in pairs {
        let i = t.leg_index(x)?;
        let j = t.leg_index(y)?;
        if i == j || firsts.contains(&i) || firsts.contains(&j) || seconds.contains(&i) || seconds.contains(&j) {
            return Err(arg_err!("invalid trace pairing ({}, {})", x, y));
        }
        if t.shape[i] != t.shape[j] {
            return Err(shape_err!("cannot trace '{}' (dim {}) with '{}' (dim {})", x, t.shape[i], y, t.shape[j]));
        }
        firsts.push(i);
        seconds.push(j);
    }
    let rest: Vec<usize> = (0..t.rank()).filter(|i| !firsts.contains(i) && !seconds.contains(i)).collect();
    let perm: Vec<usize> = rest.iter().chain(firsts.iter()).chain(seconds.iter()).copied().collect();
    let p = t.permute_axes(&perm);
    let m: usize = firsts.iter().map(|&i| t.shape[i]).product();
    let r: usize = rest.iter().map(|&i| t.shape[i]).product();
    let mut data = vec![0.0; r];
    for (ri, out) in data.iter_mut().enumerate() {
        let block = &p.data[ri * m * m..(ri + 1) * m * m];
        *out = (0..m).map(|i| block[i * m + i]).sum();
    }
    let shape = rest.iter().map(|&i| t.shape[i]).collect();
    let legs = rest.iter().map(|&i| t.legs[i].clone()).collect();
    let parity = t.parity.as_ref().map(|p| rest.iter().map(|&i| p[i].clone()).collect());
    Ok(DenseTensor::from_parts(shape, data, legs).set_parity(parity))
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Legs `(left_legs..., bond)`.
    pub left: DenseTensor,
    pub singular_values: Vec<f64>,
    /// Legs `(right_legs..., bond)`.
    pub right: DenseTensor,
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Truncated SVD of the matricization `(left_legs) × (rest)`.
///
/// Keeps `k = min(chi_max, #{σ_i ≥ rel_cutoff σ_1})` triplets. Each left
/// vector is signed so that its largest-magnitude entry is positive.
pub fn svd_truncate(t: &DenseTensor, left_legs: &[&str], chi_max: usize, rel_cutoff: f64) -> Result<SvdResult> {
    if left_legs.is_empty() || left_legs.len() >= t.rank() {
        return Err(arg_err!("left legs must be a non-empty proper subset of {:?}", t.legs));
    }
    if chi_max == 0 {
        return Err(arg_err!("chi_max must be positive"));
    }
    if !(rel_cutoff >= 0.0) {
        return Err(arg_err!("rel_cutoff must be non-negative"));
    }
    if t.has_leg(BOND) {
        return Err(arg_err!("input already carries a '{}' leg", BOND));
    }
    let (mat, m, n, rest) = t.matricize(left_legs)?;
    let left_shape: Vec<usize> = left_legs.iter().map(|l| t.dim(l)).collect::<Result<_>>()?;
    let right_shape: Vec<usize> = rest.iter().map(|l| t.dim(l)).collect::<Result<_>>()?;
    let mut left_names: Vec<String> = left_legs.iter().map(|s| s.to_string()).collect();
    left_names.push(BOND.into());
    let mut right_names = rest.clone();
    right_names.push(BOND.into());

    // with a grading, rows and columns carry the parities of their legs
    let grading = t.parity.as_ref().map(|_| {
        let of = |names: &[String]| -> Vec<i8> {
            let parts: Vec<&[i8]> = names.iter().map(|l| t.leg_parity(l).expect("graded")).collect();
            combine_parity(&parts)
        };
        let ln: Vec<String> = left_legs.iter().map(|s| s.to_string()).collect();
        (of(&ln), of(&rest))
    });
    let left_par = |bond: &[i8]| {
        grading.as_ref().map(|_| {
            let mut p: Vec<Vec<i8>> = left_legs.iter().map(|l| t.leg_parity(l).unwrap().to_vec()).collect();
            p.push(bond.to_vec());
            p
        })
    };
    let right_par = |bond: &[i8]| {
        grading.as_ref().map(|_| {
            let mut p: Vec<Vec<i8>> = rest.iter().map(|l| t.leg_parity(l).unwrap().to_vec()).collect();
            p.push(bond.to_vec());
            p
        })
    };

    let build = |u: Vec<f64>, s: Vec<f64>, v: Vec<f64>, k: usize, dw: f64, bond: &[i8]| {
        let mut ls = left_shape.clone();
        ls.push(k);
        let mut rs = right_shape.clone();
        rs.push(k);
        SvdResult {
            left: DenseTensor::from_parts(ls, u, left_names.clone()).set_parity(left_par(bond)),
            singular_values: s,
            right: DenseTensor::from_parts(rs, v, right_names.clone()).set_parity(right_par(bond)),
            discarded_weight: dw,
        }
    };

    if mat.iter().all(|&v| v == 0.0) {
        let mut u = vec![0.0; m];
        u[0] = 1.0;
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        let b = grading.as_ref().map_or(1, |(pr, _)| pr[0]);
        return Ok(build(u, vec![0.0], v, 1, 0.0, &[b]));
    }

    let (u, s, v, bond, leak) = match &grading {
        None => {
            let (u, s, v) = linalg::svd(&mat, m, n);
            let r = s.len();
            (u, s, v, vec![1i8; r], 0.0)
        }
        Some((pr, pc)) => graded_svd(&mat, m, n, pr, pc),
    };
    let r = s.len();
    let thresh = rel_cutoff * s[0];
    let above = s.iter().take_while(|&&x| x >= thresh && x > 0.0).count().max(1);
    let k = above.min(chi_max).min(r);
    let dw = (s[k..].iter().map(|x| x * x).sum::<f64>() + leak).sqrt();
    let mut uk = vec![0.0; m * k];
    for i in 0..m {
        uk[i * k..(i + 1) * k].copy_from_slice(&u[i * r..i * r + k]);
    }
    let mut vk = vec![0.0; n * k];
    for j in 0..n {
        vk[j * k..(j + 1) * k].copy_from_slice(&v[j * r..j * r + k]);
    }
    linalg::fix_column_signs(&mut uk, m, k, &mut vk, n);
    Ok(build(uk, s[..k].to_vec(), vk, k, dw, &bond[..k]))
}

/// Block SVD of a graded matrix. The matrix is treated as having a single
/// charge `Q` (the sector holding most of its weight): row block `p` couples
/// only to column block `p·Q`. Returns `(u, s, v, bond parity, leaked
/// weight²)` with triplets in descending order; the leak is whatever sat in
/// the wrong-charge blocks, which is rounding noise for symmetric inputs.
fn graded_svd(mat: &[f64], m: usize, n: usize, pr: &[i8], pc: &[i8]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<i8>, f64) {
    let (mut even, mut odd) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..n {
            let w = mat[i * n + j] * mat[i * n + j];
            if pr[i] == pc[j] {
                even += w;
            } else {
                odd += w;
            }
        }
    }
    let q: i8 = if even >= odd { 1 } else { -1 };
    let leak = if q == 1 { odd } else { even };
    let mut trip: Vec<(f64, i8, Vec<f64>, Vec<f64>)> = Vec::new();
    for p in [1i8, -1] {
        let rows: Vec<usize> = (0..m).filter(|&i| pr[i] == p).collect();
        let cols: Vec<usize> = (0..n).filter(|&j| pc[j] == p * q).collect();
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let (bm, bn) = (rows.len(), cols.len());
        let mut sub = Vec::with_capacity(bm * bn);
        for &i in &rows {
            sub.extend(cols.iter().map(|&j| mat[i * n + j]));
        }
        let (u, s, v) = linalg::svd(&sub, bm, bn);
        let r = s.len();
        for c in 0..r {
            let mut uf = vec![0.0; m];
            for (a, &i) in rows.iter().enumerate() {
                uf[i] = u[a * r + c];
            }
            let mut vf = vec![0.0; n];
            for (b, &j) in cols.iter().enumerate() {
                vf[j] = v[b * r + c];
            }
            trip.push((s[c], p, uf, vf));
        }
    }
    // stable: equal values keep the even sector first
    trip.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let r = trip.len();
    let mut u = vec![0.0; m * r];
    let mut v = vec![0.0; n * r];
    for (c, (_, _, uf, vf)) in trip.iter().enumerate() {
        for i in 0..m {
            u[i * r + c] = uf[i];
        }
        for j in 0..n {
            v[j * r + c] = vf[j];
        }
    }
    let s = trip.iter().map(|t| t.0).collect();
    let bond = trip.iter().map(|t| t.1).collect();
    (u, s, v, bond, leak)
}

/// `T ≈ U U'T`: returns `u` with legs `(left_legs..., bond)` and
/// `core = U'T` with legs `(bond, rest...)`.
pub fn uut_project(
    t: &DenseTensor,
    left_legs: &[&str],
    chi_max: usize,
    rel_cutoff: f64,
) -> Result<(DenseTensor, DenseTensor)> {
    let svd = svd_truncate(t, left_legs, chi_max, rel_cutoff)?;
    let k = svd.rank();
    // core = S V^T, legs (bond, rest...)
    let right = &svd.right;
    let n: usize = right.len() / k;
    let mut data = vec![0.0; k * n];
    for j in 0..n {
        for c in 0..k {
            data[c * n + j] = svd.singular_values[c] * right.data[j * k + c];
        }
    }
    let mut shape = vec![k];
    shape.extend_from_slice(&right.shape[..right.rank() - 1]);
    let mut legs = vec![BOND.to_string()];
    legs.extend_from_slice(&right.legs[..right.rank() - 1]);
    let parity = right.parity.as_ref().map(|p| {
        let mut q = vec![p[p.len() - 1].clone()];
        q.extend_from_slice(&p[..p.len() - 1]);
        q
    });
    Ok((svd.left, DenseTensor::from_parts(shape, data, legs).set_parity(parity)))
}

/// `T ≈ U R` with `R = U'T`; the same factorization as [`uut_project`],
/// named separately because callers place `U` and `R` on different sides of
/// a plaquette.
pub fn ur_project(
    t: &DenseTensor,
    left_legs: &[&str],
    chi_max: usize,
    rel_cutoff: f64,
) -> Result<(DenseTensor, DenseTensor)> {
    uut_project(t, left_legs, chi_max, rel_cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], legs: &[&str], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::new(shape.to_vec(), data, legs.iter().copied()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = b.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    fn graded(shape: &[usize], legs: &[&str], charge: i8, seed: u64) -> DenseTensor {
        let par: Vec<Vec<i8>> =
            shape.iter().map(|&d| (0..d).map(|i| if i % 3 == 1 { -1 } else { 1 }).collect()).collect();
        let parts: Vec<&[i8]> = par.iter().map(|v| v.as_slice()).collect();
        let q = combine_parity(&parts);
        let t = random(shape, legs, seed);
        let data = t.data().iter().zip(&q).map(|(v, &p)| if p == charge { *v } else { 0.0 }).collect();
        DenseTensor::new(shape.to_vec(), data, legs.iter().copied()).unwrap().with_parity(par).unwrap()
    }

    #[test]
    fn graded_svd_is_blockwise_and_exact() {
        for charge in [1, -1] {
            let t = graded(&[3, 4, 5], &["i", "j", "k"], charge, 9);
            let svd = svd_truncate(&t, &["i", "j"], 100, 0.0).unwrap();
            assert_eq!(svd.left.odd_weight(), 0.0);
            let (u, core) = uut_project(&t, &["i", "j"], 100, 0.0).unwrap();
            let r = contract(&u, &core, &[(BOND, BOND)]).unwrap();
            assert!(close(r.data(), t.data(), 1e-12));
            assert!(r.parity().is_some());
            let mut s = svd.singular_values.clone();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(s, svd.singular_values);
        }
    }

    #[test]
    fn grading_follows_regroup_and_permute() {
        let t = graded(&[2, 3, 2], &["a", "b", "c"], 1, 4);
        let g = t.regroup(&[("x", &["c", "a"]), ("y", &["b"])]).unwrap();
        assert_eq!(g.leg_parity("x").unwrap(), &[1, -1, -1, 1]);
        assert_eq!(g.leg_parity("y").unwrap(), &[1, -1, 1]);
        assert_eq!(g.odd_weight(), 0.0);
        assert!(t.ungroup("b", &[("b", 3)]).unwrap().parity().is_none());
    }

    #[test]
    fn contract_identity_and_matmul() {
        let p = DenseTensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0], "row", "col").unwrap();
        let id = DenseTensor::identity(2, "row", "col").unwrap();
        let r = contract(&p, &id, &[("col", "row")]).unwrap();
        assert_eq!(r.data(), p.data());
        let q = DenseTensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0], "row", "col").unwrap();
        let r = contract(&p, &q, &[("col", "row")]).unwrap();
        assert_eq!(r.data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(r.legs(), &["row".to_string(), "col".to_string()]);
    }

    #[test]
    fn contract_matches_loops() {
        let a = random(&[2, 3, 4], &["i", "j", "k"], 1);
        let b = random(&[4, 5, 3], &["p", "q", "r"], 2);
        let c = contract(&a, &b, &[("j", "r")]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 4, 5]);
        let mut want = Vec::new();
        for i in 0..2 {
            for k in 0..4 {
                for p in 0..4 {
                    for q in 0..5 {
                        let s: f64 = (0..3).map(|j| a.get(&[i, j, k]) * b.get(&[p, q, j])).sum();
                        want.push(s);
                    }
                }
            }
        }
        assert!(close(c.data(), &want, 1e-12));
        // transposed-operand fast paths
        let c2 = contract(&a, &b, &[("i", "q"), ("j", "r")]);
        assert!(c2.is_err(), "dimension mismatch must error");
        let c3 = contract(&a, &b, &[("k", "p")]).unwrap();
        let mut want3 = Vec::new();
        for i in 0..2 {
            for j in 0..3 {
                for q in 0..5 {
                    for r in 0..3 {
                        want3.push((0..4).map(|k| a.get(&[i, j, k]) * b.get(&[k, q, r])).sum());
                    }
                }
            }
        }
        assert!(close(c3.data(), &want3, 1e-12));
    }

    #[test]
    fn contract_errors() {
        let a = random(&[2, 3], &["i", "j"], 3);
        let b = random(&[3, 3], &["p", "q"], 4);
        assert!(matches!(contract(&a, &b, &[("i", "p")]), Err(TnsError::Shape(_))));
        assert!(matches!(contract(&a, &b, &[("j", "p"), ("j", "q")]), Err(TnsError::Argument(_))));
    }

    #[test]
    fn trace_examples() {
        let id = DenseTensor::identity(5, "a", "b").unwrap();
        let s = self_trace(&id, &[("a", "b")]).unwrap();
        assert_eq!(s.data(), &[5.0]);

        let chi = 3;
        let v = [0.5, -1.0];
        let mut data = vec![0.0; chi * chi * 2];
        for a in 0..chi {
            for f in 0..2 {
                data[(a * chi + a) * 2 + f] = v[f];
            }
        }
        let t = DenseTensor::new(vec![chi, chi, 2], data, ["a", "b", "f"]).unwrap();
        let r = self_trace(&t, &[("a", "b")]).unwrap();
        assert_eq!(r.data(), &[1.5, -3.0]);

        let t = random(&[2, 3, 2, 3], &["a", "b", "c", "d"], 5);
        let r = self_trace(&t, &[("a", "c"), ("b", "d")]).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                want += t.get(&[i, j, i, j]);
            }
        }
        assert!((r.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn regroup_examples() {
        let t = random(&[2, 3], &["row", "col"], 6);
        let g = t.regroup(&[("rc", &["row", "col"])]).unwrap();
        assert_eq!(g.shape(), &[6]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g.data()[3 * i + j], t.get(&[i, j]));
            }
        }
        let back = g.ungroup("rc", &[("row", 2), ("col", 3)]).unwrap();
        assert_eq!(back, t);

        let t = random(&[2, 2, 2], &["a", "b", "c"], 7);
        let g = t.regroup(&[("a", &["a"]), ("cb", &["c", "b"])]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    assert_eq!(g.get(&[a, 2 * c + b]), t.get(&[a, b, c]));
                }
            }
        }
        assert!(t.regroup(&[("x", &["a", "b"])]).is_err());
        assert!(t.regroup(&[("x", &["a", "b"]), ("y", &["b", "c"])]).is_err());
    }

    fn reconstruct(svd: &SvdResult) -> DenseTensor {
        let k = svd.rank();
        let mut l = svd.left.clone();
        let m = l.len() / k;
        for i in 0..m {
            for c in 0..k {
                l.data[i * k + c] *= svd.singular_values[c];
            }
        }
        contract(&l, &svd.right, &[(BOND, BOND)]).unwrap()
    }

    #[test]
    fn svd_examples() {
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 3.0];
        let data: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let t = DenseTensor::new(vec![3, 2], data, ["i", "j"]).unwrap();
        let s = svd_truncate(&t, &["i"], 1, DEFAULT_REL_CUTOFF).unwrap();
        assert_eq!(s.rank(), 1);
        assert!(s.discarded_weight < 1e-14);
        assert!(close(reconstruct(&s).data(), t.data(), 1e-13));

        let d = DenseTensor::new(vec![3, 3], vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0], ["i", "j"]).unwrap();
        let s = svd_truncate(&d, &["i"], 2, DEFAULT_REL_CUTOFF).unwrap();
        assert!(close(&s.singular_values, &[3.0, 2.0], 1e-14));
        assert!((s.discarded_weight - 1.0).abs() < 1e-14);

        let t = random(&[8, 8], &["i", "j"], 8);
        let full = svd_truncate(&t, &["i"], 8, 0.0).unwrap();
        let s = svd_truncate(&t, &["i"], 4, DEFAULT_REL_CUTOFF).unwrap();
        let want = full.singular_values[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let rec = reconstruct(&s);
        let err = rec.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((err - want).abs() <= 1e-10 * want.max(1.0));
        assert!((s.discarded_weight - want).abs() <= 1e-12);
    }

    #[test]
    fn svd_zero_and_signs() {
        let z = DenseTensor::zeros(vec![2, 3], ["i", "j"]).unwrap();
        let s = svd_truncate(&z, &["i"], 4, DEFAULT_REL_CUTOFF).unwrap();
        assert_eq!(s.singular_values, vec![0.0]);
        assert_eq!(s.left.data(), &[1.0, 0.0]);
        assert_eq!(s.right.data(), &[1.0, 0.0, 0.0]);

        let t = random(&[3, 2, 4], &["a", "b", "c"], 9);
        let s = svd_truncate(&t, &["c", "a"], 100, 0.0).unwrap();
        assert_eq!(s.left.legs(), &["c", "a", BOND]);
        assert_eq!(s.right.legs(), &["b", BOND]);
        let k = s.rank();
        for c in 0..k {
            let col: Vec<f64> = (0..12).map(|i| s.left.data()[i * k + c]).collect();
            let best = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(best > 0.0);
        }
        let rec = reconstruct(&s).permute(&["a", "b", "c"]).unwrap();
        assert!(close(rec.data(), t.data(), 1e-12));
    }

    #[test]
    fn projections_reproduce() {
        let t = random(&[4, 3, 5], &["a", "b", "c"], 10);
        let (u, core) = uut_project(&t, &["a", "c"], 100, 0.0).unwrap();
        assert_eq!(core.legs(), &[BOND, "b"]);
        let rec = contract(&u, &core, &[(BOND, BOND)]).unwrap().permute(&["a", "b", "c"]).unwrap();
        assert!(close(rec.data(), t.data(), 1e-12));

        let (u, r) = ur_project(&t, &["b"], 2, DEFAULT_REL_CUTOFF).unwrap();
        let s = svd_truncate(&t, &["b"], 2, DEFAULT_REL_CUTOFF).unwrap();
        let rec = contract(&u, &r, &[(BOND, BOND)]).unwrap().permute(&["a", "b", "c"]).unwrap();
        let err = rec.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((err - s.discarded_weight).abs() < 1e-10 * t.norm());
    }
}
