//! Tensor-network graphs and exact contraction of small networks.

use crate::error::{arg_err, shape_err, Result, TnsError};
use crate::logscalar::LogScalar;
use crate::tensor::{contract, self_trace, DenseTensor};

/// Default cap on the number of entries of any intermediate tensor.
pub const DEFAULT_SIZE_CAP: usize = 1 << 26;

pub type VertexId = usize;
pub type EdgeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Vertex {
        vertex: VertexId,
        leg: String,
    },
    /// Open end of a boundary edge; `label` names the corresponding leg of
    /// the contracted result.
    Open {
        label: String,
    },
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub a: Endpoint,
    pub b: Endpoint,
    pub bond_dim: usize,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        matches!((&self.a, &self.b), (Endpoint::Vertex { .. }, Endpoint::Vertex { .. }))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TensorNetwork {
    vertices: Vec<DenseTensor>,
    edges: Vec<Edge>,
}

/// Outcome of an exact contraction: an open tensor, or a scalar when the
/// network has no boundary edges.
#[derive(Clone, Debug)]
pub enum Contracted {
    Tensor(DenseTensor),
    Scalar(LogScalar),
}

impl Contracted {
    pub fn into_scalar(self) -> Result<LogScalar> {
        match self {
            Contracted::Scalar(s) => Ok(s),
            Contracted::Tensor(_) => Err(arg_err!("network has boundary edges")),
        }
    }

    pub fn into_tensor(self) -> Result<DenseTensor> {
        match self {
            Contracted::Tensor(t) => Ok(t),
            Contracted::Scalar(_) => Err(arg_err!("network has no boundary edges")),
        }
    }
}

impl TensorNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, t: DenseTensor) -> VertexId {
        self.vertices.push(t);
        self.vertices.len() - 1
    }

    pub fn vertices(&self) -> &[DenseTensor] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.is_interior())
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| !e.is_interior())
    }

    fn leg_dim(&self, v: VertexId, leg: &str) -> Result<usize> {
        let t = self.vertices.get(v).ok_or_else(|| arg_err!("unknown vertex {}", v))?;
        t.dim(leg)
    }

    fn is_used(&self, v: VertexId, leg: &str) -> bool {
        self.edges.iter().any(|e| {
            [&e.a, &e.b].iter().any(|p| matches!(p, Endpoint::Vertex { vertex, leg: l } if *vertex == v && l == leg))
        })
    }

    /// Joins leg `la` of vertex `va` with leg `lb` of vertex `vb`; `va == vb` is a self-edge.
    pub fn connect(&mut self, va: VertexId, la: &str, vb: VertexId, lb: &str) -> Result<EdgeId> {
        let da = self.leg_dim(va, la)?;
        let db = self.leg_dim(vb, lb)?;
        if da != db {
            return Err(shape_err!("edge ({}:{}, {}:{}) joins dims {} and {}", va, la, vb, lb, da, db));
        }
        if (va == vb && la == lb) || self.is_used(va, la) || self.is_used(vb, lb) {
            return Err(arg_err!("leg already attached to an edge ({}:{} / {}:{})", va, la, vb, lb));
        }
        self.edges.push(Edge {
            a: Endpoint::Vertex { vertex: va, leg: la.into() },
            b: Endpoint::Vertex { vertex: vb, leg: lb.into() },
            bond_dim: da,
        });
        Ok(self.edges.len() - 1)
    }

    /// Declares leg `leg` of `v` as a boundary edge whose result leg is `label`.
    pub fn open(&mut self, v: VertexId, leg: &str, label: &str) -> Result<EdgeId> {
        let d = self.leg_dim(v, leg)?;
        if self.is_used(v, leg) {
            return Err(arg_err!("leg {}:{} already attached", v, leg));
        }
        if self.boundary_edges().any(|(_, e)| matches!(&e.b, Endpoint::Open { label: l } if l == label)) {
            return Err(arg_err!("duplicate boundary label '{}'", label));
        }
        self.edges.push(Edge {
            a: Endpoint::Vertex { vertex: v, leg: leg.into() },
            b: Endpoint::Open { label: label.into() },
            bond_dim: d,
        });
        Ok(self.edges.len() - 1)
    }

    /// Checks that every tensor leg is referenced by exactly one edge endpoint.
    pub fn validate(&self) -> Result<()> {
        for (v, t) in self.vertices.iter().enumerate() {
            for leg in t.legs() {
                let count = self
                    .edges
                    .iter()
                    .flat_map(|e| [&e.a, &e.b])
                    .filter(|p| matches!(p, Endpoint::Vertex { vertex, leg: l } if *vertex == v && l == leg))
                    .count();
                if count != 1 {
                    return Err(arg_err!("leg {}:{} referenced by {} edges", v, leg, count));
                }
            }
        }
        Ok(())
    }
}

fn edge_label(e: EdgeId) -> String {
    format!("#{e}")
}

struct Node {
    t: DenseTensor,
    scale: LogScalar,
}

fn shared_legs(a: &DenseTensor, b: &DenseTensor) -> Vec<String> {
    a.legs().iter().filter(|l| l.starts_with('#') && b.has_leg(l)).cloned().collect()
}

fn result_size(a: &DenseTensor, b: &DenseTensor, shared: &[String]) -> usize {
    let shared_a: usize = shared.iter().map(|l| a.dim(l).unwrap_or(1)).product();
    (a.len() / shared_a).saturating_mul(b.len() / shared_a)
}

fn merge(a: Node, b: Node, cap: usize, step: usize) -> Result<Node> {
    let shared = shared_legs(&a.t, &b.t);
    let size = result_size(&a.t, &b.t, &shared);
    if size > cap {
        return Err(TnsError::Resource(format!(
            "contraction step {step} would create an intermediate of {size} entries (cap {cap})"
        )));
    }
    let pairs: Vec<(&str, &str)> = shared.iter().map(|l| (l.as_str(), l.as_str())).collect();
    let t = contract(&a.t, &b.t, &pairs)?;
    let (t, f) = rescale(t);
    Ok(Node { t, scale: a.scale * b.scale * f })
}

/// Rescales by the max-abs entry without failing on zero tensors.
fn rescale(t: DenseTensor) -> (DenseTensor, LogScalar) {
    let m = t.max_abs();
    if m == 0.0 || m == 1.0 {
        let f = if m == 0.0 { LogScalar::zero() } else { LogScalar::one() };
        return (t, f);
    }
    (t.scaled(1.0 / m), LogScalar::from_f64(m))
}

/// Contracts every interior edge of `net`.
///
/// Without an explicit `order` the pair of nodes whose contraction creates
/// the smallest intermediate is merged first (ties: lowest vertex ids). Edge ids
/// in `order` whose endpoints already sit in one node are skipped. Boundary
/// legs of the result follow the boundary-edge order of the network.
pub fn contract_exact(net: &TensorNetwork, order: Option<&[EdgeId]>, size_cap: usize) -> Result<Contracted> {
    net.validate()?;
    if net.vertices.is_empty() {
        return Err(arg_err!("empty network"));
    }
    // Relabel every leg after the edge it belongs to.
    let mut nodes: Vec<Option<Node>> = Vec::with_capacity(net.vertices.len());
    for (v, t) in net.vertices.iter().enumerate() {
        let mut ren: Vec<(String, String)> = Vec::new();
        for (id, e) in net.edges.iter().enumerate() {
            let self_edge = matches!((&e.a, &e.b),
                (Endpoint::Vertex { vertex: x, .. }, Endpoint::Vertex { vertex: y, .. }) if *x == v && *y == v);
            for (side, p) in [&e.a, &e.b].into_iter().enumerate() {
                let Endpoint::Vertex { vertex, leg } = p else { continue };
                if *vertex != v {
                    continue;
                }
                let lab = if self_edge {
                    format!("{}{}", edge_label(id), if side == 0 { 'a' } else { 'b' })
                } else if e.is_interior() {
                    edge_label(id)
                } else if let Endpoint::Open { label } = &e.b {
                    format!("@{label}")
                } else {
                    unreachable!("open endpoints are always stored second")
                };
                ren.push((leg.clone(), lab));
            }
        }
        let pairs: Vec<(&str, &str)> = ren.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let mut t = t.clone().relabel(&pairs)?;
        // resolve self-edges by tracing
        let selfs: Vec<(String, String)> = t
            .legs()
            .iter()
            .filter(|l| l.starts_with('#') && l.ends_with('a'))
            .map(|l| (l.clone(), format!("{}b", &l[..l.len() - 1])))
            .collect();
        if !selfs.is_empty() {
            let p: Vec<(&str, &str)> = selfs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            t = self_trace(&t, &p)?;
        }
        let (t, scale) = rescale(t);
        nodes.push(Some(Node { t, scale }));
    }

    // Which node currently holds each original vertex.
    let mut owner: Vec<usize> = (0..nodes.len()).collect();
    let find = |owner: &Vec<usize>, mut v: usize| {
        while owner[v] != v {
            v = owner[v];
        }
        v
    };
    let mut step = 0usize;

    let join = |nodes: &mut Vec<Option<Node>>, owner: &mut Vec<usize>, x: usize, y: usize, step: usize| -> Result<()> {
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        let a = nodes[lo].take().expect("live node");
        let b = nodes[hi].take().expect("live node");
        nodes[lo] = Some(merge(a, b, size_cap, step)?);
        owner[hi] = lo;
        Ok(())
    };

    if let Some(order) = order {
        for &e in order {
            let edge = net.edges.get(e).ok_or_else(|| arg_err!("unknown edge {}", e))?;
            if let (Endpoint::Vertex { vertex: va, .. }, Endpoint::Vertex { vertex: vb, .. }) = (&edge.a, &edge.b) {
                let (x, y) = (find(&owner, *va), find(&owner, *vb));
                if x != y {
                    step += 1;
                    join(&mut nodes, &mut owner, x, y, step)?;
                }
            }
        }
    }

    loop {
        let live: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].is_some()).collect();
        if live.len() == 1 {
            break;
        }
        let mut best: Option<(usize, usize, usize)> = None;
        for (ix, &i) in live.iter().enumerate() {
            for &j in &live[ix + 1..] {
                let (a, b) = (&nodes[i].as_ref().unwrap().t, &nodes[j].as_ref().unwrap().t);
                let shared = shared_legs(a, b);
                if shared.is_empty() {
                    continue;
                }
                let size = result_size(a, b, &shared);
                if best.is_none_or(|(s, _, _)| size < s) {
                    best = Some((size, i, j));
                }
            }
        }
        let (i, j) = match best {
            Some((_, i, j)) => (i, j),
            // disconnected components: outer product of the two smallest
            None => {
                let mut by_size = live.clone();
                by_size.sort_by_key(|&i| nodes[i].as_ref().unwrap().t.len());
                (by_size[0], by_size[1])
            }
        };
        step += 1;
        join(&mut nodes, &mut owner, i, j, step)?;
    }

    let root = nodes.into_iter().flatten().next().expect("one node left");
    if root.t.rank() == 0 {
        let v = LogScalar::from_f64(root.t.data()[0]);
        return Ok(Contracted::Scalar(v * root.scale));
    }
    let labels: Vec<String> = net
        .boundary_edges()
        .map(|(_, e)| match &e.b {
            Endpoint::Open { label } => label.clone(),
            _ => unreachable!(),
        })
        .collect();
    let order: Vec<String> = labels.iter().map(|l| format!("@{l}")).collect();
    let t = root.t.permute(&order)?;
    let pairs: Vec<(&str, &str)> = order.iter().zip(labels.iter()).map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let t = t.relabel(&pairs)?;
    let f = root.scale.to_f64();
    if !f.is_finite() {
        return Err(TnsError::Numerical("open contraction result overflows".into()));
    }
    Ok(Contracted::Tensor(t.scaled(f)))
}

/// Divides by the max-abs entry: `t = t_scaled · exp(factor)`.
pub fn normalize_tensor(t: &DenseTensor) -> Result<(DenseTensor, LogScalar)> {
    let m = t.max_abs();
    if m == 0.0 {
        return Err(TnsError::Numerical("cannot normalize an all-zero tensor".into()));
    }
    Ok((t.scaled(1.0 / m), LogScalar::from_f64(m)))
}
