//! Locally polygonal flows `μ = μ_t ⊗ dt`: a space-time forest whose edges are
//! straight segments carrying a constant flux.
//!
//! Edges point forward in time (`t(tail) < t(head)`). Sources sit at the start
//! time, sinks at the horizon. Internally edges reference nodes by index; the
//! external `id` of each node is preserved through serialization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::measure::{scene_diameter, Atom, AtomicMeasure};
use crate::sum::ksum;

pub type NodeId = usize;

/// Relative tolerance on Kirchhoff balance at interior nodes.
pub const KIRCHHOFF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub pos: Vec2,
    pub t: f64,
}

/// An edge between node *indices* (not ids).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonalFlow {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Leaf regularization radius used when computing the boundary norm.
    pub eps: f64,
    /// When set, validation requires exactly one sink (`μ_T = Φ δ_X`).
    pub rooted: bool,
}

/// Incoming and outgoing edge lists per node index.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub incoming: Vec<Vec<usize>>,
    pub outgoing: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    TimeOrder,
    Kirchhoff,
    Cycle,
    Mass,
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Backward,
    Forward,
}

/// A continuous piecewise-affine curve `t ↦ X(t)` in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffinePath {
    times: Vec<f64>,
    points: Vec<Vec2>,
}

impl PiecewiseAffinePath {
    pub fn new(times: Vec<f64>, points: Vec<Vec2>) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::Config(
                "path needs matching, nonempty breakpoints".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("path breakpoints must increase".into()));
        }
        Ok(Self { times, points })
    }

    pub fn constant(p: Vec2) -> Self {
        Self {
            times: vec![0.0],
            points: vec![p],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Evaluates the path; constant extrapolation outside the breakpoints.
    pub fn eval(&self, t: f64) -> Vec2 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.points[0];
        }
        if t >= self.times[n - 1] {
            return self.points[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.points[k].lerp(self.points[k + 1], s)
    }

    /// `∫ |X'(t)|² dt` over the breakpoint range.
    pub fn kinetic_integral(&self) -> f64 {
        ksum(
            self.times
                .windows(2)
                .zip(self.points.windows(2))
                .map(|(t, p)| (p[1] - p[0]).norm_sq() / (t[1] - t[0])),
        )
    }
}

impl PolygonalFlow {
    /// Builds a flow from nodes and index-based edges. Structural checks that
    /// make the flow unusable (dangling indices, duplicate ids, non-finite
    /// values) are errors; admissibility is left to [`validate_flow`].
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, eps: f64, rooted: bool) -> Result<Self> {
        let mut seen = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !n.pos.is_finite() || !n.t.is_finite() {
                return Err(Error::InvalidFlow(format!(
                    "node {} has non-finite data",
                    n.id
                )));
            }
            if n.t < 0.0 {
                return Err(Error::InvalidFlow(format!(
                    "node {} has negative time",
                    n.id
                )));
            }
            if seen.insert(n.id, i).is_some() {
                return Err(Error::InvalidFlow(format!("duplicate node id {}", n.id)));
            }
        }
        for e in &edges {
            if e.tail >= nodes.len() || e.head >= nodes.len() {
                return Err(Error::InvalidFlow("edge references a missing node".into()));
            }
            if !e.flux.is_finite() {
                return Err(Error::InvalidFlow("non-finite flux".into()));
            }
        }
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::InvalidFlow(format!("bad leaf radius {eps}")));
        }
        Ok(Self {
            nodes,
            edges,
            eps,
            rooted,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[cfg(test)]
    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    #[cfg(test)]
    pub(crate) fn edges_mut(&mut self) -> &mut [Edge] {
        &mut self.edges
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn index_of(&self, id: NodeId) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn next_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> Adjacency {
        let mut incoming = vec![Vec::new(); self.nodes.len()];
        let mut outgoing = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            outgoing[e.tail].push(k);
            incoming[e.head].push(k);
        }
        Adjacency { incoming, outgoing }
    }

    pub fn start_time(&self) -> f64 {
        self.nodes.iter().map(|n| n.t).fold(f64::INFINITY, f64::min)
    }

    /// Time of the final node(s).
    pub fn horizon(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.t)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn edge_duration(&self, k: usize) -> f64 {
        let e = &self.edges[k];
        self.nodes[e.head].t - self.nodes[e.tail].t
    }

    pub fn edge_displacement(&self, k: usize) -> Vec2 {
        let e = &self.edges[k];
        self.nodes[e.head].pos - self.nodes[e.tail].pos
    }

    /// Velocity `Ẋ` along edge `k`.
    pub fn edge_velocity(&self, k: usize) -> Vec2 {
        self.edge_displacement(k) / self.edge_duration(k)
    }

    /// Node indices with no incoming edge but at least one outgoing edge.
    pub fn sources(&self) -> Vec<usize> {
        let adj = self.adjacency();
        (0..self.nodes.len())
            .filter(|&i| adj.incoming[i].is_empty() && !adj.outgoing[i].is_empty())
            .collect()
    }

    /// Node indices with incoming but no outgoing edges.
    pub fn sinks(&self) -> Vec<usize> {
        let adj = self.adjacency();
        (0..self.nodes.len())
            .filter(|&i| adj.outgoing[i].is_empty() && !adj.incoming[i].is_empty())
            .collect()
    }

    /// Total mass Φ, read off the source outflows.
    pub fn total_mass(&self) -> f64 {
        let adj = self.adjacency();
        ksum(
            (0..self.nodes.len())
                .filter(|&i| adj.incoming[i].is_empty())
                .flat_map(|i| adj.outgoing[i].iter().map(|&k| self.edges[k].flux)),
        )
    }

    /// The unique sink of a rooted flow.
    pub fn root(&self) -> Result<usize> {
        let s = self.sinks();
        if s.len() == 1 {
            Ok(s[0])
        } else {
            Err(Error::NotRooted(format!("{} sinks", s.len())))
        }
    }

    pub fn scene_diameter(&self) -> f64 {
        scene_diameter(self.nodes.iter().map(|n| n.pos))
    }

    /// Distinct node times in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.nodes.iter().map(|n| n.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// The irrigated measure: sources as disks of radius `eps`.
    pub fn boundary_measure(&self) -> Result<AtomicMeasure> {
        self.slice(self.start_time())
    }

    /// `μ_t`: one atom per edge alive at `t`, positions affinely interpolated,
    /// coincident atoms merged. Atoms at the start time carry radius `eps`.
    pub fn slice(&self, t: f64) -> Result<AtomicMeasure> {
        let (start, end) = (self.start_time(), self.horizon());
        if !(t >= start && t <= end) {
            return Err(Error::TimeOutOfRange { t, start, end });
        }
        let radius = if t == start { self.eps } else { 0.0 };
        let at_end = t == end;
        let atoms: Vec<Atom> = self
            .edges
            .iter()
            .filter_map(|e| {
                let (a, b) = (&self.nodes[e.tail], &self.nodes[e.head]);
                let alive = if at_end {
                    a.t < t && t <= b.t
                } else {
                    a.t <= t && t < b.t
                };
                alive.then(|| {
                    let s = (t - a.t) / (b.t - a.t);
                    Atom::new(a.pos.lerp(b.pos, s), e.flux, radius)
                })
            })
            .collect();
        AtomicMeasure::new(atoms)
    }

    /// Per-edge flux shares of the subsystem through `node` (proportional
    /// routing at splits and merges; exact for merge-only trees).
    pub fn subsystem_shares(&self, node: usize, dir: Direction) -> Vec<f64> {
        let adj = self.adjacency();
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].t.total_cmp(&self.nodes[b].t));
        let outflow: Vec<f64> = (0..self.nodes.len())
            .map(|i| ksum(adj.outgoing[i].iter().map(|&k| self.edges[k].flux)))
            .collect();
        let mut share = vec![0.0; self.edges.len()];
        match dir {
            Direction::Backward => {
                // fraction of each edge's flux that ends up at `node`
                let mut frac = vec![0.0; self.edges.len()];
                for &k in &adj.incoming[node] {
                    frac[k] = 1.0;
                }
                for &v in order.iter().rev() {
                    if v == node || self.nodes[v].t >= self.nodes[node].t {
                        continue;
                    }
                    if outflow[v] <= 0.0 {
                        continue;
                    }
                    let f = ksum(
                        adj.outgoing[v]
                            .iter()
                            .map(|&k| self.edges[k].flux * frac[k]),
                    ) / outflow[v];
                    for &k in &adj.incoming[v] {
                        frac[k] = f;
                    }
                }
                for k in 0..self.edges.len() {
                    share[k] = if frac[k] == 1.0 {
                        self.edges[k].flux
                    } else {
                        self.edges[k].flux * frac[k]
                    };
                }
            }
            Direction::Forward => {
                let mut inflow = vec![0.0; self.nodes.len()];
                inflow[node] = outflow[node];
                for &v in &order {
                    if self.nodes[v].t < self.nodes[node].t || inflow[v] <= 0.0 || outflow[v] <= 0.0
                    {
                        continue;
                    }
                    let ratio = inflow[v] / outflow[v];
                    for &k in &adj.outgoing[v] {
                        share[k] = if ratio == 1.0 {
                            self.edges[k].flux
                        } else {
                            self.edges[k].flux * ratio
                        };
                        inflow[self.edges[k].head] += share[k];
                    }
                }
            }
        }
        share
    }

    /// The backward (resp. forward) subsystem through the node with id `id`.
    pub fn extract_subsystem(&self, id: NodeId, dir: Direction) -> Result<PolygonalFlow> {
        let node = self.index_of(id)?;
        let share = self.subsystem_shares(node, dir);
        let keep: Vec<usize> = (0..self.edges.len()).filter(|&k| share[k] > 0.0).collect();
        let mut used = vec![false; self.nodes.len()];
        used[node] = true;
        for &k in &keep {
            used[self.edges[k].tail] = true;
            used[self.edges[k].head] = true;
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for i in 0..self.nodes.len() {
            if used[i] {
                remap[i] = nodes.len();
                nodes.push(self.nodes[i]);
            }
        }
        let edges = keep
            .iter()
            .map(|&k| Edge {
                tail: remap[self.edges[k].tail],
                head: remap[self.edges[k].head],
                flux: share[k],
            })
            .collect();
        let rooted = match dir {
            Direction::Backward => true,
            Direction::Forward => self.rooted,
        };
        PolygonalFlow::new(nodes, edges, self.eps, rooted)
    }

    /// Splits every edge at each of `times` falling strictly inside it.
    pub fn refine_at(&self, times: &[f64]) -> PolygonalFlow {
        let mut ts: Vec<f64> = times.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut nodes = self.nodes.clone();
        let mut edges = Vec::with_capacity(self.edges.len());
        let mut next = self.next_id();
        for e in &self.edges {
            let (a, b) = (self.nodes[e.tail], self.nodes[e.head]);
            let lo = ts.partition_point(|&s| s <= a.t);
            let hi = ts.partition_point(|&s| s < b.t);
            let mut prev = e.tail;
            for &s in &ts[lo..hi] {
                let idx = nodes.len();
                nodes.push(Node {
                    id: next,
                    pos: a.pos.lerp(b.pos, (s - a.t) / (b.t - a.t)),
                    t: s,
                });
                next += 1;
                edges.push(Edge {
                    tail: prev,
                    head: idx,
                    flux: e.flux,
                });
                prev = idx;
            }
            edges.push(Edge {
                tail: prev,
                head: e.head,
                flux: e.flux,
            });
        }
        PolygonalFlow {
            nodes,
            edges,
            eps: self.eps,
            rooted: self.rooted,
        }
    }

    /// Barycenter path of the slices, evaluated at every node time.
    pub fn barycenter_path(&self) -> Result<PiecewiseAffinePath> {
        let ts = self.breakpoints();
        if self.edges.is_empty() {
            let p = self.nodes.first().map(|n| n.pos).unwrap_or(Vec2::ZERO);
            return Ok(PiecewiseAffinePath::constant(p));
        }
        let mut points = Vec::with_capacity(ts.len());
        for &t in &ts {
            points.push(self.slice(t)?.barycenter()?);
        }
        PiecewiseAffinePath::new(ts, points)
    }

    /// Galilean shift: the flow seen from its barycenter, plus the path.
    /// The returned flow is refined at all node times so each edge stays straight.
    pub fn barycenter_shift(&self) -> Result<(PolygonalFlow, PiecewiseAffinePath)> {
        let path = self.barycenter_path()?;
        let mut shifted = self.refine_at(path.times());
        for n in &mut shifted.nodes {
            n.pos -= path.eval(n.t);
        }
        Ok((shifted, path))
    }

    /// Maps every node to `c(t) + factor (x − c(t))`. The center defaults to
    /// the barycenter path; the flow is refined at the center's breakpoints.
    pub fn shrink(
        &self,
        factor: f64,
        center: Option<&PiecewiseAffinePath>,
    ) -> Result<PolygonalFlow> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidFactor(factor));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let owned;
        let center = match center {
            Some(c) => c,
            None => {
                owned = self.barycenter_path()?;
                &owned
            }
        };
        let mut out = self.refine_at(center.times());
        for n in &mut out.nodes {
            let c = center.eval(n.t);
            n.pos = c + (n.pos - c) * factor;
        }
        Ok(out)
    }

    /// Spatial dilation `x ↦ s x` (leaf radius scales too).
    pub fn dilate_space(&self, s: f64) -> PolygonalFlow {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.pos = n.pos * s;
        }
        out.eps *= s;
        out
    }

    /// Temporal dilation `t ↦ λ t`.
    pub fn dilate_time(&self, lambda: f64) -> PolygonalFlow {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.t *= lambda;
        }
        out
    }

    pub fn translate(&self, v: Vec2) -> PolygonalFlow {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.pos += v;
        }
        out
    }

    /// Removes pass-through nodes whose two edges have the same velocity
    /// (within `rel_tol` of the scene scale); the flow's geometry is unchanged.
    pub fn simplify(&self, rel_tol: f64) -> PolygonalFlow {
        let mut flow = self.clone();
        let scale = flow.scene_diameter().max(1e-300);
        loop {
            let adj = flow.adjacency();
            let victim = (0..flow.nodes.len()).find(|&i| {
                if adj.incoming[i].len() != 1 || adj.outgoing[i].len() != 1 {
                    return false;
                }
                let (a, b) = (adj.incoming[i][0], adj.outgoing[i][0]);
                (flow.edges[a].flux - flow.edges[b].flux).abs()
                    <= KIRCHHOFF_TOL * flow.edges[a].flux
                    && (flow.edge_velocity(a) - flow.edge_velocity(b)).norm()
                        * flow.horizon().max(1e-300)
                        <= rel_tol * scale
            });
            let Some(i) = victim else { break };
            let (a, b) = (adj.incoming[i][0], adj.outgoing[i][0]);
            flow.edges[a].head = flow.edges[b].head;
            flow.edges.remove(b);
            flow.remove_node(i);
        }
        flow
    }

    /// Removes an isolated node index, fixing edge references.
    pub(crate) fn remove_node(&mut self, i: usize) {
        self.nodes.remove(i);
        for e in &mut self.edges {
            debug_assert!(e.tail != i && e.head != i);
            if e.tail > i {
                e.tail -= 1;
            }
            if e.head > i {
                e.head -= 1;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FlowFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: FlowFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// Checks time order, Kirchhoff balance, absence of undirected cycles, mass
/// conservation (sources at the start, sinks at the horizon, positive fluxes)
/// and, for rooted flows, a single sink.
pub fn validate_flow(flow: &PolygonalFlow) -> ValidationReport {
    let mut v = Vec::new();
    let nodes = flow.nodes();
    let edges = flow.edges();
    for (k, e) in edges.iter().enumerate() {
        let dt = nodes[e.head].t - nodes[e.tail].t;
        if !(dt > 0.0) {
            v.push(Violation {
                kind: ViolationKind::TimeOrder,
                nodes: vec![nodes[e.tail].id, nodes[e.head].id],
                edges: vec![k],
                magnitude: -dt,
            });
        }
        if !(e.flux > 0.0) {
            v.push(Violation {
                kind: ViolationKind::Mass,
                nodes: vec![],
                edges: vec![k],
                magnitude: e.flux,
            });
        }
    }
    let adj = flow.adjacency();
    let (start, end) = (flow.start_time(), flow.horizon());
    for i in 0..nodes.len() {
        let fin = ksum(adj.incoming[i].iter().map(|&k| edges[k].flux));
        let fout = ksum(adj.outgoing[i].iter().map(|&k| edges[k].flux));
        let (has_in, has_out) = (!adj.incoming[i].is_empty(), !adj.outgoing[i].is_empty());
        if has_in && has_out {
            let gap = (fin - fout).abs();
            if gap > KIRCHHOFF_TOL * fin.max(fout).max(1.0) {
                v.push(Violation {
                    kind: ViolationKind::Kirchhoff,
                    nodes: vec![nodes[i].id],
                    edges: adj.incoming[i]
                        .iter()
                        .chain(&adj.outgoing[i])
                        .copied()
                        .collect(),
                    magnitude: gap,
                });
            }
        } else if has_out && nodes[i].t != start {
            v.push(Violation {
                kind: ViolationKind::Mass,
                nodes: vec![nodes[i].id],
                edges: adj.outgoing[i].clone(),
                magnitude: fout,
            });
        } else if has_in && nodes[i].t != end {
            v.push(Violation {
                kind: ViolationKind::Mass,
                nodes: vec![nodes[i].id],
                edges: adj.incoming[i].clone(),
                magnitude: fin,
            });
        } else if !has_in && !has_out && !edges.is_empty() {
            v.push(Violation {
                kind: ViolationKind::Mass,
                nodes: vec![nodes[i].id],
                edges: vec![],
                magnitude: 0.0,
            });
        }
    }
    // undirected cycles (parallel edges included)
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (k, e) in edges.iter().enumerate() {
        let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
        if a == b {
            v.push(Violation {
                kind: ViolationKind::Cycle,
                nodes: vec![nodes[e.tail].id, nodes[e.head].id],
                edges: vec![k],
                magnitude: e.flux,
            });
        } else {
            parent[a] = b;
        }
    }
    if flow.rooted && !edges.is_empty() {
        let sinks = flow.sinks();
        if sinks.len() != 1 {
            v.push(Violation {
                kind: ViolationKind::Root,
                nodes: sinks.iter().map(|&i| nodes[i].id).collect(),
                edges: vec![],
                magnitude: sinks.len() as f64,
            });
        }
    }
    ValidationReport {
        ok: v.is_empty(),
        violations: v,
    }
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    x: [f64; 2],
    t: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    tail: NodeId,
    head: NodeId,
    flux: f64,
}

#[derive(Serialize, Deserialize)]
struct FlowFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    eps: f64,
    rooted: bool,
}

impl From<&PolygonalFlow> for FlowFile {
    fn from(f: &PolygonalFlow) -> Self {
        FlowFile {
            nodes: f
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    x: n.pos.into(),
                    t: n.t,
                })
                .collect(),
            edges: f
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    tail: f.nodes[e.tail].id,
                    head: f.nodes[e.head].id,
                    flux: e.flux,
                })
                .collect(),
            eps: f.eps,
            rooted: f.rooted,
        }
    }
}

impl TryFrom<FlowFile> for PolygonalFlow {
    type Error = Error;
    fn try_from(file: FlowFile) -> Result<Self> {
        let mut index = HashMap::with_capacity(file.nodes.len());
        let nodes: Vec<Node> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                index.insert(n.id, i);
                Node {
                    id: n.id,
                    pos: n.x.into(),
                    t: n.t,
                }
            })
            .collect();
        let edges = file
            .edges
            .iter()
            .map(|e| {
                let tail = *index.get(&e.tail).ok_or(Error::UnknownNode(e.tail))?;
                let head = *index.get(&e.head).ok_or(Error::UnknownNode(e.head))?;
                Ok(Edge {
                    tail,
                    head,
                    flux: e.flux,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PolygonalFlow::new(nodes, edges, file.eps, file.rooted)
    }
}

/// Small hand-built flows used throughout the tests and examples.
pub mod samples {
    use super::*;

    fn n(id: NodeId, x: f64, y: f64, t: f64) -> Node {
        Node {
            id,
            pos: Vec2::new(x, y),
            t,
        }
    }

    /// A single static atom of mass `mass` at `pos` over `[0, horizon]`.
    pub fn static_atom(pos: Vec2, mass: f64, horizon: f64, eps: f64) -> PolygonalFlow {
        PolygonalFlow::new(
            vec![n(0, pos.x, pos.y, 0.0), n(1, pos.x, pos.y, horizon)],
            vec![Edge {
                tail: 0,
                head: 1,
                flux: mass,
            }],
            eps,
            true,
        )
        .unwrap()
    }

    /// A single atom moving straight from `from` (t = 0) to `to` (t = horizon).
    pub fn straight(from: Vec2, to: Vec2, mass: f64, horizon: f64, eps: f64) -> PolygonalFlow {
        PolygonalFlow::new(
            vec![n(0, from.x, from.y, 0.0), n(1, to.x, to.y, horizon)],
            vec![Edge {
                tail: 0,
                head: 1,
                flux: mass,
            }],
            eps,
            true,
        )
        .unwrap()
    }

    /// Leaves at `(±d, 0)` with masses `m_left`, `m_right` merging at `merge`
    /// at time `tau`, then static to `horizon` (no static stem if `tau == horizon`).
    pub fn v_flow_general(
        d: f64,
        m_left: f64,
        m_right: f64,
        merge: Vec2,
        tau: f64,
        horizon: f64,
        eps: f64,
    ) -> PolygonalFlow {
        let mut nodes = vec![
            n(0, -d, 0.0, 0.0),
            n(1, d, 0.0, 0.0),
            n(2, merge.x, merge.y, tau),
        ];
        let mut edges = vec![
            Edge {
                tail: 0,
                head: 2,
                flux: m_left,
            },
            Edge {
                tail: 1,
                head: 2,
                flux: m_right,
            },
        ];
        if horizon > tau {
            nodes.push(n(3, merge.x, merge.y, horizon));
            edges.push(Edge {
                tail: 2,
                head: 3,
                flux: m_left + m_right,
            });
        }
        PolygonalFlow::new(nodes, edges, eps, true).unwrap()
    }

    /// Symmetric V: leaves `(±d, 0)` of mass ½ merging at the origin at `tau`.
    pub fn v_flow(d: f64, tau: f64, horizon: f64, eps: f64) -> PolygonalFlow {
        v_flow_general(d, 0.5, 0.5, Vec2::ZERO, tau, horizon, eps)
    }

    /// Three leaves: `a`, `b` merge at `m1` at `t1`; with `c` at `m2` at `t2`;
    /// static to `horizon`.
    #[allow(clippy::too_many_arguments)]
    pub fn y_flow(
        a: (Vec2, f64),
        b: (Vec2, f64),
        c: (Vec2, f64),
        m1: Vec2,
        t1: f64,
        m2: Vec2,
        t2: f64,
        horizon: f64,
        eps: f64,
    ) -> PolygonalFlow {
        let nodes = vec![
            n(0, a.0.x, a.0.y, 0.0),
            n(1, b.0.x, b.0.y, 0.0),
            n(2, c.0.x, c.0.y, 0.0),
            n(3, m1.x, m1.y, t1),
            n(4, m2.x, m2.y, t2),
            n(5, m2.x, m2.y, horizon),
        ];
        let edges = vec![
            Edge {
                tail: 0,
                head: 3,
                flux: a.1,
            },
            Edge {
                tail: 1,
                head: 3,
                flux: b.1,
            },
            Edge {
                tail: 3,
                head: 4,
                flux: a.1 + b.1,
            },
            Edge {
                tail: 2,
                head: 4,
                flux: c.1,
            },
            Edge {
                tail: 4,
                head: 5,
                flux: a.1 + b.1 + c.1,
            },
        ];
        PolygonalFlow::new(nodes, edges, eps, true).unwrap()
    }
}
