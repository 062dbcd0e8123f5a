//! Rooted in-trees: every node has at most one outgoing edge, so edges are
//! indexed by their tail node and fluxes are sums of upstream leaf weights.

use crate::error::{Error, Result};
use crate::flow::{validate_flow, Edge, Node, NodeId, PolygonalFlow};
use crate::geom::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub ids: Vec<NodeId>,
    pub pos: Vec<Vec2>,
    pub t: Vec<f64>,
    /// Downstream neighbor; `None` only at the root.
    pub next: Vec<Option<usize>>,
    /// Leaf weights (zero at non-leaves).
    pub weight: Vec<f64>,
    pub eps: f64,
}

impl Tree {
    pub fn from_flow(flow: &PolygonalFlow) -> Result<Tree> {
        let report = validate_flow(flow);
        if !report.ok {
            let first = &report.violations[0];
            return Err(Error::InvalidFlow(format!(
                "{} violations, first: {:?}",
                report.violations.len(),
                first
            )));
        }
        if !flow.rooted {
            return Err(Error::NotRooted("flow is not flagged as rooted".into()));
        }
        let adj = flow.adjacency();
        let n = flow.nodes().len();
        let mut next = vec![None; n];
        let mut weight = vec![0.0; n];
        for v in 0..n {
            match adj.outgoing[v].len() {
                0 => {}
                1 => next[v] = Some(flow.edges()[adj.outgoing[v][0]].head),
                _ => {
                    return Err(Error::NotRooted(format!(
                        "node {} splits forward",
                        flow.node(v).id
                    )))
                }
            }
            if adj.incoming[v].is_empty() {
                if let Some(&k) = adj.outgoing[v].first() {
                    weight[v] = flow.edges()[k].flux;
                }
            }
        }
        let tree = Tree {
            ids: flow.nodes().iter().map(|n| n.id).collect(),
            pos: flow.nodes().iter().map(|n| n.pos).collect(),
            t: flow.nodes().iter().map(|n| n.t).collect(),
            next,
            weight,
            eps: flow.eps,
        };
        if tree.next.iter().filter(|x| x.is_none()).count() != 1 {
            return Err(Error::NotRooted("isolated nodes".into()));
        }
        Ok(tree)
    }

    pub fn to_flow(&self) -> Result<PolygonalFlow> {
        let mass = self.masses();
        let nodes = (0..self.len())
            .map(|v| Node {
                id: self.ids[v],
                pos: self.pos[v],
                t: self.t[v],
            })
            .collect();
        let edges = (0..self.len())
            .filter_map(|v| {
                self.next[v].map(|u| Edge {
                    tail: v,
                    head: u,
                    flux: mass[v],
                })
            })
            .collect();
        PolygonalFlow::new(nodes, edges, self.eps, true)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn root(&self) -> usize {
        self.next
            .iter()
            .position(|x| x.is_none())
            .expect("tree has a root")
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for v in 0..self.len() {
            if let Some(u) = self.next[v] {
                ch[u].push(v);
            }
        }
        ch
    }

    pub fn leaves(&self) -> Vec<usize> {
        let ch = self.children();
        (0..self.len())
            .filter(|&v| ch[v].is_empty() && self.next[v].is_some())
            .collect()
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.next[v].is_some() && !self.next.iter().any(|&u| u == Some(v))
    }

    /// Node indices by increasing time (a topological order).
    pub fn order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.len()).collect();
        o.sort_by(|&a, &b| self.t[a].total_cmp(&self.t[b]).then(a.cmp(&b)));
        o
    }

    /// Flux of the edge leaving each node (total mass at the root).
    pub fn masses(&self) -> Vec<f64> {
        let mut m = self.weight.clone();
        for v in self.order() {
            if let Some(u) = self.next[v] {
                m[u] += m[v];
            }
        }
        m
    }

    pub fn total_mass(&self) -> f64 {
        self.leaves().iter().map(|&l| self.weight[l]).sum()
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.root()]
    }

    pub fn start_time(&self) -> f64 {
        self.t.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Nodes on the path from `v` to the root, `v` first.
    pub fn path(&self, v: usize) -> Vec<usize> {
        let mut p = vec![v];
        let mut x = v;
        while let Some(u) = self.next[x] {
            p.push(u);
            x = u;
        }
        p
    }

    pub fn next_id(&self) -> NodeId {
        self.ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn add_node(&mut self, pos: Vec2, t: f64, next: Option<usize>) -> usize {
        let id = self.next_id();
        self.ids.push(id);
        self.pos.push(pos);
        self.t.push(t);
        self.next.push(next);
        self.weight.push(0.0);
        self.len() - 1
    }

    /// Removes the marked nodes; links from survivors must not point at them.
    pub fn remove_nodes(&mut self, dead: &[bool]) {
        let mut remap = vec![usize::MAX; self.len()];
        let mut k = 0;
        for v in 0..self.len() {
            if !dead[v] {
                remap[v] = k;
                k += 1;
            }
        }
        let keep = |v: usize| !dead[v];
        let mut out = Tree {
            ids: vec![],
            pos: vec![],
            t: vec![],
            next: vec![],
            weight: vec![],
            eps: self.eps,
        };
        for v in (0..self.len()).filter(|&v| keep(v)) {
            out.ids.push(self.ids[v]);
            out.pos.push(self.pos[v]);
            out.t.push(self.t[v]);
            out.next.push(self.next[v].map(|u| {
                debug_assert!(!dead[u]);
                remap[u]
            }));
            out.weight.push(self.weight[v]);
        }
        *self = out;
    }

    /// Drops pass-through nodes whose two edges have equal velocity.
    pub fn simplify(&mut self, tol: f64) {
        loop {
            let ch = self.children();
            let victim = (0..self.len()).find(|&v| {
                let Some(u) = self.next[v] else { return false };
                if ch[v].len() != 1 {
                    return false;
                }
                let p = ch[v][0];
                let v1 = (self.pos[v] - self.pos[p]) / (self.t[v] - self.t[p]);
                let v2 = (self.pos[u] - self.pos[v]) / (self.t[u] - self.t[v]);
                (v1 - v2).norm() <= tol
            });
            let Some(v) = victim else { break };
            let p = self.children()[v][0];
            self.next[p] = self.next[v];
            let mut dead = vec![false; self.len()];
            dead[v] = true;
            self.remove_nodes(&dead);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::samples;

    #[test]
    fn round_trip_and_masses() {
        let f = samples::y_flow(
            (Vec2::new(-1.0, 0.0), 0.25),
            (Vec2::new(-0.5, 1.0), 0.25),
            (Vec2::new(1.0, 0.0), 0.5),
            Vec2::new(-0.5, 0.3),
            0.5,
            Vec2::new(0.0, 0.1),
            1.0,
            2.0,
            0.05,
        );
        let tree = Tree::from_flow(&f).unwrap();
        assert_eq!(tree.leaves().len(), 3);
        let m = tree.masses();
        assert!((m[tree.root()] - 1.0).abs() < 1e-15);
        let back = tree.to_flow().unwrap();
        assert_eq!(back.nodes(), f.nodes());
        let key = |e: &Edge| (e.tail, e.head);
        let (mut a, mut b) = (back.edges().to_vec(), f.edges().to_vec());
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unrooted() {
        let mut f = samples::v_flow(1.0, 1.0, 2.0, 0.05);
        f.rooted = false;
        assert!(Tree::from_flow(&f).is_err());
    }

    #[test]
    fn simplify_drops_collinear_nodes() {
        let f = samples::v_flow(1.0, 1.0, 2.0, 0.05);
        let mut tree = Tree::from_flow(&f).unwrap();
        let r = tree.root();
        let mid = tree.add_node(Vec2::ZERO, 1.5, Some(r));
        // reroute the stem through the new node
        let merge = (0..tree.len())
            .find(|&v| tree.next[v] == Some(r) && v != mid)
            .unwrap();
        tree.next[merge] = Some(mid);
        assert_eq!(tree.len(), 5);
        tree.simplify(1e-12);
        assert_eq!(tree.len(), 4);
    }
}
