//! Local topology moves alternated with fixed-topology descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::flow::PolygonalFlow;
use crate::geom::Vec2;

use super::tree::Tree;
use super::{descend, Constraints, OptimizerConfig, Trace, WEIGHT_FLOOR_FRACTION};

/// Minimum decrease of `𝓔` for a move to be accepted.
pub const ACCEPT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Coalesce,
    Prune,
    Split,
    Reparent,
}

impl Move {
    pub fn tag(self) -> &'static str {
        match self {
            Move::Coalesce => "coalesce",
            Move::Prune => "prune",
            Move::Split => "split",
            Move::Reparent => "reparent",
        }
    }
}

/// Removes leaf `l` and the pass-through chain carrying only its mass. A
/// binary junction left with one branch is spliced out unless it is the stem.
/// Returns the tree and the lowest node of the path the chain was attached to.
fn detach_leaf(tree: &Tree, l: usize) -> Option<(Tree, usize)> {
    let children = tree.children();
    let root = tree.root();
    let mut dead = vec![false; tree.len()];
    let mut v = l;
    loop {
        dead[v] = true;
        let u = tree.next[v]?;
        if children[u].len() > 1 || tree.next[u].is_none() {
            let mut out = tree.clone();
            let mut below = u;
            if children[u].len() == 2 && tree.next[u].is_some_and(|w| w != root) {
                let other = children[u].iter().copied().find(|&c| c != v).unwrap();
                out.next[other] = tree.next[u];
                dead[u] = true;
                below = other;
            }
            out.remove_nodes(&dead);
            let shift = dead[..below].iter().filter(|&&d| d).count();
            return Some((out, below - shift));
        }
        v = u;
    }
}

/// Contracts edges closer than `tol` in space-time, removes pass-through
/// nodes below the stem, and merges leaves closer than `tol`.
pub(crate) fn coalesce_moves(tree: &Tree, tol: f64) -> Vec<Tree> {
    let mut out = Vec::new();
    let root = tree.root();
    let children = tree.children();
    for v in 0..tree.len() {
        let Some(u) = tree.next[v] else { continue };
        if children[v].is_empty() || u == root {
            continue;
        }
        let d = ((tree.pos[u] - tree.pos[v]).norm_sq() + (tree.t[u] - tree.t[v]).powi(2)).sqrt();
        if d < tol || children[v].len() == 1 {
            let mut t = tree.clone();
            for &c in &children[v] {
                t.next[c] = Some(u);
            }
            let mut dead = vec![false; t.len()];
            dead[v] = true;
            t.remove_nodes(&dead);
            out.push(t);
        }
    }
    let leaves = tree.leaves();
    for (i, &a) in leaves.iter().enumerate() {
        for &b in &leaves[i + 1..] {
            if tree.pos[a].dist(tree.pos[b]) < tol {
                if let Some((mut t, _)) = detach_leaf(tree, b) {
                    let a2 = t.ids.iter().position(|&id| id == tree.ids[a]).unwrap();
                    t.weight[a2] += tree.weight[b];
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Drops leaves whose weight sits at the simplex floor, moving the weight to
/// the nearest remaining leaf.
pub(crate) fn prune_moves(tree: &Tree) -> Vec<Tree> {
    let leaves = tree.leaves();
    if leaves.len() < 2 {
        return Vec::new();
    }
    let phi = tree.total_mass();
    let mut out = Vec::new();
    for &l in &leaves {
        if tree.weight[l] > 10.0 * WEIGHT_FLOOR_FRACTION * phi {
            continue;
        }
        let Some((mut t, _)) = detach_leaf(tree, l) else {
            continue;
        };
        let survivors = t.leaves();
        let near = survivors
            .iter()
            .copied()
            .min_by(|&a, &b| {
                t.pos[a]
                    .dist(tree.pos[l])
                    .total_cmp(&t.pos[b].dist(tree.pos[l]))
            })
            .unwrap();
        t.weight[near] += tree.weight[l];
        out.push(t);
    }
    out
}

fn position_at(tree: &Tree, v: usize, t: f64) -> Vec2 {
    let u = tree.next[v].unwrap();
    tree.pos[v].lerp(tree.pos[u], (t - tree.t[v]) / (tree.t[u] - tree.t[v]))
}

/// Stages a merge of three or more branches: a pair merges first.
pub(crate) fn split_moves(tree: &Tree) -> Vec<Tree> {
    let children = tree.children();
    let m = tree.masses();
    let mut out = Vec::new();
    for v in 0..tree.len() {
        let ch = &children[v];
        if ch.len() < 3 {
            continue;
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..ch.len() {
            for j in i + 1..ch.len() {
                pairs.push((tree.pos[ch[i]].dist(tree.pos[ch[j]]), ch[i], ch[j]));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if ch.len() > 4 {
            pairs.truncate(3);
        }
        for &(_, a, b) in &pairs {
            let tn = 0.5 * (tree.t[a].max(tree.t[b]) + tree.t[v]);
            let (pa, pb) = (position_at(tree, a, tn), position_at(tree, b, tn));
            let pos = (pa * m[a] + pb * m[b]) / (m[a] + m[b]);
            let mut t = tree.clone();
            let n = t.add_node(pos, tn, Some(v));
            t.next[a] = Some(n);
            t.next[b] = Some(n);
            out.push(t);
        }
    }
    out
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let l2 = ab.norm_sq();
    let s = if l2 > 0.0 {
        ((p - a).dot(ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.dist(a.lerp(b, s)), s)
}

/// Moves leaf `l` (with its private chain) onto the nearest branch that is
/// not downstream of its current junction.
pub(crate) fn reparent_move(tree: &Tree, l: usize) -> Option<Tree> {
    let (mut t, j) = detach_leaf(tree, l)?;
    let ancestors = t.path(j);
    let mut best: Option<(f64, usize, f64)> = None;
    for v in 0..t.len() {
        let Some(u) = t.next[v] else { continue };
        if ancestors.contains(&v) {
            continue;
        }
        let (d, s) = segment_distance(tree.pos[l], t.pos[v], t.pos[u]);
        if best.map_or(true, |b| d < b.0) {
            best = Some((d, v, s));
        }
    }
    let (_, v, s) = best?;
    let u = t.next[v].unwrap();
    let s = s.clamp(0.25, 0.75);
    let tn = t.t[v] + s * (t.t[u] - t.t[v]);
    let pos = t.pos[v].lerp(t.pos[u], s);
    let n = t.add_node(pos, tn, Some(u));
    t.ids[n] = tree.next_id();
    t.next[v] = Some(n);
    let leaf = t.add_node(tree.pos[l], tree.t[l], Some(n));
    t.ids[leaf] = tree.ids[l];
    t.weight[leaf] = tree.weight[l];
    Some(t)
}

fn edge_count(t: &Tree) -> usize {
    t.len() - 1
}

/// Alternates descent with local moves. Candidates are screened with a short
/// descent; a move is kept only if it lowers `𝓔` by more than [`ACCEPT_TOL`].
pub fn topology_search(
    flow: &PolygonalFlow,
    cfg: &OptimizerConfig,
    constraints: &Constraints,
) -> Result<(PolygonalFlow, Trace)> {
    let mut tree = Tree::from_flow(flow)?;
    cfg.check(tree.eps)?;
    let mut trace = Trace::default();
    let (converged, _) = search_tree(&mut tree, cfg, constraints, &mut trace);
    trace.converged = converged;
    Ok((tree.to_flow()?, trace))
}

pub(crate) fn search_tree(
    tree: &mut Tree,
    cfg: &OptimizerConfig,
    c: &Constraints,
    trace: &mut Trace,
) -> (bool, usize) {
    let (mut converged, mut iters) = descend(tree, cfg, c, cfg.max_iters, trace, "init");
    if !cfg.topology_moves {
        return (converged, iters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut energy = trace.final_energy().unwrap_or(f64::INFINITY);
    for _ in 0..cfg.max_rounds {
        let mut candidates: Vec<(Move, Tree)> = Vec::new();
        candidates.extend(
            coalesce_moves(tree, cfg.merge_tol)
                .into_iter()
                .map(|t| (Move::Coalesce, t)),
        );
        if !c.fix_boundary {
            candidates.extend(prune_moves(tree).into_iter().map(|t| (Move::Prune, t)));
        }
        candidates.extend(split_moves(tree).into_iter().map(|t| (Move::Split, t)));
        let mut leaves = tree.leaves();
        leaves.shuffle(&mut rng);
        for &l in leaves.iter().take(cfg.moves_per_round) {
            if let Some(t) = reparent_move(tree, l) {
                candidates.push((Move::Reparent, t));
            }
        }
        let screen = (cfg.max_iters / 10).clamp(50, 500);
        let screened: Vec<(f64, Move, Tree)> = candidates
            .into_par_iter()
            .map(|(mv, mut cand)| {
                cand.simplify(1e-12);
                let mut scratch = Trace::default();
                descend(&mut cand, cfg, c, screen, &mut scratch, mv.tag());
                let e = scratch.final_energy().unwrap_or(f64::INFINITY);
                (e, mv, cand)
            })
            .collect();
        let mut best: Option<(f64, Move, Tree)> = None;
        for (e, mv, cand) in screened {
            if !(e < energy - ACCEPT_TOL) {
                continue;
            }
            let better = match &best {
                None => true,
                Some((eb, _, tb)) => {
                    e < eb - ACCEPT_TOL
                        || ((e - eb).abs() <= ACCEPT_TOL && edge_count(&cand) < edge_count(tb))
                }
            };
            if better {
                best = Some((e, mv, cand));
            }
        }
        let Some((_, mv, mut t)) = best else {
            break;
        };
        let mut scratch = Trace::default();
        let (conv, it) = descend(&mut t, cfg, c, cfg.max_iters, &mut scratch, mv.tag());
        let offset = trace.rows.last().map_or(0, |r| r.iter + 1);
        trace.rows.extend(scratch.rows.into_iter().map(|mut r| {
            r.iter += offset;
            r
        }));
        *tree = t;
        energy = trace.final_energy().unwrap_or(f64::INFINITY);
        converged = conv;
        iters += it;
    }
    (converged, iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::samples;

    #[test]
    fn detach_and_reparent_keep_mass() {
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
        for l in tree.leaves() {
            let t = reparent_move(&tree, l).unwrap();
            assert!((t.total_mass() - 1.0).abs() < 1e-15);
            assert_eq!(t.leaves().len(), 3);
            assert!(crate::flow::validate_flow(&t.to_flow().unwrap()).ok);
        }
    }

    fn node(id: usize, p: Vec2, t: f64) -> crate::flow::Node {
        crate::flow::Node { id, pos: p, t }
    }

    fn edge(tail: usize, head: usize, flux: f64) -> crate::flow::Edge {
        crate::flow::Edge { tail, head, flux }
    }

    fn three_leaves() -> [(Vec2, f64); 3] {
        [
            (Vec2::new(-1.0, 0.0), 0.3),
            (Vec2::new(-0.6, 0.8), 0.3),
            (Vec2::new(1.0, 0.2), 0.4),
        ]
    }

    fn ternary(leaves: &[(Vec2, f64); 3]) -> PolygonalFlow {
        let mut nodes: Vec<_> = (0..3).map(|i| node(i, leaves[i].0, 0.0)).collect();
        nodes.push(node(3, Vec2::new(-0.2, 0.3), 1.0));
        nodes.push(node(4, Vec2::ZERO, 2.0));
        let mut edges: Vec<_> = (0..3).map(|i| edge(i, 3, leaves[i].1)).collect();
        edges.push(edge(3, 4, 1.0));
        PolygonalFlow::new(nodes, edges, 0.05, true).unwrap()
    }

    #[test]
    fn three_leaf_search_finds_best_topology() {
        let leaves = three_leaves();
        let c = Constraints {
            boundary_term: false,
            ..Constraints::fixed_ends()
        };
        let cfg = OptimizerConfig {
            max_iters: 4000,
            grad_tol: 1e-9,
            topology_moves: true,
            ..OptimizerConfig::default()
        };
        // oracle: every rooted topology on three leaves, each at fixed topology
        let mut oracle = vec![
            super::super::optimize_positions(&ternary(&leaves), &cfg, &c)
                .unwrap()
                .1
                .final_energy()
                .unwrap(),
        ];
        for (a, b, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
            let m1 = (leaves[a].0 * leaves[a].1 + leaves[b].0 * leaves[b].1)
                / (leaves[a].1 + leaves[b].1);
            let f = samples::y_flow(
                leaves[a],
                leaves[b],
                leaves[k],
                m1 * 0.7,
                0.6,
                Vec2::ZERO,
                1.2,
                2.0,
                0.05,
            );
            let (_, trace) = super::super::optimize_positions(&f, &cfg, &c).unwrap();
            oracle.push(trace.final_energy().unwrap());
        }
        let best = oracle.iter().cloned().fold(f64::INFINITY, f64::min);
        let (out, trace) = topology_search(&ternary(&leaves), &cfg, &c).unwrap();
        let e = trace.final_energy().unwrap();
        assert!((e - best).abs() < 1e-8 * best, "{e} vs {oracle:?}");
        assert!(crate::flow::validate_flow(&out).ok);
        assert!(trace.rows.iter().any(|r| r.tag == "split"));
    }

    #[test]
    fn square_instance_is_symmetric() {
        let corners = [
            Vec2::new(1.0, 1.0),
            Vec2::new(-1.0, 1.0),
            Vec2::new(-1.0, -1.0),
            Vec2::new(1.0, -1.0),
        ];
        // pairs (0, 1) and (2, 3) merge first, then the final merge
        let build = |flip: fn(Vec2) -> Vec2| {
            let mut nodes: Vec<_> = (0..4).map(|i| node(i, flip(corners[i]), 0.0)).collect();
            nodes.push(node(4, flip(Vec2::new(0.0, 0.6)), 0.7));
            nodes.push(node(5, flip(Vec2::new(0.0, -0.6)), 0.7));
            nodes.push(node(6, Vec2::ZERO, 1.4));
            nodes.push(node(7, Vec2::ZERO, 2.0));
            let edges = vec![
                edge(0, 4, 0.25),
                edge(1, 4, 0.25),
                edge(2, 5, 0.25),
                edge(3, 5, 0.25),
                edge(4, 6, 0.5),
                edge(5, 6, 0.5),
                edge(6, 7, 1.0),
            ];
            PolygonalFlow::new(nodes, edges, 0.05, true).unwrap()
        };
        let c = Constraints {
            boundary_term: false,
            ..Constraints::fixed_ends()
        };
        let cfg = OptimizerConfig {
            max_iters: 4000,
            grad_tol: 1e-10,
            ..OptimizerConfig::default()
        };
        let run = |flip: fn(Vec2) -> Vec2| {
            super::super::optimize_positions(&build(flip), &cfg, &c)
                .unwrap()
                .0
        };
        let base = run(|p| p);
        let flips: [fn(Vec2) -> Vec2; 2] = [|p| Vec2::new(-p.x, p.y), |p| Vec2::new(p.x, -p.y)];
        for flip in flips {
            let other = run(flip);
            for (a, b) in base.nodes().iter().zip(other.nodes()) {
                assert_eq!(a.id, b.id);
                assert!((flip(a.pos) - b.pos).norm() < 1e-4, "{a:?} {b:?}");
                assert!((a.t - b.t).abs() < 1e-4);
            }
        }
        // the instance itself is mirror symmetric about the y axis
        let n4 = base.nodes()[4];
        assert!(n4.pos.x.abs() < 1e-4);
        assert!((base.nodes()[4].t - base.nodes()[5].t).abs() < 1e-4);
    }

    #[test]
    fn near_leaves_coalesce() {
        let f = samples::v_flow_general(1e-5, 0.5, 0.5, Vec2::ZERO, 1.0, 2.0, 0.05);
        let tree = Tree::from_flow(&f).unwrap();
        let moves = coalesce_moves(&tree, 1e-4);
        assert_eq!(moves.len(), 1);
        assert_eq!(edge_count(&moves[0]), edge_count(&tree) - 1);
        assert_eq!(moves[0].leaves().len(), 1);
    }

    #[test]
    fn split_enumerates_pairs() {
        let nodes = vec![
            crate::flow::Node {
                id: 0,
                pos: Vec2::new(1.0, 0.0),
                t: 0.0,
            },
            crate::flow::Node {
                id: 1,
                pos: Vec2::new(-0.5, 0.8),
                t: 0.0,
            },
            crate::flow::Node {
                id: 2,
                pos: Vec2::new(-0.5, -0.8),
                t: 0.0,
            },
            crate::flow::Node {
                id: 3,
                pos: Vec2::ZERO,
                t: 1.0,
            },
            crate::flow::Node {
                id: 4,
                pos: Vec2::ZERO,
                t: 2.0,
            },
        ];
        let edges = vec![
            crate::flow::Edge {
                tail: 0,
                head: 3,
                flux: 1.0 / 3.0,
            },
            crate::flow::Edge {
                tail: 1,
                head: 3,
                flux: 1.0 / 3.0,
            },
            crate::flow::Edge {
                tail: 2,
                head: 3,
                flux: 1.0 / 3.0,
            },
            crate::flow::Edge {
                tail: 3,
                head: 4,
                flux: 1.0,
            },
        ];
        let f = PolygonalFlow::new(nodes, edges, 0.05, true).unwrap();
        let tree = Tree::from_flow(&f).unwrap();
        assert_eq!(split_moves(&tree).len(), 3);
    }
}
