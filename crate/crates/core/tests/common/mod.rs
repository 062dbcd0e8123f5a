//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

use irrigation::construct::{dyadic_interpolation, ConstructionConfig};
use irrigation::energy::perimeter_rate;
use irrigation::flow::{Edge, Node};
use irrigation::optimizer::sweep::agglomerative_tree;
use irrigation::{AtomicMeasure, PolygonalFlow, Vec2};

pub fn point<R: Rng>(rng: &mut R, half: f64) -> Vec2 {
    Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half))
}

/// Random rooted tree: agglomerative merges of random leaves, jittered
/// junctions and a few kinked edges.
pub fn random_tree_flow<R: Rng>(rng: &mut R, leaves: usize) -> PolygonalFlow {
    let points: Vec<Vec2> = (0..leaves).map(|_| point(rng, 1.0)).collect();
    let mass = rng.gen_range(0.5..2.0);
    let raw: Vec<f64> = (0..leaves).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w * mass / s).collect();
    let horizon = rng.gen_range(0.5..3.0);
    let eps = rng.gen_range(0.01..0.05);
    let mut tree = agglomerative_tree(&points, &weights, horizon, eps).unwrap();
    let n = tree.len();
    for v in 0..n {
        if !tree.is_leaf(v) && tree.next[v].is_some() {
            tree.pos[v] += point(rng, 0.3);
        }
    }
    for _ in 0..leaves / 3 {
        let v = rng.gen_range(0..n);
        let Some(u) = tree.next[v] else { continue };
        let s = rng.gen_range(0.2..0.8);
        let mid = tree.pos[v].lerp(tree.pos[u], s) + point(rng, 0.2);
        let t = tree.t[v] + s * (tree.t[u] - tree.t[v]);
        let k = tree.add_node(mid, t, Some(u));
        tree.next[v] = Some(k);
    }
    tree.to_flow().unwrap()
}

/// Random measure with `n` atoms in `[−half, half]²` and total mass `mass`.
pub fn random_measure<R: Rng>(rng: &mut R, n: usize, half: f64, mass: f64, eps: f64) -> AtomicMeasure {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    AtomicMeasure::from_points(
        (0..n).map(|k| (point(rng, half), raw[k] * mass / s)),
        eps,
    )
    .unwrap()
}

/// Random branching interpolation between two random measures; may split.
pub fn random_dyadic_flow<R: Rng>(rng: &mut R) -> PolygonalFlow {
    let mass = rng.gen_range(0.5..2.0);
    let (na, nb) = (rng.gen_range(2..10), rng.gen_range(1..5));
    let a = random_measure(rng, na, 0.95, mass, 0.02);
    let b = random_measure(rng, nb, 0.95, mass, 0.0);
    let levels = rng.gen_range(1..3);
    dyadic_interpolation(&a, &b, rng.gen_range(0.5..2.0), 2.0, &ConstructionConfig::new(levels)).unwrap()
}

/// Mixed family used by the identity, inequality and scaling checks.
pub fn random_flow<R: Rng>(rng: &mut R, k: usize) -> PolygonalFlow {
    if k % 4 == 3 {
        random_dyadic_flow(rng)
    } else {
        let leaves = rng.gen_range(1..40);
        random_tree_flow(rng, leaves)
    }
}

/// Every atom moves affinely from `x` to `map(x)` over `[0, horizon]`.
pub fn straight_flow(m: &AtomicMeasure, horizon: f64, map: impl Fn(Vec2) -> Vec2) -> PolygonalFlow {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (k, a) in m.atoms().iter().enumerate() {
        let y = map(a.pos);
        nodes.push(Node { id: 2 * k, pos: a.pos, t: 0.0 });
        nodes.push(Node { id: 2 * k + 1, pos: y, t: horizon });
        edges.push(Edge { tail: 2 * k, head: 2 * k + 1, flux: a.weight });
    }
    PolygonalFlow::new(nodes, edges, 0.0, false).unwrap()
}

/// `(P, E)` over the whole range from slices: perimeter rate at the midpoint
/// of every breakpoint interval, kinetic energy edge by edge.
pub fn slice_energy(flow: &PolygonalFlow) -> (f64, f64) {
    let bps = flow.breakpoints();
    let mut p = 0.0;
    for w in bps.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        p += perimeter_rate(&flow.slice(mid).unwrap()).unwrap() * (w[1] - w[0]);
    }
    let mut e = 0.0;
    for (k, edge) in flow.edges().iter().enumerate() {
        let dt = flow.edge_duration(k);
        e += edge.flux * flow.edge_displacement(k).norm_sq() / dt;
    }
    (p, e)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact `W²` between measures with masses `units · u`: each atom is split
/// into unit copies and every assignment of units is enumerated.
pub fn brute_force_w2(a: &[(Vec2, usize)], b: &[(Vec2, usize)], u: f64) -> f64 {
    let xs: Vec<Vec2> = a.iter().flat_map(|&(p, k)| std::iter::repeat(p).take(k)).collect();
    let ys: Vec<Vec2> = b.iter().flat_map(|&(p, k)| std::iter::repeat(p).take(k)).collect();
    assert_eq!(xs.len(), ys.len());
    permutations(xs.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| xs[i].dist(ys[j]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        * u
}

/// Random split of `total` units into `parts` positive counts.
pub fn composition<R: Rng>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    let mut c = vec![1; parts];
    for _ in 0..total - parts {
        c[rng.gen_range(0..parts)] += 1;
    }
    c
}

/// Golden-section minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Ordinary least-squares slope.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `max_x μ(B(x, r))` over support atoms by direct enumeration.
pub fn brute_max_ball_mass(m: &AtomicMeasure, r: f64) -> f64 {
    let atoms = m.atoms();
    atoms
        .iter()
        .map(|a| {
            atoms
                .iter()
                .filter(|b| a.pos.dist(b.pos) <= r * (1.0 + 1e-12))
                .map(|b| b.weight)
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
