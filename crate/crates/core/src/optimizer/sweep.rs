//! The `e(R, T)` table: best energy with leaves in `[−R, R]²` and the root
//! fixed at the origin at time `T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{dyadic_interpolation, ConstructionConfig};
use crate::error::{Error, Result};
use crate::flow::PolygonalFlow;
use crate::geom::Vec2;
use crate::measure::AtomicMeasure;

use super::analysis::{a_priori_diagnostics, APrioriDiagnostics};
use super::topology::search_tree;
use super::tree::Tree;
use super::{Constraints, OptimizerConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Dyadic construction from a grid of leaves.
    Construct,
    /// Uniform random leaves in the box.
    Random,
    /// All leaves jittered around the origin.
    Collapsed,
}

impl Init {
    pub const ALL: [Init; 3] = [Init::Construct, Init::Random, Init::Collapsed];

    pub fn name(self) -> &'static str {
        match self {
            Init::Construct => "construct",
            Init::Random => "random",
            Init::Collapsed => "collapsed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub t: f64,
    pub e: f64,
    /// Label of the run that produced the best value.
    pub seed_of_best: String,
    pub diagnostics: APrioriDiagnostics,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best_flows: Vec<PolygonalFlow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("R,T,e,seed_of_best\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{}\n",
                r.r, r.t, r.e, r.seed_of_best
            ));
        }
        out
    }

    pub fn get(&self, r: f64, t: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|row| row.r == r && row.t == t)
    }
}

/// Inserts a static node before the root when the root merges branches,
/// so the last merge time is free.
pub fn ensure_stem(tree: &mut Tree) {
    let root = tree.root();
    let children: Vec<usize> = (0..tree.len())
        .filter(|&v| tree.next[v] == Some(root))
        .collect();
    if children.len() == 1 {
        return;
    }
    let last = children
        .iter()
        .map(|&c| tree.t[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let s = tree.add_node(tree.pos[root], 0.5 * (last + tree.t[root]), Some(root));
    for c in children {
        tree.next[c] = Some(s);
    }
}

/// Binary tree over the leaves by repeated nearest-pair merging at weighted
/// centroids, merge times spread over `(0, 0.6 T]`, ending in a stem to the
/// origin.
pub fn agglomerative_tree(
    points: &[Vec2],
    weights: &[f64],
    horizon: f64,
    eps: f64,
) -> Result<Tree> {
    let n = points.len();
    if n == 0 || weights.len() != n {
        return Err(Error::EmptyMeasure);
    }
    let mut tree = Tree {
        ids: vec![],
        pos: vec![],
        t: vec![],
        next: vec![],
        weight: vec![],
        eps,
    };
    let mut active: Vec<(usize, Vec2, f64)> = Vec::new();
    for (p, &w) in points.iter().zip(weights) {
        let v = tree.add_node(*p, 0.0, None);
        tree.weight[v] = w;
        active.push((v, *p, w));
    }
    let mut k = 0;
    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let d = active[i].1.dist(active[j].1);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let (b, a) = (active.remove(j), active.remove(i));
        let w = a.2 + b.2;
        let pos = (a.1 * a.2 + b.1 * b.2) / w;
        k += 1;
        let v = tree.add_node(pos, 0.6 * horizon * k as f64 / (n - 1) as f64, None);
        tree.next[a.0] = Some(v);
        tree.next[b.0] = Some(v);
        active.push((v, pos, w));
    }
    let top = active[0].0;
    let t_top = if n == 1 { 0.0 } else { tree.t[top] };
    let stem = tree.add_node(tree.pos[top] * 0.5, 0.5 * (t_top + horizon), None);
    let root = tree.add_node(Vec2::ZERO, horizon, None);
    tree.next[top] = Some(stem);
    tree.next[stem] = Some(root);
    Ok(tree)
}

/// One of the three seeded initial trees for `n` leaves of total mass one.
pub fn initial_tree(
    init: Init,
    n: usize,
    r: f64,
    horizon: f64,
    eps: f64,
    seed: u64,
) -> Result<Tree> {
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = vec![1.0 / n as f64; n];
    match init {
        Init::Construct => {
            let k = (n as f64).sqrt().ceil() as usize;
            let grid = AtomicMeasure::grid_square(k, r, 1.0);
            let pts: Vec<Vec2> = grid.positions().into_iter().take(n).collect();
            if n == 1 {
                return agglomerative_tree(&pts, &w, horizon, eps);
            }
            let mu = AtomicMeasure::from_points(pts.iter().map(|&p| (p, 1.0 / n as f64)), eps)?;
            let levels = (k as f64).log2().ceil().max(1.0) as usize;
            let flow = dyadic_interpolation(
                &mu,
                &AtomicMeasure::dirac(Vec2::ZERO, 1.0),
                horizon,
                2.0 * r,
                &ConstructionConfig::new(levels),
            )?;
            let mut tree = Tree::from_flow(&flow)?;
            ensure_stem(&mut tree);
            Ok(tree)
        }
        Init::Random => {
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.gen_range(-r..r), rng.gen_range(-r..r)))
                .collect();
            agglomerative_tree(&pts, &w, horizon, eps)
        }
        Init::Collapsed => {
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * eps)
                .collect();
            agglomerative_tree(&pts, &w, horizon, eps)
        }
    }
}

fn sweep_constraints(r: f64) -> Constraints {
    Constraints {
        fix_root: true,
        box_half_width: Some(r),
        ..Constraints::default()
    }
}

/// Moves the root to time `horizon`, lengthening the stem.
fn extend_horizon(tree: &Tree, horizon: f64) -> Tree {
    let mut t = tree.clone();
    ensure_stem(&mut t);
    let root = t.root();
    t.t[root] = horizon;
    t
}

/// Best energy over seeded initializations and warm starts from the
/// neighboring grid cells (smaller `R` or `T`), whose optima stay feasible.
pub fn rt_sweep(
    r_list: &[f64],
    t_list: &[f64],
    leaves: usize,
    eps: f64,
    cfg: &OptimizerConfig,
) -> Result<SweepTable> {
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
    if r_list.is_empty() || t_list.is_empty() || !sorted(r_list) || !sorted(t_list) {
        return Err(Error::Config(
            "R and T lists must be nonempty and strictly increasing".into(),
        ));
    }
    if r_list[0] < 1.0 || t_list[0] < 1.0 {
        return Err(Error::Hypothesis("R and T must be at least 1".into()));
    }
    cfg.check(eps)?;
    let (nr, nt) = (r_list.len(), t_list.len());
    let mut best: Vec<Option<(f64, Tree, String, bool)>> = vec![None; nr * nt];
    for (i, &r) in r_list.iter().enumerate() {
        for (j, &t) in t_list.iter().enumerate() {
            let c = sweep_constraints(r);
            let mut starts: Vec<(String, Tree)> = Vec::new();
            for (k, init) in Init::ALL.iter().enumerate() {
                let seed = cfg.seed.wrapping_add(k as u64);
                starts.push((
                    format!("{}/{seed}", init.name()),
                    initial_tree(*init, leaves, r, t, eps, seed)?,
                ));
            }
            if i > 0 {
                if let Some((_, tree, label, _)) = &best[(i - 1) * nt + j] {
                    starts.push((format!("warm-R<{label}"), tree.clone()));
                }
            }
            if j > 0 {
                if let Some((_, tree, label, _)) = &best[i * nt + j - 1] {
                    starts.push((format!("warm-T<{label}"), extend_horizon(tree, t)));
                }
            }
            let mut cell: Option<(f64, Tree, String, bool)> = None;
            for (label, mut tree) in starts {
                let mut trace = Trace::default();
                let (conv, _) = search_tree(&mut tree, cfg, &c, &mut trace);
                let e = trace.final_energy().unwrap_or(f64::INFINITY);
                if cell.as_ref().map_or(true, |b| e < b.0) {
                    let root_label = label.rsplit('<').next().unwrap_or(&label).to_string();
                    cell = Some((e, tree, root_label, conv));
                }
            }
            best[i * nt + j] = cell;
        }
    }
    let mut rows = Vec::new();
    let mut best_flows = Vec::new();
    for (i, &r) in r_list.iter().enumerate() {
        for (j, &t) in t_list.iter().enumerate() {
            let (e, tree, label, conv) = best[i * nt + j].clone().unwrap();
            let flow = tree.to_flow()?;
            rows.push(SweepRow {
                r,
                t,
                e,
                seed_of_best: label,
                diagnostics: a_priori_diagnostics(&flow)?,
                converged: conv,
            });
            best_flows.push(flow);
        }
    }
    Ok(SweepTable { rows, best_flows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::validate_flow;
    use crate::potential::disk_self_energy;

    #[test]
    fn initial_trees_are_valid() {
        for init in Init::ALL {
            let tree = initial_tree(init, 16, 1.0, 2.0, 0.05, 3).unwrap();
            assert_eq!(tree.leaves().len(), 16);
            let flow = tree.to_flow().unwrap();
            assert!(validate_flow(&flow).ok, "{init:?}");
            assert!((tree.total_mass() - 1.0).abs() < 1e-12);
            let root = tree.root();
            assert_eq!(tree.pos[root], Vec2::ZERO);
            assert_eq!(tree.children()[root].len(), 1);
        }
    }

    #[test]
    fn single_leaf_sweep_is_self_energy() {
        let cfg = OptimizerConfig {
            max_iters: 3000,
            grad_tol: 1e-9,
            ..OptimizerConfig::default()
        };
        let table = rt_sweep(&[1.0, 2.0], &[1.0, 2.0], 1, 0.1, &cfg).unwrap();
        let s = disk_self_energy(1.0, 0.1);
        for row in &table.rows {
            assert!((row.e - s).abs() < 1e-6 * s, "{row:?}");
        }
        assert_eq!(table.to_csv().lines().count(), 5);
    }
}
