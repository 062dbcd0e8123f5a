//! Explicit competitors: dyadic branching interpolation between two measures
//! and the irrigation of the uniform square from a point.
//!
//! The source measure is collapsed through its dyadic cell hierarchy (each
//! cell merging to its mass-weighted center), the coarsest representatives
//! are transported along an optimal plan, and the target is reached by the
//! mirror-image expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Edge, Node, PolygonalFlow};
use crate::geom::Vec2;
use crate::measure::AtomicMeasure;
use crate::transport::{basic_plan, wasserstein2, MASS_TOL};

/// Largest supported refinement depth.
pub const MAX_LEVELS: usize = 12;

/// Default geometric ratio between consecutive refinement steps (`2^{-3/2}`).
pub const DEFAULT_RATIO: f64 = 0.353_553_390_593_273_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSplit {
    Geometric,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub levels: usize,
    pub time_split: TimeSplit,
    pub geometric_ratio: f64,
    /// Level of the cells whose representatives are matched by the plan.
    #[serde(default)]
    pub coarse_level: usize,
}

impl ConstructionConfig {
    pub fn new(levels: usize) -> Self {
        Self {
            levels,
            time_split: TimeSplit::Geometric,
            geometric_ratio: DEFAULT_RATIO,
            coarse_level: 0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.levels > MAX_LEVELS {
            return Err(Error::TooLarge(format!(
                "{} levels (at most {MAX_LEVELS})",
                self.levels
            )));
        }
        if !(self.geometric_ratio > 0.0 && self.geometric_ratio < 1.0) {
            return Err(Error::Config(format!(
                "geometric ratio {} outside (0, 1)",
                self.geometric_ratio
            )));
        }
        if self.coarse_level > self.levels {
            return Err(Error::Config(
                "coarse level exceeds refinement depth".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self::new(4)
    }
}

/// Representatives of one level: position, mass and child indices one level finer.
#[derive(Debug, Clone)]
struct Level {
    pos: Vec<Vec2>,
    mass: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl Level {
    fn is_identity_of(&self, finer: &Level) -> bool {
        self.pos.len() == finer.pos.len()
            && self
                .children
                .iter()
                .enumerate()
                .all(|(i, c)| c.len() == 1 && finer.pos[c[0]] == self.pos[i])
    }
}

/// Cell hierarchy from the atoms (first entry) up to level `coarse`, coarsest last.
fn hierarchy(mu: &AtomicMeasure, side: f64, levels: usize, coarse: usize) -> Vec<Level> {
    let atoms = Level {
        pos: mu.positions(),
        mass: mu.weights(),
        children: (0..mu.len()).map(|i| vec![i]).collect(),
    };
    let mut out = vec![atoms];
    for k in (coarse..=levels).rev() {
        let n = 1usize << k;
        let h = side / n as f64;
        let cell = |x: f64| (((x + 0.5 * side) / h).floor() as i64).clamp(0, n as i64 - 1) as usize;
        let finer = out.last().unwrap();
        let mut keys: Vec<(usize, usize)> = finer
            .pos
            .iter()
            .enumerate()
            .map(|(i, p)| (cell(p.x) * n + cell(p.y), i))
            .collect();
        keys.sort();
        let mut level = Level {
            pos: Vec::new(),
            mass: Vec::new(),
            children: Vec::new(),
        };
        let mut start = 0;
        while start < keys.len() {
            let mut end = start;
            while end < keys.len() && keys[end].0 == keys[start].0 {
                end += 1;
            }
            let children: Vec<usize> = keys[start..end].iter().map(|k| k.1).collect();
            let m: f64 = children.iter().map(|&c| finer.mass[c]).sum();
            let c = children
                .iter()
                .fold(Vec2::ZERO, |acc, &c| acc + finer.pos[c] * finer.mass[c])
                / m;
            level.pos.push(c);
            level.mass.push(m);
            level.children.push(children);
            start = end;
        }
        out.push(level);
    }
    // treat the atom layer as a level of its own only when the finest cells merge or move
    let mut pruned = vec![out[0].clone()];
    for level in out.into_iter().skip(1) {
        let last = pruned.last_mut().unwrap();
        if level.is_identity_of(last) {
            // adopt the new ordering, composing child links
            let children = level
                .children
                .iter()
                .map(|c| last.children[c[0]].clone())
                .collect();
            *last = Level {
                pos: level.pos,
                mass: level.mass,
                children,
            };
            continue;
        }
        pruned.push(level);
    }
    pruned
}

/// Step durations for the collapse (finest first), the coarse transport and
/// the expansion (finest first, counted back from the horizon).
///
/// The step merging level `k` into level `k − 1` has weight `ratio^{k−1}`
/// (geometric) or 1 (uniform); the transport has weight 1 when it moves mass
/// and 0 otherwise. The weights share the horizon proportionally.
fn durations(
    left: usize,
    right: usize,
    transport_moves: bool,
    horizon: f64,
    cfg: &ConstructionConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let weight = |k: usize| match cfg.time_split {
        TimeSplit::Geometric => cfg.geometric_ratio.powi(k as i32 - 1),
        TimeSplit::Uniform => 1.0,
    };
    let wt = if transport_moves || left + right == 0 {
        1.0
    } else {
        0.0
    };
    let side = |steps: usize| (1..=steps).rev().map(weight).collect::<Vec<f64>>();
    let (wl, wr) = (side(left), side(right));
    let total = wl.iter().sum::<f64>() + wr.iter().sum::<f64>() + wt;
    let scale = horizon / total;
    (
        wl.iter().map(|w| w * scale).collect(),
        wt * scale,
        wr.iter().map(|w| w * scale).collect(),
    )
}

struct Builder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl Builder {
    fn node(&mut self, pos: Vec2, t: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { id, pos, t });
        id
    }

    fn edge(&mut self, tail: usize, head: usize, flux: f64) {
        self.edges.push(Edge { tail, head, flux });
    }

    /// Emits the collapse tree; returns node indices of the coarsest layer.
    /// `mirror` reverses time (`t ↦ T − t`) and edge orientation.
    fn tree(&mut self, levels: &[Level], times: &[f64], horizon: f64, mirror: bool) -> Vec<usize> {
        let at = |t: f64| if mirror { horizon - t } else { t };
        let mut prev: Vec<usize> = levels[0]
            .pos
            .iter()
            .map(|&p| self.node(p, at(times[0])))
            .collect();
        for (k, level) in levels.iter().enumerate().skip(1) {
            let cur: Vec<usize> = level
                .pos
                .iter()
                .map(|&p| self.node(p, at(times[k])))
                .collect();
            for (i, children) in level.children.iter().enumerate() {
                for &c in children {
                    let flux = levels[k - 1].mass[c];
                    if mirror {
                        self.edge(cur[i], prev[c], flux);
                    } else {
                        self.edge(prev[c], cur[i], flux);
                    }
                }
            }
            prev = cur;
        }
        prev
    }
}

fn check_inside(mu: &AtomicMeasure, side: f64) -> Result<()> {
    let h = 0.5 * side * (1.0 + 1e-12);
    if let Some(a) = mu
        .atoms()
        .iter()
        .find(|a| a.pos.x.abs() > h || a.pos.y.abs() > h)
    {
        return Err(Error::InvalidMeasure(format!(
            "atom at ({}, {}) outside the square of side {side}",
            a.pos.x, a.pos.y
        )));
    }
    Ok(())
}

/// Branching interpolation from `mu_minus` at `t = 0` to `mu_plus` at `t = horizon`
/// inside the square of side `side` centered at the origin.
pub fn dyadic_interpolation(
    mu_minus: &AtomicMeasure,
    mu_plus: &AtomicMeasure,
    horizon: f64,
    side: f64,
    cfg: &ConstructionConfig,
) -> Result<PolygonalFlow> {
    cfg.check()?;
    if mu_minus.is_empty() || mu_plus.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let (pm, pp) = (mu_minus.total_mass(), mu_plus.total_mass());
    if (pm - pp).abs() > MASS_TOL {
        return Err(Error::MassMismatch(pm, pp));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || !(side > 0.0 && side.is_finite()) {
        return Err(Error::Config("horizon and side must be positive".into()));
    }
    check_inside(mu_minus, side)?;
    check_inside(mu_plus, side)?;
    let eps = mu_minus
        .atoms()
        .iter()
        .map(|a| a.radius)
        .fold(0.0, f64::max);
    let left = hierarchy(mu_minus, side, cfg.levels, cfg.coarse_level);
    let right = hierarchy(mu_plus, side, cfg.levels, cfg.coarse_level);
    let (lc, rc) = (left.last().unwrap(), right.last().unwrap());
    let ca = AtomicMeasure::from_points(lc.pos.iter().cloned().zip(lc.mass.iter().cloned()), 0.0)?;
    let cb = AtomicMeasure::from_points(rc.pos.iter().cloned().zip(rc.mass.iter().cloned()), 0.0)?;
    if ca.len() != lc.pos.len() || cb.len() != rc.pos.len() {
        return Err(Error::InvalidMeasure(
            "coincident coarse representatives".into(),
        ));
    }
    let (coarse_cost, plan) = wasserstein2(&ca, &cb)?;
    let plan = basic_plan(&plan, &ca, &cb);
    let (dl, dt, dr) = durations(
        left.len() - 1,
        right.len() - 1,
        coarse_cost > 0.0,
        horizon,
        cfg,
    );
    let cumulative = |d: &[f64]| {
        let mut t = vec![0.0];
        for dk in d {
            t.push(t.last().unwrap() + dk);
        }
        t
    };
    let (tl, tr) = (cumulative(&dl), cumulative(&dr));
    debug_assert!((tl.last().unwrap() + dt + tr.last().unwrap() - horizon).abs() < 1e-12 * horizon);
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let lroots = b.tree(&left, &tl, horizon, false);
    let rroots = b.tree(&right, &tr, horizon, true);
    // the plan indexes `ca`, `cb`, which may be reordered relative to the levels
    let find = |m: &AtomicMeasure, pos: &[Vec2], i: usize| {
        pos.iter().position(|&p| p == m.atoms()[i].pos).unwrap()
    };
    if dt > 0.0 {
        for e in &plan.entries {
            let (i, j) = (find(&ca, &lc.pos, e.source), find(&cb, &rc.pos, e.target));
            b.edge(lroots[i], rroots[j], e.mass);
        }
    } else {
        // static transport: the coarse layers coincide, so glue them
        let mut alias: Vec<usize> = (0..b.nodes.len()).collect();
        for e in &plan.entries {
            let (i, j) = (find(&ca, &lc.pos, e.source), find(&cb, &rc.pos, e.target));
            alias[lroots[i]] = rroots[j];
        }
        let mut index = vec![usize::MAX; b.nodes.len()];
        let mut nodes = Vec::new();
        for (k, n) in b.nodes.iter().enumerate() {
            if alias[k] == k {
                index[k] = nodes.len();
                nodes.push(*n);
            }
        }
        b.edges = b
            .edges
            .iter()
            .map(|e| Edge {
                tail: index[alias[e.tail]],
                head: index[alias[e.head]],
                flux: e.flux,
            })
            .collect();
        b.nodes = nodes;
    }
    let rooted = mu_plus.len() == 1;
    let flow = PolygonalFlow::new(b.nodes, b.edges, eps, rooted)?;
    Ok(flow.simplify(1e-12))
}

/// Irrigation of the `2^levels × 2^levels` uniform grid on `[−½, ½]²`
/// (leaf radius half the cell side) from the origin over unit time.
pub fn square_to_dirac(levels: usize) -> Result<PolygonalFlow> {
    square_to_dirac_with(&ConstructionConfig::new(levels))
}

pub fn square_to_dirac_with(cfg: &ConstructionConfig) -> Result<PolygonalFlow> {
    cfg.check()?;
    let n = 1usize << cfg.levels;
    let grid = AtomicMeasure::grid_square(n, 1.0, 1.0);
    dyadic_interpolation(&grid, &AtomicMeasure::dirac(Vec2::ZERO, 1.0), 1.0, 1.0, cfg)
}
