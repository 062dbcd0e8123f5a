//! Minimization of `𝓔` over rooted polygonal flows.
//!
//! Free variables are node positions, interior node times and leaf weights.
//! Steps are limited-memory quasi-Newton directions in diagonally rescaled
//! coordinates, followed by projection onto the constraint set and a
//! backtracking Armijo search with strict decrease.

pub mod analysis;
pub mod objective;
pub mod sweep;
pub mod topology;
pub mod tree;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PolygonalFlow;
use crate::potential::UNIT_DISK_SELF_ENERGY;

pub use analysis::{
    a_priori_diagnostics, equipartition_report, first_variation_residual, landscape,
    shrink_competitor, shrink_competitor_test, APrioriDiagnostics, EquipartitionEntry,
    LandscapeValues, ResidualStats, ShrinkReport,
};
pub use objective::{evaluate, Evaluation};
pub use sweep::{rt_sweep, SweepRow, SweepTable};
pub use topology::topology_search;
pub use tree::Tree;

/// Minimum edge duration as a fraction of the time span.
pub const MIN_DURATION_FRACTION: f64 = 1e-6;
/// Lower bound on free leaf weights as a fraction of the total mass.
pub const WEIGHT_FLOOR_FRACTION: f64 = 1e-10;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    BacktrackingArmijo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub init_step: f64,
    /// Sup-norm of the projected gradient at which descent stops.
    pub grad_tol: f64,
    /// Space-time distance below which nodes are coalesced.
    pub merge_tol: f64,
    pub topology_moves: bool,
    pub moves_per_round: usize,
    pub seed: u64,
    /// Quasi-Newton memory length.
    pub memory: usize,
    /// Upper bound on topology rounds.
    pub max_rounds: usize,
    /// Quadrature order behind the tabulated near-field disk interaction.
    pub kernel_order: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_rule: StepRule::BacktrackingArmijo,
            init_step: 1e-2,
            grad_tol: 1e-7,
            merge_tol: 1e-3,
            topology_moves: false,
            moves_per_round: 8,
            seed: 0,
            memory: 12,
            max_rounds: 64,
            kernel_order: 16,
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self, eps: f64) -> Result<()> {
        if !(self.init_step > 0.0 && self.grad_tol > 0.0 && self.merge_tol > 0.0) {
            return Err(Error::Config(
                "tolerances and step sizes must be positive".into(),
            ));
        }
        if eps > 0.0 && self.merge_tol >= eps {
            return Err(Error::Config(format!(
                "merge_tol {} must be below the leaf radius {eps}",
                self.merge_tol
            )));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub fix_boundary: bool,
    pub fix_root: bool,
    pub mass_simplex: bool,
    pub zero_barycenter: bool,
    /// Leaf positions confined to `[−R, R]²`.
    pub box_half_width: Option<f64>,
    /// Include `‖μ₀‖²_{H^{-1/2}}` in the objective.
    pub boundary_term: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            fix_boundary: false,
            fix_root: false,
            mass_simplex: true,
            zero_barycenter: false,
            box_half_width: None,
            boundary_term: true,
        }
    }
}

impl Constraints {
    pub fn fixed_ends() -> Self {
        Self {
            fix_boundary: true,
            fix_root: true,
            ..Self::default()
        }
    }

    fn check(&self, eps: f64) -> Result<()> {
        if self.boundary_term && !(eps > 0.0) {
            return Err(Error::MissingRadius);
        }
        if let Some(r) = self.box_half_width {
            if !(r > 0.0) {
                return Err(Error::Config("box half-width must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub perimeter: f64,
    pub kinetic: f64,
    pub boundary: f64,
    pub grad_norm: f64,
    pub tag: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "iter,energy,P,E,boundary_norm_sq,grad_norm,move";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                r.iter, r.energy, r.perimeter, r.kinetic, r.boundary, r.grad_norm, r.tag
            ));
        }
        out
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.energy)
    }

    fn push(&mut self, ev: &Evaluation, grad_norm: f64, tag: &str) {
        let iter = self.rows.last().map_or(0, |r| r.iter + 1);
        self.rows.push(TraceRow {
            iter,
            energy: ev.total,
            perimeter: ev.perimeter,
            kinetic: ev.kinetic,
            boundary: ev.boundary,
            grad_norm,
            tag: tag.to_string(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    X(usize),
    Y(usize),
    T(usize),
    W(usize),
}

/// Free variables of a tree under a constraint set.
struct Layout {
    vars: Vec<Var>,
    free_w: Vec<usize>,
    free_leaf_pos: Vec<usize>,
    free_t: Vec<usize>,
    leaves: Vec<usize>,
    mass_free: f64,
    span: f64,
}

impl Layout {
    fn new(tree: &Tree, c: &Constraints) -> Layout {
        let root = tree.root();
        let leaves = tree.leaves();
        let mut is_leaf = vec![false; tree.len()];
        for &l in &leaves {
            is_leaf[l] = true;
        }
        let mut vars = Vec::new();
        let mut free_leaf_pos = Vec::new();
        let mut free_t = Vec::new();
        for v in 0..tree.len() {
            let pos_free = !(is_leaf[v] && c.fix_boundary) && !(v == root && c.fix_root);
            if pos_free {
                vars.push(Var::X(v));
                vars.push(Var::Y(v));
                if is_leaf[v] {
                    free_leaf_pos.push(v);
                }
            }
            if !is_leaf[v] && v != root {
                vars.push(Var::T(v));
                free_t.push(v);
            }
        }
        let mut free_w = Vec::new();
        if c.mass_simplex && !c.fix_boundary && leaves.len() > 1 {
            for &l in &leaves {
                vars.push(Var::W(l));
                free_w.push(l);
            }
        }
        let mass_free = free_w.iter().map(|&l| tree.weight[l]).sum();
        Layout {
            vars,
            free_w,
            free_leaf_pos,
            free_t,
            leaves,
            mass_free,
            span: tree.horizon() - tree.start_time(),
        }
    }

    fn get(&self, tree: &Tree) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| match *v {
                Var::X(i) => tree.pos[i].x,
                Var::Y(i) => tree.pos[i].y,
                Var::T(i) => tree.t[i],
                Var::W(i) => tree.weight[i],
            })
            .collect()
    }

    fn set(&self, tree: &mut Tree, x: &[f64]) {
        for (v, &val) in self.vars.iter().zip(x) {
            match *v {
                Var::X(i) => tree.pos[i].x = val,
                Var::Y(i) => tree.pos[i].y = val,
                Var::T(i) => tree.t[i] = val,
                Var::W(i) => tree.weight[i] = val,
            }
        }
    }

    fn gradient(&self, ev: &Evaluation) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| match *v {
                Var::X(i) => ev.grad_pos[i].x,
                Var::Y(i) => ev.grad_pos[i].y,
                Var::T(i) => ev.grad_t[i],
                Var::W(i) => ev.grad_w[i],
            })
            .collect()
    }

    fn index_of(&self) -> impl Fn(Var) -> Option<usize> + '_ {
        move |v| self.vars.iter().position(|&w| w == v)
    }

    /// Diagonal curvature estimate used to rescale variables.
    fn scales(&self, tree: &Tree, c: &Constraints) -> Vec<f64> {
        let n = tree.len();
        let m = tree.masses();
        let mut dpos = vec![0.0; n];
        let mut dt = vec![0.0; n];
        for v in 0..n {
            let Some(u) = tree.next[v] else { continue };
            let d = tree.t[u] - tree.t[v];
            let dx2 = (tree.pos[u] - tree.pos[v]).norm_sq();
            let a = 2.0 * m[v] / d;
            dpos[u] += a;
            dpos[v] += a;
            let b = 2.0 * m[v] * dx2 / (d * d * d) + m[v].sqrt() / d;
            dt[u] += b;
            dt[v] += b;
        }
        let self_curv = if c.boundary_term && tree.eps > 0.0 {
            2.0 * UNIT_DISK_SELF_ENERGY / tree.eps
        } else {
            0.0
        };
        let span = self.span.max(1e-300);
        self.vars
            .iter()
            .map(|v| {
                let d = match *v {
                    Var::X(i) | Var::Y(i) => dpos[i] + self_curv * tree.weight[i] * tree.weight[i],
                    Var::T(i) => dt[i],
                    Var::W(i) => self_curv + 0.25 * span / tree.weight[i].max(1e-300).powf(1.5),
                };
                d.max(1e-12).sqrt()
            })
            .collect()
    }

    fn floor(&self) -> f64 {
        WEIGHT_FLOOR_FRACTION * self.mass_free
    }

    /// Projection onto the feasible set (in place, unscaled coordinates).
    fn project(&self, tree: &mut Tree, c: &Constraints) {
        if !self.free_w.is_empty() {
            let mut w: Vec<f64> = self.free_w.iter().map(|&l| tree.weight[l]).collect();
            project_simplex(&mut w, self.mass_free, self.floor());
            for (k, &l) in self.free_w.iter().enumerate() {
                tree.weight[l] = w[k];
            }
        }
        if c.zero_barycenter && !self.free_leaf_pos.is_empty() {
            let (mut bx, mut by) = (0.0, 0.0);
            for &l in &self.leaves {
                bx += tree.weight[l] * tree.pos[l].x;
                by += tree.weight[l] * tree.pos[l].y;
            }
            let w2: f64 = self
                .free_leaf_pos
                .iter()
                .map(|&l| tree.weight[l] * tree.weight[l])
                .sum();
            for &l in &self.free_leaf_pos {
                let s = tree.weight[l] / w2;
                tree.pos[l].x -= s * bx;
                tree.pos[l].y -= s * by;
            }
        }
        if let Some(r) = c.box_half_width {
            for &l in &self.free_leaf_pos {
                tree.pos[l].x = tree.pos[l].x.clamp(-r, r);
                tree.pos[l].y = tree.pos[l].y.clamp(-r, r);
            }
        }
        self.clamp_times(tree);
    }

    fn min_duration(&self) -> f64 {
        MIN_DURATION_FRACTION * self.span
    }

    fn time_bounds(&self, tree: &Tree, v: usize, children: &[Vec<usize>]) -> (f64, f64) {
        let delta = self.min_duration();
        let lo = children[v]
            .iter()
            .map(|&c| tree.t[c])
            .fold(f64::NEG_INFINITY, f64::max)
            + delta;
        let hi = tree.next[v].map_or(f64::INFINITY, |u| tree.t[u]) - delta;
        (lo, hi)
    }

    fn clamp_times(&self, tree: &mut Tree) {
        if self.free_t.is_empty() {
            return;
        }
        let delta = self.min_duration();
        let children = tree.children();
        let is_free = |v: usize| self.free_t.binary_search(&v).is_ok();
        // parents before children
        let mut topo = vec![tree.root()];
        let mut k = 0;
        while k < topo.len() {
            topo.extend_from_slice(&children[topo[k]]);
            k += 1;
        }
        let mut hi = vec![f64::INFINITY; tree.len()];
        for &v in &topo {
            if let Some(u) = tree.next[v] {
                hi[v] = if is_free(u) { hi[u] } else { tree.t[u] } - delta;
            }
        }
        for &v in topo.iter().rev() {
            if is_free(v) {
                let lo = children[v]
                    .iter()
                    .map(|&c| tree.t[c])
                    .fold(f64::NEG_INFINITY, f64::max)
                    + delta;
                tree.t[v] = tree.t[v].min(hi[v]).max(lo);
            }
        }
    }

    /// Gradient restricted to the tangent cone of the feasible set.
    fn projected_gradient(&self, tree: &Tree, c: &Constraints, g: &[f64]) -> Vec<f64> {
        let idx = self.index_of();
        let mut pg = g.to_vec();
        if !self.free_w.is_empty() {
            let floor = self.floor();
            let ks: Vec<usize> = self
                .free_w
                .iter()
                .map(|&l| idx(Var::W(l)).unwrap())
                .collect();
            let mut active: Vec<bool> = vec![true; ks.len()];
            loop {
                let cnt = active.iter().filter(|&&a| a).count().max(1);
                let lam: f64 = ks
                    .iter()
                    .zip(&active)
                    .filter(|(_, &a)| a)
                    .map(|(&k, _)| g[k])
                    .sum::<f64>()
                    / cnt as f64;
                let mut changed = false;
                for (j, &k) in ks.iter().enumerate() {
                    let at_floor = tree.weight[self.free_w[j]] <= floor * (1.0 + 1e-9);
                    if active[j] && at_floor && g[k] - lam > 0.0 {
                        active[j] = false;
                        changed = true;
                    }
                }
                if !changed {
                    for (j, &k) in ks.iter().enumerate() {
                        pg[k] = if active[j] { g[k] - lam } else { 0.0 };
                    }
                    break;
                }
            }
        }
        if c.zero_barycenter && !self.free_leaf_pos.is_empty() {
            let w2: f64 = self
                .free_leaf_pos
                .iter()
                .map(|&l| tree.weight[l] * tree.weight[l])
                .sum();
            for comp in 0..2 {
                let ks: Vec<usize> = self
                    .free_leaf_pos
                    .iter()
                    .map(|&l| idx(if comp == 0 { Var::X(l) } else { Var::Y(l) }).unwrap())
                    .collect();
                let s: f64 = self
                    .free_leaf_pos
                    .iter()
                    .zip(&ks)
                    .map(|(&l, &k)| tree.weight[l] * g[k])
                    .sum();
                for (&l, &k) in self.free_leaf_pos.iter().zip(&ks) {
                    pg[k] -= tree.weight[l] * s / w2;
                }
            }
        }
        if let Some(r) = c.box_half_width {
            for &l in &self.free_leaf_pos {
                for (var, x) in [(Var::X(l), tree.pos[l].x), (Var::Y(l), tree.pos[l].y)] {
                    let k = idx(var).unwrap();
                    if (x >= r && pg[k] < 0.0) || (x <= -r && pg[k] > 0.0) {
                        pg[k] = 0.0;
                    }
                }
            }
        }
        if !self.free_t.is_empty() {
            let children = tree.children();
            let tol = 1e-9 * self.span;
            for &v in &self.free_t {
                let k = idx(Var::T(v)).unwrap();
                let (lo, hi) = self.time_bounds(tree, v, &children);
                if (tree.t[v] <= lo + tol && pg[k] > 0.0) || (tree.t[v] >= hi - tol && pg[k] < 0.0)
                {
                    pg[k] = 0.0;
                }
            }
        }
        pg
    }
}

/// Euclidean projection onto `{w ≥ floor, Σ w = total}`.
pub fn project_simplex(w: &mut [f64], total: f64, floor: f64) {
    let n = w.len();
    if n == 0 {
        return;
    }
    let target = total - floor * n as f64;
    let mut u: Vec<f64> = w.iter().map(|x| x - floor).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let th = (cum - target) / (k + 1) as f64;
        if uk - th > 0.0 {
            theta = th;
        }
    }
    for x in w.iter_mut() {
        *x = (*x - floor - theta).max(0.0) + floor;
    }
    // put the rounding residual on the largest weight
    let s: f64 = w.iter().sum();
    let imax = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[imax] += total - s;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One optimization session: owns the tree and its trace.
#[derive(Debug, Clone)]
pub struct Session {
    pub tree: Tree,
    pub cfg: OptimizerConfig,
    pub constraints: Constraints,
    pub trace: Trace,
}

impl Session {
    pub fn new(
        flow: &PolygonalFlow,
        cfg: OptimizerConfig,
        constraints: Constraints,
    ) -> Result<Session> {
        let tree = Tree::from_flow(flow)?;
        Session::from_tree(tree, cfg, constraints)
    }

    pub fn from_tree(
        tree: Tree,
        cfg: OptimizerConfig,
        constraints: Constraints,
    ) -> Result<Session> {
        cfg.check(tree.eps)?;
        constraints.check(tree.eps)?;
        Ok(Session {
            tree,
            cfg,
            constraints,
            trace: Trace::default(),
        })
    }

    pub fn evaluate(&self) -> Evaluation {
        evaluate(
            &self.tree,
            self.constraints.boundary_term,
            self.cfg.kernel_order,
        )
    }

    pub fn energy(&self) -> f64 {
        self.evaluate().total
    }

    pub fn flow(&self) -> Result<PolygonalFlow> {
        self.tree.to_flow()
    }

    /// Projected descent from the current tree; returns whether the gradient
    /// tolerance was reached.
    pub fn descend(&mut self, max_iters: usize, tag: &str) -> bool {
        let (converged, _) = descend(
            &mut self.tree,
            &self.cfg,
            &self.constraints,
            max_iters,
            &mut self.trace,
            tag,
        );
        self.trace.converged = converged;
        converged
    }
}

/// Core descent loop. Returns `(converged, iterations)`.
pub(crate) fn descend(
    tree: &mut Tree,
    cfg: &OptimizerConfig,
    c: &Constraints,
    max_iters: usize,
    trace: &mut Trace,
    tag: &str,
) -> (bool, usize) {
    let layout = Layout::new(tree, c);
    layout.project(tree, c);
    let eval = |t: &Tree| evaluate(t, c.boundary_term, cfg.kernel_order);
    let mut ev = eval(tree);
    if layout.vars.is_empty() {
        trace.push(&ev, 0.0, tag);
        return (true, 0);
    }
    let mut x = layout.get(tree);
    let mut g = layout.gradient(&ev);
    let mut pg = layout.projected_gradient(tree, c, &g);
    let mut gnorm = sup_norm(&pg);
    trace.push(&ev, gnorm, tag);
    let mut scale = layout.scales(tree, c);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;
    let mut iters = 0;
    let mut first = true;
    while iters < max_iters {
        if gnorm <= cfg.grad_tol {
            return (true, iters);
        }
        if iters % 200 == 199 {
            scale = layout.scales(tree, c);
            memory.clear();
            first = true;
        }
        // quasi-Newton direction in scaled coordinates y = s x
        let q0: Vec<f64> = pg.iter().zip(&scale).map(|(g, s)| g / s).collect();
        let mut q = q0.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = memory.back().map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().zip(&scale).map(|(d, s)| -d / s).collect();
        if dot(&dir, &pg) >= 0.0 {
            memory.clear();
            dir = q0.iter().zip(&scale).map(|(d, s)| -d / s).collect();
        }
        let mut alpha = if first {
            let dn = sup_norm(&q0);
            (cfg.init_step / dn.max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = tree.clone();
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            layout.set(&mut trial, &xt);
            layout.project(&mut trial, c);
            let xp = layout.get(&trial);
            let dx: Vec<f64> = xp.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &dx);
            let evt = eval(&trial);
            let change = evt.delta_from(&ev);
            if evt.total.is_finite()
                && change < 0.0
                && evt.total <= ev.total
                && change <= ARMIJO_C * decrease.min(0.0)
            {
                accepted = Some((trial, xp, evt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, xp, evt)) = accepted else {
            if memory.is_empty() {
                // no descent possible along the scaled gradient
                return (gnorm <= cfg.grad_tol, iters);
            }
            memory.clear();
            first = true;
            stalls += 1;
            if stalls > 3 {
                return (gnorm <= cfg.grad_tol, iters);
            }
            continue;
        };
        let g_new = layout.gradient(&evt);
        let pg_new = layout.projected_gradient(&trial, c, &g_new);
        let s_vec: Vec<f64> = xp
            .iter()
            .zip(&x)
            .zip(&scale)
            .map(|((a, b), s)| (a - b) * s)
            .collect();
        let y_vec: Vec<f64> = pg_new
            .iter()
            .zip(&pg)
            .zip(&scale)
            .map(|((a, b), s)| (a - b) / s)
            .collect();
        let sy = dot(&s_vec, &y_vec);
        if sy > 1e-12 * dot(&s_vec, &s_vec).sqrt() * dot(&y_vec, &y_vec).sqrt() && sy > 0.0 {
            memory.push_back((s_vec, y_vec, 1.0 / sy));
            if memory.len() > cfg.memory {
                memory.pop_front();
            }
        }
        let rel = -evt.delta_from(&ev) / ev.total.abs().max(1e-300);
        stalls = if rel < 1e-19 { stalls + 1 } else { 0 };
        *tree = trial;
        x = xp;
        g = g_new;
        pg = pg_new;
        gnorm = sup_norm(&pg);
        ev = evt;
        first = false;
        iters += 1;
        trace.push(&ev, gnorm, "step");
        if stalls > 10 {
            return (gnorm <= cfg.grad_tol, iters);
        }
    }
    (gnorm <= cfg.grad_tol, iters)
}

/// Projected-gradient minimization of `𝓔` at fixed topology.
pub fn optimize_positions(
    flow: &PolygonalFlow,
    cfg: &OptimizerConfig,
    constraints: &Constraints,
) -> Result<(PolygonalFlow, Trace)> {
    let mut s = Session::new(flow, *cfg, *constraints)?;
    s.descend(cfg.max_iters, "init");
    Ok((s.flow()?, s.trace))
}

/// Projected gradient of the objective at the given tree (sup-norm).
pub fn projected_gradient_norm(tree: &Tree, cfg: &OptimizerConfig, c: &Constraints) -> f64 {
    let layout = Layout::new(tree, c);
    let ev = evaluate(tree, c.boundary_term, cfg.kernel_order);
    let g = layout.gradient(&ev);
    sup_norm(&layout.projected_gradient(tree, c, &g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{equipartition_residual, total_energy_with};
    use crate::flow::samples;
    use crate::geom::Vec2;
    use crate::potential::KernelSpec;

    #[test]
    fn simplex_projection() {
        let mut w = vec![0.5, 0.4, -0.2];
        project_simplex(&mut w, 1.0, 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w[0] - 0.55).abs() < 1e-12 && (w[1] - 0.45).abs() < 1e-12);
        let mut w = vec![0.2, 0.3, 0.5];
        project_simplex(&mut w, 1.0, 1e-3);
        for (a, b) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn static_atom_is_stationary() {
        let f = samples::static_atom(Vec2::ZERO, 1.0, 1.0, 0.1);
        let c = Constraints {
            fix_boundary: true,
            fix_root: true,
            zero_barycenter: true,
            ..Constraints::default()
        };
        let (out, trace) = optimize_positions(&f, &OptimizerConfig::default(), &c).unwrap();
        assert_eq!(out, f);
        assert!(trace.converged);
        assert_eq!(trace.rows.len(), 1);
    }

    #[test]
    fn v_flow_merge_time() {
        let f = samples::v_flow(1.0, 1.0, 2.0, 0.05);
        let c = Constraints {
            boundary_term: false,
            ..Constraints::fixed_ends()
        };
        let cfg = OptimizerConfig {
            grad_tol: 1e-10,
            ..OptimizerConfig::default()
        };
        let (out, trace) = optimize_positions(&f, &cfg, &c).unwrap();
        assert!(trace.converged);
        let tau_star = 1.0 / (2f64.sqrt() - 1.0).sqrt();
        let merge = out.nodes().iter().find(|n| n.t > 0.0 && n.t < 2.0).unwrap();
        assert!((merge.t - tau_star).abs() < 1e-6, "{}", merge.t);
        let br = total_energy_with(&out, &KernelSpec::disk()).unwrap();
        assert!((br.internal - 2.0 * (2f64.sqrt() - 1.0).sqrt()).abs() < 1e-9);
        assert!(equipartition_residual(&out).unwrap().abs() < 1e-8);
        for w in trace.rows.windows(2) {
            assert!(w[1].energy < w[0].energy);
        }
    }

    #[test]
    fn free_weights_keep_mass_and_barycenter() {
        let f = samples::y_flow(
            (Vec2::new(-1.0, 0.0), 0.2),
            (Vec2::new(-0.5, 1.0), 0.3),
            (Vec2::new(1.0, 0.0), 0.5),
            Vec2::new(-0.5, 0.3),
            0.5,
            Vec2::new(0.0, 0.1),
            1.0,
            2.0,
            0.1,
        );
        let c = Constraints {
            zero_barycenter: true,
            fix_root: true,
            ..Constraints::default()
        };
        let mut s = Session::new(
            &f,
            OptimizerConfig {
                max_iters: 300,
                ..OptimizerConfig::default()
            },
            c,
        )
        .unwrap();
        s.descend(300, "init");
        assert!(s.energy() < s.trace.rows[0].energy);
        let leaves = s.tree.leaves();
        let total: f64 = leaves.iter().map(|&l| s.tree.weight[l]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let bary = leaves
            .iter()
            .fold(Vec2::ZERO, |b, &l| b + s.tree.pos[l] * s.tree.weight[l]);
        assert!(bary.norm() < 1e-10);
    }
}
