//! Landscape function, first-variation residuals, equipartition and the
//! shrink competitor on rooted trees.

use serde::{Deserialize, Serialize};

use crate::energy::{energy_breakdown, equipartition_residual, total_energy_with, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::flow::{Direction, NodeId, PolygonalFlow};
use crate::geom::Vec2;
use crate::potential::KernelSpec;

use super::objective::evaluate;
use super::tree::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Mass-weighted mean of `z + 2u − K` (zero up to rounding).
    pub mean: f64,
    /// Largest `|z + 2u − K|` over leaves.
    pub max: f64,
    /// Mass-weighted coefficient of variation of `z + 2u`.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeValues {
    /// `(leaf id, z)`.
    pub z: Vec<(NodeId, f64)>,
    /// Disk-averaged potential at each leaf (zero without the boundary term).
    pub u: Vec<f64>,
    pub weights: Vec<f64>,
    pub constant_k: f64,
    pub residual_stats: ResidualStats,
}

/// Landscape values per leaf. `K` is the mass-weighted mean of `z + 2u`,
/// `(½P + E + ½ Φ^{1/2} T + 2 ‖μ₀‖²) / Φ`.
pub fn landscape(flow: &PolygonalFlow, boundary: bool) -> Result<LandscapeValues> {
    let tree = Tree::from_flow(flow)?;
    if boundary && !(tree.eps > 0.0) {
        return Err(Error::MissingRadius);
    }
    let ev = evaluate(&tree, boundary, KernelSpec::disk().order);
    let leaves = tree.leaves();
    let phi = tree.total_mass();
    let span = tree.horizon() - tree.start_time();
    let k = (0.5 * ev.perimeter + ev.kinetic + 0.5 * phi.sqrt() * span + 2.0 * ev.boundary) / phi;
    let (mut mean, mut max, mut var) = (0.0, 0.0f64, 0.0);
    for &l in &leaves {
        let r = ev.z[l] + 2.0 * ev.u[l] - k;
        mean += tree.weight[l] * r;
        var += tree.weight[l] * r * r;
        max = max.max(r.abs());
    }
    mean /= phi;
    var /= phi;
    Ok(LandscapeValues {
        z: leaves.iter().map(|&l| (tree.ids[l], ev.z[l])).collect(),
        u: leaves.iter().map(|&l| ev.u[l]).collect(),
        weights: leaves.iter().map(|&l| tree.weight[l]).collect(),
        constant_k: k,
        residual_stats: ResidualStats {
            mean,
            max,
            cv: var.sqrt() / k,
        },
    })
}

/// Statistics of `z + 2u − K` across leaves.
pub fn first_variation_residual(flow: &PolygonalFlow, boundary: bool) -> Result<ResidualStats> {
    Ok(landscape(flow, boundary)?.residual_stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquipartitionEntry {
    pub node: NodeId,
    pub lambda: f64,
    pub internal: f64,
}

/// `Λ` and `I` of the backward subsystem of every non-leaf node.
pub fn equipartition_report(flow: &PolygonalFlow) -> Result<Vec<EquipartitionEntry>> {
    let adj = flow.adjacency();
    let mut out = Vec::new();
    for (i, n) in flow.nodes().iter().enumerate() {
        if adj.incoming[i].is_empty() {
            continue;
        }
        let sub = flow.extract_subsystem(n.id, Direction::Backward)?;
        let br = energy_breakdown(&sub, sub.start_time(), sub.horizon())?;
        out.push(EquipartitionEntry {
            node: n.id,
            lambda: equipartition_residual(&sub)?,
            internal: br.internal,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub node: NodeId,
    pub lambda: f64,
    pub energy: f64,
    pub competitor_energy: f64,
    /// `𝓔(competitor) − 𝓔(flow)`.
    pub gap: f64,
    pub delta_perimeter: f64,
    pub delta_kinetic: f64,
    pub delta_boundary: f64,
    /// Kinetic energy of the subsystem seen from its barycenter.
    pub kinetic_centered: f64,
}

impl ShrinkReport {
    /// `−(1 − λ²) E_centered`.
    pub fn expected_delta_kinetic(&self) -> f64 {
        -(1.0 - self.lambda * self.lambda) * self.kinetic_centered
    }
}

/// Node indices upstream of `v` (including `v`).
fn upstream(tree: &Tree, v: usize) -> Vec<bool> {
    let mut inside = vec![false; tree.len()];
    inside[v] = true;
    let mut order = tree.order();
    order.reverse();
    // later nodes first, so heads are decided before tails
    for &w in &order {
        if let Some(u) = tree.next[w] {
            if inside[u] {
                inside[w] = true;
            }
        }
    }
    inside
}

/// Contracts the backward subsystem of `node` by `lambda` about its own
/// barycenter path, leaving the rest of the flow untouched.
pub fn shrink_competitor(flow: &PolygonalFlow, node: NodeId, lambda: f64) -> Result<PolygonalFlow> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidFactor(lambda));
    }
    let idx = flow.index_of(node)?;
    let tree = Tree::from_flow(flow)?;
    if tree.is_leaf(idx) {
        return Err(Error::EmptySubsystem(node));
    }
    if lambda == 1.0 {
        return Ok(flow.clone());
    }
    let sub = flow.extract_subsystem(node, Direction::Backward)?;
    let center = sub.barycenter_path()?;
    let mut t = tree.clone();
    let inside = upstream(&tree, idx);
    let mut next_id = tree.next_id();
    for w in 0..tree.len() {
        if !inside[w] || w == idx {
            continue;
        }
        let u = tree.next[w].unwrap();
        let (t0, t1) = (tree.t[w], tree.t[u]);
        let mut prev = w;
        for &s in center.times().iter().filter(|&&s| s > t0 && s < t1) {
            let n = t.add_node(
                tree.pos[w].lerp(tree.pos[u], (s - t0) / (t1 - t0)),
                s,
                Some(u),
            );
            t.ids[n] = next_id;
            next_id += 1;
            t.next[prev] = Some(n);
            prev = n;
        }
    }
    let inside_t = upstream(&t, idx);
    for w in 0..t.len() {
        if inside_t[w] && w != idx {
            let c = center.eval(t.t[w]);
            t.pos[w] = c + (t.pos[w] - c) * lambda;
        }
    }
    t.to_flow()
}

/// Minimality gap of the shrink competitor at `node` and its decomposition.
pub fn shrink_competitor_test(
    flow: &PolygonalFlow,
    node: NodeId,
    lambda: f64,
    spec: &KernelSpec,
) -> Result<ShrinkReport> {
    let competitor = shrink_competitor(flow, node, lambda)?;
    let base = total_energy_with(flow, spec)?;
    let comp = if lambda == 1.0 {
        base
    } else {
        total_energy_with(&competitor, spec)?
    };
    let sub = flow.extract_subsystem(node, Direction::Backward)?;
    let (shifted, _) = sub.barycenter_shift()?;
    let centered = energy_breakdown(&shifted, shifted.start_time(), shifted.horizon())?;
    let total = |b: &EnergyBreakdown| b.total.unwrap_or(b.internal);
    let boundary = |b: &EnergyBreakdown| b.boundary_norm_sq.unwrap_or(0.0);
    Ok(ShrinkReport {
        node,
        lambda,
        energy: total(&base),
        competitor_energy: total(&comp),
        gap: total(&comp) - total(&base),
        delta_perimeter: comp.perimeter - base.perimeter,
        delta_kinetic: comp.kinetic - base.kinetic,
        delta_boundary: boundary(&comp) - boundary(&base),
        kinetic_centered: centered.kinetic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct APrioriDiagnostics {
    /// Earliest time after which the flow is a single atom.
    pub collapse_time: f64,
    /// `max |x − X̄| / T̄^{1/2}` over leaves, `T̄` the collapse time.
    pub scaled_spread: f64,
    /// `max z − T/2` over leaves.
    pub max_landscape_excess: f64,
}

pub fn a_priori_diagnostics(flow: &PolygonalFlow) -> Result<APrioriDiagnostics> {
    let tree = Tree::from_flow(flow)?;
    let m = tree.masses();
    let phi = tree.total_mass();
    let t0 = tree.start_time();
    let collapse = (0..tree.len())
        .filter(|&v| m[v] >= phi * (1.0 - 1e-12))
        .map(|v| tree.t[v])
        .fold(f64::INFINITY, f64::min);
    let leaves = tree.leaves();
    let bary = leaves
        .iter()
        .fold(Vec2::ZERO, |b, &l| b + tree.pos[l] * tree.weight[l])
        / phi;
    let spread = leaves
        .iter()
        .map(|&l| tree.pos[l].dist(bary))
        .fold(0.0, f64::max);
    let tbar = collapse - t0;
    let ev = evaluate(&tree, false, KernelSpec::disk().order);
    let half = 0.5 * (tree.horizon() - t0);
    Ok(APrioriDiagnostics {
        collapse_time: collapse,
        scaled_spread: if tbar > 0.0 {
            spread / tbar.sqrt()
        } else {
            0.0
        },
        max_landscape_excess: leaves
            .iter()
            .map(|&l| ev.z[l] - half)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::samples;

    #[test]
    fn landscape_of_symmetric_v() {
        let (d, tau, horizon) = (0.7, 0.9, 2.0);
        let f = samples::v_flow(d, tau, horizon, 0.05);
        let l = landscape(&f, false).unwrap();
        let expect = 2f64.sqrt() / 2.0 * tau + d * d / tau + (horizon - tau) / 2.0;
        for &(_, z) in &l.z {
            assert!((z - expect).abs() < 1e-14);
        }
        assert!(l.residual_stats.cv < 1e-14);
    }

    #[test]
    fn single_leaf_residual_is_zero() {
        let f = samples::straight(Vec2::new(0.2, 0.1), Vec2::ZERO, 1.0, 1.0, 0.1);
        let r = first_variation_residual(&f, true).unwrap();
        assert!(r.max < 1e-14 && r.cv < 1e-14);
    }

    #[test]
    fn identity_shrink_has_zero_gap() {
        let f = samples::v_flow(1.0, 1.0, 2.0, 0.05);
        let root = f.node(f.root().unwrap()).id;
        let r = shrink_competitor_test(&f, root, 1.0, &KernelSpec::disk()).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(shrink_competitor_test(&f, 0, 0.5, &KernelSpec::disk()).is_err());
        assert!(shrink_competitor_test(&f, 99, 0.5, &KernelSpec::disk()).is_err());
    }

    #[test]
    fn shrink_kinetic_decomposition() {
        let f = samples::y_flow(
            (Vec2::new(-1.0, 0.2), 0.2),
            (Vec2::new(-0.4, 1.0), 0.3),
            (Vec2::new(1.0, -0.3), 0.5),
            Vec2::new(-0.5, 0.4),
            0.6,
            Vec2::new(0.1, 0.1),
            1.2,
            2.0,
            0.1,
        );
        for id in [3, 4, 5] {
            let r = shrink_competitor_test(&f, id, 0.5, &KernelSpec::disk()).unwrap();
            assert!(r.delta_perimeter.abs() < 1e-12);
            assert!(
                (r.delta_kinetic - r.expected_delta_kinetic()).abs()
                    < 1e-12 * r.kinetic_centered.max(1.0),
                "{r:?}"
            );
        }
    }

    #[test]
    fn spread_out_flow_is_improvable() {
        // leaves far apart with a late merge: contracting saves kinetic energy
        let f = samples::v_flow(3.0, 1.9, 2.0, 0.5);
        let id = f.nodes().iter().find(|n| n.t == 1.9).unwrap().id;
        let r = shrink_competitor_test(&f, id, 0.5, &KernelSpec::disk()).unwrap();
        assert!(r.gap < 0.0, "{r:?}");
    }

    #[test]
    fn equipartition_at_v_optimum() {
        let tau = 1.0 / (2f64.sqrt() - 1.0).sqrt();
        let f = samples::v_flow(1.0, tau, 2.0, 0.05);
        let rep = equipartition_report(&f).unwrap();
        let root = rep.iter().find(|e| e.node == 3).unwrap();
        assert!(root.lambda.abs() < 1e-12);
    }
}
