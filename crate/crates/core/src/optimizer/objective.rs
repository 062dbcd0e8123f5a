//! `𝓔 = P + E + N` on a rooted tree with analytic gradients in node
//! positions, node times and leaf weights.

use crate::geom::Vec2;
use crate::potential::{disk_energy_tabulated, PairTable};
use crate::sum::KahanSum;

use super::tree::Tree;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub perimeter: f64,
    pub kinetic: f64,
    pub boundary: f64,
    pub total: f64,
    pub grad_pos: Vec<Vec2>,
    pub grad_t: Vec<f64>,
    /// Per-node leaf-weight derivative (zero at non-leaves).
    pub grad_w: Vec<f64>,
    /// Landscape `z` per node: accumulated `½ φ^{-1/2} Δt + |Δx|²/Δt` to the root.
    pub z: Vec<f64>,
    /// Disk-averaged potential of the boundary measure at each leaf.
    pub u: Vec<f64>,
    /// Individual summands of `total` in a layout fixed by the topology.
    pub terms: Vec<f64>,
}

impl Evaluation {
    /// `self.total − base.total` summed term by term, which resolves changes
    /// far below the rounding of the totals. Both evaluations must come from
    /// trees of the same topology.
    pub fn delta_from(&self, base: &Evaluation) -> f64 {
        if self.terms.len() != base.terms.len() {
            return self.total - base.total;
        }
        let mut s = KahanSum::new();
        for (a, b) in self.terms.iter().zip(&base.terms) {
            s.add(a - b);
        }
        s.value()
    }
}

/// Evaluates the energy. The boundary term (disks of radius `tree.eps` at the
/// leaves, near pairs tabulated with quadrature order `order`) is skipped when
/// `boundary` is false.
pub fn evaluate(tree: &Tree, boundary: bool, order: usize) -> Evaluation {
    let n = tree.len();
    let m = tree.masses();
    let root = tree.root();
    let phi = m[root];
    let span = tree.t[root] - tree.start_time();
    let mut perim = KahanSum::new();
    let mut kin = KahanSum::new();
    let mut grad_pos = vec![Vec2::ZERO; n];
    let mut grad_t = vec![0.0; n];
    let mut g_edge = vec![0.0; n];
    let mut terms = Vec::with_capacity(2 * n + 1);
    for v in 0..n {
        let Some(u) = tree.next[v] else { continue };
        let dt = tree.t[u] - tree.t[v];
        let dx = tree.pos[u] - tree.pos[v];
        let d2 = dx.norm_sq();
        let sm = m[v].sqrt();
        perim.add(sm * dt);
        kin.add(m[v] * d2 / dt);
        terms.push(sm * dt);
        terms.push(m[v] * d2 / dt);
        let gx = dx * (2.0 * m[v] / dt);
        grad_pos[u] += gx;
        grad_pos[v] -= gx;
        let gt = sm - m[v] * d2 / (dt * dt);
        grad_t[u] += gt;
        grad_t[v] -= gt;
        g_edge[v] = if sm > 0.0 {
            0.5 * dt / sm
        } else {
            f64::INFINITY
        } + d2 / dt;
    }
    perim.add(-phi.sqrt() * span);
    terms.push(-phi.sqrt() * span);
    let mut z = vec![0.0; n];
    let mut order_desc = tree.order();
    order_desc.reverse();
    for &v in &order_desc {
        if let Some(u) = tree.next[v] {
            z[v] = g_edge[v] + z[u];
        }
    }
    let leaves = tree.leaves();
    let base = if phi > 0.0 {
        -0.5 * span / phi.sqrt()
    } else {
        0.0
    };
    let mut grad_w = vec![0.0; n];
    for &l in &leaves {
        grad_w[l] = z[l] + base;
    }
    let mut u_leaf = vec![0.0; n];
    let mut boundary_value = 0.0;
    if boundary {
        let centers: Vec<Vec2> = leaves.iter().map(|&l| tree.pos[l]).collect();
        let weights: Vec<f64> = leaves.iter().map(|&l| tree.weight[l]).collect();
        let radii = vec![tree.eps; leaves.len()];
        let table = PairTable::shared(tree.eps, order);
        let de = disk_energy_tabulated(&centers, &weights, &radii, &table, true);
        boundary_value = de.energy;
        terms.extend_from_slice(&de.terms);
        for (k, &l) in leaves.iter().enumerate() {
            grad_pos[l] += de.grad_centers[k];
            grad_w[l] += 2.0 * de.potentials[k];
            u_leaf[l] = de.potentials[k];
        }
    }
    let (p, e) = (perim.value(), kin.value());
    Evaluation {
        perimeter: p,
        kinetic: e,
        boundary: boundary_value,
        total: p + e + boundary_value,
        grad_pos,
        grad_t,
        grad_w,
        z,
        u: u_leaf,
        terms,
    }
}
