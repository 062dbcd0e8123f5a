//! Exact quadratic Wasserstein distance between atomic measures.
//!
//! The transportation problem is solved by successive shortest augmenting
//! paths with Johnson potentials on the dense bipartite residual graph.

use serde::{Deserialize, Serialize};

use crate::energy::energy_breakdown;
use crate::error::{Error, Result};
use crate::flow::PolygonalFlow;
use crate::measure::AtomicMeasure;
use crate::sum::ksum;

/// Absolute tolerance on the total-mass difference.
pub const MASS_TOL: f64 = 1e-10;

/// Largest atom count per side handled by the exact solver.
pub const MAX_ATOMS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,mass\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.17e}\n", e.source, e.target, e.mass));
        }
        out
    }

    /// Row and column sums of the plan.
    pub fn marginals(&self, n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        for e in &self.entries {
            rows[e.source] += e.mass;
            cols[e.target] += e.mass;
        }
        (rows, cols)
    }
}

/// `W²(a, b)` with an optimal plan.
pub fn wasserstein2(a: &AtomicMeasure, b: &AtomicMeasure) -> Result<(f64, TransportPlan)> {
    let (pa, pb) = (a.total_mass(), b.total_mass());
    if (pa - pb).abs() > MASS_TOL {
        return Err(Error::MassMismatch(pa, pb));
    }
    let (n, m) = (a.len(), b.len());
    if n > MAX_ATOMS || m > MAX_ATOMS {
        return Err(Error::TooLarge(format!(
            "{n}×{m} atoms exceeds the exact solver limit {MAX_ATOMS}"
        )));
    }
    let supply: Vec<f64> = a.weights();
    let demand: Vec<f64> = b.weights().iter().map(|w| w * pa / pb).collect();
    let cost: Vec<Vec<f64>> = a
        .atoms()
        .iter()
        .map(|x| {
            b.atoms()
                .iter()
                .map(|y| x.pos.dist(y.pos).powi(2))
                .collect()
        })
        .collect();
    let flow = solve_transportation(&supply, &demand, &cost);
    let mut entries = Vec::new();
    for (i, row) in flow.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            if f > 0.0 {
                entries.push(PlanEntry {
                    source: i,
                    target: j,
                    mass: f,
                });
            }
        }
    }
    let total = ksum(entries.iter().map(|e| e.mass * cost[e.source][e.target]));
    Ok((
        total,
        TransportPlan {
            entries,
            cost: total,
        },
    ))
}

/// Dense transportation problem; returns the optimal flow matrix.
fn solve_transportation(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m) = (supply.len(), demand.len());
    let scale = supply.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let tiny = 1e-15 * scale;
    let mut x = vec![vec![0.0; m]; n];
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    // node potentials: sources 0..n, targets n..n+m
    let mut pot = vec![0.0; n + m];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| cost[i][j]).fold(f64::INFINITY, f64::min);
    }
    loop {
        if sup.iter().all(|&s| s <= tiny) || dem.iter().all(|&d| d <= tiny) {
            break;
        }
        // Dijkstra from all sources with residual supply
        let size = n + m;
        let mut dist = vec![f64::INFINITY; size];
        let mut prev = vec![usize::MAX; size];
        let mut done = vec![false; size];
        for i in 0..n {
            if sup[i] > tiny {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut v = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < best {
                    best = d;
                    v = k;
                }
            }
            if v == usize::MAX {
                break;
            }
            done[v] = true;
            if v < n {
                for j in 0..m {
                    let w = n + j;
                    if done[w] {
                        continue;
                    }
                    let rc = (cost[v][j] + pot[v] - pot[w]).max(0.0);
                    if best + rc < dist[w] {
                        dist[w] = best + rc;
                        prev[w] = v;
                    }
                }
            } else {
                let j = v - n;
                for i in 0..n {
                    if done[i] || x[i][j] <= tiny {
                        continue;
                    }
                    let rc = (-cost[i][j] + pot[v] - pot[i]).max(0.0);
                    if best + rc < dist[i] {
                        dist[i] = best + rc;
                        prev[i] = v;
                    }
                }
            }
        }
        let Some(target) = (0..m)
            .filter(|&j| dem[j] > tiny && dist[n + j].is_finite())
            .min_by(|&p, &q| dist[n + p].total_cmp(&dist[n + q]))
        else {
            break;
        };
        let dt = dist[n + target];
        for k in 0..size {
            pot[k] += dist[k].min(dt);
        }
        // bottleneck along the path
        let mut amount = dem[target];
        let mut v = n + target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                amount = amount.min(x[v][u - n]);
            }
            v = u;
        }
        amount = amount.min(sup[v]);
        let mut v = n + target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                x[u][v - n] += amount;
            } else {
                x[v][u - n] -= amount;
                if x[v][u - n] <= tiny {
                    x[v][u - n] = 0.0;
                }
            }
            v = u;
        }
        sup[v] -= amount;
        dem[target] -= amount;
    }
    x
}

/// Removes cycles from the support of an optimal plan so that it becomes a
/// forest in the bipartite source–target graph. Mass is pushed around each
/// cycle in the direction that does not increase the cost.
pub fn basic_plan(plan: &TransportPlan, a: &AtomicMeasure, b: &AtomicMeasure) -> TransportPlan {
    let n = a.len();
    let cost = |e: &PlanEntry| {
        a.atoms()[e.source]
            .pos
            .dist(b.atoms()[e.target].pos)
            .powi(2)
    };
    let mut entries: Vec<PlanEntry> = plan
        .entries
        .iter()
        .filter(|e| e.mass > 0.0)
        .cloned()
        .collect();
    while let Some(cycle) = support_cycle(&entries, n, b.len()) {
        // cycle alternates +, −, +, ... along the listed entries
        let delta: f64 = cycle
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                if k % 2 == 0 {
                    cost(&entries[e])
                } else {
                    -cost(&entries[e])
                }
            })
            .sum();
        let sign = if delta <= 0.0 { 1.0 } else { -1.0 };
        let decreasing: Vec<usize> = cycle
            .iter()
            .enumerate()
            .filter(|(k, _)| (k % 2 == 0) != (sign > 0.0))
            .map(|(_, &e)| e)
            .collect();
        let argmin = *decreasing
            .iter()
            .min_by(|&&p, &&q| entries[p].mass.total_cmp(&entries[q].mass))
            .unwrap();
        let theta = entries[argmin].mass;
        for (k, &e) in cycle.iter().enumerate() {
            let s = if k % 2 == 0 { sign } else { -sign };
            entries[e].mass += s * theta;
        }
        entries[argmin].mass = 0.0;
        entries.retain(|e| e.mass > 0.0);
    }
    let total = ksum(entries.iter().map(|e| e.mass * cost(e)));
    TransportPlan {
        entries,
        cost: total,
    }
}

/// A cycle in the bipartite support graph as a list of entry indices.
fn support_cycle(entries: &[PlanEntry], n: usize, m: usize) -> Option<Vec<usize>> {
    // vertices: sources 0..n, targets n..n+m
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    for (k, e) in entries.iter().enumerate() {
        adj[e.source].push((n + e.target, k));
        adj[n + e.target].push((e.source, k));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    for root in 0..n + m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &(w, k) in &adj[v] {
                if parent[v].map(|p| p.1) == Some(k) {
                    continue;
                }
                if seen[w] {
                    // close the cycle through the tree paths of v and w
                    let path = |mut x: usize| {
                        let mut p = vec![x];
                        while let Some((y, _)) = parent[x] {
                            x = y;
                            p.push(x);
                        }
                        p
                    };
                    let (pv, pw) = (path(v), path(w));
                    let common = *pv.iter().find(|x| pw.contains(x)).unwrap();
                    let mut cyc = Vec::new();
                    let mut x = v;
                    while x != common {
                        let (y, e) = parent[x].unwrap();
                        cyc.push(e);
                        x = y;
                    }
                    let mut tail = Vec::new();
                    let mut x = w;
                    while x != common {
                        let (y, e) = parent[x].unwrap();
                        tail.push(e);
                        x = y;
                    }
                    // v → common, then common → w, then w → v
                    cyc.extend(tail.into_iter().rev());
                    cyc.push(k);
                    return Some(cyc);
                }
                seen[w] = true;
                parent[w] = Some((v, k));
                stack.push(w);
            }
        }
    }
    None
}

/// `E(flow, (a, b)) − W²(μ_a, μ_b)/(b − a)`, nonnegative up to rounding.
pub fn bb_gap(flow: &PolygonalFlow, a: f64, b: f64) -> Result<f64> {
    if !(a < b) || a < flow.start_time() || b > flow.horizon() {
        return Err(Error::InvalidInterval { a, b });
    }
    let e = energy_breakdown(flow, a, b)?.kinetic;
    let (w2, _) = wasserstein2(&flow.slice(a)?, &flow.slice(b)?)?;
    Ok(e - w2 / (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::samples;
    use crate::geom::Vec2;

    fn m(points: &[([f64; 2], f64)]) -> AtomicMeasure {
        AtomicMeasure::from_points(points.iter().map(|&(p, w)| (Vec2::from(p), w)), 0.0).unwrap()
    }

    #[test]
    fn forced_plans() {
        let (c, plan) = wasserstein2(
            &m(&[([-1.0, 0.0], 0.5), ([1.0, 0.0], 0.5)]),
            &m(&[([0.0, 0.0], 1.0)]),
        )
        .unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert_eq!(plan.entries.len(), 2);
        let (c, _) = wasserstein2(&m(&[([0.0, 0.0], 1.0)]), &m(&[([3.0, 4.0], 1.0)])).unwrap();
        assert!((c - 25.0).abs() < 1e-13);
    }

    #[test]
    fn identical_measures_use_identity_plan() {
        let a = m(&[([0.0, 0.0], 0.3), ([1.0, 2.0], 0.2), ([-1.0, 0.5], 0.5)]);
        let (c, plan) = wasserstein2(&a, &a).unwrap();
        assert_eq!(c, 0.0);
        assert!(plan.entries.iter().all(|e| e.source == e.target));
    }

    #[test]
    fn crossing_is_avoided() {
        let a = m(&[([0.0, 0.0], 0.5), ([1.0, 0.0], 0.5)]);
        let b = m(&[([0.0, 1.0], 0.5), ([1.0, 1.0], 0.5)]);
        let (c, _) = wasserstein2(&a, &b).unwrap();
        assert!((c - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mass_checks() {
        let a = m(&[([0.0, 0.0], 1.0)]);
        let b = m(&[([0.0, 0.0], 1.1)]);
        assert!(matches!(wasserstein2(&a, &b), Err(Error::MassMismatch(..))));
        let c = m(&[([1.0, 0.0], 1.0 + 5e-11)]);
        let (cost, plan) = wasserstein2(&a, &c).unwrap();
        assert!((cost - 1.0).abs() < 1e-9);
        let (rows, cols) = plan.marginals(1, 1);
        assert!((rows[0] - 1.0).abs() < 1e-12 && (cols[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bb_gap_examples() {
        let v = samples::v_flow(1.0, 1.0, 1.0, 0.05);
        assert!(bb_gap(&v, 0.0, 1.0).unwrap().abs() < 1e-12);
        let s = samples::static_atom(Vec2::new(0.3, 0.1), 1.0, 2.0, 0.05);
        assert_eq!(bb_gap(&s, 0.0, 2.0).unwrap(), 0.0);
        assert!(bb_gap(&v, 0.5, 0.5).is_err());
        assert!(bb_gap(&v, 0.0, 3.0).is_err());
    }

    #[test]
    fn csv_export() {
        let (_, plan) = wasserstein2(&m(&[([0.0, 0.0], 1.0)]), &m(&[([3.0, 4.0], 1.0)])).unwrap();
        let csv = plan.to_csv();
        assert!(csv.starts_with("source,target,mass\n0,0,"));
    }
}
