//! Perimeter, kinetic and internal energy of polygonal flows, in closed form.
//!
//! On an interval `(a, b)` the internal energy is `I = P + E` with
//! `P = ∫ (Σᵢ φᵢ^{1/2} − Φ^{1/2}) dt` and `E = ∫ Σᵢ φᵢ |Ẋᵢ|² dt`. Both are
//! exact edge sums for straight edges.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::PolygonalFlow;
use crate::measure::AtomicMeasure;
use crate::potential::{hminus_half_norm_sq, KernelSpec};
use crate::sum::{ksum, KahanSum};

/// Validity cutoff on ε for [`delta_threshold`].
pub const CONCENTRATION_EPS_CUTOFF: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub perimeter: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub interval: (f64, f64),
    pub boundary_norm_sq: Option<f64>,
    pub total: Option<f64>,
}

impl EnergyBreakdown {
    pub const CSV_HEADER: &'static str = "a,b,P,E,I,boundary_norm_sq,total";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.interval.0,
            self.interval.1,
            self.perimeter,
            self.kinetic,
            self.internal,
            opt(self.boundary_norm_sq),
            opt(self.total)
        )
    }
}

/// `Σ wᵢ^{1/2} − Φ^{1/2}` for a slice.
pub fn perimeter_rate(m: &AtomicMeasure) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    Ok(perimeter_rate_of(&m.weights()))
}

fn perimeter_rate_of(weights: &[f64]) -> f64 {
    let s = ksum(weights.iter().map(|w| w.sqrt()));
    (s - ksum(weights.iter().copied()).sqrt()).max(0.0)
}

/// Exact energy split over `(a, b)`.
pub fn energy_breakdown(flow: &PolygonalFlow, a: f64, b: f64) -> Result<EnergyBreakdown> {
    let (start, end) = (flow.start_time(), flow.horizon());
    if !(a < b && a >= start && b <= end) {
        return Err(Error::InvalidInterval { a, b });
    }
    let mut edge_perim = KahanSum::new();
    let mut kinetic = KahanSum::new();
    // mass changes at node times: +flux at tails, −flux at heads
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * flow.edges().len());
    for (k, e) in flow.edges().iter().enumerate() {
        let (t0, t1) = (flow.node(e.tail).t, flow.node(e.head).t);
        let overlap = t1.min(b) - t0.max(a);
        if overlap <= 0.0 {
            continue;
        }
        edge_perim.add(e.flux.sqrt() * overlap);
        let dur = t1 - t0;
        kinetic.add(e.flux * flow.edge_displacement(k).norm_sq() / (dur * dur) * overlap);
        events.push((t0.max(a), e.flux));
        events.push((t1.min(b), -e.flux));
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut mass = KahanSum::new();
    let mut base = KahanSum::new();
    let mut k = 0;
    while k < events.len() {
        let t = events[k].0;
        while k < events.len() && events[k].0 == t {
            mass.add(events[k].1);
            k += 1;
        }
        if k < events.len() {
            let dt = events[k].0 - t;
            base.add(mass.value().max(0.0).sqrt() * dt);
        }
    }
    let perimeter = edge_perim.value() - base.value();
    let kinetic = kinetic.value();
    Ok(EnergyBreakdown {
        perimeter,
        kinetic,
        internal: perimeter + kinetic,
        interval: (a, b),
        boundary_norm_sq: None,
        total: None,
    })
}

/// Breakdown over the whole time range plus the boundary norm of the
/// irrigated measure (leaves as disks of radius `eps`).
pub fn total_energy(flow: &PolygonalFlow) -> Result<EnergyBreakdown> {
    total_energy_with(flow, &KernelSpec::disk())
}

pub fn total_energy_with(flow: &PolygonalFlow, spec: &KernelSpec) -> Result<EnergyBreakdown> {
    if flow.edges().is_empty() {
        return Err(Error::InvalidFlow("flow has no edges".into()));
    }
    let mut out = energy_breakdown(flow, flow.start_time(), flow.horizon())?;
    let norm = hminus_half_norm_sq(&flow.boundary_measure()?, spec)?;
    out.boundary_norm_sq = Some(norm);
    out.total = Some(out.internal + norm);
    Ok(out)
}

/// Equipartition multiplier `Λ = P − E + Φ |X_root − X₀|² / T` over the
/// flow's time range, where `X₀` is the barycenter of the initial slice.
pub fn equipartition_residual(flow: &PolygonalFlow) -> Result<f64> {
    if flow.edges().is_empty() {
        return Ok(0.0);
    }
    let root = flow.root()?;
    let (start, end) = (flow.start_time(), flow.horizon());
    let br = energy_breakdown(flow, start, end)?;
    let x0 = flow.slice(start)?.barycenter()?;
    let mass = flow.total_mass();
    let d = flow.node(root).pos - x0;
    Ok(br.perimeter - br.kinetic + mass * d.norm_sq() / (end - start))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Concentration {
    /// `(Φ − maxᵢ wᵢ) / Φ`.
    pub delta: f64,
    /// `δ(ε)` when `ε` is below the validity cutoff.
    pub delta_max: Option<f64>,
}

/// Smallest-root threshold `δ(ε)`: the `t < 1/2` with
/// `(1 − t)^{1/2} + t^{1/2} − 1 = ε`, found by bisection.
pub fn delta_threshold(eps: f64) -> Option<f64> {
    if !(eps >= 0.0 && eps <= CONCENTRATION_EPS_CUTOFF) {
        return None;
    }
    let g = |t: f64| (1.0 - t).sqrt() + t.sqrt() - 1.0 - eps;
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Mass outside the heaviest atom, under the small-perimeter hypothesis
/// `Σ wᵢ^{1/2} − Φ^{1/2} ≤ ε Φ^{1/2}`.
pub fn concentration_bound(weights: &[f64], eps: f64) -> Result<Concentration> {
    if weights.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidMeasure("weights must be positive".into()));
    }
    let mass = ksum(weights.iter().copied());
    let rate = perimeter_rate_of(weights);
    if rate > eps * mass.sqrt() {
        return Err(Error::Hypothesis(format!(
            "perimeter rate {rate} exceeds {eps} Φ^(1/2)"
        )));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    let delta = (mass - max) / mass;
    let delta_max = delta_threshold(eps);
    if let Some(dm) = delta_max {
        if delta > dm + 1e-12 {
            return Err(Error::Hypothesis(format!(
                "δ = {delta} exceeds δ(ε) = {dm}"
            )));
        }
    }
    Ok(Concentration { delta, delta_max })
}

/// `Φ^{-1/4} ∫ |x| dμ_t / I(μ, (0, T))`; `0/0` is reported as 0.
pub fn first_moment_diagnostic(flow: &PolygonalFlow, t: f64) -> Result<f64> {
    let slice = flow.slice(t)?;
    let mass = slice.total_mass();
    let num = if mass > 0.0 {
        mass.powf(-0.25) * ksum(slice.atoms().iter().map(|a| a.weight * a.pos.norm()))
    } else {
        0.0
    };
    let i = energy_breakdown(flow, flow.start_time(), flow.horizon())?.internal;
    if i == 0.0 {
        if num == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Hypothesis(
            "zero internal energy with nonzero first moment".into(),
        ));
    }
    Ok(num / i)
}
