//! Coulomb potential `u = μ * |x|^{-1}` and the `H^{-1/2}` norm
//! `∫∫ |x − y|^{-1} dμ dμ` of atomic measures.
//!
//! In disk mode every atom is a uniform disk of its radius, which keeps the
//! norm finite. Disk potentials are closed forms in complete elliptic
//! integrals; disk–disk interactions use an exact multipole series when the
//! disks are well apart and polar Gauss–Legendre quadrature otherwise.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::measure::AtomicMeasure;
use crate::sum::{ksum, KahanSum};

/// Self-energy `∫∫ |x−y|^{-1}` of the uniform unit-mass disk of radius 1.
pub const UNIT_DISK_SELF_ENERGY: f64 = 16.0 / (3.0 * PI);

/// Pairs with center distance at least this multiple of `r₁ + r₂` use the series.
const SERIES_SEPARATION: f64 = 2.0;

/// Tabulated pairs take series values from this multiple of `r₁ + r₂` on, so
/// the table joins the series smoothly at [`SERIES_SEPARATION`].
const TABLE_SERIES_SEPARATION: f64 = 1.25;

const SERIES_TERMS: usize = 60;
const PARALLEL_MIN_DISKS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelMode {
    /// Atoms are Dirac masses; self-interaction is either excluded or refused.
    Pure { include_self: bool },
    /// Atoms are uniform disks of their own radii.
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub mode: KernelMode,
    /// Radial Gauss–Legendre order for near-field disk pairs (angular order is twice this).
    pub order: usize,
}

impl KernelSpec {
    pub fn disk() -> Self {
        Self {
            mode: KernelMode::Disk,
            order: 16,
        }
    }

    pub fn pure() -> Self {
        Self {
            mode: KernelMode::Pure {
                include_self: false,
            },
            order: 16,
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order.max(2);
        self
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::disk()
    }
}

/// `(K(k), E(k))` by the arithmetic–geometric mean, `0 ≤ k < 1`.
pub fn elliptic_ke(k: f64) -> (f64, f64) {
    let k = k.clamp(0.0, 1.0 - 1e-16);
    let mut a = 1.0;
    let mut b = (1.0 - k * k).sqrt();
    let mut c = k;
    let mut sum = 0.5 * c * c;
    let mut pow = 0.5;
    for _ in 0..64 {
        if c.abs() < 1e-17 * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let kk = PI / (2.0 * a);
    (kk, kk * (1.0 - sum))
}

/// `b_n² = (C(2n, n) / 4ⁿ)²`.
fn central_sq(n: usize) -> f64 {
    let mut b = 1.0;
    for j in 1..=n {
        b *= (2 * j - 1) as f64 / (2 * j) as f64;
    }
    b * b
}

fn central_sq_table() -> &'static [f64] {
    static T: OnceLock<Vec<f64>> = OnceLock::new();
    T.get_or_init(|| (0..=SERIES_TERMS).map(central_sq).collect())
}

/// Potential of a uniform disk of mass `w` and radius `a` at distance `rho`
/// from its center, and its radial derivative.
pub fn disk_potential(rho: f64, a: f64, w: f64) -> (f64, f64) {
    if a == 0.0 {
        return (w / rho, -w / (rho * rho));
    }
    let b2 = central_sq_table();
    if rho > a {
        let k = a / rho;
        if k < 0.5 {
            // u = (w/ρ) Σ bₙ²/(n+1) k^{2n}
            let k2 = k * k;
            let (mut s, mut ds, mut p) = (0.0, 0.0, 1.0);
            for (n, &bn) in b2.iter().enumerate() {
                let t = bn / (n + 1) as f64 * p;
                s += t;
                ds += (2 * n + 1) as f64 * t;
                p *= k2;
                if t < 1e-18 * s {
                    break;
                }
            }
            return (w / rho * s, -w / (rho * rho) * ds);
        }
        let (kk, ee) = elliptic_ke(k);
        let sigma = w / (PI * a * a);
        let u = 4.0 * sigma * rho * (ee - (1.0 - k * k) * kk);
        let du = 4.0 * sigma * (ee - kk);
        (u, du)
    } else {
        let k = rho / a;
        let sigma = w / (PI * a * a);
        if k < 0.5 {
            // E = π/2 (1 − Σ_{n≥1} bₙ² k^{2n}/(2n−1)), (E − K)/k = −π/2 Σ_{n≥1} bₙ² 2n k^{2n−1}/(2n−1)
            let k2 = k * k;
            let (mut e, mut d, mut p) = (1.0, 0.0, k2);
            for (n, &bn) in b2.iter().enumerate().skip(1) {
                let t = bn * p / (2 * n - 1) as f64;
                e -= t;
                d -= 2.0 * n as f64 * t;
                p *= k2;
                if t < 1e-18 {
                    break;
                }
            }
            let u = 4.0 * sigma * a * (PI / 2.0) * e;
            let du = if k > 0.0 {
                4.0 * sigma * (PI / 2.0) * d / k
            } else {
                0.0
            };
            return (u, du);
        }
        let (kk, ee) = elliptic_ke(k);
        (4.0 * sigma * a * ee, 4.0 * sigma * (ee - kk) / k)
    }
}

/// Self-energy of a uniform disk of mass `w` and radius `r`.
pub fn disk_self_energy(w: f64, r: f64) -> f64 {
    w * w * UNIT_DISK_SELF_ENERGY / r
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Quadrature nodes for the uniform probability measure on the unit disk.
fn disk_rule(order: usize) -> &'static [(Vec2, f64)] {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static [(Vec2, f64)]>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(order).or_insert_with(|| {
        let radial = gauss_legendre01(order);
        let nth = 2 * order;
        let mut nodes = Vec::with_capacity(order * nth);
        for &(s, ws) in &radial {
            for j in 0..nth {
                let th = 2.0 * PI * (j as f64 + 0.5) / nth as f64;
                // density 2ρ dρ on [0, 1]
                nodes.push((
                    Vec2::new(s * th.cos(), s * th.sin()),
                    2.0 * s * ws / nth as f64,
                ));
            }
        }
        Box::leak(nodes.into_boxed_slice())
    })
}

/// Series coefficients `aₘ = bₘ² E|s|^{2m}` where `s` is the difference of
/// independent uniform points of disks of radii `r1`, `r2`.
fn pair_series_coeffs(r1: f64, r2: f64) -> Vec<f64> {
    let b2 = central_sq_table();
    let mut binom = vec![1.0f64];
    (0..=SERIES_TERMS)
        .map(|m| {
            if m > 0 {
                let mut next = vec![1.0; m + 1];
                for j in 1..m {
                    next[j] = binom[j - 1] + binom[j];
                }
                binom = next;
            }
            let moment: f64 = (0..=m)
                .map(|j| {
                    binom[j] * binom[j] * r1.powi(2 * j as i32) / (j + 1) as f64
                        * r2.powi(2 * (m - j) as i32)
                        / (m - j + 1) as f64
                })
                .sum();
            b2[m] * moment
        })
        .collect()
}

/// Interaction of two unit-mass uniform disks: `G = ∫∫ |x−y|^{-1}` and
/// `∂G/∂c₁` (the gradient with respect to the first center).
struct PairKernel {
    order: usize,
    last: Option<((u64, u64), Arc<[f64]>)>,
    table: Option<Arc<PairTable>>,
}

/// Near-field interaction `G(d)` of two uniform disks of equal radius,
/// tabulated from quadrature (series once the disks are well apart) and read
/// back by cubic Hermite interpolation. The returned derivative is that of
/// the interpolant, and both are continuous at the series switch.
#[derive(Debug)]
pub struct PairTable {
    radius: f64,
    order: usize,
    h: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl PairTable {
    const INTERVALS: usize = 4096;

    fn build(radius: f64, order: usize) -> Self {
        let dmax = SERIES_SEPARATION * 2.0 * radius;
        let h = dmax / Self::INTERVALS as f64;
        let mut kernel = PairKernel::new(order);
        let (g, dg) = (0..=Self::INTERVALS)
            .map(|k| {
                let d = k as f64 * h;
                if d >= TABLE_SERIES_SEPARATION * 2.0 * radius {
                    return kernel.series(d, radius, radius);
                }
                let (g, grad) = kernel.quadrature(Vec2::new(d, 0.0), radius, Vec2::ZERO, radius);
                (g, if k == 0 { 0.0 } else { grad.x })
            })
            .unzip();
        Self {
            radius,
            order,
            h,
            g,
            dg,
        }
    }

    /// Process-wide table for disks of radius `radius`, built on first use.
    pub fn shared(radius: f64, order: usize) -> Arc<PairTable> {
        static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<PairTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap();
        guard
            .entry((radius.to_bits(), order))
            .or_insert_with(|| Arc::new(Self::build(radius, order)))
            .clone()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `(G(d), G'(d))` for `0 ≤ d < 2 SERIES_SEPARATION r`.
    fn eval(&self, d: f64) -> (f64, f64) {
        let s = d / self.h;
        let k = (s as usize).min(Self::INTERVALS - 1);
        let t = s - k as f64;
        let (g0, g1) = (self.g[k], self.g[k + 1]);
        let (m0, m1) = (self.dg[k] * self.h, self.dg[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let g = (2.0 * t3 - 3.0 * t2 + 1.0) * g0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * g1
            + (t3 - t2) * m1;
        let dg = (6.0 * t2 - 6.0 * t) * g0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * g1
            + (3.0 * t2 - 2.0 * t) * m1;
        (g, dg / self.h)
    }
}

/// Process-wide cache of series coefficients keyed by the radius pair.
fn cached_coeffs(lo: f64, hi: f64) -> Arc<[f64]> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<[f64]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((lo.to_bits(), hi.to_bits()))
        .or_insert_with(|| pair_series_coeffs(lo, hi).into())
        .clone()
}

impl PairKernel {
    fn new(order: usize) -> Self {
        Self {
            order,
            last: None,
            table: None,
        }
    }

    fn with_table(order: usize, table: Option<Arc<PairTable>>) -> Self {
        Self {
            order,
            last: None,
            table,
        }
    }

    fn coeffs(&mut self, r1: f64, r2: f64) -> Arc<[f64]> {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let key = (lo.to_bits(), hi.to_bits());
        match &self.last {
            Some((k, a)) if *k == key => a.clone(),
            _ => {
                let a = cached_coeffs(lo, hi);
                self.last = Some((key, a.clone()));
                a
            }
        }
    }

    fn eval(&mut self, c1: Vec2, r1: f64, c2: Vec2, r2: f64) -> (f64, Vec2) {
        let diff = c1 - c2;
        let d = diff.norm();
        if d >= SERIES_SEPARATION * (r1 + r2) {
            let (g, dg) = self.series(d, r1, r2);
            return (g, diff * (dg / d));
        }
        if let Some(table) = &self.table {
            if r1 == table.radius && r2 == table.radius {
                let (g, dg) = table.eval(d);
                let grad = if d > 0.0 { diff * (dg / d) } else { Vec2::ZERO };
                return (g, grad);
            }
        }
        self.quadrature(c1, r1, c2, r2)
    }

    /// `(G(d), G'(d))` from the multipole series; needs `d > r1 + r2`.
    fn series(&mut self, d: f64, r1: f64, r2: f64) -> (f64, f64) {
        let q = 1.0 / (d * d);
        let a = self.coeffs(r1, r2);
        let (mut g, mut dg, mut p) = (0.0, 0.0, 1.0);
        for (m, &am) in a.iter().enumerate() {
            let t = am * p;
            g += t;
            dg += (2 * m + 1) as f64 * t;
            p *= q;
            if t < 1e-18 * g {
                break;
            }
        }
        (g / d, -dg / (d * d))
    }

    fn quadrature(&self, c1: Vec2, r1: f64, c2: Vec2, r2: f64) -> (f64, Vec2) {
        // nodes live on the smaller disk (second one on ties); the potential is
        // that of the other disk
        let (host_c, host_r, src_c, src_r, sign) = if r1 < r2 {
            (c1, r1, c2, r2, -1.0)
        } else {
            (c2, r2, c1, r1, 1.0)
        };
        let mut g = KahanSum::new();
        let mut gx = KahanSum::new();
        let mut gy = KahanSum::new();
        for &(p, w) in disk_rule(self.order) {
            let y = host_c + p * host_r;
            let rel = y - src_c;
            let rho = rel.norm();
            let (u, du) = disk_potential(rho, src_r, 1.0);
            g.add(w * u);
            if rho > 0.0 {
                // ∂/∂(src center) of u(|y − src|) = −u'(ρ) (y − src)/ρ
                let f = -w * du / rho;
                gx.add(f * rel.x);
                gy.add(f * rel.y);
            }
        }
        let grad_src = Vec2::new(gx.value(), gy.value());
        // sign = +1: c1 is the source; −1: c1 hosts the nodes (gradient is opposite)
        (g.value(), grad_src * sign)
    }
}

/// Potential of `m` at `x`.
pub fn potential_at(m: &AtomicMeasure, x: Vec2, spec: &KernelSpec) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    match spec.mode {
        KernelMode::Pure { .. } => {
            let mut s = KahanSum::new();
            for a in m.atoms() {
                let d = x.dist(a.pos);
                if d == 0.0 {
                    return Err(Error::SingularPoint(x.into()));
                }
                s.add(a.weight / d);
            }
            Ok(s.value())
        }
        KernelMode::Disk => {
            if m.atoms().iter().any(|a| !(a.radius > 0.0)) {
                return Err(Error::MissingRadius);
            }
            Ok(ksum(m.atoms().iter().map(|a| {
                disk_potential(x.dist(a.pos), a.radius, a.weight).0
            })))
        }
    }
}

/// `‖m‖²_{H^{-1/2}} = ∫∫ |x − y|^{-1} dm dm`.
pub fn hminus_half_norm_sq(m: &AtomicMeasure, spec: &KernelSpec) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let atoms = m.atoms();
    match spec.mode {
        KernelMode::Pure { include_self: true } => Err(Error::PureSelfEnergy),
        KernelMode::Pure {
            include_self: false,
        } => {
            let rows: Vec<f64> = (0..atoms.len())
                .into_par_iter()
                .map(|i| {
                    ksum(
                        atoms[i + 1..]
                            .iter()
                            .map(|b| atoms[i].weight * b.weight / atoms[i].pos.dist(b.pos)),
                    )
                })
                .collect();
            Ok(2.0 * ksum(rows))
        }
        KernelMode::Disk => {
            if atoms.iter().any(|a| !(a.radius > 0.0)) {
                return Err(Error::MissingRadius);
            }
            let centers: Vec<Vec2> = atoms.iter().map(|a| a.pos).collect();
            let weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
            let radii: Vec<f64> = atoms.iter().map(|a| a.radius).collect();
            Ok(disk_energy(&centers, &weights, &radii, spec.order, false).energy)
        }
    }
}

/// Boundary energy of a system of uniform disks, with its first variation.
#[derive(Debug, Clone)]
pub struct DiskEnergy {
    pub energy: f64,
    /// `∂/∂cᵢ` of the energy (empty unless gradients were requested).
    pub grad_centers: Vec<Vec2>,
    /// Disk-averaged potential `ūᵢ = Σⱼ wⱼ Gᵢⱼ`; `∂/∂wᵢ` of the energy is `2 ūᵢ`.
    pub potentials: Vec<f64>,
    /// Self terms then doubled pair terms, summing to `energy` (empty unless
    /// gradients were requested).
    pub terms: Vec<f64>,
}

/// Energy `Σᵢⱼ wᵢ wⱼ Gᵢⱼ` of uniform disks (self terms included), optionally
/// with gradients. Row sums run in parallel; the reduction is sequential.
pub fn disk_energy(
    centers: &[Vec2],
    weights: &[f64],
    radii: &[f64],
    order: usize,
    gradients: bool,
) -> DiskEnergy {
    disk_energy_with(centers, weights, radii, order, gradients, None)
}

/// [`disk_energy`] with near pairs of equal radius read from `table`.
pub fn disk_energy_tabulated(
    centers: &[Vec2],
    weights: &[f64],
    radii: &[f64],
    table: &Arc<PairTable>,
    gradients: bool,
) -> DiskEnergy {
    disk_energy_with(
        centers,
        weights,
        radii,
        table.order,
        gradients,
        Some(table.clone()),
    )
}

fn disk_energy_with(
    centers: &[Vec2],
    weights: &[f64],
    radii: &[f64],
    order: usize,
    gradients: bool,
    table: Option<Arc<PairTable>>,
) -> DiskEnergy {
    let n = centers.len();
    struct Row {
        energy: f64,
        pot: Vec<(usize, f64)>,
        grad: Vec<(usize, Vec2)>,
    }
    let row = |kernel: &mut PairKernel, i: usize| {
        let mut e = KahanSum::new();
        let mut pot = Vec::new();
        let mut grad = Vec::new();
        for j in i + 1..n {
            let (g, dg) = kernel.eval(centers[i], radii[i], centers[j], radii[j]);
            e.add(weights[i] * weights[j] * g);
            if gradients {
                pot.push((j, g));
                grad.push((j, dg * (2.0 * weights[i] * weights[j])));
            }
        }
        Row {
            energy: e.value(),
            pot,
            grad,
        }
    };
    // small systems are not worth the thread-pool round trip
    let rows: Vec<Row> = if n < PARALLEL_MIN_DISKS {
        let mut kernel = PairKernel::with_table(order, table);
        (0..n).map(|i| row(&mut kernel, i)).collect()
    } else {
        (0..n)
            .into_par_iter()
            .map_init(|| PairKernel::with_table(order, table.clone()), row)
            .collect()
    };
    let self_terms = ksum((0..n).map(|i| disk_self_energy(weights[i], radii[i])));
    let cross = ksum(rows.iter().map(|r| r.energy));
    let energy = self_terms + 2.0 * cross;
    if !gradients {
        return DiskEnergy {
            energy,
            grad_centers: Vec::new(),
            potentials: Vec::new(),
            terms: Vec::new(),
        };
    }
    let mut pots: Vec<KahanSum> = (0..n)
        .map(|i| {
            let mut s = KahanSum::new();
            s.add(weights[i] * UNIT_DISK_SELF_ENERGY / radii[i]);
            s
        })
        .collect();
    let mut gx: Vec<KahanSum> = vec![KahanSum::new(); n];
    let mut gy: Vec<KahanSum> = vec![KahanSum::new(); n];
    for (i, row) in rows.iter().enumerate() {
        for (&(j, g), &(_, dg)) in row.pot.iter().zip(&row.grad) {
            pots[i].add(weights[j] * g);
            pots[j].add(weights[i] * g);
            gx[i].add(dg.x);
            gy[i].add(dg.y);
            gx[j].add(-dg.x);
            gy[j].add(-dg.y);
        }
    }
    DiskEnergy {
        energy,
        grad_centers: (0..n)
            .map(|i| Vec2::new(gx[i].value(), gy[i].value()))
            .collect(),
        potentials: pots.iter().map(|s| s.value()).collect(),
        terms: (0..n)
            .map(|i| disk_self_energy(weights[i], radii[i]))
            .chain(rows.iter().enumerate().flat_map(|(i, row)| {
                row.pot
                    .iter()
                    .map(move |&(j, g)| 2.0 * weights[i] * weights[j] * g)
            }))
            .collect(),
    }
}

/// Disk-averaged potential of `m` over each of its own atoms.
pub fn averaged_potentials(m: &AtomicMeasure, spec: &KernelSpec) -> Result<Vec<f64>> {
    if m.atoms().iter().any(|a| !(a.radius > 0.0)) {
        return Err(Error::MissingRadius);
    }
    let centers: Vec<Vec2> = m.atoms().iter().map(|a| a.pos).collect();
    let weights: Vec<f64> = m.atoms().iter().map(|a| a.weight).collect();
    let radii: Vec<f64> = m.atoms().iter().map(|a| a.radius).collect();
    Ok(disk_energy(&centers, &weights, &radii, spec.order, true).potentials)
}

/// Point pairs from dyadic distance shells `2^{-k}`, `k = 0..shells`, with
/// `per_shell` pairs each; first points uniform in the axis-aligned window.
pub fn dyadic_pairs(
    center: Vec2,
    half_width: f64,
    shells: usize,
    per_shell: usize,
    seed: u64,
) -> Vec<(Vec2, Vec2)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shells * per_shell);
    for k in 0..shells {
        let r = 0.5f64.powi(k as i32);
        for _ in 0..per_shell {
            let x = center
                + Vec2::new(
                    rng.gen_range(-half_width..=half_width),
                    rng.gen_range(-half_width..=half_width),
                );
            let th: f64 = rng.gen_range(0.0..2.0 * PI);
            out.push((x, x + Vec2::new(th.cos(), th.sin()) * r));
        }
    }
    out
}

/// `sup |u(x) − u(y)| / |x − y|^{α−1}` over the sampled pairs.
pub fn holder_quotient(
    m: &AtomicMeasure,
    alpha: f64,
    pairs: &[(Vec2, Vec2)],
    spec: &KernelSpec,
) -> Result<f64> {
    Ok(holder_shells(m, alpha, pairs, spec)?
        .iter()
        .map(|s| s.1)
        .fold(0.0, f64::max))
}

/// Per-distance maxima of the Hölder quotient: `(|x − y|, max quotient)`,
/// sorted by decreasing distance. Pairs are grouped by exact distance.
pub fn holder_shells(
    m: &AtomicMeasure,
    alpha: f64,
    pairs: &[(Vec2, Vec2)],
    spec: &KernelSpec,
) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(Error::Config("empty pair set".into()));
    }
    let vals: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let d = x.dist(y);
            let q =
                (potential_at(m, x, spec)? - potential_at(m, y, spec)?).abs() / d.powf(alpha - 1.0);
            Ok((d, q))
        })
        .collect();
    let mut shells: Vec<(f64, f64)> = Vec::new();
    for v in vals {
        let (d, q) = v?;
        // shell radius: nearest power of two
        let r = 2f64.powi(d.log2().round() as i32);
        match shells.iter_mut().find(|s| s.0 == r) {
            Some(s) => s.1 = s.1.max(q),
            None => shells.push((r, q)),
        }
    }
    shells.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(shells)
}

/// Monte-Carlo estimate of the unit-disk self-energy with its standard error.
///
/// Samples a uniform point `x` and a uniform direction; the inner integral
/// `π^{-1} ∫ |x − y|^{-1} dy` over the disk equals twice the mean distance from
/// `x` to the boundary along a uniform direction, which has bounded variance.
pub fn monte_carlo_unit_disk_self_energy(samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
    for _ in 0..samples {
        let x = loop {
            let p = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if p.norm_sq() <= 1.0 {
                break p;
            }
        };
        let th: f64 = rng.gen_range(0.0..2.0 * PI);
        let b = x.x * th.cos() + x.y * th.sin();
        let v = 2.0 * (-b + (b * b + 1.0 - x.norm_sq()).sqrt());
        s.add(v);
        s2.add(v * v);
    }
    let n = samples as f64;
    let mean = s.value() / n;
    let var = (s2.value() / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_pair(d: f64, eps: f64) -> AtomicMeasure {
        AtomicMeasure::from_points(
            [
                (Vec2::new(-d / 2.0, 0.0), 0.5),
                (Vec2::new(d / 2.0, 0.0), 0.5),
            ],
            eps,
        )
        .unwrap()
    }

    /// Brute-force `∫ u dμ̂₂` on a fine product midpoint grid for the second disk.
    fn brute_interaction(d: f64, r1: f64, r2: f64) -> f64 {
        let n = 400;
        let mut s = KahanSum::new();
        let mut wsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = Vec2::new(
                    -r2 + (i as f64 + 0.5) * 2.0 * r2 / n as f64,
                    -r2 + (j as f64 + 0.5) * 2.0 * r2 / n as f64,
                );
                if p.norm() <= r2 {
                    s.add(disk_potential((p + Vec2::new(d, 0.0)).norm(), r1, 1.0).0);
                    wsum += 1.0;
                }
            }
        }
        s.value() / wsum
    }

    #[test]
    fn elliptic_reference_values() {
        let (k, e) = elliptic_ke(0.0);
        assert!((k - PI / 2.0).abs() < 1e-15 && (e - PI / 2.0).abs() < 1e-15);
        // K(1/√2) = Γ(1/4)² / (4 √π)
        let (k, e) = elliptic_ke(std::f64::consts::FRAC_1_SQRT_2);
        assert!((k - 1.854_074_677_301_372).abs() < 1e-13);
        assert!((e - 1.350_643_881_047_675).abs() < 1e-12);
    }

    #[test]
    fn potential_examples() {
        let dirac = AtomicMeasure::dirac(Vec2::ZERO, 1.0);
        assert!(
            (potential_at(&dirac, Vec2::new(3.0, 4.0), &KernelSpec::pure()).unwrap() - 0.2).abs()
                < 1e-16
        );
        assert!(matches!(
            potential_at(&dirac, Vec2::ZERO, &KernelSpec::pure()),
            Err(Error::SingularPoint(_))
        ));
        let disk = AtomicMeasure::from_points([(Vec2::ZERO, 1.0)], 1.0).unwrap();
        // radial oracle ∫₀¹ (1/r)(2r) dr = 2
        assert!(
            (potential_at(&disk, Vec2::ZERO, &KernelSpec::disk()).unwrap() - 2.0).abs() < 1e-14
        );
        let small = AtomicMeasure::from_points([(Vec2::ZERO, 1.0)], 0.1).unwrap();
        let u = potential_at(&small, Vec2::new(100.0, 0.0), &KernelSpec::disk()).unwrap();
        assert!((u - 0.01).abs() / 0.01 < 1e-5);
        assert!(matches!(
            potential_at(&dirac, Vec2::new(1.0, 0.0), &KernelSpec::disk()),
            Err(Error::MissingRadius)
        ));
    }

    #[test]
    fn disk_potential_matches_radial_quadrature() {
        // u(ρ) = (1/π) ∫∫_disk |x − y|^{-1} dy via polar quadrature centered at x
        for &rho in &[0.0, 0.3, 0.7, 0.99, 1.01, 1.5, 3.0] {
            let x = Vec2::new(rho, 0.0);
            let nth = 200_000;
            let mut s = KahanSum::new();
            for j in 0..nth {
                let th = 2.0 * PI * (j as f64 + 0.5) / nth as f64;
                let dir = Vec2::new(th.cos(), th.sin());
                // chord length from x to the unit circle along dir (x may be outside)
                let b = x.dot(dir);
                let c = x.norm_sq() - 1.0;
                let disc = b * b - c;
                if disc <= 0.0 {
                    continue;
                }
                let (t0, t1) = ((-b - disc.sqrt()).max(0.0), (-b + disc.sqrt()).max(0.0));
                s.add((t1 - t0) * 2.0 * PI / nth as f64);
            }
            let reference = s.value() / PI;
            let (u, _) = disk_potential(rho, 1.0, 1.0);
            assert!(
                (u - reference).abs() < 1e-6,
                "rho {rho}: {u} vs {reference}"
            );
        }
    }

    #[test]
    fn disk_potential_derivative_matches_differences() {
        for &rho in &[0.1, 0.45, 0.55, 0.9, 1.2, 1.9, 2.1, 5.0] {
            let h = 1e-6;
            let fd = (disk_potential(rho + h, 1.0, 1.0).0 - disk_potential(rho - h, 1.0, 1.0).0)
                / (2.0 * h);
            let (_, du) = disk_potential(rho, 1.0, 1.0);
            assert!(
                (fd - du).abs() < 1e-7 * (1.0 + du.abs()),
                "rho {rho}: {fd} vs {du}"
            );
        }
    }

    #[test]
    fn unit_disk_self_energy_monte_carlo() {
        let (mean, se) = monte_carlo_unit_disk_self_energy(10_000_000, 7);
        assert!(
            (mean - UNIT_DISK_SELF_ENERGY).abs() < 4.0 * se,
            "{mean} ± {se}"
        );
        assert!(se < 1e-3);
        // three significant digits
        assert!((mean - 1.698).abs() < 5e-3);
    }

    #[test]
    fn self_energy_scales_inversely_with_radius() {
        let e1 = hminus_half_norm_sq(
            &AtomicMeasure::from_points([(Vec2::ZERO, 1.0)], 1.0).unwrap(),
            &KernelSpec::disk(),
        )
        .unwrap();
        let e2 = hminus_half_norm_sq(
            &AtomicMeasure::from_points([(Vec2::ZERO, 1.0)], 0.25).unwrap(),
            &KernelSpec::disk(),
        )
        .unwrap();
        assert!((e1 - UNIT_DISK_SELF_ENERGY).abs() < 1e-15);
        assert!((e2 - 4.0 * e1).abs() < 1e-13);
    }

    #[test]
    fn separated_pair_norm() {
        let (d, eps) = (2.0, 0.05);
        let n = hminus_half_norm_sq(&disk_pair(d, eps), &KernelSpec::disk()).unwrap();
        let expected = 2.0 * 0.25 / d + 2.0 * 0.25 * UNIT_DISK_SELF_ENERGY / eps;
        assert!((n - expected).abs() / expected < 1e-4);
    }

    #[test]
    fn series_and_quadrature_agree_with_brute_force() {
        for &(d, r1, r2) in &[
            (3.0, 0.5, 0.5),
            (2.5, 0.7, 0.4),
            (1.0, 0.5, 0.5),
            (0.6, 0.5, 0.5),
            (0.0, 0.5, 0.5),
        ] {
            let mut k = PairKernel::new(24);
            let (g, _) = k.eval(Vec2::new(d, 0.0), r1, Vec2::ZERO, r2);
            let reference = brute_interaction(d, r1, r2);
            assert!(
                (g - reference).abs() / reference < 2e-4,
                "d {d}: {g} vs {reference}"
            );
        }
    }

    #[test]
    fn table_matches_quadrature() {
        let r = 0.05;
        let table = PairTable::shared(r, 16);
        let mut k = PairKernel::new(16);
        let mut kt = PairKernel::with_table(16, Some(table));
        for d in [0.0, 0.013, 0.05, 0.0999, 0.1001, 0.15, 0.1999] {
            let c = Vec2::new(d, 0.0);
            let (g, dg) = k.eval(c, r, Vec2::ZERO, r);
            let (gt, dgt) = kt.eval(c, r, Vec2::ZERO, r);
            assert!((g - gt).abs() < 1e-7 * g, "d {d}: {g} {gt}");
            assert!((dg - dgt).norm() < 1e-5 * (1.0 + dg.norm()), "d {d}");
            // rotated pairs only agree to the quadrature error
            let (gr, _) = kt.eval(Vec2::new(d * 0.6, d * 0.8), r, Vec2::ZERO, r);
            assert_eq!(gr, gt);
            let (gq, _) = k.eval(Vec2::new(d * 0.6, d * 0.8), r, Vec2::ZERO, r);
            assert!((g - gq).abs() < 1e-3 * g);
        }
        let d = SERIES_SEPARATION * 2.0 * r;
        let (ga, da) = kt.eval(Vec2::new(d * (1.0 - 1e-12), 0.0), r, Vec2::ZERO, r);
        let (gb, db) = kt.eval(Vec2::new(d * (1.0 + 1e-12), 0.0), r, Vec2::ZERO, r);
        assert!((ga - gb).abs() < 1e-10 * ga);
        assert!((da - db).norm() < 1e-9 * da.norm());
        let h = 1e-7;
        for d in [0.021, 0.0987, 0.17] {
            let (_, dg) = kt.eval(Vec2::new(d, 0.0), r, Vec2::ZERO, r);
            let up = kt.eval(Vec2::new(d + h, 0.0), r, Vec2::ZERO, r).0;
            let dn = kt.eval(Vec2::new(d - h, 0.0), r, Vec2::ZERO, r).0;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - dg.x).abs() < 1e-6 * dg.x.abs(),
                "d {d}: {fd} {}",
                dg.x
            );
        }
    }

    #[test]
    fn series_matches_quadrature_at_switch() {
        let mut k = PairKernel::new(32);
        let d = SERIES_SEPARATION * 1.0;
        let (gs, dgs) = k.eval(Vec2::new(d * (1.0 + 1e-13), 0.0), 0.5, Vec2::ZERO, 0.5);
        let (gq, dgq) = k.eval(Vec2::new(d * (1.0 - 1e-12), 0.0), 0.5, Vec2::ZERO, 0.5);
        assert!((gs - gq).abs() < 1e-10 * gs, "{gs} {gq}");
        assert!((dgs - dgq).norm() < 1e-8 * dgs.norm());
    }

    #[test]
    fn pure_mode_norm_excludes_self_terms() {
        let m = disk_pair(2.0, 0.0);
        assert!((hminus_half_norm_sq(&m, &KernelSpec::pure()).unwrap() - 0.25).abs() < 1e-15);
        let spec = KernelSpec {
            mode: KernelMode::Pure { include_self: true },
            order: 8,
        };
        assert!(matches!(
            hminus_half_norm_sq(&m, &spec),
            Err(Error::PureSelfEnergy)
        ));
        assert!(matches!(
            hminus_half_norm_sq(&m, &KernelSpec::disk()),
            Err(Error::MissingRadius)
        ));
    }

    #[test]
    fn dilation_scales_norm_and_potential() {
        let m = AtomicMeasure::grid_square(6, 1.0, 1.0);
        let spec = KernelSpec::disk();
        let n1 = hminus_half_norm_sq(&m, &spec).unwrap();
        for &s in &[0.5, 3.0] {
            let ns = hminus_half_norm_sq(&m.dilate(s), &spec).unwrap();
            assert!((ns * s - n1).abs() < 1e-10 * n1);
            let x = Vec2::new(0.13, -0.4);
            let u = potential_at(&m, x, &spec).unwrap();
            let us = potential_at(&m.dilate(s), x * s, &spec).unwrap();
            assert!((us * s - u).abs() < 1e-10 * u);
        }
    }

    #[test]
    fn energy_gradient_matches_differences() {
        let centers = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.15, 0.05),
            Vec2::new(0.9, -0.3),
            Vec2::new(0.2, 0.6),
        ];
        let weights = vec![0.3, 0.2, 0.4, 0.1];
        let radii = vec![0.1, 0.1, 0.1, 0.08];
        let base = disk_energy(&centers, &weights, &radii, 16, true);
        let h = 1e-6;
        for i in 0..centers.len() {
            for axis in 0..2 {
                let mut p = centers.clone();
                let mut q = centers.clone();
                let dv = if axis == 0 {
                    Vec2::new(h, 0.0)
                } else {
                    Vec2::new(0.0, h)
                };
                p[i] += dv;
                q[i] -= dv;
                let fd = (disk_energy(&p, &weights, &radii, 16, false).energy
                    - disk_energy(&q, &weights, &radii, 16, false).energy)
                    / (2.0 * h);
                let an = if axis == 0 {
                    base.grad_centers[i].x
                } else {
                    base.grad_centers[i].y
                };
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                    "i {i} axis {axis}: {fd} vs {an}"
                );
            }
            let mut w = weights.clone();
            w[i] += h;
            let up = disk_energy(&centers, &w, &radii, 16, false).energy;
            w[i] -= 2.0 * h;
            let dn = disk_energy(&centers, &w, &radii, 16, false).energy;
            assert!(((up - dn) / (2.0 * h) - 2.0 * base.potentials[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn potentials_integrate_to_norm() {
        let m = AtomicMeasure::grid_square(5, 1.0, 1.0);
        let pots = averaged_potentials(&m, &KernelSpec::disk()).unwrap();
        let n = hminus_half_norm_sq(&m, &KernelSpec::disk()).unwrap();
        let s = ksum(m.atoms().iter().zip(&pots).map(|(a, u)| a.weight * u));
        assert!((s - n).abs() < 1e-12 * n);
    }

    #[test]
    fn holder_quotient_of_dirac_bounded_by_gradient() {
        let dirac = AtomicMeasure::dirac(Vec2::ZERO, 1.0);
        // window at distance ≥ 3 from the atom, pair distances ≤ 1
        let pairs = dyadic_pairs(Vec2::new(5.0, 0.0), 1.0, 11, 64, 3);
        let q = holder_quotient(&dirac, 2.0, &pairs, &KernelSpec::pure()).unwrap();
        // |∇(1/|x|)| = 1/|x|², |x| ≥ 3 − 1 on every segment
        assert!(q <= 1.0 / 4.0 + 1e-12);
        assert!(q > 0.0);
        assert!(holder_quotient(&dirac, 2.0, &[], &KernelSpec::pure()).is_err());
    }
}
