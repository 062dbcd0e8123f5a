//! Upper Ahlfors-regularity constants `sup μ(B(x, r)) / r^α` and log–log
//! dimension estimates for atomic measures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::measure::AtomicMeasure;
use crate::sum::KahanSum;

/// Relative slack on the closed-ball test so lattice points on the sphere count.
pub const BALL_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centers {
    /// Ball centers at the support atoms.
    SupportAtoms,
    /// Ball centers on an `n × n` grid over the bounding box (diagnostic).
    Grid(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub alpha_grid: Vec<f64>,
    #[serde(rename = "M_of_alpha")]
    pub m_of_alpha: Vec<f64>,
    pub r_star: f64,
    pub fitted_alpha: f64,
    pub band: f64,
    pub fit_window: (f64, f64),
    /// `(r, max_x μ(B(x, r)))` over the radius grid.
    pub curve: Vec<(f64, f64)>,
}

impl RegularityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("r,max_ball_mass\n");
        for (r, m) in &self.curve {
            out.push_str(&format!("{r:.17e},{m:.17e}\n"));
        }
        out
    }
}

fn center_points(m: &AtomicMeasure, centers: Centers) -> Vec<Vec2> {
    match centers {
        Centers::SupportAtoms => m.positions(),
        Centers::Grid(n) => {
            let n = n.max(1);
            let pos = m.positions();
            let (mut lo, mut hi) = (pos[0], pos[0]);
            for p in &pos {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            let step = |a: f64, b: f64, i: usize| {
                if n == 1 {
                    0.5 * (a + b)
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            };
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| Vec2::new(step(lo.x, hi.x, i), step(lo.y, hi.y, j)))
                .collect()
        }
    }
}

/// `max_x μ(B(x, r))` for each radius (closed balls).
pub fn max_ball_masses(m: &AtomicMeasure, radii: &[f64], centers: Centers) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if radii.is_empty() {
        return Err(Error::Config("empty radius list".into()));
    }
    if radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Config("radii must be positive".into()));
    }
    let r2: Vec<f64> = radii
        .iter()
        .map(|r| (r * (1.0 + BALL_REL_TOL)).powi(2))
        .collect();
    let rmax2 = r2.iter().cloned().fold(0.0, f64::max);
    let atoms = m.atoms();
    let per_center: Vec<Vec<f64>> = center_points(m, centers)
        .par_iter()
        .map(|&c| {
            let mut sums = vec![KahanSum::new(); radii.len()];
            for a in atoms {
                let d2 = (a.pos - c).norm_sq();
                if d2 > rmax2 {
                    continue;
                }
                for (k, &rr) in r2.iter().enumerate() {
                    if d2 <= rr {
                        sums[k].add(a.weight);
                    }
                }
            }
            sums.iter().map(|s| s.value()).collect()
        })
        .collect();
    Ok((0..radii.len())
        .map(|k| per_center.iter().map(|v| v[k]).fold(0.0, f64::max))
        .collect())
}

/// `M = max_{x, r} μ(B(x, r)) / r^α` over the given radii.
pub fn ahlfors_constant(
    m: &AtomicMeasure,
    alpha: f64,
    radii: &[f64],
    centers: Centers,
) -> Result<f64> {
    if !(0.0..=2.0).contains(&alpha) {
        return Err(Error::Config(format!("exponent {alpha} outside [0, 2]")));
    }
    let masses = max_ball_masses(m, radii, centers)?;
    Ok(masses
        .iter()
        .zip(radii)
        .map(|(mass, r)| mass / r.powf(alpha))
        .fold(0.0, f64::max))
}

/// Dyadic radii `r_max · 2^{-k}` down to `r_min`, in increasing order.
pub fn dyadic_radii(r_min: f64, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= r_min * (1.0 - 1e-12) && out.len() < 64 {
        out.push(r);
        r *= 0.5;
    }
    out.reverse();
    out
}

/// Smallest distance between distinct atoms (infinite for one atom).
pub fn min_spacing(m: &AtomicMeasure) -> f64 {
    let pos = m.positions();
    (0..pos.len())
        .into_par_iter()
        .map(|i| {
            pos[i + 1..]
                .iter()
                .map(|q| pos[i].dist(*q))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Default fit window `[4 · min spacing, diameter / 4]`.
pub fn default_window(m: &AtomicMeasure) -> (f64, f64) {
    let d = m.diameter();
    let s = min_spacing(m);
    if s.is_finite() {
        (4.0 * s, d / 4.0)
    } else {
        (1e-3, 1.0)
    }
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

/// Least-squares slope of `log max_x μ(B(x, r))` against `log r` over dyadic
/// radii in the window, with the standard error of the slope.
pub fn dimension_estimate(m: &AtomicMeasure, window: (f64, f64)) -> Result<(f64, f64)> {
    let (r_min, r_max) = window;
    if !(r_min > 0.0) || !(r_min < r_max) {
        return Err(Error::DegenerateWindow(format!("[{r_min}, {r_max}]")));
    }
    let radii = dyadic_radii(r_min, r_max);
    let masses = max_ball_masses(m, &radii, Centers::SupportAtoms)?;
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&masses)
        .filter(|(_, &mm)| mm > 0.0)
        .map(|(r, mm)| (r.ln(), mm.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::DegenerateWindow(format!(
            "{} dyadic radii in [{r_min}, {r_max}]",
            pts.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(fit_slope(&xs, &ys))
}

/// Ahlfors constants over an exponent grid plus the dimension fit.
pub fn regularity_report(
    m: &AtomicMeasure,
    alpha_grid: &[f64],
    radii: &[f64],
    window: Option<(f64, f64)>,
) -> Result<RegularityReport> {
    let masses = max_ball_masses(m, radii, Centers::SupportAtoms)?;
    let mut m_of_alpha = Vec::with_capacity(alpha_grid.len());
    for &a in alpha_grid {
        if !(0.0..=2.0).contains(&a) {
            return Err(Error::Config(format!("exponent {a} outside [0, 2]")));
        }
        m_of_alpha.push(
            masses
                .iter()
                .zip(radii)
                .map(|(mm, r)| mm / r.powf(a))
                .fold(0.0, f64::max),
        );
    }
    let fit_window = window.unwrap_or_else(|| default_window(m));
    let (fitted_alpha, band) = dimension_estimate(m, fit_window)?;
    Ok(RegularityReport {
        alpha_grid: alpha_grid.to_vec(),
        m_of_alpha,
        r_star: radii.iter().cloned().fold(0.0, f64::max),
        fitted_alpha,
        band,
        fit_window,
        curve: radii.iter().cloned().zip(masses).collect(),
    })
}
