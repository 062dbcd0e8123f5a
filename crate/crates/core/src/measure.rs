//! Finitely supported planar measures `Σ wᵢ δ_{xᵢ}`, optionally with a
//! regularization radius per atom (the atom is then read as a uniform disk).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sum::ksum;

/// Relative distance (in units of the scene diameter) below which atoms are merged.
pub const MERGE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "x")]
    pub pos: Vec2,
    #[serde(rename = "w")]
    pub weight: f64,
    #[serde(rename = "r", default)]
    pub radius: f64,
}

impl Atom {
    pub fn new(pos: Vec2, weight: f64, radius: f64) -> Self {
        Self {
            pos,
            weight,
            radius,
        }
    }

    pub fn dirac(pos: Vec2, weight: f64) -> Self {
        Self::new(pos, weight, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
struct RawMeasure {
    atoms: Vec<Atom>,
}

impl<'de> Deserialize<'de> for AtomicMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMeasure::deserialize(d)?;
        AtomicMeasure::new(raw.atoms).map_err(serde::de::Error::custom)
    }
}

impl AtomicMeasure {
    /// Validates weights and radii and merges coincident atoms.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !a.pos.is_finite() || !a.weight.is_finite() || !a.radius.is_finite() {
                return Err(Error::InvalidMeasure("non-finite value".into()));
            }
            if a.weight <= 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "non-positive weight {}",
                    a.weight
                )));
            }
            if a.radius < 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "negative radius {}",
                    a.radius
                )));
            }
        }
        Ok(Self {
            atoms: merge_coincident(atoms),
        })
    }

    /// Builds a measure from `(position, weight)` pairs, all with radius `radius`.
    pub fn from_points<I: IntoIterator<Item = (Vec2, f64)>>(
        points: I,
        radius: f64,
    ) -> Result<Self> {
        Self::new(
            points
                .into_iter()
                .map(|(p, w)| Atom::new(p, w, radius))
                .collect(),
        )
    }

    pub fn dirac(pos: Vec2, weight: f64) -> Self {
        Self {
            atoms: vec![Atom::dirac(pos, weight)],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        ksum(self.atoms.iter().map(|a| a.weight))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.atoms.iter().map(|a| a.pos).collect()
    }

    /// Largest pairwise distance between atom centers.
    pub fn diameter(&self) -> f64 {
        scene_diameter(self.atoms.iter().map(|a| a.pos))
    }

    /// Mass-weighted mean position.
    pub fn barycenter(&self) -> Result<Vec2> {
        if self.atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let mass = self.total_mass();
        let x = ksum(self.atoms.iter().map(|a| a.weight * a.pos.x));
        let y = ksum(self.atoms.iter().map(|a| a.weight * a.pos.y));
        Ok(Vec2::new(x / mass, y / mass))
    }

    /// First moment about the barycenter, normalized by the mass.
    pub fn spreading_scale(&self) -> Result<f64> {
        let c = self.barycenter()?;
        let mass = self.total_mass();
        Ok(ksum(self.atoms.iter().map(|a| a.weight * a.pos.dist(c))) / mass)
    }

    /// Pushforward under `x ↦ s·x`; radii scale too.
    pub fn dilate(&self, s: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom::new(a.pos * s, a.weight, a.radius * s))
                .collect(),
        }
    }

    pub fn translate(&self, v: Vec2) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    pos: a.pos + v,
                    ..*a
                })
                .collect(),
        }
    }

    pub fn scale_mass(&self, s: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    weight: a.weight * s,
                    ..*a
                })
                .collect(),
        }
    }

    pub fn with_radius(&self, radius: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|a| Atom { radius, ..*a }).collect(),
        }
    }

    /// Restriction to the closed ball `B(center, r)`.
    pub fn restrict_to_ball(&self, center: Vec2, r: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .filter(|a| a.pos.dist(center) <= r)
                .copied()
                .collect(),
        }
    }

    /// Uniform `n × n` grid of cell centers on the square of side `side`
    /// centered at the origin, total mass `mass`, radius half the cell side.
    pub fn grid_square(n: usize, side: f64, mass: f64) -> Self {
        let h = side / n as f64;
        let w = mass / (n * n) as f64;
        let mut atoms = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let p = Vec2::new(
                    (i as f64 + 0.5) * h - side / 2.0,
                    (j as f64 + 0.5) * h - side / 2.0,
                );
                atoms.push(Atom::new(p, w, h / 2.0));
            }
        }
        Self { atoms }
    }

    /// `n` equally spaced atoms on the horizontal segment of length `length`
    /// centered at the origin.
    pub fn segment(n: usize, length: f64, mass: f64) -> Self {
        let h = length / n as f64;
        let w = mass / n as f64;
        Self {
            atoms: (0..n)
                .map(|i| {
                    Atom::new(
                        Vec2::new((i as f64 + 0.5) * h - length / 2.0, 0.0),
                        w,
                        h / 2.0,
                    )
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn scene_diameter<I: IntoIterator<Item = Vec2>>(pts: I) -> f64 {
    // bounding-box diagonal: an upper bound within √2 of the true diameter,
    // adequate for relative tolerances.
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for p in pts {
        any = true;
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if any {
        (hi - lo).norm()
    } else {
        0.0
    }
}

/// Merges atoms closer than `MERGE_REL_TOL · diameter` (mass-weighted position,
/// summed weight, largest radius). Output order follows first occurrence.
pub(crate) fn merge_coincident(atoms: Vec<Atom>) -> Vec<Atom> {
    if atoms.len() < 2 {
        return atoms;
    }
    let tol = MERGE_REL_TOL * scene_diameter(atoms.iter().map(|a| a.pos));
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&a, &b| atoms[a].pos.x.total_cmp(&atoms[b].pos.x));
    let mut parent: Vec<usize> = (0..atoms.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut merged_any = false;
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if atoms[j].pos.x - atoms[i].pos.x > tol {
                break;
            }
            if atoms[i].pos.dist(atoms[j].pos) <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                    merged_any = true;
                }
            }
        }
    }
    if !merged_any {
        return atoms;
    }
    let mut slot = vec![usize::MAX; atoms.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..atoms.len() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
        .into_iter()
        .map(|g| {
            if g.len() == 1 {
                return atoms[g[0]];
            }
            let w = ksum(g.iter().map(|&i| atoms[i].weight));
            let x = ksum(g.iter().map(|&i| atoms[i].weight * atoms[i].pos.x)) / w;
            let y = ksum(g.iter().map(|&i| atoms[i].weight * atoms[i].pos.y)) / w;
            let r = g.iter().map(|&i| atoms[i].radius).fold(0.0, f64::max);
            Atom::new(Vec2::new(x, y), w, r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(pts: &[((f64, f64), f64)]) -> AtomicMeasure {
        AtomicMeasure::from_points(pts.iter().map(|&((x, y), w)| (Vec2::new(x, y), w)), 0.0)
            .unwrap()
    }

    #[test]
    fn barycenter_examples() {
        assert_eq!(
            m(&[((1.0, 0.0), 1.0)]).barycenter().unwrap(),
            Vec2::new(1.0, 0.0)
        );
        assert_eq!(
            m(&[((1.0, 0.0), 0.5), ((-1.0, 0.0), 0.5)])
                .barycenter()
                .unwrap(),
            Vec2::ZERO
        );
        let b = m(&[((0.0, 0.0), 0.75), ((4.0, 0.0), 0.25)])
            .barycenter()
            .unwrap();
        assert!((b - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        assert!(matches!(
            AtomicMeasure::default().barycenter(),
            Err(Error::EmptyMeasure)
        ));
    }

    #[test]
    fn spreading_scale_examples() {
        assert_eq!(m(&[((0.0, 0.0), 1.0)]).spreading_scale().unwrap(), 0.0);
        assert_eq!(
            m(&[((1.0, 0.0), 0.5), ((-1.0, 0.0), 0.5)])
                .spreading_scale()
                .unwrap(),
            1.0
        );
        let r = m(&[((0.0, 0.0), 0.75), ((4.0, 0.0), 0.25)])
            .spreading_scale()
            .unwrap();
        assert!((r - 1.5).abs() < 1e-15);
        assert!(AtomicMeasure::default().spreading_scale().is_err());
    }

    #[test]
    fn coincident_atoms_merge() {
        let mu = m(&[((1.0, 1.0), 0.25), ((0.0, 0.0), 0.5), ((1.0, 1.0), 0.25)]);
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.atoms()[0].weight, 0.5);
        assert_eq!(mu.atoms()[0].pos, Vec2::new(1.0, 1.0));
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(AtomicMeasure::new(vec![Atom::dirac(Vec2::ZERO, 0.0)]).is_err());
        assert!(AtomicMeasure::new(vec![Atom::dirac(Vec2::new(f64::NAN, 0.0), 1.0)]).is_err());
        assert!(AtomicMeasure::from_json(r#"{"atoms":[{"x":[0,0],"w":-1,"r":0}]}"#).is_err());
    }

    #[test]
    fn json_schema() {
        let mu =
            AtomicMeasure::from_json(r#"{"atoms":[{"x":[0.5,1.0],"w":2.0,"r":0.1}]}"#).unwrap();
        assert_eq!(mu.atoms()[0], Atom::new(Vec2::new(0.5, 1.0), 2.0, 0.1));
        let back = AtomicMeasure::from_json(&mu.to_json().unwrap()).unwrap();
        assert_eq!(back, mu);
    }
}
