//! Finite atomic measures on a compact box in R^m, with the partial orders
//! used by the solver: `leq` on positive measures and `preceq` on signed ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute per-coordinate tolerance for treating two positions as the same atom.
pub const POSITION_TOL: f64 = 1e-9;
/// Tolerance on masses for order comparisons.
pub const MASS_TOL: f64 = 1e-9;
/// Atoms below this mass are dropped during normalization.
pub const MASS_DROP_TOL: f64 = 1e-12;

/// A point in R^m, m in {2, 3}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Same atom site, up to the per-coordinate position tolerance.
    pub fn same_site(&self, other: &Point) -> bool {
        self.dim() == other.dim()
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| (a - b).abs() <= POSITION_TOL)
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

impl From<&[f64]> for Point {
    fn from(c: &[f64]) -> Self {
        Point::new(c.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(c: [f64; N]) -> Self {
        Point::new(c.to_vec())
    }
}

/// A positive point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: Point,
    pub mass: f64,
}

impl Atom {
    pub fn new(position: Point, mass: f64) -> Self {
        Atom { position, mass }
    }
}

/// A finite positive atomic measure. After [`AtomicMeasure::normalize`] the
/// atom positions are pairwise distinct and atoms are sorted by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    pub atoms: Vec<Atom>,
}

fn cmp_coords(a: &Point, b: &Point) -> std::cmp::Ordering {
    for (x, y) in a.coords.iter().zip(&b.coords) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.coords.len().cmp(&b.coords.len())
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        AtomicMeasure { atoms }.normalize()
    }

    /// The zero measure.
    pub fn empty() -> Self {
        AtomicMeasure { atoms: Vec::new() }
    }

    pub fn from_pairs<P: Into<Point> + Clone>(pairs: &[(P, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(p, m)| Atom::new(p.clone().into(), *m))
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Merge atoms at coincident positions, drop (near-)zero atoms, and sort
    /// by position. Total mass is preserved exactly up to the dropped atoms.
    pub fn normalize(&self) -> Result<Self> {
        for atom in &self.atoms {
            if !atom.position.is_finite() || !atom.mass.is_finite() {
                return Err(Error::InvalidMeasure(format!("non-finite atom {:?}", atom)));
            }
            if atom.mass < 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "negative mass {} at {:?}",
                    atom.mass, atom.position.coords
                )));
            }
        }
        let mut sorted: Vec<Atom> = self.atoms.clone();
        sorted.sort_by(|a, b| cmp_coords(&a.position, &b.position));
        let mut merged: Vec<Atom> = Vec::with_capacity(sorted.len());
        for atom in sorted {
            match merged
                .iter_mut()
                .find(|m| m.position.same_site(&atom.position))
            {
                Some(existing) => existing.mass += atom.mass,
                None => merged.push(atom),
            }
        }
        merged.retain(|a| a.mass > MASS_DROP_TOL);
        Ok(AtomicMeasure { atoms: merged })
    }

    /// Mass sitting at `p`, matched by position tolerance.
    pub fn mass_at(&self, p: &Point) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.position.same_site(p))
            .map(|a| a.mass)
            .sum()
    }

    /// True iff `self <= other` atom-wise: every atom of `self` is dominated
    /// by the mass `other` carries at the same site (up to the mass tolerance).
    pub fn leq(&self, other: &AtomicMeasure) -> bool {
        self.atoms
            .iter()
            .all(|a| a.mass <= other.mass_at(&a.position) + MASS_TOL)
    }

    /// Sum of two measures (normalized).
    pub fn add(&self, other: &AtomicMeasure) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        AtomicMeasure { atoms }
            .normalize()
            .expect("sum of valid measures is valid")
    }

    /// `self - other` as a positive measure; requires `other.leq(self)`.
    /// Small negative residues from tolerance slack are clamped to zero.
    pub fn sub(&self, other: &AtomicMeasure) -> Result<Self> {
        if !other.leq(self) {
            return Err(Error::InvalidMeasure(
                "subtrahend is not dominated by minuend".into(),
            ));
        }
        let mut atoms = Vec::new();
        for a in &self.atoms {
            let rest = a.mass - other.mass_at(&a.position);
            if rest > MASS_DROP_TOL {
                atoms.push(Atom::new(a.position.clone(), rest));
            }
        }
        AtomicMeasure { atoms }.normalize()
    }

    pub fn supports_disjoint(&self, other: &AtomicMeasure) -> bool {
        self.atoms.iter().all(|a| other.mass_at(&a.position) == 0.0)
    }
}

/// A finite atomic signed measure stored as its Jordan pair; the two parts
/// have disjoint supports by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignedAtomicMeasure {
    pub positive: AtomicMeasure,
    pub negative: AtomicMeasure,
}

impl SignedAtomicMeasure {
    /// Builds the Jordan decomposition of `positive - negative`: mass shared
    /// by both parts at a common site cancels.
    pub fn new(positive: AtomicMeasure, negative: AtomicMeasure) -> Result<Self> {
        let pos = positive.normalize()?;
        let neg = negative.normalize()?;
        let mut out_pos = Vec::new();
        let mut out_neg: Vec<Atom> = neg.atoms.clone();
        for a in &pos.atoms {
            let shared = neg.mass_at(&a.position);
            let net = a.mass - shared;
            if net > MASS_DROP_TOL {
                out_pos.push(Atom::new(a.position.clone(), net));
            }
            if shared > 0.0 {
                for n in out_neg.iter_mut() {
                    if n.position.same_site(&a.position) {
                        n.mass = (n.mass - a.mass).max(0.0);
                    }
                }
            }
        }
        Ok(SignedAtomicMeasure {
            positive: AtomicMeasure { atoms: out_pos }.normalize()?,
            negative: AtomicMeasure { atoms: out_neg }.normalize()?,
        })
    }

    pub fn zero() -> Self {
        SignedAtomicMeasure::default()
    }

    pub fn is_zero(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }

    /// `nu - mu` as a signed measure.
    pub fn difference(nu: &AtomicMeasure, mu: &AtomicMeasure) -> Result<Self> {
        SignedAtomicMeasure::new(nu.clone(), mu.clone())
    }

    /// The ordering on signed measures: both Jordan parts dominated.
    pub fn preceq(&self, other: &SignedAtomicMeasure) -> bool {
        self.positive.leq(&other.positive) && self.negative.leq(&other.negative)
    }

    /// Total variation: positive mass plus negative mass.
    pub fn total_variation(&self) -> f64 {
        self.positive.total_mass() + self.negative.total_mass()
    }
}
