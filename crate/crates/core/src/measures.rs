//! Finite discrete measures on the real line.
//!
//! A [`DiscreteMeasure`] is a list of weighted atoms kept in canonical form:
//! locations strictly increasing, weights strictly positive. It carries both
//! the distribution of offered travel times over the driver population and the
//! route-flow measure `sum_r q_r * delta(t_r)`.
//!
//! The order-statistics operations here ([`DiscreteMeasure::initial_section`],
//! [`DiscreteMeasure::partial_expectation`]) are what the feasibility criterion
//! is phrased in.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for mass bookkeeping (section masses, dominance checks).
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("atom at {location} has negative weight {weight}")]
    NegativeWeight { location: f64, weight: f64 },
    #[error("atom has a non-finite location or weight ({location}, {weight})")]
    NonFinite { location: f64, weight: f64 },
    #[error("requested mass {requested} outside [0, {total}]")]
    MassOutOfRange { requested: f64, total: f64 },
    #[error("subtrahend exceeds measure at location {location} by {excess}")]
    NotDominated { location: f64, excess: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// A single weighted point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(location: f64, weight: f64) -> Self {
        Atom { location, weight }
    }
}

/// Canonical finite measure: sorted distinct locations, positive weights.
///
/// Serialized as a list of `[location, weight]` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
}

impl TryFrom<Vec<(f64, f64)>> for DiscreteMeasure {
    type Error = MeasureError;

    fn try_from(pairs: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        DiscreteMeasure::canonicalize(pairs)
    }
}

impl From<DiscreteMeasure> for Vec<(f64, f64)> {
    fn from(m: DiscreteMeasure) -> Self {
        m.atoms.iter().map(|a| (a.location, a.weight)).collect()
    }
}

impl DiscreteMeasure {
    /// Sorts, merges equal locations (summing weights) and drops zero atoms.
    pub fn canonicalize<I>(pairs: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut atoms = Vec::new();
        for (location, weight) in pairs {
            if !location.is_finite() || !weight.is_finite() {
                return Err(MeasureError::NonFinite { location, weight });
            }
            if weight < 0.0 {
                return Err(MeasureError::NegativeWeight { location, weight });
            }
            if weight > 0.0 {
                atoms.push(Atom::new(location, weight));
            }
        }
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.location == atom.location => last.weight += atom.weight,
                _ => merged.push(atom),
            }
        }
        Ok(DiscreteMeasure { atoms: merged })
    }

    pub fn empty() -> Self {
        DiscreteMeasure { atoms: Vec::new() }
    }

    pub fn dirac(location: f64, weight: f64) -> Result<Self, MeasureError> {
        Self::canonicalize([(location, weight)])
    }

    /// Builds from atoms already known to be canonical. Used internally on
    /// slices of canonical measures.
    fn from_sorted(atoms: Vec<Atom>) -> Self {
        debug_assert!(atoms.windows(2).all(|w| w[0].location < w[1].location));
        DiscreteMeasure {
            atoms: atoms.into_iter().filter(|a| a.weight > 0.0).collect(),
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

    /// Sum of weights, accumulated in ascending location order.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum location * weight`; the (unnormalized) first moment.
    pub fn partial_expectation(&self) -> f64 {
        self.atoms.iter().map(|a| a.location * a.weight).sum()
    }

    /// Normalized mean, `None` for the empty measure.
    pub fn mean(&self) -> Option<f64> {
        let mass = self.total_mass();
        (mass > 0.0).then(|| self.partial_expectation() / mass)
    }

    pub fn min_location(&self) -> Option<f64> {
        self.atoms.first().map(|a| a.location)
    }

    pub fn max_location(&self) -> Option<f64> {
        self.atoms.last().map(|a| a.location)
    }

    /// Mass of atoms with location strictly below `x`.
    pub fn mass_below(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.location < x)
            .map(|a| a.weight)
            .sum()
    }

    /// Mass of atoms with location in the closed interval `[lo, hi]`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.location >= lo && a.location <= hi)
            .map(|a| a.weight)
            .sum()
    }

    /// The leftmost sub-measure of mass `m`.
    ///
    /// All atoms strictly left of the cut point are kept whole and the atom at
    /// the cut point contributes the remaining mass.
    pub fn initial_section(&self, m: f64) -> Result<Self, MeasureError> {
        let total = self.total_mass();
        if !(m >= 0.0 && m <= total + MASS_TOL) {
            return Err(MeasureError::MassOutOfRange { requested: m, total });
        }
        let mut remaining = m.min(total);
        let mut out = Vec::new();
        for atom in &self.atoms {
            if remaining <= 0.0 {
                break;
            }
            let take = atom.weight.min(remaining);
            out.push(Atom::new(atom.location, take));
            remaining -= take;
        }
        Ok(Self::from_sorted(out))
    }

    /// `self - other`. Every atom of `other` must be covered by an atom of
    /// `self` at the same location, up to [`MASS_TOL`].
    pub fn subtract(&self, other: &DiscreteMeasure) -> Result<Self, MeasureError> {
        let mut out = self.atoms.clone();
        let mut i = 0;
        for sub in &other.atoms {
            while i < out.len() && out[i].location < sub.location {
                i += 1;
            }
            if i < out.len() && out[i].location == sub.location {
                out[i].weight -= sub.weight;
                if out[i].weight < -MASS_TOL {
                    return Err(MeasureError::NotDominated {
                        location: sub.location,
                        excess: -out[i].weight,
                    });
                }
            } else if sub.weight > MASS_TOL {
                return Err(MeasureError::NotDominated {
                    location: sub.location,
                    excess: sub.weight,
                });
            }
        }
        out.retain(|a| a.weight > MASS_TOL);
        Ok(Self::from_sorted(out))
    }

    /// Sum of two measures.
    pub fn add(&self, other: &DiscreteMeasure) -> Self {
        let pairs = self
            .atoms
            .iter()
            .chain(other.atoms.iter())
            .map(|a| (a.location, a.weight));
        // Both inputs are canonical so nothing can fail here.
        Self::canonicalize(pairs).expect("sum of canonical measures")
    }

    /// Multiplies every weight by `factor` (must be non-negative).
    pub fn scaled(&self, factor: f64) -> Result<Self, MeasureError> {
        Self::canonicalize(self.atoms.iter().map(|a| (a.location, a.weight * factor)))
    }

    /// Cumulative masses at the right end of each atom.
    pub fn cumulative_masses(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a.weight;
                Some(*acc)
            })
            .collect()
    }

    /// Reads a two-column `location,weight` CSV (header row required).
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, MeasureError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut pairs = Vec::new();
        for record in rdr.deserialize::<(f64, f64)>() {
            pairs.push(record.map_err(|e| MeasureError::Csv(e.to_string()))?);
        }
        Self::canonicalize(pairs)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), MeasureError> {
        let mut wtr = csv::WriterBuilder::new().from_writer(writer);
        let csv_err = |e: csv::Error| MeasureError::Csv(e.to_string());
        wtr.write_record(["location", "weight"]).map_err(csv_err)?;
        for a in &self.atoms {
            wtr.write_record([crate::format::num(a.location), crate::format::num(a.weight)])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| MeasureError::Csv(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(pairs: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::canonicalize(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn canonicalize_merges_and_drops_zero() {
        let got = m(&[(2.0, 0.5), (2.0, 0.5), (1.0, 0.0)]);
        assert_eq!(got.atoms(), &[Atom::new(2.0, 1.0)]);
    }

    #[test]
    fn canonicalize_keeps_canonical_input() {
        let got = m(&[(10.0, 0.5), (30.0, 0.5)]);
        assert_eq!(got.atoms(), &[Atom::new(10.0, 0.5), Atom::new(30.0, 0.5)]);
    }

    #[test]
    fn canonicalize_sorts() {
        let got = m(&[(1.9, 0.1), (1.1, 0.9)]);
        assert_eq!(got.atoms(), &[Atom::new(1.1, 0.9), Atom::new(1.9, 0.1)]);
    }

    #[test]
    fn canonicalize_rejects_negative() {
        let err = DiscreteMeasure::canonicalize([(1.0, -0.1)]).unwrap_err();
        assert!(matches!(err, MeasureError::NegativeWeight { .. }));
    }

    #[test]
    fn initial_section_splits_middle_atom() {
        let lambda = m(&[(10.0, 0.25), (20.0, 0.5), (30.0, 0.25)]);
        let sec = lambda.initial_section(0.5).unwrap();
        assert_eq!(sec.atoms(), &[Atom::new(10.0, 0.25), Atom::new(20.0, 0.25)]);
        assert!((sec.total_mass() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn initial_section_endpoints() {
        let lambda = m(&[(10.0, 0.25), (20.0, 0.5), (30.0, 0.25)]);
        assert!(lambda.initial_section(0.0).unwrap().is_empty());
        assert_eq!(lambda.initial_section(1.0).unwrap(), lambda);
        assert!(matches!(
            lambda.initial_section(1.1),
            Err(MeasureError::MassOutOfRange { .. })
        ));
        assert!(lambda.initial_section(-0.1).is_err());
    }

    #[test]
    fn partial_expectation_values() {
        let lambda = m(&[(10.0, 0.25), (20.0, 0.5), (30.0, 0.25)]);
        assert!((lambda.partial_expectation() - 20.0).abs() < 1e-12);
        assert_eq!(DiscreteMeasure::empty().partial_expectation(), 0.0);
        let two = m(&[(1.1, 0.5), (1.9, 0.5)]);
        assert!((two.partial_expectation() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn subtract_cases() {
        let lambda = m(&[(10.0, 0.5), (30.0, 0.5)]);
        assert!(lambda.subtract(&lambda).unwrap().is_empty());
        let rest = lambda.subtract(&m(&[(10.0, 0.5)])).unwrap();
        assert_eq!(rest.atoms(), &[Atom::new(30.0, 0.5)]);
        let err = lambda.subtract(&m(&[(20.0, 0.1)])).unwrap_err();
        assert!(matches!(err, MeasureError::NotDominated { .. }));
        let err = lambda.subtract(&m(&[(10.0, 0.6)])).unwrap_err();
        assert!(matches!(err, MeasureError::NotDominated { .. }));
    }

    #[test]
    fn subtract_section_conserves_mass() {
        let lambda = m(&[(1.0, 0.3), (2.0, 0.3), (4.0, 0.4)]);
        let sec = lambda.initial_section(0.45).unwrap();
        let rest = lambda.subtract(&sec).unwrap();
        assert!((rest.total_mass() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let lambda = m(&[(1.1, 0.5), (1.9, 0.5)]);
        let mut buf = Vec::new();
        lambda.write_csv(&mut buf).unwrap();
        let back = DiscreteMeasure::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, lambda);
    }

    #[test]
    fn toml_pairs() {
        #[derive(Deserialize)]
        struct Doc {
            tau: DiscreteMeasure,
        }
        let doc: Doc = toml::from_str("tau = [[2.0, 0.5], [1.0, 0.5]]").unwrap();
        assert_eq!(doc.tau.atoms()[0], Atom::new(1.0, 0.5));
    }
}
