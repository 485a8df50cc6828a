//! Affine input maps `T(x) = a (x + b)`, one `(a, b)` pair per coordinate.
//!
//! Samples always carry physical coordinates; the map is applied inside
//! network evaluation and jets are seeded with `a`, so derivatives reported
//! by the model are derivatives in the physical coordinates.

use crate::error::{Error, Result};
use crate::net::Jet;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl AffineTransform {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() || scale.is_empty() {
            return Err(Error::Config(format!(
                "transform needs one (a, b) pair per coordinate, got {} scales and {} shifts",
                scale.len(),
                shift.len()
            )));
        }
        if let Some(k) = scale.iter().position(|&a| a == 0.0 || !a.is_finite()) {
            return Err(Error::Config(format!(
                "transform scale a[{k}] = {} must be finite and non-zero",
                scale[k]
            )));
        }
        if let Some(k) = shift.iter().position(|b| !b.is_finite()) {
            return Err(Error::Config(format!("transform shift b[{k}] is not finite")));
        }
        Ok(Self { scale, shift })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    /// Same `(a, b)` on a single coordinate.
    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&a| a == 1.0) && self.shift.iter().all(|&b| b == 0.0)
    }

    #[inline]
    pub fn map_coord(&self, k: usize, x: f64) -> f64 {
        self.scale[k] * (x + self.shift[k])
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, transform expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter().enumerate().map(|(k, &xk)| self.map_coord(k, xk)).collect())
    }

    /// Input jets for differentiation along physical coordinate `coord`.
    pub fn seed_jets(&self, x: &[f64], coord: usize) -> Result<Vec<Jet>> {
        if coord >= self.dim() {
            return Err(Error::Shape(format!(
                "coordinate {coord} out of range for {}-d input",
                self.dim()
            )));
        }
        let z = self.apply(x)?;
        Ok(z.into_iter()
            .enumerate()
            .map(|(k, zk)| {
                let d1 = if k == coord { self.scale[k] } else { 0.0 };
                Jet::new(zk, d1, 0.0)
            })
            .collect())
    }
}
