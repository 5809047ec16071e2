//! Coefficient functions of `(t, z)` and of `t` alone.

use alloc::vec::Vec;

use crate::math::{exp, interp_bilinear, interp_linear};
use crate::{Error, Result};

/// Tabulated function of `(t, z)` with bilinear interpolation and flat
/// extrapolation outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    ts: Vec<f64>,
    zs: Vec<f64>,
    values: Vec<f64>,
}

impl GridTable {
    /// `values` is row-major: `values[i * zs.len() + j]` is the value at `(ts[i], zs[j])`.
    pub fn new(ts: Vec<f64>, zs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ts.is_empty() || zs.is_empty() {
            return Err(Error::invalid(
                "coefficient table needs at least one t and one z node",
            ));
        }
        if values.len() != ts.len() * zs.len() {
            return Err(Error::invalid(
                "coefficient table is not a full (t, z) grid",
            ));
        }
        if !ts.windows(2).all(|w| w[0] < w[1]) || !zs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "coefficient table nodes must be strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "coefficient table contains non-finite values",
            ));
        }
        Ok(GridTable { ts, zs, values })
    }

    /// Builds a table from scattered `(t, z, value)` triples that must cover a full grid.
    pub fn from_triples(rows: &[(f64, f64, f64)]) -> Result<Self> {
        let mut ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut zs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        let mut values = alloc::vec![f64::NAN; ts.len() * zs.len()];
        for &(t, z, v) in rows {
            let i = ts.binary_search_by(|x| x.total_cmp(&t)).unwrap_or(0);
            let j = zs.binary_search_by(|x| x.total_cmp(&z)).unwrap_or(0);
            values[i * zs.len() + j] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(
                "coefficient table rows do not cover a full (t, z) grid",
            ));
        }
        GridTable::new(ts, zs, values)
    }

    pub fn eval(&self, t: f64, z: f64) -> f64 {
        interp_bilinear(&self.ts, &self.zs, &self.values, t, z)
    }

    fn is_z_free(&self) -> bool {
        let nz = self.zs.len();
        self.values
            .chunks(nz)
            .all(|row| row.iter().all(|v| *v == row[0]))
    }
}

/// A model coefficient as a function of time and the economic factor.
#[derive(Debug, Clone, PartialEq)]
pub enum Coef {
    Constant(f64),
    /// `c[0] + c[1] z + c[2] z^2 + ...`
    Poly(Vec<f64>),
    /// Mean-reverting drift `speed * (mean - z)`.
    Ou {
        speed: f64,
        mean: f64,
    },
    Table(GridTable),
}

impl Coef {
    pub fn affine(intercept: f64, slope: f64) -> Self {
        Coef::Poly(alloc::vec![intercept, slope])
    }

    #[inline]
    pub fn eval(&self, t: f64, z: f64) -> f64 {
        match self {
            Coef::Constant(c) => *c,
            Coef::Poly(cs) => cs.iter().rev().fold(0.0, |acc, c| acc * z + c),
            Coef::Ou { speed, mean } => speed * (mean - z),
            Coef::Table(tab) => tab.eval(t, z),
        }
    }

    /// True when the coefficient does not depend on `z`.
    pub fn is_z_free(&self) -> bool {
        match self {
            Coef::Constant(_) => true,
            Coef::Poly(cs) => cs.iter().skip(1).all(|c| *c == 0.0),
            Coef::Ou { speed, .. } => *speed == 0.0,
            Coef::Table(tab) => tab.is_z_free(),
        }
    }
}

impl From<f64> for Coef {
    fn from(c: f64) -> Self {
        Coef::Constant(c)
    }
}

/// Deterministic function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFn {
    Constant(f64),
    /// `base * exp(growth * t)`, e.g. a Gompertz force of mortality.
    Gompertz {
        base: f64,
        growth: f64,
    },
    /// Piecewise linear through `(ts[i], values[i])`, flat outside.
    Table {
        ts: Vec<f64>,
        values: Vec<f64>,
    },
}

impl TimeFn {
    pub fn table(ts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ts.is_empty() || ts.len() != values.len() {
            return Err(Error::invalid(
                "time table needs matching, non-empty columns",
            ));
        }
        if !ts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "time table nodes must be strictly increasing",
            ));
        }
        Ok(TimeFn::Table { ts, values })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(c) => *c,
            TimeFn::Gompertz { base, growth } => base * exp(growth * t),
            TimeFn::Table { ts, values } => interp_linear(ts, values, t),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TimeFn::Constant(_) => true,
            TimeFn::Gompertz { growth, .. } => *growth == 0.0,
            TimeFn::Table { values, .. } => values.iter().all(|v| *v == values[0]),
        }
    }
}

impl From<f64> for TimeFn {
    fn from(c: f64) -> Self {
        TimeFn::Constant(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_evaluates_by_horner() {
        let c = Coef::Poly(alloc::vec![1.0, -2.0, 0.5]);
        assert_eq!(c.eval(0.0, 2.0), 1.0 - 4.0 + 2.0);
        assert!(!c.is_z_free());
        assert!(Coef::affine(0.3, 0.0).is_z_free());
    }

    #[test]
    fn table_interpolates_bilinearly() {
        let tab = GridTable::from_triples(&[
            (0.0, 0.0, 0.0),
            (0.0, 1.0, 1.0),
            (1.0, 0.0, 2.0),
            (1.0, 1.0, 3.0),
        ])
        .unwrap();
        assert!((tab.eval(0.5, 0.5) - 1.5).abs() < 1e-15);
        assert_eq!(tab.eval(-1.0, 2.0), 1.0);
        assert!(GridTable::from_triples(&[(0.0, 0.0, 1.0), (1.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn ou_drift_and_gompertz() {
        let eta = Coef::Ou {
            speed: 2.0,
            mean: 0.5,
        };
        assert_eq!(eta.eval(0.0, 1.0), -1.0);
        let mu = TimeFn::Gompertz {
            base: 0.01,
            growth: 0.0,
        };
        assert!(mu.is_constant());
        assert_eq!(mu.eval(3.0), 0.01);
    }
}
