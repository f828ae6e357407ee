//! Kernel feature maps `φ` applied elementwise to queries and keys.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{Matrix, Real, SequenceBatch};

/// Elementwise feature map used by the kernelized attentions.
///
/// `Identity` is only meaningful on inputs already known to be positive; it
/// exists so tests can use hand-computable numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FeatureMap {
    /// `elu(x) + 1` with `α = 1`: `x + 1` for `x ≥ 0`, `eˣ` otherwise.
    #[default]
    #[serde(rename = "elu1")]
    EluPlusOne,
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "exp")]
    Exp,
}

impl FeatureMap {
    #[inline]
    pub fn eval<T: Real>(self, x: T) -> T {
        match self {
            FeatureMap::EluPlusOne => {
                if x >= T::zero() {
                    x + T::one()
                } else {
                    x.exp()
                }
            }
            FeatureMap::Identity => x,
            FeatureMap::Exp => x.exp(),
        }
    }

    /// Derivative `φ'(x)`; both one-sided derivatives of `elu1` at zero are 1.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            FeatureMap::EluPlusOne => {
                if x >= T::zero() {
                    T::one()
                } else {
                    x.exp()
                }
            }
            FeatureMap::Identity => T::one(),
            FeatureMap::Exp => x.exp(),
        }
    }

    pub fn apply_slice<T: Real>(self, x: &[T]) -> Vec<T> {
        x.iter().map(|&v| self.eval(v)).collect()
    }

    pub fn apply<T: Real>(self, x: &Matrix<T>) -> Matrix<T> {
        x.map(|v| self.eval(v))
    }

    pub fn apply_batch<T: Real>(self, x: &SequenceBatch<T>) -> SequenceBatch<T> {
        x.map(|v| self.eval(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMap::EluPlusOne => "elu1",
            FeatureMap::Identity => "identity",
            FeatureMap::Exp => "exp",
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elu1" => Ok(FeatureMap::EluPlusOne),
            "identity" => Ok(FeatureMap::Identity),
            "exp" => Ok(FeatureMap::Exp),
            other => Err(Error::Parse(format!(
                "unknown feature map {other:?} (expected elu1, identity or exp)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elu1_values() {
        let f = FeatureMap::EluPlusOne;
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(2.0), 3.0);
        assert!((f.eval(-1.0f64) - 0.367_879_441_171_442_33).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for fm in [FeatureMap::EluPlusOne, FeatureMap::Identity, FeatureMap::Exp] {
            assert_eq!(fm.name().parse::<FeatureMap>().unwrap(), fm);
        }
        assert!("relu".parse::<FeatureMap>().is_err());
    }

    #[test]
    fn elu1_differentiable_at_branch_point() {
        let f = FeatureMap::EluPlusOne;
        let h = 1e-7;
        let right: f64 = (f.eval(h) - f.eval(0.0)) / h;
        let left: f64 = (f.eval(0.0) - f.eval(-h)) / h;
        assert!((right - 1.0).abs() < 1e-6);
        assert!((left - 1.0).abs() < 1e-6);
        assert_eq!(f.derivative(0.0), 1.0);
    }

    #[test]
    fn apply_keeps_shape() {
        let m = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        let y = FeatureMap::EluPlusOne.apply(&m);
        assert_eq!(y.shape(), (1, 3));
        assert_eq!(y[(0, 2)], 3.0);
    }

    proptest! {
        #[test]
        fn elu1_is_positive(x in -700.0f64..1e6) {
            prop_assert!(FeatureMap::EluPlusOne.eval(x) > 0.0);
        }

        #[test]
        fn derivative_matches_central_difference(x in -5.0f64..5.0) {
            for fm in [FeatureMap::EluPlusOne, FeatureMap::Exp, FeatureMap::Identity] {
                let h = 1e-6;
                let fd = (fm.eval(x + h) - fm.eval(x - h)) / (2.0 * h);
                let tol = if x.abs() < h { 1e-6 } else { 1e-6 * fm.derivative(x).abs().max(1.0) };
                prop_assert!((fd - fm.derivative(x)).abs() <= tol);
            }
        }
    }
}
