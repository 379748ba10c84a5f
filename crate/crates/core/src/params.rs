//! Model parameters `(d, p)` and the scalar constants derived from them.
//!
//! Everything here is a pure function. Floating-point versions are used by
//! the simulators and the operator; the rational versions in
//! [`ExactParams`] exist so that identities such as
//! `c^(k)(x) = x/2 + k/(2(d-1))` at `p = (d-1)/(2d-1)` can be checked
//! without round-off.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transience threshold `(2 - sqrt 2)/4` of the dominating branching random walk.
pub const Q_STAR: f64 = (2.0 - std::f64::consts::SQRT_2) / 4.0;

/// Branching degree and upward drift of a frog model on the rooted d-ary tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    d: u32,
    p: f64,
}

impl ModelParams {
    /// Validated parameters with `d >= 2` and `0 <= p <= 1/2`.
    pub fn new(d: u32, p: f64) -> Result<Self> {
        check_degree(d)?;
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::invalid(format!(
                "drift p must satisfy 0 <= p <= 1/2, got {p}"
            )));
        }
        Ok(Self { d, p })
    }

    /// Lifts the `p <= 1/2` cap (exploration only); still requires `0 <= p < 1`.
    pub fn new_unrestricted(d: u32, p: f64) -> Result<Self> {
        check_degree(d)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "drift p must satisfy 0 <= p < 1, got {p}"
            )));
        }
        Ok(Self { d, p })
    }

    /// The drift `(d-1)/(2d-1)` at which the self-similar model is compared with `d = 2`.
    pub fn recurrence_point(d: u32) -> Result<Self> {
        check_degree(d)?;
        let d_f = f64::from(d);
        Self::new(d, (d_f - 1.0) / (2.0 * d_f - 1.0))
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn pstar(&self) -> Result<f64> {
        pstar(self.d, self.p)
    }

    pub fn rho(&self) -> f64 {
        // p < 1 is a constructor invariant
        self.p / (1.0 - self.p)
    }

    pub fn alpha(&self) -> f64 {
        alpha_unchecked(self.d, self.p)
    }

    pub fn c_map(&self, k: u32) -> Result<AffineMap> {
        c_map(self.d, self.p, k)
    }

    /// `c^(0), ..., c^(d-1)` in order.
    pub fn c_maps(&self) -> Vec<AffineMap> {
        (0..self.d).map(|k| c_map_unchecked(self.d, self.p, k)).collect()
    }

    /// Same model with the drift replaced by `p*(d, p)`.
    pub fn transformed(&self) -> Result<Self> {
        Self::new_unrestricted(self.d, self.pstar()?)
    }
}

fn check_degree(d: u32) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid(format!("degree d must be >= 2, got {d}")));
    }
    Ok(())
}

fn check_drift(p: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::invalid(format!(
            "drift p must satisfy 0 <= p <= 1/2, got {p}"
        )));
    }
    Ok(())
}

/// `p* = p(d-1) / (d - (d+1)p)`, the drift of the loop-erased walk.
pub fn pstar(d: u32, p: f64) -> Result<f64> {
    check_degree(d)?;
    check_drift(p)?;
    pstar_unrestricted(d, p)
}

/// [`pstar`] without the `p <= 1/2` cap; the denominator must stay positive.
pub fn pstar_unrestricted(d: u32, p: f64) -> Result<f64> {
    check_degree(d)?;
    let d_f = f64::from(d);
    let den = d_f - (d_f + 1.0) * p;
    if !(0.0..1.0).contains(&p) || den <= 0.0 {
        return Err(Error::invalid(format!(
            "p* undefined for d = {d}, p = {p}: d - (d+1)p = {den} must be positive"
        )));
    }
    let value = p * (d_f - 1.0) / den;
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(format!(
            "p*({d}, {p}) = {value} falls outside [0, 1]"
        )));
    }
    Ok(value)
}

/// `rho = p/(1-p)`: probability that a p-biased walk on Z ever steps below its start.
pub fn rho(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("rho requires 0 <= p < 1, got {p}")));
    }
    Ok(p / (1.0 - p))
}

/// Up-continuation probability `p / (p + (1-p)(d-1)/d)` of the non-backtracking walk.
pub fn alpha(d: u32, p: f64) -> Result<f64> {
    check_degree(d)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("alpha requires 0 <= p <= 1, got {p}")));
    }
    Ok(alpha_unchecked(d, p))
}

fn alpha_unchecked(d: u32, p: f64) -> f64 {
    let down = (1.0 - p) * f64::from(d - 1) / f64::from(d);
    p / (p + down)
}

/// The affine map `x -> slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// `c^(k)(x) = (p x + (1-p) k / d) / (p + (1-p)(d-1)/d)` for `0 <= k <= d-1`.
///
/// For `p > 0` the map is strictly increasing; at `p = 0` it degenerates to
/// the constant `k/(d-1)`.
pub fn c_map(d: u32, p: f64, k: u32) -> Result<AffineMap> {
    check_degree(d)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("c_map requires 0 <= p < 1, got {p}")));
    }
    if k >= d {
        return Err(Error::invalid(format!(
            "c_map index k must satisfy 0 <= k <= d-1 = {}, got {k}",
            d - 1
        )));
    }
    Ok(c_map_unchecked(d, p, k))
}

fn c_map_unchecked(d: u32, p: f64, k: u32) -> AffineMap {
    let d_f = f64::from(d);
    let den = p + (1.0 - p) * (d_f - 1.0) / d_f;
    AffineMap {
        slope: p / den,
        intercept: (1.0 - p) * f64::from(k) / d_f / den,
    }
}

/// Rational-valued `(d, p)` for exact evaluation of the derived constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactParams {
    pub d: u32,
    pub p: Ratio<i64>,
}

/// Affine map with exact rational coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RationalAffineMap {
    pub slope: Ratio<i64>,
    pub intercept: Ratio<i64>,
}

impl RationalAffineMap {
    pub fn apply(&self, x: Ratio<i64>) -> Ratio<i64> {
        self.slope * x + self.intercept
    }

    pub fn to_f64(&self) -> AffineMap {
        AffineMap {
            slope: ratio_to_f64(self.slope),
            intercept: ratio_to_f64(self.intercept),
        }
    }
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl ExactParams {
    pub fn new(d: u32, p: Ratio<i64>) -> Result<Self> {
        check_degree(d)?;
        if p < Ratio::from_integer(0) || p > Ratio::new(1, 2) {
            return Err(Error::invalid(format!(
                "drift p must satisfy 0 <= p <= 1/2, got {p}"
            )));
        }
        Ok(Self { d, p })
    }

    pub fn recurrence_point(d: u32) -> Result<Self> {
        check_degree(d)?;
        let d_i = i64::from(d);
        Self::new(d, Ratio::new(d_i - 1, 2 * d_i - 1))
    }

    fn d_ratio(&self) -> Ratio<i64> {
        Ratio::from_integer(i64::from(self.d))
    }

    pub fn pstar(&self) -> Ratio<i64> {
        let d = self.d_ratio();
        let one = Ratio::from_integer(1);
        self.p * (d - one) / (d - (d + one) * self.p)
    }

    pub fn rho(&self) -> Ratio<i64> {
        self.p / (Ratio::from_integer(1) - self.p)
    }

    pub fn alpha(&self) -> Ratio<i64> {
        let d = self.d_ratio();
        let one = Ratio::from_integer(1);
        self.p / (self.p + (one - self.p) * (d - one) / d)
    }

    pub fn c_map(&self, k: u32) -> Result<RationalAffineMap> {
        if k >= self.d {
            return Err(Error::invalid(format!(
                "c_map index k must satisfy 0 <= k <= d-1 = {}, got {k}",
                self.d - 1
            )));
        }
        let d = self.d_ratio();
        let one = Ratio::from_integer(1);
        let den = self.p + (one - self.p) * (d - one) / d;
        Ok(RationalAffineMap {
            slope: self.p / den,
            intercept: (one - self.p) * Ratio::from_integer(i64::from(k)) / d / den,
        })
    }

    pub fn to_f64(&self) -> Result<ModelParams> {
        ModelParams::new(self.d, ratio_to_f64(self.p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pstar_examples() {
        assert!(close(pstar(2, 1.0 / 3.0).unwrap(), 1.0 / 3.0, 1e-15));
        assert!(close(pstar(3, 1.0 / 3.0).unwrap(), 0.4, 1e-15));
        assert_eq!(pstar(5, 0.0).unwrap(), 0.0);
        assert!(close(pstar(2, 0.5).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn pstar_rejects_bad_input() {
        assert!(pstar(1, 0.2).is_err());
        assert!(pstar(3, 0.6).is_err());
        assert!(pstar(3, -0.1).is_err());
        assert!(pstar_unrestricted(2, 0.7).is_err()); // 2 - 3 * 0.7 < 0
        // p* exceeds 1 as soon as p > 1/2
        assert!(pstar_unrestricted(3, 0.55).is_err());
    }

    #[test]
    fn pstar_at_one_third_exact() {
        for d in 2..=64u32 {
            let e = ExactParams::new(d, Ratio::new(1, 3)).unwrap();
            let d_i = i64::from(d);
            assert_eq!(e.pstar(), Ratio::new(d_i - 1, 2 * d_i - 1), "d = {d}");
        }
    }

    #[test]
    fn rho_examples() {
        assert!(close(rho(1.0 / 3.0).unwrap(), 0.5, 1e-15));
        assert_eq!(rho(0.0).unwrap(), 0.0);
        assert!(close(rho(0.45).unwrap(), 9.0 / 11.0, 1e-15));
        assert!(rho(1.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert!(close(alpha(3, 0.4).unwrap(), 0.5, 1e-15));
        assert_eq!(alpha(7, 0.0).unwrap(), 0.0);
        assert!(close(alpha(2, 1.0 / 3.0).unwrap(), 0.5, 1e-15));
        let e = ExactParams::new(3, Ratio::new(2, 5)).unwrap();
        assert_eq!(e.alpha(), Ratio::new(1, 2));
    }

    #[test]
    fn c_map_examples() {
        let c = c_map(2, 1.0 / 3.0, 0).unwrap();
        assert!(close(c.apply(0.5), 0.25, 1e-15));
        let c = c_map(3, 0.4, 1).unwrap();
        assert!(close(c.apply(0.0), 0.25, 1e-15));
        for d in 2..9 {
            for &p in &[0.05, 0.2, 1.0 / 3.0, 0.5] {
                let c = c_map(d, p, d - 1).unwrap();
                assert!(close(c.apply(1.0), 1.0, 1e-14));
            }
        }
        assert!(c_map(3, 0.2, 3).is_err());
    }

    #[test]
    fn c_map_at_recurrence_point_is_half_shift_exactly() {
        for d in 2..=40u32 {
            let e = ExactParams::recurrence_point(d).unwrap();
            for k in 0..d {
                let c = e.c_map(k).unwrap();
                assert_eq!(c.slope, Ratio::new(1, 2));
                assert_eq!(c.intercept, Ratio::new(i64::from(k), 2 * i64::from(d - 1)));
                let f = ModelParams::recurrence_point(d).unwrap().c_map(k).unwrap();
                assert!(close(f.slope, 0.5, 1e-15));
                assert!(close(f.intercept, f64::from(k) / (2.0 * f64::from(d - 1)), 1e-15));
            }
        }
    }

    #[test]
    fn q_star_value() {
        assert_eq!(Q_STAR, (2.0 - 2f64.sqrt()) / 4.0);
        assert!(close(Q_STAR, 0.146_446_609_406_726_24, 1e-16));
    }

    #[test]
    fn loop_erasure_matching_identity() {
        for d in 2..=10u32 {
            for &p in &[0.05, 0.1, 1.0 / 3.0, 0.45] {
                let ps = pstar(d, p).unwrap();
                let r = rho(p).unwrap();
                let d_f = f64::from(d);
                assert!(close((1.0 - r) / (1.0 - r / d_f), 1.0 - ps, 1e-12));
                // up-continuation of nbFM(d, p*) equals rho(p)
                assert!(close(alpha(d, ps).unwrap(), r, 1e-12));
            }
        }
    }

    #[test]
    fn params_constructor_caps_drift() {
        assert!(ModelParams::new(3, 0.51).is_err());
        assert!(ModelParams::new_unrestricted(3, 0.51).is_ok());
        assert!(ModelParams::new(1, 0.2).is_err());
        let m = ModelParams::recurrence_point(4).unwrap();
        assert!(close(m.p(), 3.0 / 7.0, 1e-15));
    }

    proptest! {
        #[test]
        fn c_maps_ordered_and_in_unit_interval(d in 2u32..16, p in 0.0f64..=0.5, x in 0.0f64..=1.0) {
            let maps = ModelParams::new(d, p).unwrap().c_maps();
            for (k, c) in maps.iter().enumerate() {
                prop_assert!(c.apply(0.0) >= 0.0);
                prop_assert!(c.apply(1.0) <= 1.0 + 1e-12);
                if k + 1 < maps.len() {
                    prop_assert!(c.apply(x) < maps[k + 1].apply(x));
                }
            }
        }

        #[test]
        fn derived_constants_in_unit_interval(d in 2u32..64, p in 0.0f64..=0.5) {
            let m = ModelParams::new(d, p).unwrap();
            let ps = m.pstar().unwrap();
            prop_assert!((0.0..=1.0).contains(&ps));
            prop_assert!((0.0..=1.0).contains(&m.rho()));
            prop_assert!((0.0..=1.0).contains(&m.alpha()));
        }
    }
}
