//! The recursive polynomial families `P_k` and `Q_k`.
//!
//! ```text
//! P_1 = z1,         P_{k+1} = z_{k+1}^{k+1} - sum_{l=1}^{k}   C(k, l-1)   z_{k+1}^{k+1-l} P_l(z_1..z_l)
//! Q_2 = z2^2,       Q_{k+1} = z_{k+1}^{k+1} - sum_{l=2}^{k}   C(k-1, l-2) z_{k+1}^{k+1-l} Q_l(z_1..z_l)
//! ```
//!
//! Coefficients are exact `i128`s. Variables are 0-based internally and
//! printed 1-based (`z1 .. zk`). Terms are kept in graded order: total degree
//! first, then lexicographic with `z_k` the most significant variable.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on `k` accepted by [`build_p`] / [`build_q`].
pub const DEFAULT_K_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    P,
    Q,
}

impl Family {
    pub fn min_k(self) -> usize {
        match self {
            Family::P => 1,
            Family::Q => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::P => "P",
            Family::Q => "Q",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" | "p" => Ok(Family::P),
            "Q" | "q" => Ok(Family::Q),
            other => Err(Error::Parse(format!("unknown polynomial family {other:?}"))),
        }
    }
}

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            let n = self.0.len().max(other.0.len());
            for i in (0..n).rev() {
                let a = self.0.get(i).copied().unwrap_or(0);
                let b = other.0.get(i).copied().unwrap_or(0);
                match a.cmp(&b) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            Ordering::Equal
        })
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial with integer coefficients in canonical form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiPoly {
    nvars: usize,
    terms: BTreeMap<Monomial, i128>,
}

fn overflow() -> Error {
    Error::ResourceLimit("polynomial coefficient overflowed i128".into())
}

impl MultiPoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    /// `coeff * z_{var+1}^pow` (0-based `var`).
    pub fn monomial(nvars: usize, var: usize, pow: u32, coeff: i128) -> Self {
        let mut exps = vec![0; nvars];
        exps[var] = pow;
        let mut poly = Self::zero(nvars);
        if coeff != 0 {
            poly.terms.insert(Monomial(exps), coeff);
        }
        poly
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, merging
    /// duplicates and dropping zeros.
    pub fn from_terms(
        nvars: usize,
        terms: impl IntoIterator<Item = (Vec<u32>, i128)>,
    ) -> Result<Self> {
        let mut poly = Self::zero(nvars);
        for (exps, coeff) in terms {
            if exps.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: exps.len(),
                });
            }
            poly.add_term(Monomial(exps), coeff)?;
        }
        Ok(poly)
    }

    fn add_term(&mut self, mono: Monomial, coeff: i128) -> Result<()> {
        if coeff == 0 {
            return Ok(());
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(mono) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().checked_add(coeff).ok_or_else(overflow)?;
                if sum == 0 {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
        Ok(())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in descending graded order (the display order).
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, i128)> {
        self.terms.iter().rev().map(|(m, c)| (m, *c))
    }

    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(Monomial::degree)
    }

    /// Reinterprets the polynomial in `nvars` variables (`nvars >= self.nvars`).
    pub fn extend_vars(&self, nvars: usize) -> Self {
        assert!(nvars >= self.nvars);
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| {
                let mut exps = m.0.clone();
                exps.resize(nvars, 0);
                (Monomial(exps), *c)
            })
            .collect();
        Self { nvars, terms }
    }

    /// `scale * z_{var+1}^pow * self`.
    pub fn mul_monomial(&self, var: usize, pow: u32, scale: i128) -> Result<Self> {
        assert!(var < self.nvars);
        let mut out = Self::zero(self.nvars);
        if scale == 0 {
            return Ok(out);
        }
        for (m, c) in &self.terms {
            let mut exps = m.0.clone();
            exps[var] += pow;
            let coeff = c.checked_mul(scale).ok_or_else(overflow)?;
            out.terms.insert(Monomial(exps), coeff);
        }
        Ok(out)
    }

    /// Partial derivative with respect to `z_{var+1}`.
    pub fn partial(&self, var: usize) -> Result<Self> {
        assert!(var < self.nvars);
        let mut out = Self::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[var] -= 1;
            let coeff = c.checked_mul(e as i128).ok_or_else(overflow)?;
            out.add_term(Monomial(exps), coeff)?;
        }
        Ok(out)
    }

    /// `scale * self`.
    pub fn scaled(&self, scale: i128) -> Result<Self> {
        let mut out = Self::zero(self.nvars);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c.checked_mul(scale).ok_or_else(overflow)?)?;
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        assert_eq!(self.nvars, other.nvars);
        for (m, c) in &other.terms {
            self.add_term(m.clone(), *c)?;
        }
        Ok(())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got: len,
            });
        }
        Ok(())
    }

    /// Term-sum evaluation in ascending term order.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z.len())?;
        Ok(self
            .terms
            .iter()
            .map(|(m, c)| {
                let mono: f64 = m
                    .0
                    .iter()
                    .zip(z)
                    .map(|(&e, &zi)| zi.powi(e as i32))
                    .product();
                *c as f64 * mono
            })
            .sum())
    }

    /// Exact evaluation at integer points.
    pub fn eval_exact(&self, z: &[i128]) -> Result<i128> {
        self.check_dim(z.len())?;
        let mut total: i128 = 0;
        for (m, c) in &self.terms {
            let mut mono: i128 = *c;
            for (&e, &zi) in m.0.iter().zip(z) {
                let pow = zi.checked_pow(e).ok_or_else(overflow)?;
                mono = mono.checked_mul(pow).ok_or_else(overflow)?;
            }
            total = total.checked_add(mono).ok_or_else(overflow)?;
        }
        Ok(total)
    }

    /// Range enclosure over the box `lo[i] <= z_i <= hi[i]`, with `0 <= lo <= hi`.
    ///
    /// Each monomial is monotone on the nonnegative orthant, so its range is
    /// `[prod lo^e, prod hi^e]`; the result is the term-wise interval sum.
    pub fn eval_interval(&self, lo: &[f64], hi: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(lo.len())?;
        self.check_dim(hi.len())?;
        if lo.iter().zip(hi).any(|(a, b)| *a < 0.0 || a > b) {
            return Err(Error::Domain(
                "interval evaluation needs 0 <= lo <= hi componentwise".into(),
            ));
        }
        let mut acc = (0.0, 0.0);
        for (m, c) in &self.terms {
            let mut m_lo = 1.0;
            let mut m_hi = 1.0;
            for (i, &e) in m.0.iter().enumerate() {
                m_lo *= lo[i].powi(e as i32);
                m_hi *= hi[i].powi(e as i32);
            }
            let c = *c as f64;
            if c >= 0.0 {
                acc.0 += c * m_lo;
                acc.1 += c * m_hi;
            } else {
                acc.0 += c * m_hi;
                acc.1 += c * m_lo;
            }
        }
        Ok(acc)
    }

    /// Serializable view used by the JSON output format.
    pub fn to_json_view(&self, family: Family, k: usize) -> PolyJson {
        PolyJson {
            family,
            k,
            nvars: self.nvars,
            text: format!("{family}{k} = {self}"),
            terms: self
                .terms()
                .map(|(m, c)| TermJson {
                    coefficient: c,
                    exponents: m.0.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermJson {
    pub coefficient: i128,
    pub exponents: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyJson {
    pub family: Family,
    pub k: usize,
    pub nvars: usize,
    pub text: String,
    pub terms: Vec<TermJson>,
}

impl PolyJson {
    pub fn to_poly(&self) -> Result<MultiPoly> {
        MultiPoly::from_terms(
            self.nvars,
            self.terms.iter().map(|t| (t.exponents.clone(), t.coefficient)),
        )
    }
}

fn write_monomial(f: &mut fmt::Formatter<'_>, m: &Monomial) -> fmt::Result {
    let mut first = true;
    for (i, &e) in m.0.iter().enumerate() {
        if e == 0 {
            continue;
        }
        if !first {
            f.write_str("*")?;
        }
        first = false;
        write!(f, "z{}", i + 1)?;
        if e > 1 {
            write!(f, "^{e}")?;
        }
    }
    Ok(())
}

impl fmt::Display for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (idx, (m, c)) in self.terms().enumerate() {
            let mag = c.unsigned_abs();
            match (idx, c < 0) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            if m.degree() == 0 {
                write!(f, "{mag}")?;
            } else {
                if mag != 1 {
                    write!(f, "{mag}*")?;
                }
                write_monomial(f, m)?;
            }
        }
        Ok(())
    }
}

/// Parses the text format produced by `Display`, with an optional `P3 = ` prefix.
pub fn parse_poly(text: &str, nvars: usize) -> Result<MultiPoly> {
    let body = match text.split_once('=') {
        Some((_, rhs)) => rhs,
        None => text,
    };
    let compact: String = body.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(Error::Parse("empty polynomial".into()));
    }
    if compact == "0" {
        return Ok(MultiPoly::zero(nvars));
    }
    // split into signed terms
    let mut pieces: Vec<(i128, &str)> = Vec::new();
    let bytes = compact.as_bytes();
    let mut start = 0;
    let mut sign = 1i128;
    if bytes[0] == b'-' || bytes[0] == b'+' {
        sign = if bytes[0] == b'-' { -1 } else { 1 };
        start = 1;
    }
    for i in start..=bytes.len() {
        if i == bytes.len() || bytes[i] == b'+' || bytes[i] == b'-' {
            if i == start {
                return Err(Error::Parse(format!("empty term in {text:?}")));
            }
            pieces.push((sign, &compact[start..i]));
            if i < bytes.len() {
                sign = if bytes[i] == b'-' { -1 } else { 1 };
                start = i + 1;
            }
        }
    }
    let mut poly = MultiPoly::zero(nvars);
    for (sign, term) in pieces {
        let mut coeff: i128 = sign;
        let mut exps = vec![0u32; nvars];
        for factor in term.split('*') {
            if let Some(var) = factor.strip_prefix('z') {
                let (idx, pow) = match var.split_once('^') {
                    Some((i, e)) => (i, e),
                    None => (var, "1"),
                };
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad variable in {factor:?}")))?;
                let pow: u32 = pow
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad exponent in {factor:?}")))?;
                if idx == 0 || idx > nvars {
                    return Err(Error::Parse(format!(
                        "variable z{idx} outside z1..z{nvars}"
                    )));
                }
                exps[idx - 1] += pow;
            } else {
                let c: i128 = factor
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad coefficient {factor:?}")))?;
                coeff = coeff.checked_mul(c).ok_or_else(overflow)?;
            }
        }
        poly.add_term(Monomial(exps), coeff)?;
    }
    Ok(poly)
}

fn binomial_i128(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// Floating-point binomial coefficient (exact for the small arguments used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    binomial_i128(n, k) as f64
}

type CacheMap = HashMap<(Family, usize), Arc<MultiPoly>>;

fn cache() -> &'static RwLock<CacheMap> {
    static CACHE: OnceLock<RwLock<CacheMap>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn cached(family: Family, k: usize) -> Option<Arc<MultiPoly>> {
    cache()
        .read()
        .expect("polynomial cache poisoned")
        .get(&(family, k))
        .cloned()
}

fn store(family: Family, k: usize, poly: MultiPoly) -> Arc<MultiPoly> {
    let mut guard = cache().write().expect("polynomial cache poisoned");
    guard.entry((family, k)).or_insert_with(|| Arc::new(poly)).clone()
}

/// One step of either recursion: builds member `k+1` from members `lo..=k`.
fn recurse(family: Family, k: usize, lower: &[Arc<MultiPoly>]) -> Result<MultiPoly> {
    let n = k + 1;
    let top = n - 1;
    let mut poly = MultiPoly::monomial(n, top, n as u32, 1);
    let first = family.min_k();
    for (offset, member) in lower.iter().enumerate() {
        let l = first + offset;
        let c = match family {
            Family::P => binomial_i128(k, l - 1),
            Family::Q => binomial_i128(k - 1, l - 2),
        };
        let term = member
            .extend_vars(n)
            .mul_monomial(top, (n - l) as u32, -c)?;
        poly.add_assign(&term)?;
    }
    Ok(poly)
}

fn build(family: Family, k: usize, cap: usize) -> Result<Arc<MultiPoly>> {
    let min = family.min_k();
    if k < min {
        return Err(Error::invalid(format!(
            "{family}_k is defined for k >= {min}, got k = {k}"
        )));
    }
    if k > cap {
        return Err(Error::ResourceLimit(format!(
            "{family}_{k} exceeds the configured cap k <= {cap}"
        )));
    }
    if let Some(p) = cached(family, k) {
        return Ok(p);
    }
    let mut members: Vec<Arc<MultiPoly>> = Vec::with_capacity(k);
    for j in min..=k {
        let member = match cached(family, j) {
            Some(p) => p,
            None => {
                let poly = if j == min {
                    match family {
                        Family::P => MultiPoly::monomial(1, 0, 1, 1),
                        Family::Q => MultiPoly::monomial(2, 1, 2, 1),
                    }
                } else {
                    recurse(family, j - 1, &members)?
                };
                store(family, j, poly)
            }
        };
        members.push(member);
    }
    Ok(members.pop().expect("k >= min"))
}

/// `P_k` with the default cap `k <= 16`.
pub fn build_p(k: usize) -> Result<Arc<MultiPoly>> {
    build(Family::P, k, DEFAULT_K_CAP)
}

/// `Q_k` with the default cap `k <= 16`.
pub fn build_q(k: usize) -> Result<Arc<MultiPoly>> {
    build(Family::Q, k, DEFAULT_K_CAP)
}

pub fn build_family(family: Family, k: usize, cap: usize) -> Result<Arc<MultiPoly>> {
    build(family, k, cap)
}

/// Numerical values `P_1(z), ..., P_n(z)` computed through the recursion
/// itself (no expansion); `z.len() == n`.
pub fn eval_p_family(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut vals = Vec::with_capacity(n);
    if n == 0 {
        return vals;
    }
    vals.push(z[0]);
    for k in 1..n {
        let zt = z[k];
        let mut v = zt.powi(k as i32 + 1);
        for l in 1..=k {
            v -= binomial(k, l - 1) * zt.powi((k + 1 - l) as i32) * vals[l - 1];
        }
        vals.push(v);
    }
    vals
}

/// Numerical values `Q_2(z), ..., Q_n(z)` through the recursion; index 0 holds `Q_2`.
pub fn eval_q_family(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut vals = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return vals;
    }
    vals.push(z[1] * z[1]);
    for k in 2..n {
        let zt = z[k];
        let mut v = zt.powi(k as i32 + 1);
        for l in 2..=k {
            v -= binomial(k - 1, l - 2) * zt.powi((k + 1 - l) as i32) * vals[l - 2];
        }
        vals.push(v);
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text(family: Family, k: usize) -> String {
        let poly = build(family, k, DEFAULT_K_CAP).unwrap();
        format!("{family}{k} = {poly}")
    }

    #[test]
    fn printed_members() {
        assert_eq!(text(Family::P, 1), "P1 = z1");
        assert_eq!(text(Family::P, 2), "P2 = z2^2 - z1*z2");
        assert_eq!(
            text(Family::P, 3),
            "P3 = z3^3 - z1*z3^2 - 2*z2^2*z3 + 2*z1*z2*z3"
        );
        assert_eq!(text(Family::Q, 2), "Q2 = z2^2");
        assert_eq!(text(Family::Q, 3), "Q3 = z3^3 - z2^2*z3");
    }

    #[test]
    fn q4_matches_hand_expansion() {
        // Q4 = z4^4 - C(2,0) z4^2 Q2 - C(2,1) z4 Q3
        //    = z4^4 - z2^2 z4^2 - 2 z4 (z3^3 - z2^2 z3)
        let expected = MultiPoly::from_terms(
            4,
            [
                (vec![0, 0, 0, 4], 1),
                (vec![0, 2, 0, 2], -1),
                (vec![0, 0, 3, 1], -2),
                (vec![0, 2, 1, 1], 2),
            ],
        )
        .unwrap();
        assert_eq!(*build_q(4).unwrap(), expected);
    }

    #[test]
    fn rejects_out_of_range_k() {
        assert!(matches!(build_p(0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_q(1), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_p(17), Err(Error::ResourceLimit(_))));
        assert!(build_family(Family::P, 18, 18).is_ok());
    }

    #[test]
    fn total_degree_is_k() {
        for k in 1..=DEFAULT_K_CAP {
            assert_eq!(build_p(k).unwrap().total_degree(), Some(k as u32));
        }
        for k in 2..=DEFAULT_K_CAP {
            assert_eq!(build_q(k).unwrap().total_degree(), Some(k as u32));
        }
    }

    #[test]
    fn eval_examples() {
        let p2 = build_p(2).unwrap();
        assert_eq!(p2.eval(&[0.5, 0.5]).unwrap(), 0.0);
        let p3 = build_p(3).unwrap();
        assert_eq!(p3.eval(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let q3 = build_q(3).unwrap();
        assert_eq!(q3.eval(&[0.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            p3.eval(&[1.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn unit_sums_are_exactly_one() {
        for d in 2..=12usize {
            let mut p_sum: i128 = 0;
            for k in 1..=d {
                let ones = vec![1i128; k];
                p_sum += binomial_i128(d - 1, k - 1) * build_p(k).unwrap().eval_exact(&ones).unwrap();
            }
            assert_eq!(p_sum, 1, "P unit sum at d = {d}");
            let mut q_sum: i128 = 0;
            for k in 2..=d {
                let ones = vec![1i128; k];
                q_sum += binomial_i128(d - 2, k - 2) * build_q(k).unwrap().eval_exact(&ones).unwrap();
            }
            assert_eq!(q_sum, 1, "Q unit sum at d = {d}");
        }
    }

    #[test]
    fn partial_derivative_of_p3() {
        let d3 = build_p(3).unwrap().partial(2).unwrap();
        assert_eq!(d3.to_string(), "3*z3^2 - 2*z1*z3 - 2*z2^2 + 2*z1*z2");
        let d1 = build_p(3).unwrap().partial(0).unwrap();
        assert_eq!(d1.to_string(), "-z3^2 + 2*z2*z3");
    }

    #[test]
    fn zero_polynomial_formats() {
        assert_eq!(MultiPoly::zero(3).to_string(), "0");
        assert!(parse_poly("0", 3).unwrap().is_zero());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_poly("z1 + ", 2).is_err());
        assert!(parse_poly("z3", 2).is_err());
        assert!(parse_poly("x1", 2).is_err());
    }

    #[test]
    fn json_view_round_trips() {
        let q5 = build_q(5).unwrap();
        let view = q5.to_json_view(Family::Q, 5);
        let json = serde_json::to_string(&view).unwrap();
        let back: PolyJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_poly().unwrap(), *q5);
    }

    #[test]
    fn interval_contains_point_value() {
        let p4 = build_p(4).unwrap();
        let z = [0.2, 0.3, 0.5, 0.8];
        let v = p4.eval(&z).unwrap();
        let (lo, hi) = p4.eval_interval(&z, &z).unwrap();
        assert!((lo - v).abs() < 1e-12 && (hi - v).abs() < 1e-12);
        let lo_z: Vec<f64> = z.iter().map(|x| x - 0.05).collect();
        let hi_z: Vec<f64> = z.iter().map(|x| x + 0.05).collect();
        let (lo, hi) = p4.eval_interval(&lo_z, &hi_z).unwrap();
        assert!(lo <= v && v <= hi);
    }

    #[test]
    fn concurrent_builds_agree() {
        let handles: Vec<_> = (0..8)
            .map(|_| std::thread::spawn(|| build_p(12).unwrap()))
            .collect();
        let polys: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for p in &polys[1..] {
            assert_eq!(**p, *polys[0]);
        }
    }

    proptest! {
        #[test]
        fn text_round_trip(k in 1usize..=10, q in proptest::bool::ANY) {
            let family = if q && k >= 2 { Family::Q } else { Family::P };
            let poly = build(family, k, DEFAULT_K_CAP).unwrap();
            let parsed = parse_poly(&format!("{family}{k} = {poly}"), k).unwrap();
            prop_assert_eq!(parsed, (*poly).clone());
        }

        #[test]
        fn recursive_evaluation_matches_expansion(z in proptest::collection::vec(0.0f64..=1.0, 1..=9)) {
            let ps = eval_p_family(&z);
            for (i, v) in ps.iter().enumerate() {
                let exp = build_p(i + 1).unwrap().eval(&z[..=i]).unwrap();
                prop_assert!((v - exp).abs() <= 1e-9 * (1.0 + exp.abs()));
            }
            let qs = eval_q_family(&z);
            for (i, v) in qs.iter().enumerate() {
                let exp = build_q(i + 2).unwrap().eval(&z[..=i + 1]).unwrap();
                prop_assert!((v - exp).abs() <= 1e-9 * (1.0 + exp.abs()));
            }
        }
    }
}
