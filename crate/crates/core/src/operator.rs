//! The generating-function operator `A_{d,p}` on nondecreasing functions
//! `[0,1) -> [0,1]`.
//!
//! ```text
//! A h(x) = (p x + (1-p)/d) * sum_{k=1}^{d} C(d-1,k-1) P_k(z)
//!        + (d-1)(1-p)/d    * sum_{k=2}^{d} C(d-2,k-2) Q_k(z),      z_k = h(c^(k-1)(x))
//! ```
//!
//! Functions are held on grids ([`GridFunction`]) or passed as closures, which
//! lets the verification code feed empirical generating functions in
//! directly without interpolation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{AffineMap, ModelParams};
use crate::polynomials::{binomial, build_p, build_q, eval_p_family, eval_q_family, MultiPoly};

/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 1024;

/// Largest `n + m` accepted by the exact dyadic evaluators.
pub const DYADIC_COST_CAP: u32 = 26;

/// A nondecreasing function on `[0,1)` sampled on a grid, extended by linear
/// interpolation and, past the last point, by the last segment's slope
/// clamped to `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    xs: Vec<f64>,
    values: Vec<f64>,
    uniform: bool,
}

fn check_x(x: f64) -> Result<()> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("argument must lie in [0,1), got {x}")));
    }
    Ok(())
}

/// Clamps to `[0,1]` and applies the running maximum. Returns the largest
/// upward correction made by the running maximum.
fn repair(values: &mut [f64]) -> f64 {
    let mut run = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
        if *v < run {
            worst = worst.max(run - *v);
            *v = run;
        } else {
            run = *v;
        }
    }
    worst
}

impl GridFunction {
    /// Uniform grid `x_i = i/m`, `i = 0..m`, filled from `f`.
    pub fn uniform(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::check_size(m)?;
        let values = (0..m).map(|i| f(i as f64 / m as f64)).collect();
        Self::from_uniform_values(values)
    }

    pub fn constant(m: usize, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Domain(format!("constant must lie in [0,1], got {c}")));
        }
        Self::uniform(m, |_| c)
    }

    /// Values on the uniform grid of size `values.len()`.
    pub fn from_uniform_values(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        Self::check_size(m)?;
        let xs = (0..m).map(|i| i as f64 / m as f64).collect();
        Self::validated(xs, values, true)
    }

    /// Arbitrary grid with `xs[0] = 0`, strictly increasing, `xs[last] < 1`.
    pub fn from_points(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: values.len(),
            });
        }
        Self::check_size(xs.len())?;
        if xs[0] != 0.0 || xs.windows(2).any(|w| w[0] >= w[1]) || *xs.last().unwrap() >= 1.0 {
            return Err(Error::Domain(
                "grid must start at 0, increase strictly and stay below 1".into(),
            ));
        }
        Self::validated(xs, values, false)
    }

    /// Clamps and monotonizes `values` on the uniform grid, returning the
    /// repair magnitude alongside the function.
    pub fn repaired_uniform(mut values: Vec<f64>) -> Result<(Self, f64)> {
        Self::check_size(values.len())?;
        let fix = repair(&mut values);
        let m = values.len();
        let xs = (0..m).map(|i| i as f64 / m as f64).collect();
        Ok((
            Self {
                xs,
                values,
                uniform: true,
            },
            fix,
        ))
    }

    fn check_size(m: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {m}")));
        }
        Ok(())
    }

    fn validated(xs: Vec<f64>, values: Vec<f64>, uniform: bool) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("grid values must lie in [0,1]".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("grid values must be nondecreasing".into()));
        }
        Ok(Self { xs, values, uniform })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn sup(&self) -> f64 {
        *self.values.last().expect("grid is nonempty")
    }

    /// Interpolated value at `x`; arguments outside `[0,1]` are clamped.
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.xs.len();
        let x = x.clamp(0.0, 1.0);
        let i = if self.uniform {
            ((x * m as f64) as usize).min(m - 1)
        } else {
            self.xs.partition_point(|&g| g <= x).saturating_sub(1)
        };
        let (lo, hi) = if i + 1 < m { (i, i + 1) } else { (m - 2, m - 1) };
        let t = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        let v = self.values[lo] + t * (self.values[hi] - self.values[lo]);
        v.clamp(0.0, 1.0)
    }

    /// As [`eval`](Self::eval) with a domain check.
    pub fn try_eval(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.eval(x))
    }

    /// Pointwise `self <= other + tol` on the grid nodes (same grid required).
    pub fn le_on_grid(&self, other: &Self, tol: f64) -> Result<bool> {
        if self.xs != other.xs {
            return Err(Error::invalid("functions live on different grids"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| *a <= *b + tol))
    }
}

/// A closed interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn add(self, o: Self) -> Self {
        Self::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn scale(self, w: f64) -> Self {
        if w >= 0.0 {
            Self::new(w * self.lo, w * self.hi)
        } else {
            Self::new(w * self.hi, w * self.lo)
        }
    }

    fn mul(self, o: Self) -> Self {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Self::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    fn intersect(self, o: Self) -> Self {
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        if lo <= hi {
            Self { lo, hi }
        } else {
            // both are valid enclosures; disagreement is round-off
            Self { lo: hi, hi: lo }
        }
    }
}

/// A real linear combination of integer polynomials in the same variables,
/// with precomputed gradients for centered-form range bounds.
#[derive(Clone, Debug)]
struct Combo {
    parts: Vec<(f64, MultiPoly)>,
    grads: Vec<Vec<MultiPoly>>,
}

impl Combo {
    fn new(parts: Vec<(f64, MultiPoly)>) -> Result<Self> {
        let grads = parts
            .iter()
            .map(|(_, p)| (0..p.nvars()).map(|v| p.partial(v)).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { parts, grads })
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.parts
            .iter()
            .map(|(w, p)| w * p.eval(z).expect("dimension fixed at construction"))
            .sum()
    }

    /// Enclosure of the range over the box `[lo, hi]`, centered at `mid`.
    fn bounds(&self, mid: &[f64], lo: &[f64], hi: &[f64]) -> Interval {
        let nat = self.parts.iter().fold(Interval::point(0.0), |acc, (w, p)| {
            let (a, b) = p.eval_interval(lo, hi).expect("box is valid");
            acc.add(Interval::new(a, b).scale(*w))
        });
        let mut centered = Interval::point(self.eval(mid));
        for v in 0..mid.len() {
            let grad = self
                .parts
                .iter()
                .zip(&self.grads)
                .fold(Interval::point(0.0), |acc, ((w, _), g)| {
                    let (a, b) = g[v].eval_interval(lo, hi).expect("box is valid");
                    acc.add(Interval::new(a, b).scale(*w))
                });
            centered = centered.add(grad.mul(Interval::new(lo[v] - mid[v], hi[v] - mid[v])));
        }
        nat.intersect(centered)
    }
}

/// `A_{d,p}` with its maps, weights and expanded polynomial sums precomputed.
#[derive(Clone, Debug)]
pub struct Operator {
    params: ModelParams,
    maps: Vec<AffineMap>,
    p_weights: Vec<f64>,
    q_weights: Vec<f64>,
    p_sum: Combo,
    q_sum: Combo,
}

impl Operator {
    /// Fails with a resource-limit error when `d` exceeds the polynomial cap.
    pub fn new(params: ModelParams) -> Result<Self> {
        let d = params.d() as usize;
        let p_weights: Vec<f64> = (1..=d).map(|k| binomial(d - 1, k - 1)).collect();
        let q_weights: Vec<f64> = (2..=d).map(|k| binomial(d - 2, k - 2)).collect();
        let mut p_exact = MultiPoly::zero(d);
        for k in 1..=d {
            let term = build_p(k)?.extend_vars(d).scaled(p_weights[k - 1] as i128)?;
            p_exact.add_assign(&term)?;
        }
        let mut q_exact = MultiPoly::zero(d);
        for k in 2..=d {
            let term = build_q(k)?.extend_vars(d).scaled(q_weights[k - 2] as i128)?;
            q_exact.add_assign(&term)?;
        }
        Ok(Self {
            params,
            maps: params.c_maps(),
            p_weights,
            q_weights,
            p_sum: Combo::new(vec![(1.0, p_exact)])?,
            q_sum: Combo::new(vec![(1.0, q_exact)])?,
        })
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    /// `(p x + (1-p)/d, (d-1)(1-p)/d)`.
    pub fn weights(&self, x: f64) -> (f64, f64) {
        let d = f64::from(self.params.d());
        let p = self.params.p();
        (p * x + (1.0 - p) / d, (d - 1.0) * (1.0 - p) / d)
    }

    /// `z_k = h(c^(k-1)(x))` for `k = 1..d`.
    pub fn z_vector(&self, h: impl Fn(f64) -> f64, x: f64) -> Vec<f64> {
        self.maps.iter().map(|c| h(c.apply(x))).collect()
    }

    /// `(sum C(d-1,k-1) P_k(z), sum C(d-2,k-2) Q_k(z))` through the recursions.
    pub fn sums(&self, z: &[f64]) -> (f64, f64) {
        let ps = eval_p_family(z);
        let qs = eval_q_family(z);
        let p: f64 = ps.iter().zip(&self.p_weights).map(|(v, w)| v * w).sum();
        let q: f64 = qs.iter().zip(&self.q_weights).map(|(v, w)| v * w).sum();
        (p, q)
    }

    /// The same sums from the expanded integer polynomials.
    pub fn sums_expanded(&self, z: &[f64]) -> (f64, f64) {
        (self.p_sum.eval(z), self.q_sum.eval(z))
    }

    fn combine(&self, x: f64, sums: (f64, f64)) -> f64 {
        let (a, b) = self.weights(x);
        a * sums.0 + b * sums.1
    }

    /// `A h(x)` for an arbitrary function `h`.
    pub fn apply_fn(&self, h: impl Fn(f64) -> f64, x: f64) -> Result<f64> {
        check_x(x)?;
        let z = self.z_vector(h, x);
        Ok(self.combine(x, self.sums(&z)))
    }

    pub fn apply(&self, h: &GridFunction, x: f64) -> Result<f64> {
        self.apply_fn(|y| h.eval(y), x)
    }

    /// `A h(x)` evaluated through the expanded polynomials.
    pub fn apply_expanded(&self, h: &GridFunction, x: f64) -> Result<f64> {
        check_x(x)?;
        let z = self.z_vector(|y| h.eval(y), x);
        Ok(self.combine(x, self.sums_expanded(&z)))
    }

    /// One application on the grid of `h`, all outputs computed from the
    /// frozen input. The result is clamped and monotonized; the second
    /// component is the running-maximum repair magnitude.
    pub fn apply_grid(&self, h: &GridFunction) -> (GridFunction, f64) {
        let values: Vec<f64> = h
            .xs()
            .par_iter()
            .map(|&x| {
                let z = self.z_vector(|y| h.eval(y), x);
                self.combine(x, self.sums(&z))
            })
            .collect();
        let mut values = values;
        let fix = repair(&mut values);
        (
            GridFunction {
                xs: h.xs.clone(),
                values,
                uniform: h.uniform,
            },
            fix,
        )
    }

    /// Box of z-values when each `h(y)` is only known within `±eps`.
    pub fn z_box(&self, h: impl Fn(f64) -> f64, eps: f64, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mid = self.z_vector(h, x);
        let lo = mid.iter().map(|v| (v - eps).max(0.0)).collect();
        let hi = mid.iter().map(|v| (v + eps).min(1.0)).collect();
        (mid, lo, hi)
    }

    /// Enclosure of `A g(x)` over all `g` with `|g - h| <= eps` pointwise.
    pub fn apply_bounds(&self, h: impl Fn(f64) -> f64, eps: f64, x: f64) -> Result<Interval> {
        check_x(x)?;
        let (mid, lo, hi) = self.z_box(h, eps, x);
        let (a, b) = self.weights(x);
        let p = self.p_sum.bounds(&mid, &lo, &hi);
        let q = self.q_sum.bounds(&mid, &lo, &hi);
        Ok(p.scale(a).add(q.scale(b)))
    }
}

/// The `d = 2, p = 1/3` operator in closed form.
pub fn apply_a2_closed_fn(h: impl Fn(f64) -> f64, x: f64) -> Result<f64> {
    check_x(x)?;
    let hi = h((x + 1.0) / 2.0);
    let lo = h(x / 2.0);
    Ok((x + 2.0) / 3.0 * hi * hi + (x + 1.0) / 3.0 * lo * (1.0 - hi))
}

pub fn apply_a2_closed(h: &GridFunction, x: f64) -> Result<f64> {
    apply_a2_closed_fn(|y| h.eval(y), x)
}

/// Snapshots of `h_0, A h_0, ..., A^n h_0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterateTrace {
    pub n: usize,
    pub functions: Vec<GridFunction>,
    pub sup_values: Vec<f64>,
    /// Running-maximum repair made after each application (index 0 unused).
    pub repairs: Vec<f64>,
}

impl IterateTrace {
    pub fn max_repair(&self) -> f64 {
        self.repairs.iter().copied().fold(0.0, f64::max)
    }
}

pub fn iterate_a(op: &Operator, h0: &GridFunction, n: usize) -> Result<IterateTrace> {
    if n < 1 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    let mut functions = Vec::with_capacity(n + 1);
    let mut repairs = Vec::with_capacity(n + 1);
    functions.push(h0.clone());
    repairs.push(0.0);
    for _ in 0..n {
        let (next, fix) = op.apply_grid(functions.last().unwrap());
        functions.push(next);
        repairs.push(fix);
    }
    let sup_values = functions.iter().map(GridFunction::sup).collect();
    Ok(IterateTrace {
        n,
        functions,
        sup_values,
        repairs,
    })
}

fn a2_step(x: f64, lo: f64, hi: f64) -> f64 {
    (x + 2.0) / 3.0 * hi * hi + (x + 1.0) / 3.0 * lo * (1.0 - hi)
}

fn check_dyadic(n: u32, m: u32) -> Result<()> {
    if n + m > DYADIC_COST_CAP {
        return Err(Error::ResourceLimit(format!(
            "exact dyadic evaluation needs n + m <= {DYADIC_COST_CAP}, got {}",
            n + m
        )));
    }
    Ok(())
}

/// `(A_2^n 1)(i / 2^m)` without interpolation.
///
/// The points reached after `k` halvings are `(i + t 2^m) / 2^(m+k)`,
/// `t < 2^k`, so the evaluation is a bottom-up sweep over `2^n` values.
pub fn exact_iterate_a2(n: u32, i: u64, m: u32) -> Result<f64> {
    check_dyadic(n, m)?;
    let scale = 1u64 << m;
    if i >= scale {
        return Err(Error::Domain(format!("i / 2^m must lie in [0,1), got {i}/{scale}")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    // level k (k halvings below the query) holds A^(n-k) 1 at its 2^k points
    let mut below: Vec<f64> = vec![1.0; 1usize << n];
    for k in (0..n).rev() {
        let count = 1usize << k;
        let denom = (scale << k) as f64;
        let level: Vec<f64> = (0..count)
            .map(|t| {
                let x = (i + t as u64 * scale) as f64 / denom;
                a2_step(x, below[t], below[t + count])
            })
            .collect();
        below = level;
    }
    Ok(below[0])
}

/// `A_2^j 1` at all points `i / 2^m` for `j = 0..=n`.
pub fn exact_a2_levels(n: u32, m: u32) -> Result<Vec<Vec<f64>>> {
    check_dyadic(n, m)?;
    // finest level: A^0 1 at resolution 2^(m+n)
    let mut current = vec![1.0; 1usize << (m + n)];
    let stride_to_m = |v: &[f64]| -> Vec<f64> {
        let step = v.len() >> m;
        v.iter().step_by(step).copied().collect()
    };
    let mut levels = vec![stride_to_m(&current)];
    for j in 1..=n {
        let res = 1usize << (m + n - j);
        let next: Vec<f64> = (0..res)
            .map(|i| a2_step(i as f64 / res as f64, current[i], current[i + res]))
            .collect();
        levels.push(stride_to_m(&next));
        current = next;
    }
    Ok(levels)
}

/// Upper bounds `B_j` on `max_i |h_j(x_i) - (A_2^j 1)(x_i)|` for the grid
/// iterates `h_j` of [`iterate_a`] on the uniform grid of size `2^m`.
///
/// Each step is a mean-value bound using the partial derivatives of the
/// closed form over the error box, plus the exact interpolation error of the
/// true iterate at the half-grid points where the operator samples it.
pub fn a2_grid_error_bounds(n: u32, m: u32) -> Result<Vec<f64>> {
    check_dyadic(n + 1, m)?;
    let fine = exact_a2_levels(n, m + 1)?;
    let size = 1usize << m;
    let h = 1.0 / size as f64;
    let mut node_err = vec![0.0f64; size];
    let mut bounds = vec![0.0];
    for level in fine.iter().take(n as usize) {
        let exact = |k: usize| level[k];
        let nodes: Vec<f64> = (0..size).map(|i| level[2 * i]).collect();
        // error bound for interpolated grid values at fine index k
        let err_at = |k: usize| -> (f64, f64) {
            let pos = k as f64 / (2 * size) as f64;
            let (a, b) = if k / 2 + 1 < size {
                (k / 2, k / 2 + 1)
            } else {
                (size - 2, size - 1)
            };
            let t = (pos - a as f64 * h) / h;
            let interp = nodes[a] + t * (nodes[b] - nodes[a]);
            let iota = (interp.clamp(0.0, 1.0) - exact(k)).abs();
            let prop = (1.0 - t).abs() * node_err[a] + t.abs() * node_err[b];
            (exact(k), prop + iota)
        };
        let mut next = vec![0.0f64; size];
        for (i, slot) in next.iter_mut().enumerate() {
            let x = i as f64 * h;
            let (e0, r0) = err_at(i);
            let (e1, r1) = err_at(i + size);
            let (l0, u0) = ((e0 - r0).max(0.0), (e0 + r0).min(1.0));
            let (l1, u1) = ((e1 - r1).max(0.0), (e1 + r1).min(1.0));
            let a1 = (x + 2.0) / 3.0;
            let a0 = (x + 1.0) / 3.0;
            let d1 = (2.0 * a1 * u1 - a0 * l0).abs().max((2.0 * a1 * l1 - a0 * u0).abs());
            let d0 = a0 * (1.0 - l1);
            *slot = d1 * r1 + d0 * r0 + 4.0 * f64::EPSILON;
        }
        // the running maximum can only carry earlier errors forward
        let mut run: f64 = 0.0;
        for v in next.iter_mut() {
            run = run.max(*v);
            *v = run;
        }
        bounds.push(run);
        node_err = next;
    }
    Ok(bounds)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VanishingReport {
    pub tol: f64,
    pub n_max: usize,
    pub grid_size: usize,
    /// First `n` with `sup_x A^n 1 <= tol`.
    pub first_n: Option<usize>,
    /// Per grid point, the first `n` with `A^n 1(x) <= tol`.
    pub pointwise_first_n: Vec<Option<usize>>,
    /// Largest `h_n(x) - h_{n-1}(x)` seen on the grid.
    pub max_increase: f64,
    pub monotone_ok: bool,
    pub sup_values: Vec<f64>,
}

impl VanishingReport {
    pub fn pass(&self) -> bool {
        self.monotone_ok && self.first_n.is_some()
    }
}

/// Allowed pointwise increase between consecutive grid iterates.
pub const MONOTONE_TOL: f64 = 1e-12;

/// Iterates `A_2` from `h = 1` until `sup <= tol` or `n_max` steps.
pub fn check_vanishing(n_max: usize, tol: f64, grid_size: usize) -> Result<VanishingReport> {
    let op = Operator::new(ModelParams::new(2, 1.0 / 3.0)?)?;
    let mut h = GridFunction::constant(grid_size, 1.0)?;
    let mut pointwise: Vec<Option<usize>> = h
        .values()
        .iter()
        .map(|v| (*v <= tol).then_some(0))
        .collect();
    let mut sup_values = vec![h.sup()];
    let mut first_n = (h.sup() <= tol).then_some(0);
    let mut max_increase = f64::NEG_INFINITY;
    let mut n = 0;
    while first_n.is_none() && n < n_max {
        n += 1;
        let (next, _) = op.apply_grid(&h);
        for (i, (new, old)) in next.values().iter().zip(h.values()).enumerate() {
            max_increase = max_increase.max(new - old);
            if pointwise[i].is_none() && *new <= tol {
                pointwise[i] = Some(n);
            }
        }
        sup_values.push(next.sup());
        if next.sup() <= tol {
            first_n = Some(n);
        }
        h = next;
    }
    Ok(VanishingReport {
        tol,
        n_max,
        grid_size,
        first_n,
        pointwise_first_n: pointwise,
        max_increase,
        monotone_ok: max_increase <= MONOTONE_TOL,
        sup_values,
    })
}

/// One evaluation point of the comparison between `A_d` and `A_2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdLeA2Cell {
    pub x: f64,
    pub ad: f64,
    pub a2: f64,
    /// Enclosures of the three gaps (left minus right) over the input band.
    pub gap: Interval,
    pub p_gap: Interval,
    pub q_gap: Interval,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdLeA2Report {
    pub d: u32,
    pub eps: f64,
    /// `max (A_d h - A_2 h)^+` at the point estimate.
    pub max_violation: f64,
    /// Largest lower end of the gap enclosures, floored at 0. Positive values
    /// are violations that no function within the band can explain.
    pub certified_violation: f64,
    pub certified_p_violation: f64,
    pub certified_q_violation: f64,
    pub cells: Vec<AdLeA2Cell>,
}

impl AdLeA2Report {
    pub fn pass(&self, tol: f64) -> bool {
        self.certified_violation <= tol
            && self.certified_p_violation <= tol
            && self.certified_q_violation <= tol
    }
}

/// Compares `A_d h` with `A_2 h` at `p = (d-1)/(2d-1)` for an `h` known to
/// within `±eps`, together with the two polynomial-sum inequalities
/// `sum C(d-1,l-1) P_l(z) <= z_1 + z_d^2 - z_d z_1` and
/// `sum C(d-2,k-2) Q_k(z) <= z_d^2`.
pub fn check_ad_le_a2(
    d: u32,
    h: impl Fn(f64) -> f64,
    eps: f64,
    xs: &[f64],
) -> Result<AdLeA2Report> {
    let op = Operator::new(ModelParams::recurrence_point(d)?)?;
    let n = d as usize;
    let top = n - 1;
    let zd2 = MultiPoly::monomial(n, top, 2, 1);
    let z1 = MultiPoly::monomial(n, 0, 1, 1);
    let mut mixed = vec![0; n];
    mixed[0] = 1;
    mixed[top] = 1;
    let z1zd = MultiPoly::from_terms(n, [(mixed, 1)])?;
    let p_gap = Combo::new(vec![
        (1.0, op.p_sum.parts[0].1.clone()),
        (-1.0, z1.clone()),
        (-1.0, zd2.clone()),
        (1.0, z1zd.clone()),
    ])?;
    let q_gap = Combo::new(vec![(1.0, op.q_sum.parts[0].1.clone()), (-1.0, zd2.clone())])?;
    let mut cells = Vec::with_capacity(xs.len());
    for &x in xs {
        check_x(x)?;
        let (a, b) = op.weights(x);
        let a1 = (x + 2.0) / 3.0;
        let a0 = (x + 1.0) / 3.0;
        let gap = Combo::new(vec![
            (a, op.p_sum.parts[0].1.clone()),
            (b, op.q_sum.parts[0].1.clone()),
            (-a1, zd2.clone()),
            (-a0, z1.clone()),
            (a0, z1zd.clone()),
        ])?;
        let (mid, lo, hi) = op.z_box(&h, eps, x);
        let ad = op.apply_fn(&h, x)?;
        let a2 = apply_a2_closed_fn(&h, x)?;
        cells.push(AdLeA2Cell {
            x,
            ad,
            a2,
            gap: gap.bounds(&mid, &lo, &hi),
            p_gap: p_gap.bounds(&mid, &lo, &hi),
            q_gap: q_gap.bounds(&mid, &lo, &hi),
        });
    }
    let pos = |f: &dyn Fn(&AdLeA2Cell) -> f64| cells.iter().map(f).fold(0.0, f64::max);
    Ok(AdLeA2Report {
        d,
        eps,
        max_violation: pos(&|c| c.ad - c.a2),
        certified_violation: pos(&|c| c.gap.lo),
        certified_p_violation: pos(&|c| c.p_gap.lo),
        certified_q_violation: pos(&|c| c.q_gap.lo),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one() -> GridFunction {
        GridFunction::constant(DEFAULT_GRID_SIZE, 1.0).unwrap()
    }

    #[test]
    fn grid_function_interpolates_and_extends() {
        let g = GridFunction::from_uniform_values(vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        assert_eq!(g.eval(0.125), 0.125);
        assert_eq!(g.eval(0.875), 0.875);
        let steep = GridFunction::from_uniform_values(vec![0.0, 0.1, 0.95, 0.99]).unwrap();
        assert!((steep.eval(0.8) - (0.99 + 0.05 * 0.16)).abs() < 1e-12);
        assert_eq!(steep.eval(0.99), 1.0);
        let cap = GridFunction::from_uniform_values(vec![0.0, 0.1, 0.5, 0.95]).unwrap();
        assert_eq!(cap.eval(0.999), 1.0);
        assert!(GridFunction::from_uniform_values(vec![0.5, 0.4]).is_err());
        assert!(GridFunction::from_uniform_values(vec![0.5, 1.2]).is_err());
        assert!(g.try_eval(1.0).is_err());
    }

    #[test]
    fn nonuniform_grid_agrees_with_uniform() {
        let f = |x: f64| x * x;
        let u = GridFunction::uniform(64, f).unwrap();
        let g = GridFunction::from_points(u.xs().to_vec(), u.values().to_vec()).unwrap();
        for k in 0..200 {
            let x = k as f64 / 200.0;
            assert_eq!(u.eval(x), g.eval(x));
        }
    }

    #[test]
    fn repair_reports_magnitude() {
        let (g, fix) = GridFunction::repaired_uniform(vec![0.1, 0.3, 0.2, 1.5]).unwrap();
        assert_eq!(g.values(), &[0.1, 0.3, 0.3, 1.0]);
        assert!((fix - 0.1).abs() < 1e-15);
    }

    #[test]
    fn worked_examples() {
        let op = Operator::new(ModelParams::new(2, 1.0 / 3.0).unwrap()).unwrap();
        assert!((op.apply(&one(), 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((apply_a2_closed(&one(), 0.5).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let zero = GridFunction::constant(DEFAULT_GRID_SIZE, 0.0).unwrap();
        assert_eq!(op.apply(&zero, 0.3).unwrap(), 0.0);
        assert_eq!(apply_a2_closed(&zero, 0.3).unwrap(), 0.0);
        assert!(op.apply(&one(), 1.0).is_err());
    }

    #[test]
    fn a_of_one_is_affine() {
        for d in 2..=8 {
            for p in [0.1, 1.0 / 3.0, 0.45] {
                let op = Operator::new(ModelParams::new(d, p).unwrap()).unwrap();
                for &x in one().xs().iter().step_by(37) {
                    let v = op.apply_fn(|_| 1.0, x).unwrap();
                    assert!((v - (p * x + 1.0 - p)).abs() < 1e-10, "d={d} p={p} x={x}");
                }
            }
        }
    }

    #[test]
    fn expanded_and_recursive_sums_agree() {
        let op = Operator::new(ModelParams::new(5, 0.2).unwrap()).unwrap();
        let h = GridFunction::uniform(256, |x| x.powi(3)).unwrap();
        for &x in h.xs().iter().step_by(11) {
            let a = op.apply(&h, x).unwrap();
            let b = op.apply_expanded(&h, x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn iterate_from_one_gives_closed_form() {
        let op = Operator::new(ModelParams::new(2, 1.0 / 3.0).unwrap()).unwrap();
        let trace = iterate_a(&op, &one(), 1).unwrap();
        for (x, v) in trace.functions[1].xs().iter().zip(trace.functions[1].values()) {
            assert!((v - (x + 2.0) / 3.0).abs() < 1e-15);
        }
        let zero = GridFunction::constant(64, 0.0).unwrap();
        let trace = iterate_a(&op, &zero, 5).unwrap();
        assert!(trace.sup_values.iter().all(|s| *s == 0.0));
        assert!(iterate_a(&op, &zero, 0).is_err());
    }

    #[test]
    fn dyadic_small_cases() {
        assert_eq!(exact_iterate_a2(0, 3, 2).unwrap(), 1.0);
        assert!((exact_iterate_a2(1, 0, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // A^2 1 (0) = (2/3) h(1/2)^2 + (1/3) h(0)(1 - h(1/2)), h = A 1 = (x+2)/3
        let h = |x: f64| (x + 2.0) / 3.0;
        let expected = 2.0 / 3.0 * h(0.5).powi(2) + 1.0 / 3.0 * h(0.0) * (1.0 - h(0.5));
        assert!((exact_iterate_a2(2, 0, 0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5).abs() < 1e-15);
        assert!(matches!(exact_iterate_a2(20, 0, 7), Err(Error::ResourceLimit(_))));
        assert!(exact_iterate_a2(2, 4, 2).is_err());
    }

    #[test]
    fn dyadic_levels_match_pointwise() {
        let levels = exact_a2_levels(6, 4).unwrap();
        for (j, level) in levels.iter().enumerate() {
            for i in [0u64, 5, 15] {
                let v = exact_iterate_a2(j as u32, i, 4).unwrap();
                assert!((level[i as usize] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn vanishing_reports() {
        let r = check_vanishing(10, 0.99, DEFAULT_GRID_SIZE).unwrap();
        for (x, first) in one().xs().iter().zip(&r.pointwise_first_n) {
            assert_eq!(*first == Some(1), *x <= 0.97 + 1e-12, "x = {x}");
        }
        let r = check_vanishing(20, 0.0, 64).unwrap();
        assert!(r.first_n.is_none() && r.monotone_ok);
    }

    #[test]
    fn ad_le_a2_for_d2_is_identity() {
        let h = GridFunction::uniform(256, |x| x * x).unwrap();
        let r = check_ad_le_a2(2, |y| h.eval(y), 0.0, &[0.0, 0.3, 0.9]).unwrap();
        assert!(r.max_violation <= 1e-12);
        for c in &r.cells {
            assert!((c.ad - c.a2).abs() < 1e-12);
        }
        let r = check_ad_le_a2(4, |_| 0.0, 0.0, &[0.1, 0.5]).unwrap();
        for c in &r.cells {
            assert_eq!((c.ad, c.a2), (0.0, 0.0));
        }
    }

    #[test]
    fn bounds_enclose_perturbed_functions() {
        let op = Operator::new(ModelParams::new(3, 0.1).unwrap()).unwrap();
        let base = |x: f64| 0.2 + 0.6 * x * x;
        let eps = 0.01;
        for x in [0.0, 0.25, 0.5, 0.75] {
            let b = op.apply_bounds(base, eps, x).unwrap();
            for shift in [-eps, -eps / 2.0, 0.0, eps] {
                let v = op.apply_fn(|y| base(y) + shift, x).unwrap();
                assert!(b.contains(v), "x={x} shift={shift} {b:?} {v}");
            }
            assert!(b.width() < 0.2);
        }
    }

    fn monotone_values(raw: Vec<f64>) -> Vec<f64> {
        let mut acc = 0.0;
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        raw.iter()
            .map(|r| {
                acc += r;
                acc / total
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn a2_closed(raw in proptest::collection::vec(0.0f64..1.0, 16)) {
            let h = GridFunction::from_uniform_values(monotone_values(raw)).unwrap();
            let op = Operator::new(ModelParams::new(2, 1.0 / 3.0).unwrap()).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..128 {
                let v = op.apply(&h, i as f64 / 128.0).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v >= prev - 1e-15);
                prev = v;
            }
        }

        #[test]
        fn a2_monotone(raw in proptest::collection::vec(0.0f64..1.0, 16), t in 0.0f64..1.0) {
            let v2 = monotone_values(raw);
            let v1: Vec<f64> = v2.iter().map(|v| v * t).collect();
            let h1 = GridFunction::from_uniform_values(v1).unwrap();
            let h2 = GridFunction::from_uniform_values(v2).unwrap();
            for i in 0..128 {
                let x = i as f64 / 128.0;
                prop_assert!(apply_a2_closed(&h1, x).unwrap() <= apply_a2_closed(&h2, x).unwrap() + 1e-15);
            }
        }

        #[test]
        fn general_matches_closed_form(raw in proptest::collection::vec(0.0f64..1.0, 32)) {
            let h = GridFunction::from_uniform_values(monotone_values(raw)).unwrap();
            let op = Operator::new(ModelParams::new(2, 1.0 / 3.0).unwrap()).unwrap();
            for i in 0..64 {
                let x = i as f64 / 64.0;
                prop_assert!((op.apply(&h, x).unwrap() - apply_a2_closed(&h, x).unwrap()).abs() < 1e-12);
            }
        }
    }
}
