//! Biased random walks on the homogeneous tree, loop erasure, and the law of
//! the loop-erased pattern.
//!
//! The rooted d-ary tree sits inside the homogeneous tree of degree `d + 1`
//! with a level function: every vertex has one neighbour a level up and `d`
//! neighbours a level down. A walk started at depth `|v|` sees the root as
//! its ancestor `|v|` levels up.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{pstar, ModelParams};
use crate::rng;

/// Default step budget of [`sample_biased_walk`].
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;

/// A vertex relative to the walk's origin: go `up` levels, then follow `down`.
///
/// Canonical form: for `up > 0` child `0` of the ancestor points back toward
/// the origin, so a nonempty `down` must not start with `0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeVertex {
    pub up: u32,
    pub down: Vec<u8>,
}

impl TreeVertex {
    pub fn origin() -> Self {
        Self {
            up: 0,
            down: Vec::new(),
        }
    }

    /// The ancestor `k` levels above the origin.
    pub fn ancestor(k: u32) -> Self {
        Self {
            up: k,
            down: Vec::new(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.up == 0 || self.down.first().is_none_or(|&c| c != 0)
    }

    /// Level relative to the origin (positive is deeper).
    pub fn relative_level(&self) -> i64 {
        self.down.len() as i64 - i64::from(self.up)
    }

    pub fn step(&mut self, step: Step) {
        match step {
            Step::Up => {
                if self.down.pop().is_none() {
                    self.up += 1;
                }
            }
            Step::Down(c) => {
                if self.up > 0 && self.down.is_empty() && c == 0 {
                    self.up -= 1;
                } else {
                    self.down.push(c);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    Up,
    Down(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Escaped,
    HitRoot,
    Truncated,
}

/// A nearest-neighbour path from the origin, which sits at depth `start_depth`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPath {
    pub start_depth: u32,
    pub steps: Vec<Step>,
    pub terminal: Terminal,
}

impl WalkPath {
    /// All visited vertices, starting with the origin.
    pub fn vertices(&self) -> Vec<TreeVertex> {
        let mut v = TreeVertex::origin();
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(v.clone());
        for &s in &self.steps {
            v.step(s);
            out.push(v.clone());
        }
        out
    }

    pub fn end(&self) -> TreeVertex {
        let mut v = TreeVertex::origin();
        for &s in &self.steps {
            v.step(s);
        }
        v
    }

    pub fn root(&self) -> TreeVertex {
        TreeVertex::ancestor(self.start_depth)
    }
}

/// `max(1, ceil(9 / log10(1/rho)))`: the return probability from that many
/// levels down is below `1e-9`.
pub fn default_escape_margin(p: f64) -> u32 {
    let rho = p / (1.0 - p);
    if rho <= 0.0 {
        return 1;
    }
    let m = (9.0 / (1.0 / rho).log10()).ceil();
    (m as u32).max(1)
}

/// Simulates the `p`-biased walk from the origin until it is certified to
/// have escaped downward: it stands at least `escape_margin` levels below
/// both the highest level it reached and its starting level.
pub fn sample_biased_walk<R: Rng + ?Sized>(
    params: &ModelParams,
    start_depth: u32,
    escape_margin: u32,
    step_budget: u64,
    rng: &mut R,
) -> Result<WalkPath> {
    let p = params.p();
    if p >= 0.5 {
        return Err(Error::invalid("biased walk needs p < 1/2 to escape"));
    }
    if escape_margin < 1 {
        return Err(Error::invalid("escape margin must be >= 1"));
    }
    let d = params.d();
    let margin = i64::from(escape_margin);
    let mut steps = Vec::new();
    let mut level: i64 = 0;
    let mut min_level: i64 = 0;
    let mut used: u64 = 0;
    loop {
        if level >= min_level + margin && level > margin {
            return Ok(WalkPath {
                start_depth,
                steps,
                terminal: Terminal::Escaped,
            });
        }
        if used >= step_budget {
            return Ok(WalkPath {
                start_depth,
                steps,
                terminal: Terminal::Truncated,
            });
        }
        used += 1;
        if rng.random::<f64>() < p {
            steps.push(Step::Up);
            level -= 1;
            min_level = min_level.min(level);
        } else {
            steps.push(Step::Down(rng.random_range(0..d) as u8));
            level += 1;
        }
    }
}

/// Chronological loop erasure followed by truncation at the first visit to
/// the root. Works on the vertex sequence, so it does not rely on the tree
/// structure.
pub fn loop_erase(path: &WalkPath) -> Result<WalkPath> {
    if path.terminal != Terminal::Escaped {
        return Err(Error::MalformedPath(
            "loop erasure needs an escaped path".into(),
        ));
    }
    let mut stack: Vec<TreeVertex> = vec![TreeVertex::origin()];
    let mut kept: Vec<Step> = Vec::new();
    let mut index: HashMap<TreeVertex, usize> = HashMap::new();
    index.insert(TreeVertex::origin(), 0);
    let mut v = TreeVertex::origin();
    for &s in &path.steps {
        v.step(s);
        if let Some(&at) = index.get(&v) {
            for gone in stack.drain(at + 1..) {
                index.remove(&gone);
            }
            kept.truncate(at);
        } else {
            index.insert(v.clone(), stack.len());
            stack.push(v.clone());
            kept.push(s);
        }
    }
    let root = path.root();
    if let Some(pos) = stack.iter().position(|u| *u == root) {
        kept.truncate(pos);
        return Ok(WalkPath {
            start_depth: path.start_depth,
            steps: kept,
            terminal: Terminal::HitRoot,
        });
    }
    Ok(WalkPath {
        start_depth: path.start_depth,
        steps: kept,
        terminal: Terminal::Escaped,
    })
}

/// Outcome of a loop-erased path: `k1` initial upward steps, or a path
/// that runs straight to the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pattern {
    K1(u32),
    HitRoot,
}

impl Pattern {
    /// Cell index in a [`PatternLaw`]: `k1`, or `start_depth` for the root.
    pub fn cell(self, start_depth: u32) -> usize {
        match self {
            Pattern::K1(k) => k as usize,
            Pattern::HitRoot => start_depth as usize,
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pattern::K1(k) => write!(f, "{k}"),
            Pattern::HitRoot => f.write_str("root"),
        }
    }
}

pub fn pattern_of(path: &WalkPath) -> Result<Pattern> {
    let k = path.steps.iter().take_while(|s| **s == Step::Up).count() as u32;
    let rest = &path.steps[k as usize..];
    match path.terminal {
        Terminal::HitRoot => {
            if k != path.start_depth || !rest.is_empty() {
                return Err(Error::MalformedPath(format!(
                    "root-terminated path must climb exactly {} levels",
                    path.start_depth
                )));
            }
            Ok(Pattern::HitRoot)
        }
        Terminal::Escaped => {
            if k >= path.start_depth {
                return Err(Error::MalformedPath(
                    "escaped path passes through the root".into(),
                ));
            }
            if rest.iter().any(|s| *s == Step::Up) {
                return Err(Error::MalformedPath(
                    "path is not up-then-down; was it loop-erased?".into(),
                ));
            }
            Ok(Pattern::K1(k))
        }
        Terminal::Truncated => Err(Error::MalformedPath("path was truncated".into())),
    }
}

/// Law of the first-leg pattern of a non-backtracking walk with drift `pstar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternLaw {
    pub d: u32,
    pub pstar: f64,
    pub start_depth: u32,
    /// `pmf[k]` for `k1 = k < start_depth`, then the root cell last.
    pub pmf: Vec<f64>,
}

impl PatternLaw {
    pub fn prob(&self, pattern: Pattern) -> f64 {
        self.pmf
            .get(pattern.cell(self.start_depth))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn cells(&self) -> Vec<Pattern> {
        (0..self.start_depth)
            .map(Pattern::K1)
            .chain(std::iter::once(Pattern::HitRoot))
            .collect()
    }
}

/// `P(k1 = 0) = 1 - p*`, `P(k1 = k) = p* a^(k-1) (1 - a)`, `P(root) = p* a^(|v|-1)`
/// with `a = p* / (p* + (1 - p*)(d-1)/d)`.
pub fn nbfm_pattern_pmf(d: u32, pstar: f64, start_depth: u32) -> Result<PatternLaw> {
    if d < 2 {
        return Err(Error::invalid(format!("degree d must be >= 2, got {d}")));
    }
    if !(0.0..=1.0).contains(&pstar) {
        return Err(Error::invalid(format!("p* must lie in [0,1], got {pstar}")));
    }
    if start_depth < 1 {
        return Err(Error::invalid("start depth must be >= 1"));
    }
    let down = (1.0 - pstar) * f64::from(d - 1) / f64::from(d);
    let a = if pstar == 0.0 { 0.0 } else { pstar / (pstar + down) };
    let mut pmf = vec![1.0 - pstar];
    for k in 1..start_depth {
        pmf.push(pstar * a.powi(k as i32 - 1) * (1.0 - a));
    }
    pmf.push(pstar * a.powi(start_depth as i32 - 1));
    Ok(PatternLaw {
        d,
        pstar,
        start_depth,
        pmf,
    })
}

/// One loop-erased sample: pattern plus the raw walk length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSample {
    pub replicate: u64,
    /// `None` when the walk exhausted its step budget.
    pub pattern: Option<Pattern>,
    pub steps_used: u64,
}

/// Samples `reps` loop-erased walks, replicate `r` on stream `(seed, r)`.
pub fn sample_patterns(
    params: &ModelParams,
    start_depth: u32,
    reps: u64,
    seed: u64,
    escape_margin: Option<u32>,
) -> Result<Vec<PatternSample>> {
    let margin = escape_margin.unwrap_or_else(|| default_escape_margin(params.p()));
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r);
            let path = sample_biased_walk(params, start_depth, margin, DEFAULT_STEP_BUDGET, &mut rng)?;
            let steps_used = path.steps.len() as u64;
            let pattern = match path.terminal {
                Terminal::Truncated => None,
                _ => Some(pattern_of(&loop_erase(&path)?)?),
            };
            Ok(PatternSample {
                replicate: r,
                pattern,
                steps_used,
            })
        })
        .collect()
}

/// One series of the pattern-law derivation against its closed forms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesCase {
    /// `"a"`, `"b"` or `"c"`.
    pub case: String,
    /// `k1` for cases a and b, `|v|` for case c.
    pub index: u32,
    pub series: f64,
    pub terms: usize,
    pub tail_bound: f64,
    /// Closed form of the series in terms of `rho`.
    pub closed_rho: f64,
    /// The non-backtracking probability at `p* = pstar(d, p)`.
    pub closed_nbfm: f64,
}

impl SeriesCase {
    pub fn discrepancy(&self) -> f64 {
        (self.series - self.closed_rho)
            .abs()
            .max((self.series - self.closed_nbfm).abs())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesReport {
    pub d: u32,
    pub p: f64,
    pub max_discrepancy: f64,
    pub cases: Vec<SeriesCase>,
}

/// Sums `term(l)` until the geometric tail bound `tail(L)` drops below `tol`.
fn sum_series(term: impl Fn(usize) -> f64, tail: impl Fn(usize) -> f64, tol: f64) -> (f64, usize, f64) {
    let mut acc = 0.0;
    let mut l = 0;
    while tail(l) >= tol {
        acc += term(l);
        l += 1;
        if l > 1_000_000 {
            break;
        }
    }
    (acc, l, tail(l))
}

/// Partial sums of the three loop-erasure series of the pattern law against
/// their closed forms, for `k1 = 1..=k1_max` and `|v| = 1..=k1_max`.
pub fn verify_series_identities(d: u32, p: f64, k1_max: u32, tail_tol: f64) -> Result<SeriesReport> {
    if p >= 0.5 {
        return Err(Error::invalid("series identities need p < 1/2"));
    }
    let ps = pstar(d, p)?;
    let rho = p / (1.0 - p);
    let df = f64::from(d);
    let r = rho / df;
    let frac = (df - 1.0) / df;
    let mut cases = Vec::new();

    let (series, terms, tail_bound) = sum_series(
        |l| rho.powi(l as i32) * (1.0 - rho) * df.powi(-(l as i32)),
        |l| r.powi(l as i32) * (1.0 - rho) / (1.0 - r),
        tail_tol,
    );
    cases.push(SeriesCase {
        case: "a".into(),
        index: 0,
        series,
        terms,
        tail_bound,
        closed_rho: (1.0 - rho) / (1.0 - r),
        closed_nbfm: 1.0 - ps,
    });

    for k1 in 1..=k1_max {
        let lead = rho.powi(k1 as i32) * (1.0 - rho) * frac;
        let (series, terms, tail_bound) = sum_series(
            |l| lead * r.powi(l as i32),
            |l| lead * r.powi(l as i32) / (1.0 - r),
            tail_tol,
        );
        // the nbFM cell for k1 exists only when |v| > k1, but its value does not depend on |v|
        let law = nbfm_pattern_pmf(d, ps, k1 + 1)?;
        cases.push(SeriesCase {
            case: "b".into(),
            index: k1,
            series,
            terms,
            tail_bound,
            closed_rho: lead / (1.0 - r),
            closed_nbfm: law.prob(Pattern::K1(k1)),
        });
    }

    for depth in 1..=k1_max {
        let lead = rho.powi(depth as i32) * (1.0 - rho);
        let (series, terms, tail_bound) = sum_series(
            |l| {
                let inner: f64 = (0..=l).map(|m| df.powi(-(m as i32)) * frac).sum();
                lead * rho.powi(l as i32) * inner
            },
            |l| rho.powi((depth as usize + l) as i32),
            tail_tol,
        );
        let law = nbfm_pattern_pmf(d, ps, depth)?;
        cases.push(SeriesCase {
            case: "c".into(),
            index: depth,
            series,
            terms,
            tail_bound,
            closed_rho: rho.powi(depth as i32) * (df - 1.0) / (df - rho),
            closed_nbfm: law.prob(Pattern::HitRoot),
        });
    }
    let max_discrepancy = cases.iter().map(SeriesCase::discrepancy).fold(0.0, f64::max);
    Ok(SeriesReport {
        d,
        p,
        max_discrepancy,
        cases,
    })
}

/// Per-cell comparison of sampled patterns with a law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatternComparison {
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
    pub tv: f64,
    pub n: u64,
    pub truncated: u64,
}

/// Counts the usable samples per cell and compares them with `law`.
/// A cell with zero probability and positive count gets an infinite z-score.
pub fn compare_patterns(samples: &[PatternSample], law: &PatternLaw) -> PatternComparison {
    let cells = law.pmf.len();
    let mut counts = vec![0u64; cells];
    let mut truncated = 0;
    let mut outside = 0u64;
    for s in samples {
        match s.pattern {
            Some(pat) => match counts.get_mut(pat.cell(law.start_depth)) {
                Some(c) => *c += 1,
                None => outside += 1,
            },
            None => truncated += 1,
        }
    }
    let n = counts.iter().sum::<u64>() + outside;
    let nf = n as f64;
    let z_scores: Vec<f64> = counts
        .iter()
        .zip(&law.pmf)
        .map(|(&c, &pi)| {
            let var = nf * pi * (1.0 - pi);
            let diff = c as f64 - nf * pi;
            if var > 0.0 {
                diff / var.sqrt()
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let tv = 0.5
        * (counts
            .iter()
            .zip(&law.pmf)
            .map(|(&c, &pi)| (c as f64 / nf - pi).abs())
            .sum::<f64>()
            + outside as f64 / nf);
    PatternComparison {
        max_abs_z: z_scores.iter().map(|z| z.abs()).fold(0.0, f64::max),
        counts,
        expected: law.pmf.clone(),
        z_scores,
        tv,
        n,
        truncated,
    }
}
