//! Statistical and numerical checks of the identities relating the
//! simulators, the pattern laws and the operator.
//!
//! Every suite returns a [`CheckReport`] whose `pass` flag is a pure function
//! of the recorded statistics and tolerances. Confidence bounds are
//! distribution-free (Hoeffding for means of `[0,1]` statistics, DKW for
//! whole distribution functions) and the suite-level `delta` is split by
//! Bonferroni across the quantities bounded. Identities that hold exactly for
//! the truncated models are compared at the truncation depth for which they
//! hold, so no truncation-bias allowance enters the tolerances.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frogsim::{self, Model, SimConfig, VisitRecord};
use crate::operator::{check_ad_le_a2, Interval, Operator};
use crate::params::{pstar, ModelParams};
use crate::polynomials::binomial;
use crate::rng::derive_seed;
use crate::stats::{hoeffding_halfwidth, pow_visits, Histogram};
use crate::walks::{compare_patterns, nbfm_pattern_pmf, sample_patterns};

pub use crate::stats::{EstimateWithCI, DEFAULT_DELTA};

/// Conditioning events a conditional estimator needs before it reports.
pub const MIN_EVENTS: u64 = 1000;

/// Per-bin z-score bound of the two-sample comparisons.
pub const Z_BOUND: f64 = 4.0;

/// Evaluation points used when none are given.
pub const DEFAULT_XS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Outcome of a deliberately perturbed comparison that should fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub name: String,
    /// The perturbed comparison failed, as it should.
    pub failed: bool,
    /// False when the perturbation cannot be detected at these parameters
    /// (for instance when every count is zero).
    pub informative: bool,
    pub statistics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub statistics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
    pub controls: Vec<ControlOutcome>,
    /// Wall-clock time; excluded from serialized bodies.
    #[serde(skip)]
    pub runtime: Duration,
}

impl CheckReport {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: false,
            statistics: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            seeds: Vec::new(),
            notes: Vec::new(),
            controls: Vec::new(),
            runtime: Duration::ZERO,
        }
    }

    fn stat(&mut self, key: impl Into<String>, v: f64) {
        self.statistics.insert(key.into(), v);
    }

    fn tol(&mut self, key: impl Into<String>, v: f64) {
        self.tolerances.insert(key.into(), v);
    }

    /// `main` combined with the requirement that informative controls fail.
    fn finish(mut self, main: bool, started: Instant) -> Self {
        self.pass = main && self.controls.iter().all(|c| c.failed || !c.informative);
        self.runtime = started.elapsed();
        self
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let worst: Vec<String> = self
            .statistics
            .iter()
            .filter(|(k, _)| k.starts_with("max_") || k.starts_with("worst_"))
            .map(|(k, v)| format!("{k}={v:.4e}"))
            .collect();
        format!(
            "{} {} [{}]",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            worst.join(", ")
        )
    }
}

fn key(name: &str, x: f64) -> String {
    format!("{name}[x={x}]")
}

fn check_xs(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid("need at least one evaluation point"));
    }
    match xs.iter().find(|x| !(0.0..1.0).contains(*x)) {
        Some(x) => Err(Error::Domain(format!("evaluation points must lie in [0,1), got {x}"))),
        None => Ok(()),
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")))
    }
}

fn need(what: &str, got: u64) -> Result<()> {
    if got < MIN_EVENTS {
        return Err(Error::InsufficientEvents {
            what: what.into(),
            got,
            needed: MIN_EVENTS,
        });
    }
    Ok(())
}

fn sfm_run(params: ModelParams, model: Model, depth: u32, reps: u64, seed: u64) -> Result<Vec<VisitRecord>> {
    frogsim::simulate(&SimConfig::new(params, model, depth, reps, seed))
}

fn branches(r: &VisitRecord) -> &frogsim::BranchRecord {
    r.branches.as_ref().expect("non-backtracking records carry branch data")
}

// ---------------------------------------------------------------- coupling

/// Loop-erased biased walks against the non-backtracking pattern law.
/// The control compares the same samples with the law at `p* + 0.1`.
pub fn verify_lemma_coupling(d: u32, p: f64, start_depth: u32, reps: u64, seed: u64) -> Result<CheckReport> {
    let started = Instant::now();
    let params = ModelParams::new(d, p)?;
    let ps = pstar(d, p)?;
    let samples = sample_patterns(&params, start_depth, reps, seed, None)?;
    let cmp = compare_patterns(&samples, &nbfm_pattern_pmf(d, ps, start_depth)?);
    let mut rep = CheckReport::new("coupling");
    rep.seeds.push(seed);
    rep.stat("pstar", ps);
    rep.stat("max_abs_z", cmp.max_abs_z);
    rep.stat("tv", cmp.tv);
    rep.stat("samples", cmp.n as f64);
    rep.stat("truncated", cmp.truncated as f64);
    for (i, (c, e)) in cmp.counts.iter().zip(&cmp.expected).enumerate() {
        rep.stat(format!("cell{i}.count"), *c as f64);
        rep.stat(format!("cell{i}.expected"), e * cmp.n as f64);
        rep.stat(format!("cell{i}.z"), cmp.z_scores[i]);
    }
    rep.tol("max_abs_z", Z_BOUND);
    rep.tol("tv", 0.01);
    let main = cmp.max_abs_z <= Z_BOUND && cmp.tv < 0.01 && cmp.truncated == 0;

    let shifted = ps + 0.1;
    let ctrl = match nbfm_pattern_pmf(d, shifted, start_depth) {
        Ok(law) => {
            let c = compare_patterns(&samples, &law);
            let mut stats = BTreeMap::new();
            stats.insert("pstar".into(), shifted);
            stats.insert("max_abs_z".into(), c.max_abs_z);
            stats.insert("tv".into(), c.tv);
            ControlOutcome {
                name: "shifted_pstar".into(),
                failed: !(c.max_abs_z <= Z_BOUND && c.tv < 0.01),
                informative: true,
                statistics: stats,
            }
        }
        Err(_) => ControlOutcome {
            name: "shifted_pstar".into(),
            failed: false,
            informative: false,
            statistics: BTreeMap::new(),
        },
    };
    rep.controls.push(ctrl);
    Ok(rep.finish(main, started))
}

// ---------------------------------------------------------------- binomial

/// Thinning of subtree visits at `∅'`: for the branch entered from the root,
/// `E[x^{V_{j->∅}} 1{no frog of the branch tries J}]` against
/// `g_{D-1}(c^{(d-1-|J|)}(x))`, with `g_{D-1}` from an independent run one
/// level shallower.
pub fn verify_lemma_binomial(
    d: u32,
    p: f64,
    j_size: u32,
    xs: &[f64],
    reps: u64,
    depth: u32,
    seed: u64,
    delta: f64,
) -> Result<CheckReport> {
    let started = Instant::now();
    check_xs(xs)?;
    check_delta(delta)?;
    if j_size >= d {
        return Err(Error::invalid(format!("|J| must be at most d - 1 = {}, got {j_size}", d - 1)));
    }
    if depth < 3 {
        return Err(Error::invalid("binomial suite needs depth >= 3"));
    }
    need("activated branches", reps)?;
    let params = ModelParams::new(d, p)?;
    let (s_main, s_ref) = (derive_seed(seed, 0), derive_seed(seed, 1));
    let recs = sfm_run(params, Model::Sfm, depth, reps, s_main)?;
    let reference = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth - 1, reps, s_ref)?);
    let map = params.c_map(d - 1 - j_size)?;

    let delta_l = delta / (2.0 * xs.len() as f64);
    let h_l = hoeffding_halfwidth(reps, delta_l);
    let eps_r = hoeffding_halfwidth(reference.total(), delta / 2.0);
    let mut rep = CheckReport::new("binomial");
    rep.seeds.extend([s_main, s_ref]);
    rep.stat("j_size", j_size as f64);
    rep.tol("lhs_halfwidth", h_l);
    rep.tol("rhs_dkw", eps_r);
    let mut worst = 0.0f64;
    let mut ok = true;
    for &x in xs {
        let sum: f64 = recs
            .iter()
            .map(|r| {
                let b = branches(r);
                let j = b.first_child as usize;
                let mask = (1..=j_size).fold(0u64, |m, s| m | 1 << ((j + s as usize) % d as usize));
                if b.avoids(j, mask) {
                    pow_visits(x, b.to_root[j])
                } else {
                    0.0
                }
            })
            .sum();
        let lhs = sum / reps as f64;
        let y = map.apply(x);
        let rhs = reference.pgf(y);
        let diff = (lhs - rhs).abs();
        worst = worst.max(diff - h_l - eps_r);
        ok &= diff <= h_l + eps_r;
        rep.stat(key("lhs", x), lhs);
        rep.stat(key("rhs", x), rhs);
        rep.stat(key("abs_diff", x), diff);
    }
    rep.stat("worst_excess", worst);
    Ok(rep.finish(ok, started))
}

// ---------------------------------------------------------- self-consistency

/// `g_D(x)` against `A_{d,p} g_{D-1}(x)`. Both generating functions are
/// replaced by empirical ones; the DKW band on each carries over to every
/// argument, and the operator image of the band is enclosed rigorously.
pub fn verify_self_consistency(
    d: u32,
    p: f64,
    xs: &[f64],
    reps: u64,
    depth: u32,
    seed: u64,
    delta: f64,
) -> Result<CheckReport> {
    let started = Instant::now();
    check_xs(xs)?;
    check_delta(delta)?;
    if depth < 3 {
        return Err(Error::invalid("self-consistency needs depth >= 3"));
    }
    let params = ModelParams::new(d, p)?;
    let op = Operator::new(params)?;
    let (s_top, s_sub) = (derive_seed(seed, 0), derive_seed(seed, 1));
    let top = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth, reps, s_top)?);
    let sub = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth - 1, reps, s_sub)?);
    let eps_top = hoeffding_halfwidth(reps, delta / 2.0);
    let eps_sub = hoeffding_halfwidth(reps, delta / 2.0);

    let mut rep = CheckReport::new("self-consistency");
    rep.seeds.extend([s_top, s_sub]);
    rep.tol("dkw_depth", eps_top);
    rep.tol("dkw_depth_minus_one", eps_sub);
    rep.tol("bias_margin", 0.0);
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut max_diff = 0.0f64;
    for &x in xs {
        let g = top.pgf(x);
        let ag = op.apply_fn(|y| sub.pgf(y), x)?;
        let band = op.apply_bounds(|y| sub.pgf(y), eps_sub, x)?;
        let lhs = Interval::new((g - eps_top).max(0.0), (g + eps_top).min(1.0));
        // signed distance between the two enclosures; <= 0 means they meet
        let sep = (lhs.lo - band.hi).max(band.lo - lhs.hi);
        ok &= sep <= 0.0;
        worst = worst.max(sep);
        max_diff = max_diff.max((g - ag).abs());
        rep.stat(key("g_hat", x), g);
        rep.stat(key("a_g_hat", x), ag);
        rep.stat(key("a_band_lo", x), band.lo);
        rep.stat(key("a_band_hi", x), band.hi);
    }
    rep.stat("max_abs_diff", max_diff);
    rep.stat("worst_separation", worst);
    Ok(rep.finish(ok, started))
}

// -------------------------------------------------------------------- rsfm

/// The re-activation identity
/// `P_{d,d} = z^d - sum_{l<d} C(d-1,l-1) z^{d-l} P_{d,l}` with `P_{d,l}`
/// estimated on `D_1` and `z = E[x^{Ṽ_i}]` from stage II, together with
/// `E[x^{Ṽ_i}] = g_{D-1}(c^{(d-1)}(x))`.
pub fn verify_rsfm_identity(
    d: u32,
    p: f64,
    xs: &[f64],
    reps: u64,
    depth: u32,
    seed: u64,
    delta: f64,
) -> Result<CheckReport> {
    let started = Instant::now();
    check_xs(xs)?;
    check_delta(delta)?;
    if depth < 3 {
        return Err(Error::invalid("rsfm suite needs depth >= 3"));
    }
    let params = ModelParams::new(d, p)?;
    let (s_main, s_ref) = (derive_seed(seed, 0), derive_seed(seed, 1));
    let recs = sfm_run(params, Model::Rsfm, depth, reps, s_main)?;
    let reference = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth - 1, reps, s_ref)?);
    let d1: Vec<&VisitRecord> = recs.iter().filter(|r| branches(r).d1()).collect();
    let n1 = d1.len() as u64;
    need("D1 replicates", n1)?;
    let map = params.c_map(d - 1)?;
    let du = d as usize;

    // per x: P_1..P_d, z, and the reference value
    let cells = xs.len() as f64 * (du as f64 + 2.0);
    let dc = delta / cells;
    let h_p = hoeffding_halfwidth(n1, dc);
    let h_z = hoeffding_halfwidth(reps, dc);
    let eps_ref = hoeffding_halfwidth(reps, dc);
    let mut rep = CheckReport::new("rsfm");
    rep.seeds.extend([s_main, s_ref]);
    rep.stat("d1_replicates", n1 as f64);
    rep.tol("p_halfwidth_unscaled", h_p);
    rep.tol("z_halfwidth", h_z);
    rep.tol("reference_dkw", eps_ref);
    let mut ok = true;
    let mut max_gap = 0.0f64;
    let mut max_z_gap = 0.0f64;
    for &x in xs {
        let mut sums = vec![0.0; du + 1];
        for r in &d1 {
            let b = branches(r);
            let l = b.activated_count() as usize;
            sums[l] += pow_visits(x, b.to_root.iter().sum());
        }
        let pl: Vec<Interval> = (1..=du)
            .map(|l| {
                let c = binomial(du - 1, l - 1);
                let m = sums[l] / n1 as f64;
                Interval::new((m - h_p).max(0.0) / c, (m + h_p).min(1.0) / c)
            })
            .collect();
        let p_mid: Vec<f64> = (1..=du)
            .map(|l| sums[l] / n1 as f64 / binomial(du - 1, l - 1))
            .collect();
        let z_sum: f64 = recs
            .iter()
            .map(|r| {
                let s = r.rsfm.as_ref().expect("rsfm record");
                s.to_root.iter().map(|&v| pow_visits(x, v)).sum::<f64>() / d as f64
            })
            .sum();
        let z = z_sum / reps as f64;
        let zi = Interval::new((z - h_z).max(0.0), (z + h_z).min(1.0));

        let rhs_mid = z.powi(d as i32)
            - (1..du)
                .map(|l| binomial(du - 1, l - 1) * z.powi((du - l) as i32) * p_mid[l - 1])
                .sum::<f64>();
        let mut lo = zi.lo.powi(d as i32);
        let mut hi = zi.hi.powi(d as i32);
        for l in 1..du {
            let c = binomial(du - 1, l - 1);
            let e = (du - l) as i32;
            lo -= c * zi.hi.powi(e) * pl[l - 1].hi;
            hi -= c * zi.lo.powi(e) * pl[l - 1].lo;
        }
        let lhs = pl[du - 1];
        ok &= lhs.lo <= hi && lo <= lhs.hi;
        max_gap = max_gap.max((p_mid[du - 1] - rhs_mid).abs());

        let g_ref = reference.pgf(map.apply(x));
        let zgap = (z - g_ref).abs();
        ok &= zgap <= h_z + eps_ref;
        max_z_gap = max_z_gap.max(zgap);

        rep.stat(key("p_dd", x), p_mid[du - 1]);
        rep.stat(key("rhs", x), rhs_mid);
        rep.stat(key("rhs_lo", x), lo);
        rep.stat(key("rhs_hi", x), hi);
        rep.stat(key("z", x), z);
        rep.stat(key("g_ref_mapped", x), g_ref);
        for (l, v) in p_mid.iter().enumerate() {
            rep.stat(format!("p_{}{}[x={x}]", d, l + 1), *v);
        }
    }
    rep.stat("max_identity_gap", max_gap);
    rep.stat("max_z_gap", max_z_gap);
    Ok(rep.finish(ok, started))
}

// -------------------------------------------------------------- domination

struct Sample {
    hist: Histogram,
    mean: f64,
    var: f64,
}

impl Sample {
    fn new(hist: Histogram) -> Self {
        Self {
            mean: hist.mean(),
            var: hist.variance(),
            hist,
        }
    }
}

/// One-sided mean test `a <= b` at `k` standard errors plus a DKW check of
/// `P(a >= t) <= P(b >= t) + eps_a + eps_b` for `1 <= t <= t_max`.
fn dominated(a: &Sample, b: &Sample, k: f64, eps: f64, t_max: u64) -> (bool, f64, f64, f64) {
    let se = (a.var / a.hist.total() as f64 + b.var / b.hist.total() as f64).sqrt();
    let mean_ok = a.mean <= b.mean + k * se;
    let worst_tail = (1..=t_max)
        .map(|t| a.hist.tail(t) - b.hist.tail(t))
        .fold(f64::NEG_INFINITY, f64::max);
    (mean_ok && worst_tail <= 2.0 * eps, se, worst_tail, (a.mean - b.mean) / se.max(f64::MIN_POSITIVE))
}

/// `SFM(d, p*) <= nbFM(d, p*) <= FM(d, p)` for truncated root visits.
///
/// The FM run drops frogs as soon as they leave the truncated tree and stops
/// once the root count exceeds the largest nbFM count; both cuts only remove
/// visits, so they can only make the second comparison harder. The control
/// asserts the reversed comparison `FM <= nbFM`.
pub fn verify_domination(d: u32, p: f64, reps: u64, depth: u32, seed: u64, delta: f64) -> Result<CheckReport> {
    let started = Instant::now();
    check_delta(delta)?;
    let params = ModelParams::new(d, p)?;
    let transformed = params.transformed()?;
    let seeds = [derive_seed(seed, 0), derive_seed(seed, 1), derive_seed(seed, 2)];
    let sfm = Sample::new(frogsim::visit_histogram(&sfm_run(transformed, Model::Sfm, depth, reps, seeds[0])?));
    let nb = Sample::new(frogsim::visit_histogram(&sfm_run(transformed, Model::Nbfm, depth, reps, seeds[1])?));
    let cap = nb.hist.max().max(sfm.hist.max()) + 1;
    let mut fm_cfg = SimConfig::new(params, Model::Fm, depth, reps, seeds[2]);
    fm_cfg.escape_margin = Some(0);
    fm_cfg.visit_cap = Some(cap);
    let fm_recs = frogsim::simulate(&fm_cfg)?;
    let horizon_hits: u64 = fm_recs.iter().map(|r| r.flags.horizon_hits).sum();
    let fm = Sample::new(frogsim::visit_histogram(&fm_recs));
    let eps = hoeffding_halfwidth(reps, delta / 3.0);

    let (ok1, se1, tail1, z1) = dominated(&sfm, &nb, 3.0, eps, cap);
    let (ok2, se2, tail2, z2) = dominated(&nb, &fm, 3.0, eps, cap);
    let mut rep = CheckReport::new("domination");
    rep.seeds.extend(seeds);
    rep.stat("pstar", transformed.p());
    rep.stat("mean_sfm", sfm.mean);
    rep.stat("mean_nbfm", nb.mean);
    rep.stat("mean_fm_capped", fm.mean);
    rep.stat("fm_visit_cap", cap as f64);
    rep.stat("fm_horizon_hits", horizon_hits as f64);
    rep.stat("se_sfm_nbfm", se1);
    rep.stat("se_nbfm_fm", se2);
    rep.stat("z_sfm_minus_nbfm", z1);
    rep.stat("z_nbfm_minus_fm", z2);
    rep.stat("max_tail_excess_sfm_nbfm", tail1);
    rep.stat("max_tail_excess_nbfm_fm", tail2);
    rep.tol("sigma", 3.0);
    rep.tol("tail_dkw_total", 2.0 * eps);
    rep.notes.push("FM counts are lower bounds: frogs leaving the tree are dropped and runs stop at the cap".into());

    let (rev_ok, _, rev_tail, rev_z) = dominated(&fm, &nb, 3.0, eps, cap);
    let mut cs = BTreeMap::new();
    cs.insert("z_fm_minus_nbfm".into(), rev_z);
    cs.insert("max_tail_excess".into(), rev_tail);
    rep.controls.push(ControlOutcome {
        name: "reversed_fm_le_nbfm".into(),
        failed: !rev_ok,
        informative: fm.mean > 0.0,
        statistics: cs,
    });
    Ok(rep.finish(ok1 && ok2, started))
}

// --------------------------------------------------------- self-similarity

fn two_sample(a: &Histogram, b: &Histogram) -> (Vec<f64>, f64, usize) {
    let (na, nb) = (a.total() as f64, b.total() as f64);
    // bins 0..k-1 and a tail bin, each with pooled count >= 20
    let top = a.max().max(b.max());
    let mut edges = Vec::new();
    let mut acc = 0;
    for v in 0..=top {
        acc += a.count(v) + b.count(v);
        if acc >= 20 {
            edges.push(v);
            acc = 0;
        }
    }
    if edges.is_empty() {
        return (vec![], 0.0, 0);
    }
    let mut bins = Vec::new();
    let mut lo = 0;
    for (i, &e) in edges.iter().enumerate() {
        let hi = if i + 1 == edges.len() { top } else { e };
        let ca: u64 = (lo..=hi).map(|v| a.count(v)).sum();
        let cb: u64 = (lo..=hi).map(|v| b.count(v)).sum();
        bins.push((ca as f64, cb as f64));
        lo = hi + 1;
    }
    let mut zs = Vec::new();
    let mut chi2 = 0.0;
    for (ca, cb) in &bins {
        let pool = (ca + cb) / (na + nb);
        let var = pool * (1.0 - pool) * (1.0 / na + 1.0 / nb);
        let diff = ca / na - cb / nb;
        zs.push(if var > 0.0 { diff / var.sqrt() } else { 0.0 });
        let (ea, eb) = (pool * na, pool * nb);
        if ea > 0.0 {
            chi2 += (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb;
        }
    }
    (zs, chi2, bins.len().saturating_sub(1))
}

/// Visits of `∅` in a depth-`D-1` run against visits of `∅'` from the
/// branch entered first in an independent depth-`D` run. The control
/// repeats the comparison with the reference run at `p + 0.05`.
pub fn verify_self_similarity(d: u32, p: f64, reps: u64, depth: u32, seed: u64) -> Result<CheckReport> {
    let started = Instant::now();
    if depth < 3 {
        return Err(Error::invalid("self-similarity needs depth >= 3"));
    }
    need("activated branches", reps)?;
    let params = ModelParams::new(d, p)?;
    let seeds = [derive_seed(seed, 0), derive_seed(seed, 1), derive_seed(seed, 2)];
    let root = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth - 1, reps, seeds[0])?);
    let branch = Histogram::from_values(
        sfm_run(params, Model::Sfm, depth, reps, seeds[1])?
            .iter()
            .map(|r| {
                let b = branches(r);
                b.to_neighbor[b.first_child as usize]
            }),
    );
    let (zs, chi2, df) = two_sample(&root, &branch);
    let max_z = zs.iter().map(|z| z.abs()).fold(0.0, f64::max);
    let mut rep = CheckReport::new("self-similarity");
    rep.seeds.extend(seeds);
    rep.stat("max_abs_z", max_z);
    rep.stat("chi_square", chi2);
    rep.stat("chi_square_df", df as f64);
    rep.stat("mean_root", root.mean());
    rep.stat("mean_branch", branch.mean());
    for (i, z) in zs.iter().enumerate() {
        rep.stat(format!("bin{i}.z"), *z);
    }
    rep.tol("max_abs_z", Z_BOUND);

    let shifted = (p + 0.05).min(0.49);
    let ctrl_root = frogsim::visit_histogram(&sfm_run(
        ModelParams::new(d, shifted)?,
        Model::Sfm,
        depth - 1,
        reps,
        seeds[2],
    )?);
    let (czs, cchi2, _) = two_sample(&ctrl_root, &branch);
    let cmax = czs.iter().map(|z| z.abs()).fold(0.0, f64::max);
    let mut cs = BTreeMap::new();
    cs.insert("p".into(), shifted);
    cs.insert("max_abs_z".into(), cmax);
    cs.insert("chi_square".into(), cchi2);
    rep.controls.push(ControlOutcome {
        name: "shifted_p".into(),
        failed: cmax > Z_BOUND,
        informative: shifted != p,
        statistics: cs,
    });
    Ok(rep.finish(max_z <= Z_BOUND, started))
}

// -------------------------------------------------------------- inequality

/// `A_d ĝ <= A_2 ĝ` and the two polynomial-sum inequalities on a grid, at
/// `p = (d-1)/(2d-1)`, with `ĝ` the empirical generating function of a
/// depth-`D` run. A cell fails only if every function within the DKW band
/// violates the inequality there.
pub fn verify_inequality(d: u32, reps: u64, depth: u32, grid: usize, seed: u64, delta: f64) -> Result<CheckReport> {
    let started = Instant::now();
    check_delta(delta)?;
    if d < 3 {
        return Err(Error::invalid("inequality suite needs d >= 3"));
    }
    if grid < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    let params = ModelParams::recurrence_point(d)?;
    let s = derive_seed(seed, 0);
    let hist = frogsim::visit_histogram(&sfm_run(params, Model::Sfm, depth, reps, s)?);
    let eps = hoeffding_halfwidth(reps, delta);
    let xs: Vec<f64> = (0..grid).map(|i| i as f64 / grid as f64).collect();
    let r = check_ad_le_a2(d, |y| hist.pgf(y), eps, &xs)?;
    let tol = 1e-12;
    let mut rep = CheckReport::new("inequality");
    rep.seeds.push(s);
    rep.stat("p", params.p());
    rep.stat("max_violation_point", r.max_violation);
    rep.stat("max_certified_violation", r.certified_violation);
    rep.stat("max_certified_p_violation", r.certified_p_violation);
    rep.stat("max_certified_q_violation", r.certified_q_violation);
    let min_gap = r.cells.iter().map(|c| c.a2 - c.ad).fold(f64::INFINITY, f64::min);
    rep.stat("min_point_gap", min_gap);
    rep.tol("dkw", eps);
    rep.tol("roundoff", tol);
    Ok(rep.finish(r.pass(tol), started))
}

// -------------------------------------------------------------- recurrence

/// Seed-coupled runs at increasing depths: `ĝ_D(x)` must not increase and
/// `P(V >= t)` must not decrease from one depth to the next, and the total
/// change over the depth range must exceed its confidence half-width.
pub fn verify_recurrence(
    d: u32,
    p: f64,
    depths: &[u32],
    x: f64,
    t: u64,
    reps: u64,
    seed: u64,
    delta: f64,
) -> Result<CheckReport> {
    let started = Instant::now();
    check_xs(&[x])?;
    check_delta(delta)?;
    if depths.len() < 2 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("depths must be strictly increasing, at least two"));
    }
    let params = ModelParams::new(d, p)?;
    let runs: Vec<Vec<u64>> = depths
        .iter()
        .map(|&dd| Ok(sfm_run(params, Model::Sfm, dd, reps, seed)?.iter().map(|r| r.root_visits).collect()))
        .collect::<Result<_>>()?;
    let mut rep = CheckReport::new("recurrence");
    rep.seeds.push(seed);
    let mut monotone = true;
    for (dd, run) in depths.iter().zip(&runs) {
        let h = Histogram::from_values(run.iter().copied());
        rep.stat(format!("g_hat[D={dd}]"), h.pgf(x));
        rep.stat(format!("tail[D={dd}]"), h.tail(t));
        rep.stat(format!("mean[D={dd}]"), h.mean());
    }
    for w in runs.windows(2) {
        monotone &= w[0].iter().zip(&w[1]).all(|(a, b)| a <= b);
    }
    let (first, last) = (&runs[0], &runs[runs.len() - 1]);
    let n = reps as f64;
    let g_drop = first
        .iter()
        .zip(last)
        .map(|(&a, &b)| pow_visits(x, a) - pow_visits(x, b))
        .sum::<f64>()
        / n;
    let tail_rise = first
        .iter()
        .zip(last)
        .filter(|(&a, &b)| a < t && b >= t)
        .count() as f64
        / n;
    let h = hoeffding_halfwidth(reps, delta / 2.0);
    rep.stat("g_drop", g_drop);
    rep.stat("tail_rise", tail_rise);
    rep.stat("pathwise_monotone", if monotone { 1.0 } else { 0.0 });
    rep.tol("halfwidth", h);
    rep.notes.push(format!("x = {x}, tail threshold t = {t}"));
    Ok(rep.finish(monotone && g_drop > h && tail_rise > h, started))
}

// --------------------------------------------------------------- dispatch

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Coupling,
    Binomial,
    SelfConsistency,
    Rsfm,
    Domination,
    SelfSimilarity,
    Inequality,
    Recurrence,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Coupling,
        Suite::Binomial,
        Suite::SelfConsistency,
        Suite::Rsfm,
        Suite::Domination,
        Suite::SelfSimilarity,
        Suite::Inequality,
        Suite::Recurrence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Coupling => "coupling",
            Suite::Binomial => "binomial",
            Suite::SelfConsistency => "self-consistency",
            Suite::Rsfm => "rsfm",
            Suite::Domination => "domination",
            Suite::SelfSimilarity => "self-similarity",
            Suite::Inequality => "inequality",
            Suite::Recurrence => "recurrence",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown suite {s:?}")))
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared settings for running suites by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub d: u32,
    pub p: f64,
    pub reps: u64,
    pub depth: u32,
    pub seed: u64,
    pub xs: Vec<f64>,
    pub delta: f64,
}

impl SuiteConfig {
    pub fn new(d: u32, p: f64, reps: u64, depth: u32, seed: u64) -> Self {
        Self {
            d,
            p,
            reps,
            depth,
            seed,
            xs: DEFAULT_XS.to_vec(),
            delta: DEFAULT_DELTA,
        }
    }
}

/// Runs one suite. Suite-specific choices not covered by [`SuiteConfig`]:
/// coupling starts walks at depth 4, binomial uses `|J| = 1`, inequality
/// uses 128 grid points and the recurrence point for `max(d, 3)`,
/// recurrence compares depths
/// `depth - 6, depth - 4, depth - 2, depth` at `x = 1/2`, `t = 3`.
pub fn run_suite(suite: Suite, c: &SuiteConfig) -> Result<CheckReport> {
    let sub = derive_seed(c.seed, suite as u64);
    match suite {
        Suite::Coupling => verify_lemma_coupling(c.d, c.p, 4, c.reps, sub),
        Suite::Binomial => verify_lemma_binomial(c.d, c.p, 1.min(c.d - 1), &c.xs, c.reps, c.depth, sub, c.delta),
        Suite::SelfConsistency => verify_self_consistency(c.d, c.p, &c.xs, c.reps, c.depth, sub, c.delta),
        Suite::Rsfm => verify_rsfm_identity(c.d, c.p, &c.xs, c.reps, c.depth, sub, c.delta),
        Suite::Domination => verify_domination(c.d, c.p, c.reps, c.depth, sub, c.delta),
        Suite::SelfSimilarity => verify_self_similarity(c.d, c.p, c.reps, c.depth, sub),
        Suite::Inequality => verify_inequality(c.d.max(3), c.reps, c.depth, 128, sub, c.delta),
        Suite::Recurrence => {
            if c.depth < 8 {
                return Err(Error::invalid("recurrence suite needs depth >= 8"));
            }
            let ds: Vec<u32> = (0..4).map(|i| c.depth - 6 + 2 * i).collect();
            verify_recurrence(c.d, c.p, &ds, 0.5, 3, c.reps, sub, c.delta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn zero_drift_suites_pass() {
        let xs = [0.0, 0.5];
        assert!(verify_lemma_binomial(3, 0.0, 1, &xs, 2000, 5, 1, 1e-3).unwrap().pass);
        assert!(verify_self_consistency(3, 0.0, &xs, 2000, 5, 1, 1e-3).unwrap().pass);
        let r = verify_rsfm_identity(3, 0.0, &xs, 4000, 5, 1, 1e-3).unwrap();
        assert!(r.pass);
        assert_eq!(r.statistics["max_identity_gap"], 0.0);
        let dom = verify_domination(3, 0.0, 2000, 5, 1, 1e-3).unwrap();
        assert!(dom.pass);
        assert!(!dom.controls[0].informative);
        let c = verify_lemma_coupling(2, 0.0, 3, 2000, 1).unwrap();
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn insufficient_events_are_reported() {
        assert!(matches!(
            verify_lemma_binomial(3, 0.1, 1, &[0.5], 10, 5, 1, 1e-3),
            Err(Error::InsufficientEvents { .. })
        ));
        assert!(matches!(
            verify_self_similarity(3, 0.1, 10, 5, 1),
            Err(Error::InsufficientEvents { .. })
        ));
    }

    #[test]
    fn argument_checks() {
        assert!(verify_lemma_binomial(3, 0.1, 3, &[0.5], 2000, 5, 1, 1e-3).is_err());
        assert!(verify_self_consistency(3, 0.1, &[1.0], 2000, 5, 1, 1e-3).is_err());
        assert!(verify_self_consistency(3, 0.1, &[0.5], 2000, 5, 1, 0.0).is_err());
        assert!(verify_recurrence(2, 0.2, &[6, 6], 0.5, 3, 100, 1, 1e-3).is_err());
    }

    #[test]
    fn reports_are_reproducible() {
        let c = SuiteConfig::new(2, 0.2, 2000, 6, 5);
        let a = run_suite(Suite::SelfConsistency, &c).unwrap();
        let b = run_suite(Suite::SelfConsistency, &c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn binned_comparison_detects_shift() {
        let a = Histogram::from_values((0..2000u64).map(|i| i % 3));
        let b = Histogram::from_values((0..2000u64).map(|i| i % 3));
        let (zs, chi2, df) = two_sample(&a, &b);
        assert!(zs.iter().all(|z| *z == 0.0));
        assert_eq!(chi2, 0.0);
        assert_eq!(df, 2);
        let c = Histogram::from_values((0..2000u64).map(|i| i % 2));
        assert!(two_sample(&a, &c).0.iter().any(|z| z.abs() > 4.0));
    }
}
