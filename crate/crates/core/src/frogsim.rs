//! Truncated simulators for the frog model (FM), its non-backtracking
//! variant (nbFM), the self-similar model (SFM) and the re-activated model
//! (rSFM) on the rooted d-ary tree.
//!
//! Tree layout: the root `∅` sits at depth 0. The initial frog jumps to the
//! child `∅'` (index 0 at depth 1, by symmetry), whose children `o_0 .. o_{d-1}`
//! are at depth 2. Vertex `(k, i)` has children `(k+1, i*d + c)`. Sleeping
//! frogs occupy every vertex down to the truncation depth `D`; a frog that
//! moves below `D` has escaped.
//!
//! Randomness is keyed by vertex: the frog at a vertex reads its own stream
//! and the direction an entering frog takes next (SFM) is a hash of the
//! vertex. The set of woken frogs, and every count derived from it, is
//! therefore independent of the order in which frogs are processed, and a
//! replicate at depth `D` is the restriction of the same replicate at depth
//! `D + 1`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng;
use crate::stats::{EstimateWithCI, Histogram, DEFAULT_DELTA};
use crate::walks::default_escape_margin;

/// Largest tree (number of vertices) a replicate may allocate.
pub const MAX_TREE_VERTICES: u64 = 1 << 28;

/// Default per-frog step cap for FM.
pub const DEFAULT_STEP_HORIZON: u64 = 1_000_000;

const ROOT_FROG_ID: u64 = u64::MAX;
const ENTRANT_SALT: u64 = 0xA24B_AED4_963E_E407;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fm,
    Nbfm,
    Sfm,
    Rsfm,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(Model::Fm),
            "nbfm" => Ok(Model::Nbfm),
            "sfm" => Ok(Model::Sfm),
            "rsfm" => Ok(Model::Rsfm),
            other => Err(Error::Parse(format!("unknown model {other:?}"))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Fm => "fm",
            Model::Nbfm => "nbfm",
            Model::Sfm => "sfm",
            Model::Rsfm => "rsfm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub model: Model,
    pub depth: u32,
    /// Per-frog step cap (FM only).
    pub step_horizon: u64,
    /// Levels below `depth` an FM frog must reach before it is dropped.
    /// `None` picks the margin with return probability below `1e-9`.
    pub escape_margin: Option<u32>,
    /// Stop an FM replicate once the root has been visited this often.
    pub visit_cap: Option<u64>,
    pub reps: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(params: ModelParams, model: Model, depth: u32, reps: u64, seed: u64) -> Self {
        Self {
            params,
            model,
            depth,
            step_horizon: DEFAULT_STEP_HORIZON,
            escape_margin: None,
            visit_cap: None,
            reps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.params.d();
        if d > 64 {
            return Err(Error::invalid(format!("simulation supports d <= 64, got {d}")));
        }
        if self.params.p() >= 0.5 && self.model != Model::Fm {
            return Err(Error::invalid("non-backtracking models need p < 1/2"));
        }
        match self.model {
            Model::Sfm | Model::Rsfm if self.depth < 2 => {
                return Err(Error::invalid(format!(
                    "{} needs depth >= 2, got {}",
                    self.model, self.depth
                )))
            }
            _ if self.depth < 1 => return Err(Error::invalid("depth must be >= 1")),
            _ => {}
        }
        if self.step_horizon == 0 {
            return Err(Error::invalid("step horizon must be >= 1"));
        }
        tree_offsets(d, self.depth, self.model == Model::Fm)?;
        Ok(())
    }
}

/// What the frog sleeping at `∅'` did first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborMove {
    Root,
    Child(u32),
}

/// Level-2 bookkeeping of the non-backtracking models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// Branch taken below `∅'` by the frog entering it from the root.
    pub first_child: u32,
    pub neighbor_move: NeighborMove,
    /// Visits to `∅` by frogs from the subtree of `o_i`.
    pub to_root: Vec<u64>,
    /// Visits to `∅'` by frogs from the subtree of `o_i`.
    pub to_neighbor: Vec<u64>,
    /// Bit `i` set when the subtree of `o_i` was entered.
    pub activated: u64,
    /// `flows[i]`: bit `j` set when a frog from the subtree of `o_i` tried
    /// to jump from `∅'` into `o_j`.
    pub flows: Vec<u64>,
}

impl BranchRecord {
    /// `f_∅'` moved to the root or into the branch already taken.
    pub fn d1(&self) -> bool {
        match self.neighbor_move {
            NeighborMove::Root => true,
            NeighborMove::Child(c) => c == self.first_child,
        }
    }

    pub fn neighbor_to_root(&self) -> bool {
        self.neighbor_move == NeighborMove::Root
    }

    pub fn activated_count(&self) -> u32 {
        self.activated.count_ones()
    }

    /// Frogs from the subtree of `o_j` never tried to enter any `o_s`, `s` in `mask`.
    pub fn avoids(&self, j: usize, mask: u64) -> bool {
        self.flows[j] & mask == 0
    }
}

/// Stage-I set and stage-II counts of the re-activated model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsfmRecord {
    pub stage1_activated: u64,
    /// Visits to `∅` by frogs from the subtree of `o_i`, both stages.
    pub to_root: Vec<u64>,
}

impl RsfmRecord {
    pub fn l(&self) -> u32 {
        self.stage1_activated.count_ones()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimFlags {
    /// FM frogs stopped by the step horizon.
    pub horizon_hits: u64,
    /// FM replicate stopped at the visit cap.
    pub visit_cap_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub replicate: u64,
    pub root_visits: u64,
    pub woken: u64,
    pub branches: Option<BranchRecord>,
    pub rsfm: Option<RsfmRecord>,
    pub flags: SimFlags,
}

/// `offsets[k]` = id of the first vertex at depth `k`; the last entry is the
/// tree size. With `with_root`, depth 0 holds the root and the root has `d`
/// children; otherwise ids start at `∅'`.
fn tree_offsets(d: u32, depth: u32, with_root: bool) -> Result<Vec<u64>> {
    let d = u64::from(d);
    let mut offsets = vec![0u64];
    let mut width: u64 = 1;
    let too_big = || {
        Error::ResourceLimit(format!(
            "tree with d = {d} and depth {depth} exceeds {MAX_TREE_VERTICES} vertices"
        ))
    };
    let levels = if with_root { depth + 1 } else { depth };
    for _ in 0..levels {
        let next = offsets.last().unwrap().checked_add(width).ok_or_else(too_big)?;
        if next > MAX_TREE_VERTICES {
            return Err(too_big());
        }
        offsets.push(next);
        width = width.checked_mul(d).ok_or_else(too_big)?;
    }
    if !with_root {
        // index by depth: depth 0 has no slot
        offsets.insert(0, 0);
    }
    Ok(offsets)
}

struct Bitset {
    words: Vec<u64>,
    touched: Vec<usize>,
}

impl Bitset {
    fn new(bits: u64) -> Self {
        Self {
            words: vec![0; (bits as usize).div_ceil(64)],
            touched: Vec::new(),
        }
    }

    fn get(&self, i: u64) -> bool {
        self.words[(i >> 6) as usize] >> (i & 63) & 1 == 1
    }

    fn set(&mut self, i: u64) {
        let w = (i >> 6) as usize;
        if self.words[w] == 0 {
            self.touched.push(w);
        }
        self.words[w] |= 1 << (i & 63);
    }

    fn clear(&mut self) {
        for w in self.touched.drain(..) {
            self.words[w] = 0;
        }
    }
}

fn uniform_below(hash: u64, n: u32) -> u32 {
    ((u128::from(hash) * u128::from(n)) >> 64) as u32
}

/// Up-run length of a woken non-backtracking frog at depth `k`: the first
/// step is up with probability `p`, later ones with probability `alpha`;
/// the run stops at the root.
fn sample_up_run<R: Rng>(rng: &mut R, p: f64, alpha: f64, k: u32) -> u32 {
    if rng.random::<f64>() >= p {
        return 0;
    }
    let mut up = 1;
    while up < k && rng.random::<f64>() < alpha {
        up += 1;
    }
    up
}

/// Engine for nbFM, SFM and rSFM.
struct NbEngine {
    d: u32,
    p: f64,
    alpha: f64,
    depth: u32,
    model: Model,
    offsets: Vec<u64>,
    /// `d^(k-2)` for `k >= 2`: width of one level-2 subtree at depth `k`.
    sub_width: Vec<u64>,
    visited: Bitset,
    stack: Vec<(u32, u64)>,
    rep_seed: u64,
    rec: BranchRecord,
    root_visits: u64,
    woken: u64,
}

impl NbEngine {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let d = cfg.params.d();
        let offsets = tree_offsets(d, cfg.depth, false)?;
        let mut sub_width = vec![0u64; cfg.depth as usize + 1];
        for k in 2..=cfg.depth as usize {
            sub_width[k] = u64::from(d).pow(k as u32 - 2);
        }
        Ok(Self {
            d,
            p: cfg.params.p(),
            alpha: cfg.params.alpha(),
            depth: cfg.depth,
            model: cfg.model,
            visited: Bitset::new(*offsets.last().unwrap()),
            offsets,
            sub_width,
            stack: Vec::new(),
            rep_seed: 0,
            rec: BranchRecord {
                first_child: 0,
                neighbor_move: NeighborMove::Root,
                to_root: vec![],
                to_neighbor: vec![],
                activated: 0,
                flows: vec![],
            },
            root_visits: 0,
            woken: 0,
        })
    }

    fn id(&self, k: u32, i: u64) -> u64 {
        self.offsets[k as usize] + i
    }

    fn entrant_child(&self, k: u32, i: u64) -> u32 {
        uniform_below(rng::derive_seed(self.rep_seed ^ ENTRANT_SALT, self.id(k, i)), self.d)
    }

    fn activate(&mut self, k: u32, i: u64) {
        let id = self.id(k, i);
        debug_assert!(!self.visited.get(id), "vertex entered twice");
        self.visited.set(id);
        self.stack.push((k, i));
        self.woken += 1;
        if k == 2 {
            self.rec.activated |= 1 << i;
        }
    }

    /// A frog steps down into `(k, i)`. Under the self-similar rule a second
    /// crossing of an edge kills the frog, a first crossing wakes the vertex
    /// and the frog continues along the vertex's entrant direction.
    fn enter_sfm(&mut self, mut k: u32, mut i: u64) {
        loop {
            if k > self.depth || self.visited.get(self.id(k, i)) {
                return;
            }
            self.activate(k, i);
            let c = self.entrant_child(k, i);
            k += 1;
            i = i * u64::from(self.d) + u64::from(c);
        }
    }

    /// A non-backtracking frog descends from `(k, i)` along its own ray.
    fn descend_nb<R: Rng>(&mut self, mut k: u32, mut i: u64, rng: &mut R) {
        while k <= self.depth {
            if !self.visited.get(self.id(k, i)) {
                self.activate(k, i);
            }
            let c = rng.random_range(0..self.d);
            k += 1;
            i = i * u64::from(self.d) + u64::from(c);
        }
    }

    fn descend(&mut self, k: u32, i: u64, rng: &mut impl Rng) {
        match self.model {
            Model::Nbfm => self.descend_nb(k, i, rng),
            _ => self.enter_sfm(k, i),
        }
    }

    fn run_frog(&mut self, k: u32, i: u64) {
        let mut rng = rng::stream(self.rep_seed, self.id(k, i));
        let up = sample_up_run(&mut rng, self.p, self.alpha, k);
        let branch = (k >= 2).then(|| (i / self.sub_width[k as usize]) as usize);
        if let Some(b) = branch {
            if up + 1 >= k {
                self.rec.to_neighbor[b] += 1;
            }
        }
        if up == k {
            self.root_visits += 1;
            if let Some(b) = branch {
                self.rec.to_root[b] += 1;
            }
            if k == 1 {
                self.rec.neighbor_move = NeighborMove::Root;
            }
            return;
        }
        let turn_depth = k - up;
        let d = u64::from(self.d);
        let anc = i / d.pow(up);
        let c = if up == 0 {
            rng.random_range(0..self.d)
        } else {
            let came_from = ((i / d.pow(up - 1)) % d) as u32;
            let r = rng.random_range(0..self.d - 1);
            if r >= came_from {
                r + 1
            } else {
                r
            }
        };
        if turn_depth == 1 {
            match branch {
                Some(b) => self.rec.flows[b] |= 1 << c,
                None => self.rec.neighbor_move = NeighborMove::Child(c),
            }
        }
        self.descend(turn_depth + 1, anc * d + u64::from(c), &mut rng);
    }

    fn drain(&mut self) {
        while let Some((k, i)) = self.stack.pop() {
            self.run_frog(k, i);
        }
    }

    fn run(&mut self, replicate: u64, master: u64) -> VisitRecord {
        self.rep_seed = rng::derive_seed(master, replicate);
        let d = self.d as usize;
        self.rec = BranchRecord {
            first_child: 0,
            neighbor_move: NeighborMove::Root,
            to_root: vec![0; d],
            to_neighbor: vec![0; d],
            activated: 0,
            flows: vec![0; d],
        };
        self.root_visits = 0;
        self.woken = 0;

        // the initial frog jumps to ∅' and wakes it
        self.activate(1, 0);
        match self.model {
            Model::Nbfm => {
                let mut rng = rng::stream(self.rep_seed, ROOT_FROG_ID);
                let c = rng.random_range(0..self.d);
                self.rec.first_child = c;
                if self.depth >= 2 {
                    self.descend_nb(2, u64::from(c), &mut rng);
                }
            }
            _ => {
                let c = self.entrant_child(1, 0);
                self.rec.first_child = c;
                self.enter_sfm(2, u64::from(c));
            }
        }
        self.drain();

        let rsfm = (self.model == Model::Rsfm).then(|| {
            let stage1 = self.rec.clone();
            for b in 0..self.d {
                if stage1.activated >> b & 1 == 0 {
                    self.enter_sfm(2, u64::from(b));
                }
            }
            self.drain();
            let record = RsfmRecord {
                stage1_activated: stage1.activated,
                to_root: self.rec.to_root.clone(),
            };
            self.rec = stage1;
            record
        });
        self.visited.clear();
        // for rSFM the common fields describe stage I
        let branches = self.rec.clone();
        let root_visits = branches.to_root.iter().sum::<u64>() + u64::from(branches.neighbor_to_root());
        debug_assert!(rsfm.is_some() || root_visits == self.root_visits);
        VisitRecord {
            replicate,
            root_visits,
            woken: self.woken,
            branches: Some(branches),
            rsfm,
            flags: SimFlags::default(),
        }
    }
}

/// Engine for the backtracking frog model: every frog walks step by step,
/// the root reflects, and every root arrival counts.
struct FmEngine {
    d: u32,
    p: f64,
    depth: u32,
    margin: u32,
    horizon: u64,
    cap: Option<u64>,
    offsets: Vec<u64>,
    visited: Bitset,
    /// Woken frogs by depth; shallow frogs run first.
    queue: Vec<Vec<u64>>,
    rep_seed: u64,
}

impl FmEngine {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let offsets = tree_offsets(cfg.params.d(), cfg.depth, true)?;
        Ok(Self {
            d: cfg.params.d(),
            p: cfg.params.p(),
            depth: cfg.depth,
            margin: cfg
                .escape_margin
                .unwrap_or_else(|| default_escape_margin(cfg.params.p())),
            horizon: cfg.step_horizon,
            cap: cfg.visit_cap,
            visited: Bitset::new(*offsets.last().unwrap()),
            offsets,
            queue: vec![Vec::new(); cfg.depth as usize + 1],
            rep_seed: 0,
        })
    }

    fn id(&self, k: u32, i: u64) -> u64 {
        self.offsets[k as usize] + i
    }

    fn next_frog(&mut self) -> Option<(u32, u64)> {
        let k = self.queue.iter().position(|q| !q.is_empty())?;
        self.queue[k].pop().map(|i| (k as u32, i))
    }

    fn wake(&mut self, k: u32, i: u64, woken: &mut u64) {
        let id = self.id(k, i);
        if !self.visited.get(id) {
            self.visited.set(id);
            self.queue[k as usize].push(i);
            *woken += 1;
        }
    }

    fn run(&mut self, replicate: u64, master: u64) -> VisitRecord {
        self.rep_seed = rng::derive_seed(master, replicate);
        let d = u64::from(self.d);
        let mut root_visits = 0u64;
        let mut woken = 0u64;
        let mut flags = SimFlags::default();
        self.visited.set(self.id(0, 0));
        self.queue[0].push(0);
        'frogs: while let Some((k0, i0)) = self.next_frog() {
            let fid = if k0 == 0 { ROOT_FROG_ID } else { self.id(k0, i0) };
            let mut rng = rng::stream(self.rep_seed, fid);
            // position: depth k, index i of the vertex (or of its depth-D ancestor when k > D)
            let (mut k, mut i) = (k0, i0);
            let mut steps = 0u64;
            loop {
                if k > self.depth + self.margin {
                    break;
                }
                if steps >= self.horizon {
                    flags.horizon_hits += 1;
                    break;
                }
                steps += 1;
                let up = k > 0 && rng.random::<f64>() < self.p;
                if up {
                    k -= 1;
                    if k < self.depth {
                        i /= d;
                    }
                    if k == 0 {
                        root_visits += 1;
                        if self.cap.is_some_and(|c| root_visits >= c) {
                            flags.visit_cap_hit = true;
                            break 'frogs;
                        }
                    }
                } else {
                    let c = rng.random_range(0..self.d);
                    if k < self.depth {
                        i = i * d + u64::from(c);
                    }
                    k += 1;
                }
                if k <= self.depth && k > 0 {
                    self.wake(k, i, &mut woken);
                }
            }
        }
        self.queue.iter_mut().for_each(Vec::clear);
        self.visited.clear();
        VisitRecord {
            replicate,
            root_visits,
            woken,
            branches: None,
            rsfm: None,
            flags,
        }
    }
}

/// Runs `cfg.reps` replicates; replicate `r` uses stream `(cfg.seed, r)`.
/// Results come back in replicate order.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    simulate_range(cfg, 0..cfg.reps)
}

/// Runs the given replicate indices.
pub fn simulate_range(cfg: &SimConfig, reps: std::ops::Range<u64>) -> Result<Vec<VisitRecord>> {
    cfg.validate()?;
    match cfg.model {
        Model::Fm => {
            FmEngine::new(cfg)?;
            Ok(reps
                .into_par_iter()
                .map_init(
                    || FmEngine::new(cfg).expect("validated"),
                    |eng, r| eng.run(r, cfg.seed),
                )
                .collect())
        }
        _ => Ok(reps
            .into_par_iter()
            .map_init(
                || NbEngine::new(cfg).expect("validated"),
                |eng, r| eng.run(r, cfg.seed),
            )
            .collect()),
    }
}

pub fn simulate_sfm(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    expect_model(cfg, Model::Sfm)?;
    simulate(cfg)
}

pub fn simulate_nbfm(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    expect_model(cfg, Model::Nbfm)?;
    simulate(cfg)
}

pub fn simulate_fm(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    expect_model(cfg, Model::Fm)?;
    simulate(cfg)
}

pub fn simulate_rsfm(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    expect_model(cfg, Model::Rsfm)?;
    simulate(cfg)
}

fn expect_model(cfg: &SimConfig, model: Model) -> Result<()> {
    if cfg.model != model {
        return Err(Error::invalid(format!(
            "configuration is for {}, expected {model}",
            cfg.model
        )));
    }
    Ok(())
}

pub fn visit_histogram(records: &[VisitRecord]) -> Histogram {
    Histogram::from_values(records.iter().map(|r| r.root_visits))
}

/// Estimates `E[x^V]` for each `x`. Truncation can only remove visits, so
/// these values overestimate the untruncated generating function and
/// decrease as the depth grows.
pub fn estimate_pgf(cfg: &SimConfig, xs: &[f64], delta: Option<f64>) -> Result<Vec<EstimateWithCI>> {
    let hist = visit_histogram(&simulate(cfg)?);
    xs.iter()
        .map(|&x| hist.pgf_estimate(x, delta.unwrap_or(DEFAULT_DELTA)))
        .collect()
}

/// Whether a lone backtracking frog started at depth `start_depth` reaches the
/// root within `horizon` steps (`None` if it neither returns nor escapes
/// `margin` levels below its start).
pub fn fm_lone_frog_returns<R: Rng>(
    p: f64,
    start_depth: u32,
    margin: u32,
    horizon: u64,
    rng: &mut R,
) -> Option<bool> {
    let mut k = i64::from(start_depth);
    let floor = i64::from(start_depth + margin);
    for _ in 0..horizon {
        if k == 0 {
            return Some(true);
        }
        if k >= floor {
            return Some(false);
        }
        k += if rng.random::<f64>() < p { -1 } else { 1 };
    }
    (k == 0).then_some(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: u32, p: f64, model: Model, depth: u32, reps: u64) -> SimConfig {
        SimConfig::new(ModelParams::new(d, p).unwrap(), model, depth, reps, 17)
    }

    #[test]
    fn offsets_and_limits() {
        assert_eq!(tree_offsets(2, 3, false).unwrap(), vec![0, 0, 1, 3, 7]);
        assert_eq!(tree_offsets(2, 2, true).unwrap(), vec![0, 1, 3, 7]);
        assert!(matches!(tree_offsets(10, 12, false), Err(Error::ResourceLimit(_))));
        assert!(cfg(2, 0.2, Model::Sfm, 1, 1).validate().is_err());
        assert!(cfg(2, 0.2, Model::Nbfm, 1, 1).validate().is_ok());
    }

    #[test]
    fn zero_drift_never_returns() {
        for model in [Model::Fm, Model::Nbfm, Model::Sfm, Model::Rsfm] {
            let recs = simulate(&cfg(3, 0.0, model, 6, 50)).unwrap();
            assert!(recs.iter().all(|r| r.root_visits == 0), "{model}");
        }
        for r in simulate(&cfg(3, 0.0, Model::Sfm, 6, 50)).unwrap() {
            let b = r.branches.unwrap();
            let NeighborMove::Child(c) = b.neighbor_move else {
                panic!("moved up at p = 0")
            };
            assert_eq!(b.activated, 1 << b.first_child | 1 << c);
            assert_eq!(b.flows, vec![0; 3]);
        }
        for r in simulate(&cfg(3, 0.0, Model::Rsfm, 6, 50)).unwrap() {
            let s = r.rsfm.unwrap();
            assert_eq!(s.to_root, vec![0; 3]);
            assert!((1..=2).contains(&s.l()));
        }
    }

    #[test]
    fn depth_one_nbfm_is_a_single_coin() {
        let recs = simulate(&cfg(2, 1.0 / 3.0, Model::Nbfm, 1, 60_000)).unwrap();
        assert!(recs.iter().all(|r| r.root_visits <= 1));
        let hits = recs.iter().filter(|r| r.root_visits == 1).count() as f64 / 60_000.0;
        let se = (2.0 / 9.0 / 60_000.0f64).sqrt();
        assert!((hits - 1.0 / 3.0).abs() < 4.0 * se, "{hits}");
    }

    #[test]
    fn deterministic_given_seed() {
        for model in [Model::Fm, Model::Nbfm, Model::Sfm, Model::Rsfm] {
            let c = cfg(3, 0.3, model, 6, 40);
            assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
            let tail = simulate_range(&c, 20..40).unwrap();
            assert_eq!(&simulate(&c).unwrap()[20..], &tail[..]);
        }
    }

    #[test]
    fn decomposition_and_flow_consistency() {
        for (d, p) in [(2, 1.0 / 3.0), (3, 0.4), (4, 0.2)] {
            for r in simulate(&cfg(d, p, Model::Sfm, 8, 400)).unwrap() {
                let b = r.branches.as_ref().unwrap();
                let sum: u64 = b.to_root.iter().sum();
                assert_eq!(r.root_visits, sum + u64::from(b.neighbor_to_root()));
                assert!(b.activated >> b.first_child & 1 == 1);
                for i in 0..d as usize {
                    if b.activated >> i & 1 == 0 {
                        assert_eq!(b.flows[i], 0);
                        assert_eq!(b.to_neighbor[i], 0);
                    }
                    assert!(b.to_root[i] <= b.to_neighbor[i]);
                    assert_eq!(b.flows[i] >> i & 1, 0, "flows never point back");
                }
                // the activated branches are the closure of the flows from the first branch,
                // plus the branch f_∅' opened
                let mut reach = 1u64 << b.first_child;
                if let NeighborMove::Child(c) = b.neighbor_move {
                    reach |= 1 << c;
                }
                loop {
                    let next = (0..d as usize)
                        .filter(|i| reach >> i & 1 == 1)
                        .fold(reach, |acc, i| acc | b.flows[i]);
                    if next == reach {
                        break;
                    }
                    reach = next;
                }
                assert_eq!(reach, b.activated);
            }
        }
    }

    #[test]
    fn visits_grow_with_depth_on_each_realization() {
        for model in [Model::Nbfm, Model::Sfm] {
            let shallow = simulate(&cfg(3, 0.4, model, 5, 300)).unwrap();
            let deep = simulate(&cfg(3, 0.4, model, 7, 300)).unwrap();
            for (a, b) in shallow.iter().zip(&deep) {
                assert!(a.root_visits <= b.root_visits, "{model}");
                assert!(a.woken <= b.woken);
            }
        }
    }

    #[test]
    fn rsfm_extends_stage_one() {
        for r in simulate(&cfg(3, 0.2, Model::Rsfm, 7, 300)).unwrap() {
            let b = r.branches.as_ref().unwrap();
            let s = r.rsfm.as_ref().unwrap();
            assert_eq!(b.activated, s.stage1_activated);
            for i in 0..3 {
                if s.stage1_activated >> i & 1 == 1 {
                    assert_eq!(s.to_root[i], b.to_root[i]);
                } else {
                    assert_eq!(b.to_root[i], 0);
                }
            }
            if s.l() == 3 {
                assert_eq!(s.to_root, b.to_root);
            }
        }
        // stage I is the self-similar model itself
        let a = simulate(&cfg(3, 0.2, Model::Rsfm, 7, 100)).unwrap();
        let b = simulate(&cfg(3, 0.2, Model::Sfm, 7, 100)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.root_visits, y.root_visits);
            assert_eq!(x.branches, y.branches);
        }
    }

    #[test]
    fn lone_frog_return_probability() {
        // from depth 1 a p-biased walk ever reaches the root with probability rho
        let p = 0.3;
        let n = 40_000;
        let mut hits = 0.0;
        for r in 0..n {
            let mut g = rng::stream(9, r);
            if fm_lone_frog_returns(p, 1, 40, 100_000, &mut g) == Some(true) {
                hits += 1.0;
            }
        }
        let rho = p / (1.0 - p);
        let se = (rho * (1.0 - rho) / n as f64).sqrt();
        assert!((hits / n as f64 - rho).abs() < 4.0 * se);
    }

    #[test]
    fn fm_flags() {
        let mut c = cfg(3, 1.0 / 3.0, Model::Fm, 6, 20);
        c.step_horizon = 3;
        let recs = simulate(&c).unwrap();
        assert!(recs.iter().all(|r| r.flags.horizon_hits > 0));
        let mut c = cfg(3, 1.0 / 3.0, Model::Fm, 8, 20);
        c.visit_cap = Some(2);
        for r in simulate(&c).unwrap() {
            assert!(r.root_visits <= 2);
            assert_eq!(r.flags.visit_cap_hit, r.root_visits == 2);
        }
    }

    #[test]
    fn pgf_estimates_at_zero_drift() {
        let est = estimate_pgf(&cfg(2, 0.0, Model::Sfm, 5, 1000), &[0.0, 0.5], None).unwrap();
        for e in est {
            assert_eq!(e.mean, 1.0);
        }
    }
}
