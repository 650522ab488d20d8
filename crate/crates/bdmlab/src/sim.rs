//! Exact individual-based simulation of the branching birth–death–mutation
//! population, with full genealogy recording.
//!
//! # Engine
//!
//! The population is a finite set of individuals with trait values on the
//! real line. Each individual, at trait `x`, independently triggers events at
//! rates `b(x)` (clonal birth), `d(x)` (death) and `p(x)` (mutant birth, the
//! offspring displaced by an independent kernel draw scaled by `1/ln K`).
//! Sampling is exact via thinning: traits are bucketed into bins of width
//! [`BIN_WIDTH`], each bin carries a certified upper bound on the total event
//! rate of any trait inside it, and proposals arrive at the bound rate
//! `sum(len(bin) * bound(bin))` maintained in a Fenwick tree. A proposal
//! picks a bin (probability proportional to its bound weight), a uniform
//! member, and a uniform level in `[0, bound)`; levels above the member's
//! actual total rate are ghosts that advance time only, levels below it are
//! classified into clonal birth / death / mutant birth by sub-interval. By
//! the superposition and thinning theorems this reproduces the exact law of
//! the interacting system; no time discretization is involved.
//!
//! Every proposal advances the clock by an `Exp(1) / W` draw where `W` is the
//! current bound weight, so ghosts are not wasted: they are the price of the
//! piecewise-constant rate bound. For constant-rate configurations the bound
//! is tight and no ghosts occur. Bin bound weights are re-accumulated from
//! scratch periodically so floating-point drift in the Fenwick tree stays
//! around 1e-10 relative — orders of magnitude below Monte-Carlo noise.
//!
//! When none of the three rates depends on the trait, the bins collapse to a
//! single flat array: every individual carries the same weight, selection is
//! one uniform index, and classifying an event needs no trait lookup at all.
//! The uniform engine therefore drafts events in small batches — times,
//! kinds, member indices, kernel displacements, all from the generator and a
//! running population count — and applies each batch to the arrays
//! afterwards, so the random member accesses overlap instead of serializing
//! and populations of tens of millions stay affordable.
//!
//! # Genealogy
//!
//! Records are append-only and compressed: a reproduction appends exactly one
//! child record and leaves the parent record open, so each record is one
//! biological individual from birth to death (or to the horizon). Record ids
//! are dense and ordered by birth time; a parent's id is always smaller than
//! its children's. Per record the store keeps parent id, birth time, trait
//! and death time in struct-of-arrays form (16 bytes per record), which
//! keeps tens of millions of records affordable and makes the lineage
//! queries cache-friendly. A record's fate is fully determined by its death
//! slot (`NaN` while open), so no separate fate array is stored — this also
//! spares one random store per death in the hot loop. Times are kept in
//! "model" units (rescaled horizon times `ln K`); queries expose the
//! rescaled clock.
//!
//! # Determinism
//!
//! All randomness flows through the caller's generator with a fixed draw
//! order per event — waiting time, bin (binned engine only), member, level,
//! then any kernel jump — so a given seed reproduces a run bit for bit. The
//! engine choice is a deterministic function of the scenario's structure.
//! There is no dependence on hash maps, threads, or iteration order of
//! anything unordered.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use thiserror::Error;

use crate::extended::Extended;
use crate::path::{GridPath, Interpolation, PathError};
use crate::scenario::{InitialMeasure, RatePoint, Scenario, ScenarioError};

/// Default ceiling on the live population before a run is stopped.
pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;

/// Relative tail mass discarded when truncating the initial intensity; the
/// same tolerance is used by every consumer of the initial measure so that
/// simulation and estimation agree on the sampled law exactly.
pub const INITIAL_TAIL_TOL: f64 = 1e-9;

/// Trait width of one thinning bin. Narrow enough that rate bounds stay
/// tight across plateau ramps, wide enough that the bin index stays small.
const BIN_WIDTH: f64 = 0.25;

/// Structural operations between exact re-accumulations of the bound tree.
const FENWICK_REFRESH_PERIOD: u64 = 1 << 20;

/// Sentinel parent id of initial individuals.
const NO_PARENT: u32 = u32::MAX;

/// Dense ids must stay below the sentinel.
const MAX_INDIVIDUALS: usize = (u32::MAX - 1) as usize;

/// Errors from simulation and genealogy queries.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("population scale must be at least 2, got {0}")]
    PopulationScaleTooSmall(u64),
    #[error("horizon must be finite and nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error("population cap must be at least 1")]
    InvalidCap,
    #[error("expected initial population {mass:.6e} exceeds the cap {cap}")]
    InitialMassExceedsCap { mass: f64, cap: u64 },
    #[error("scenario violates its standing assumptions: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("no individual with id {0}")]
    UnknownIndividual(u32),
    #[error("genealogy exceeds the id space ({MAX_INDIVIDUALS} records)")]
    AncestryFull,
    #[error("non-finite trait {0} produced during simulation")]
    NonFiniteTrait(f64),
    #[error("total rate {rate} at trait {x} exceeds its certified bin bound {bound}")]
    RateBoundViolated { x: f64, rate: f64, bound: f64 },
    #[error(
        "reference path covers [{path_lo}, {path_hi}] but the tube needs [0, {needed}]"
    )]
    ReferencePathDomain {
        path_lo: f64,
        path_hi: f64,
        needed: f64,
    },
}

/// Terminal state of one genealogy record.
///
/// `run` keeps one record per biological individual: a reproduction leaves
/// the parent record open, so it only ever emits `Alive` and `Died`.
/// `Reproduced` is reserved for re-encodings that close a record at each
/// birth and re-open a continuation; no engine here produces it.
#[repr(u8)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Alive = 0,
    Died = 1,
    Reproduced = 2,
}

/// One genealogy record, materialized from the packed store.
///
/// Times are in model units (the rescaled horizon times `ln K`). The trait
/// and the times are stored in single precision; at the scales simulated
/// here that is a relative `1e-7` rounding, far below any statistical
/// resolution, and it halves the memory of large runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Individual {
    pub id: u32,
    pub parent: Option<u32>,
    /// Birth time in model units.
    pub birth_time: f64,
    pub trait_value: f64,
    /// Death time in model units; `None` while alive at the end of the run.
    pub death_time: Option<f64>,
    pub fate: Fate,
}

/// `ln(count) / ln(k)`: the size exponent of a count on the `K`-scale.
/// A zero count maps to negative infinity.
pub fn exponent(count: u64, k: u64) -> Extended<f64> {
    debug_assert!(k >= 2, "population scale must be at least 2");
    if count == 0 {
        Extended::NegInf
    } else {
        Extended::Finite((count as f64).ln() / (k as f64).ln())
    }
}

/// Draws the initial population: a Poisson number of individuals with mean
/// the total initial mass, placed by inverse CDF of the initial intensity.
///
/// Errors if the expected size exceeds [`DEFAULT_POPULATION_CAP`]; `run`
/// applies its own (configurable) cap instead.
pub fn sample_initial(
    scenario: &Scenario<f64>,
    k: u64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SimError> {
    if k < 2 {
        return Err(SimError::PopulationScaleTooSmall(k));
    }
    let measure = InitialMeasure::build(scenario, k, INITIAL_TAIL_TOL)?;
    draw_initial_positions(&measure, DEFAULT_POPULATION_CAP, rng)
}

fn draw_initial_positions(
    measure: &InitialMeasure<f64>,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SimError> {
    let mass = measure.mass();
    if !mass.is_finite() {
        return Err(SimError::InvalidScenario(format!(
            "initial mass is not finite: {mass}"
        )));
    }
    if mass > cap as f64 {
        return Err(SimError::InitialMassExceedsCap { mass, cap });
    }
    let count = if mass > 0.0 {
        let poisson = Poisson::new(mass)
            .map_err(|e| SimError::InvalidScenario(format!("initial Poisson size: {e}")))?;
        poisson.sample(rng) as u64
    } else {
        0
    };
    Ok((0..count)
        .map(|_| measure.position(rng.random::<f64>()))
        .collect())
}

/// Runs one exact replica to rescaled time `horizon_t`, after checking the
/// scenario's standing assumptions over the region the population can reach.
///
/// The model-time horizon is `horizon_t * ln(k)`. If the live population ever
/// exceeds `cap` the run stops early with the `capped` flag set (not an
/// error); counts then reflect the stopped state.
pub fn run(
    scenario: &Scenario<f64>,
    k: u64,
    horizon_t: f64,
    rng: &mut impl Rng,
    cap: u64,
) -> Result<SimulationResult, SimError> {
    if k < 2 {
        return Err(SimError::PopulationScaleTooSmall(k));
    }
    if !(horizon_t.is_finite() && horizon_t >= 0.0) {
        return Err(SimError::InvalidHorizon(horizon_t));
    }
    let (lo, hi) = scenario.truncation_interval(k, INITIAL_TAIL_TOL)?;
    // Validate out to the farthest excursion a population of at most `cap`
    // individuals can plausibly make (size exponent at most ln(cap)).
    let budget = (cap.max(2) as f64).ln() + 5.0;
    let pad = scenario
        .max_excursion(horizon_t, budget)?
        .clamp(1.0, 100.0);
    let violations = scenario.validate((lo - pad, hi + pad), 2001);
    if !violations.is_empty() {
        let mut msg = String::new();
        for v in violations.iter().take(3) {
            if !msg.is_empty() {
                msg.push_str("; ");
            }
            msg.push_str(&v.to_string());
        }
        if violations.len() > 3 {
            msg.push_str(&format!("; and {} more", violations.len() - 3));
        }
        return Err(SimError::InvalidScenario(msg));
    }
    run_unchecked(scenario, k, horizon_t, rng, cap)
}

/// [`run`] without the pointwise assumption check, for controlled
/// experiments that intentionally step outside the standing assumptions.
pub fn run_unchecked(
    scenario: &Scenario<f64>,
    k: u64,
    horizon_t: f64,
    rng: &mut impl Rng,
    cap: u64,
) -> Result<SimulationResult, SimError> {
    if k < 2 {
        return Err(SimError::PopulationScaleTooSmall(k));
    }
    if !(horizon_t.is_finite() && horizon_t >= 0.0) {
        return Err(SimError::InvalidHorizon(horizon_t));
    }
    if cap == 0 {
        return Err(SimError::InvalidCap);
    }
    simulate(scenario, k, horizon_t, rng, cap)
}

/// Full outcome of one replica: genealogy, survivors, and exact event
/// bookkeeping.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    scenario_fingerprint: u64,
    k: u64,
    ln_k: f64,
    horizon_t: f64,
    horizon_model: f64,
    stop_time_model: f64,
    ancestry: Ancestry,
    alive: Vec<u32>,
    initial_count: u64,
    birth_count: u64,
    death_count: u64,
    ghost_count: u64,
    event_count: u64,
    integral_alive_model: f64,
    capped: bool,
}

impl SimulationResult {
    /// Fingerprint of the scenario that produced this run.
    pub fn scenario_fingerprint(&self) -> u64 {
        self.scenario_fingerprint
    }

    /// Population scale `K`.
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn ln_k(&self) -> f64 {
        self.ln_k
    }

    /// Requested horizon on the rescaled clock.
    pub fn horizon_t(&self) -> f64 {
        self.horizon_t
    }

    /// Requested horizon in model time (`horizon_t * ln k`).
    pub fn horizon_model(&self) -> f64 {
        self.horizon_model
    }

    /// Model time at which the run actually stopped: the horizon, unless the
    /// population cap tripped first.
    pub fn stop_time_model(&self) -> f64 {
        self.stop_time_model
    }

    /// Ids of the individuals alive at the end of the run, ascending.
    pub fn alive_ids(&self) -> &[u32] {
        &self.alive
    }

    pub fn alive_count(&self) -> u64 {
        self.alive.len() as u64
    }

    /// Total number of genealogy records (initial individuals plus births).
    pub fn ancestry_len(&self) -> usize {
        self.ancestry.len()
    }

    pub fn initial_count(&self) -> u64 {
        self.initial_count
    }

    pub fn birth_count(&self) -> u64 {
        self.birth_count
    }

    pub fn death_count(&self) -> u64 {
        self.death_count
    }

    /// Thinning proposals that matched no actual event (time still advanced).
    pub fn ghost_count(&self) -> u64 {
        self.ghost_count
    }

    /// All proposals processed: births + deaths + ghosts.
    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// `integral of N_s ds` in model time up to the stop time, accumulated
    /// exactly along the jump chain (for compensator checks).
    pub fn integral_alive_model(&self) -> f64 {
        self.integral_alive_model
    }

    /// True if the run was stopped by the population cap before the horizon.
    pub fn capped(&self) -> bool {
        self.capped
    }

    /// Materializes one genealogy record.
    pub fn individual(&self, id: u32) -> Option<Individual> {
        let i = id as usize;
        if i >= self.ancestry.len() {
            return None;
        }
        let parent = self.ancestry.parent[i];
        let death = self.ancestry.death[i];
        Some(Individual {
            id,
            parent: (parent != NO_PARENT).then_some(parent),
            birth_time: f64::from(self.ancestry.birth[i]),
            trait_value: f64::from(self.ancestry.trait_values[i]),
            death_time: (!death.is_nan()).then_some(f64::from(death)),
            fate: self.ancestry.fate_of(i),
        })
    }

    /// End of an alive individual's path on the rescaled clock.
    fn end_time_rescaled(&self) -> f64 {
        if self.capped {
            self.stop_time_model / self.ln_k
        } else {
            self.horizon_t
        }
    }

    /// Ancestral trait path of `id` on the rescaled clock: right-continuous
    /// and piecewise constant, jumping at each ancestor's birth time, defined
    /// from 0 to the individual's death (or the end of the run).
    ///
    /// A parent's lineage is a prefix: both paths agree before the child's
    /// birth.
    pub fn lineage(&self, id: u32) -> Result<GridPath<f64>, SimError> {
        let i = id as usize;
        if i >= self.ancestry.len() {
            return Err(SimError::UnknownIndividual(id));
        }
        let mut chain: Vec<u32> = Vec::new();
        let mut cur = id;
        loop {
            chain.push(cur);
            let p = self.ancestry.parent[cur as usize];
            if p == NO_PARENT {
                break;
            }
            cur = p;
        }
        chain.reverse();
        let inv = 1.0 / self.ln_k;
        let mut times: Vec<f64> = Vec::with_capacity(chain.len() + 1);
        let mut values: Vec<f64> = Vec::with_capacity(chain.len() + 1);
        for &cid in &chain {
            let t = f64::from(self.ancestry.birth[cid as usize]) * inv;
            let v = f64::from(self.ancestry.trait_values[cid as usize]);
            match times.last() {
                // Two births can round to the same stored instant; the later
                // trait wins, which is exactly right-continuous composition.
                Some(&last) if t <= last => *values.last_mut().expect("nonempty") = v,
                _ => {
                    times.push(t);
                    values.push(v);
                }
            }
        }
        let end = if self.ancestry.is_open(i) {
            self.end_time_rescaled()
        } else {
            f64::from(self.ancestry.death[i]) * inv
        };
        if end > *times.last().expect("nonempty") {
            times.push(end);
            values.push(*values.last().expect("nonempty"));
        }
        GridPath::new(
            times,
            values,
            Interpolation::PiecewiseConstantRightContinuous,
        )
        .map_err(Into::into)
    }

    /// Number of survivors with terminal trait in `[x - delta, x + delta]`.
    pub fn count_window(&self, x: f64, delta: f64) -> u64 {
        let (lo, hi) = (x - delta, x + delta);
        self.alive
            .iter()
            .filter(|&&id| {
                let v = f64::from(self.ancestry.trait_values[id as usize]);
                lo <= v && v <= hi
            })
            .count() as u64
    }

    /// Number of survivors whose full ancestral path stays within sup
    /// distance `eps` of the reference path `f` (given on the rescaled
    /// clock, covering the whole run).
    pub fn count_tube(&self, f: &GridPath<f64>, eps: f64) -> Result<u64, SimError> {
        let mut count = 0u64;
        self.for_each_alive_tube_distance(f, |_, d| {
            if d <= eps {
                count += 1;
            }
        })?;
        Ok(count)
    }

    /// Calls `visit(id, d)` for every survivor, where `d` is the sup
    /// distance between its ancestral path and the reference path `f` over
    /// the whole run.
    ///
    /// One linear pass over the genealogy: records are stored in birth
    /// order, so each record's reference-path piece is located by a single
    /// merge sweep and the ancestral sup distance satisfies a prefix
    /// recursion along parent links.
    pub fn for_each_alive_tube_distance(
        &self,
        f: &GridPath<f64>,
        mut visit: impl FnMut(u32, f64),
    ) -> Result<(), SimError> {
        let end = self.end_time_rescaled();
        let tol = 1e-9 * (1.0 + end.abs());
        let knots = f.times();
        let (path_lo, path_hi) = (knots[0], knots[knots.len() - 1]);
        if path_lo > tol || path_hi < end - tol {
            return Err(SimError::ReferencePathDomain {
                path_lo,
                path_hi,
                needed: end,
            });
        }
        let n = self.ancestry.len();
        if n == 0 {
            return Ok(());
        }
        let pieces = PathPieces::new(f);
        let inv = 1.0 / self.ln_k;

        // Index of the last knot at or before each record's birth. Births
        // are nondecreasing in id, so one merge sweep suffices.
        let mut piece = vec![0u32; n];
        let mut kp = 0usize;
        let mut prev_birth = f64::NEG_INFINITY;
        for (id, slot) in piece.iter_mut().enumerate() {
            let t = f64::from(self.ancestry.birth[id]) * inv;
            debug_assert!(t >= prev_birth, "records must be in birth order");
            prev_birth = t;
            while kp + 1 < knots.len() && knots[kp + 1] <= t {
                kp += 1;
            }
            *slot = kp as u32;
        }

        // Sup distance of the ancestral path over [0, birth(id)), by the
        // prefix recursion over the parent's constant stretch.
        let mut pref = vec![0.0f32; n];
        for id in 0..n {
            let par = self.ancestry.parent[id];
            if par == NO_PARENT {
                continue;
            }
            let p = par as usize;
            let a = f64::from(self.ancestry.birth[p]) * inv;
            let b = f64::from(self.ancestry.birth[id]) * inv;
            let c = f64::from(self.ancestry.trait_values[p]);
            let d = pieces.sup_on_window(c, a, piece[p] as usize, b, piece[id] as usize, false);
            pref[id] = pref[p].max(d as f32);
        }

        // Terminal stretch of each survivor, closed at the end of the run.
        let i_end = pieces.last_knot_at_or_before(end);
        for &id in &self.alive {
            let i = id as usize;
            let a = (f64::from(self.ancestry.birth[i]) * inv).min(end);
            let c = f64::from(self.ancestry.trait_values[i]);
            let d = pieces.sup_on_window(c, a, piece[i] as usize, end, i_end, true);
            visit(id, f64::from(pref[i]).max(d));
        }
        Ok(())
    }
}

/// Reference path with piecewise evaluation helpers for tube queries.
struct PathPieces<'p> {
    times: &'p [f64],
    values: &'p [f64],
    linear: bool,
}

impl<'p> PathPieces<'p> {
    fn new(f: &'p GridPath<f64>) -> Self {
        PathPieces {
            times: f.times(),
            values: f.values(),
            linear: matches!(f.interpolation(), Interpolation::PiecewiseLinear),
        }
    }

    fn last_knot_at_or_before(&self, t: f64) -> usize {
        self.times.partition_point(|&k| k <= t).saturating_sub(1)
    }

    /// Linear value at `t`, where `i` is the last knot at or before `t`
    /// (queries outside the knot range clamp to the end values).
    fn linear_value(&self, i: usize, t: f64) -> f64 {
        if i + 1 >= self.times.len() {
            return self.values[self.values.len() - 1];
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = if t1 > t0 {
            ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.values[i] + (self.values[i + 1] - self.values[i]) * w
    }

    /// Sup of `|c - f|` over the window from `a` to `b`, half-open on the
    /// right unless `closed`. `i_a` and `i_b` are the last knots at or
    /// before `a` and `b`.
    fn sup_on_window(&self, c: f64, a: f64, i_a: usize, b: f64, i_b: usize, closed: bool) -> f64 {
        if b <= a && !closed {
            return 0.0;
        }
        if self.linear {
            // Continuity makes the half-open and closed sups equal.
            let mut best = (c - self.linear_value(i_a, a)).abs();
            if b > a {
                best = best.max((c - self.linear_value(i_b, b)).abs());
                for j in (i_a + 1)..=i_b {
                    if self.times[j] < b {
                        best = best.max((c - self.values[j]).abs());
                    }
                }
            }
            best
        } else {
            // Pieces j cover [t_j, t_{j+1}); the window overlaps j = i_a
            // through i_b, except that a piece starting exactly at `b` is
            // outside a half-open window.
            let mut hi = i_b;
            if !closed && i_b > i_a && self.times[i_b] >= b {
                hi = i_b - 1;
            }
            let mut best = 0.0f64;
            for j in i_a..=hi {
                best = best.max((c - self.values[j]).abs());
            }
            best
        }
    }
}

/// Packed genealogy store (struct of arrays, 16 bytes per record). A
/// record's fate is derived from its death slot rather than stored.
#[derive(Clone, Debug, Default)]
struct Ancestry {
    parent: Vec<u32>,
    birth: Vec<f32>,
    /// NaN while the record is open.
    death: Vec<f32>,
    trait_values: Vec<f32>,
}

impl Ancestry {
    fn with_capacity(n: usize) -> Self {
        Ancestry {
            parent: Vec::with_capacity(n),
            birth: Vec::with_capacity(n),
            death: Vec::with_capacity(n),
            trait_values: Vec::with_capacity(n),
        }
    }

    fn len(&self) -> usize {
        self.parent.len()
    }

    fn is_open(&self, id: usize) -> bool {
        self.death[id].is_nan()
    }

    fn fate_of(&self, id: usize) -> Fate {
        if self.is_open(id) {
            Fate::Alive
        } else {
            Fate::Died
        }
    }

    fn push(&mut self, parent: u32, birth: f32, trait_value: f32) -> Option<u32> {
        if self.parent.len() >= MAX_INDIVIDUALS {
            return None;
        }
        let id = self.parent.len() as u32;
        self.parent.push(parent);
        self.birth.push(birth);
        self.death.push(f32::NAN);
        self.trait_values.push(trait_value);
        Some(id)
    }

    fn close(&mut self, id: usize, time: f32) {
        debug_assert!(self.is_open(id), "records close exactly once");
        self.death[id] = time;
    }
}

/// Fenwick tree over per-bin bound weights (1-indexed internally).
#[derive(Clone, Debug)]
struct Fenwick {
    n: usize,
    msb: usize,
    tree: Vec<f64>,
}

impl Fenwick {
    fn build(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0f64; n + 1];
        for i in 1..=n {
            tree[i] += weights[i - 1];
            let j = i + (i & i.wrapping_neg());
            if j <= n {
                let v = tree[i];
                tree[j] += v;
            }
        }
        let msb = if n == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - n.leading_zeros())
        };
        Fenwick { n, msb, tree }
    }

    fn add(&mut self, idx: usize, delta: f64) {
        let mut i = idx + 1;
        while i <= self.n {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut i = self.n;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Largest zero-based index whose prefix sum is at most `target`
    /// (so bins are drawn proportional to their weights for a uniform
    /// `target` in `[0, total)`).
    fn find(&self, target: f64) -> usize {
        let mut pos = 0usize;
        let mut consumed = 0.0f64;
        let mut step = self.msb;
        while step > 0 {
            let next = pos + step;
            if next <= self.n {
                let w = self.tree[next];
                if consumed + w <= target {
                    pos = next;
                    consumed += w;
                }
            }
            step >>= 1;
        }
        pos
    }
}

/// Trait-bucketed live population with certified per-bin rate bounds.
struct Bins<'s> {
    scenario: &'s Scenario<f64>,
    lo: f64,
    members: Vec<Vec<(u32, f32)>>,
    bound: Vec<f64>,
    fen: Fenwick,
    ops_since_refresh: u64,
}

impl<'s> Bins<'s> {
    fn new(scenario: &'s Scenario<f64>, lo: f64, hi: f64) -> Self {
        let n = (((hi - lo) / BIN_WIDTH).ceil() as usize).max(1);
        let bound: Vec<f64> = (0..n)
            .map(|i| Self::bound_of(scenario, lo, i))
            .collect();
        Bins {
            scenario,
            lo,
            members: vec![Vec::new(); n],
            bound,
            fen: Fenwick::build(&vec![0.0; n]),
            ops_since_refresh: 0,
        }
    }

    fn bound_of(scenario: &Scenario<f64>, lo: f64, i: usize) -> f64 {
        let a = lo + i as f64 * BIN_WIDTH;
        scenario.total_rate_bound_on(a, a + BIN_WIDTH)
    }

    fn hi(&self) -> f64 {
        self.lo + self.members.len() as f64 * BIN_WIDTH
    }

    /// Grows the bin range so `x` falls strictly inside it.
    fn ensure_covers(&mut self, x: f64) {
        let mut changed = false;
        while x < self.lo {
            let grow = self.members.len().max(8);
            self.lo -= grow as f64 * BIN_WIDTH;
            let mut members = vec![Vec::new(); grow];
            members.append(&mut self.members);
            self.members = members;
            let mut bound: Vec<f64> = (0..grow)
                .map(|i| Self::bound_of(self.scenario, self.lo, i))
                .collect();
            bound.append(&mut self.bound);
            self.bound = bound;
            changed = true;
        }
        while x >= self.hi() {
            let grow = self.members.len().max(8);
            let old = self.members.len();
            self.members.extend((0..grow).map(|_| Vec::new()));
            self.bound
                .extend((old..old + grow).map(|i| Self::bound_of(self.scenario, self.lo, i)));
            changed = true;
        }
        if changed {
            self.rebuild();
        }
    }

    /// Re-accumulates all bound weights exactly.
    fn rebuild(&mut self) {
        let weights: Vec<f64> = self
            .members
            .iter()
            .zip(&self.bound)
            .map(|(m, b)| m.len() as f64 * b)
            .collect();
        self.fen = Fenwick::build(&weights);
        self.ops_since_refresh = 0;
    }

    fn note_op(&mut self) {
        self.ops_since_refresh += 1;
        if self.ops_since_refresh >= FENWICK_REFRESH_PERIOD {
            self.rebuild();
        }
    }

    fn insert(&mut self, id: u32, x: f32) -> Result<(), SimError> {
        if !x.is_finite() {
            return Err(SimError::NonFiniteTrait(f64::from(x)));
        }
        self.ensure_covers(f64::from(x));
        let idx = (((f64::from(x) - self.lo) / BIN_WIDTH) as usize).min(self.members.len() - 1);
        self.members[idx].push((id, x));
        self.fen.add(idx, self.bound[idx]);
        self.note_op();
        Ok(())
    }

    fn remove(&mut self, bin: usize, member: usize) {
        self.members[bin].swap_remove(member);
        self.fen.add(bin, -self.bound[bin]);
        self.note_op();
    }

    /// Bin holding the proposal at cumulative weight `target`; falls back to
    /// the last populated bin on floating-point edge cases (the member and
    /// level draws are independent, so the fallback stays exact).
    fn find_bin(&self, target: f64) -> Option<usize> {
        let pos = self.fen.find(target);
        if pos < self.members.len() && !self.members[pos].is_empty() {
            return Some(pos);
        }
        self.members.iter().rposition(|m| !m.is_empty())
    }
}

/// Mutable run totals shared by both event loops.
struct Tally {
    time: f64,
    integral: f64,
    alive: u64,
    events: u64,
    births: u64,
    deaths: u64,
    ghosts: u64,
    capped: bool,
}

fn simulate(
    scenario: &Scenario<f64>,
    k: u64,
    horizon_t: f64,
    rng: &mut impl Rng,
    cap: u64,
) -> Result<SimulationResult, SimError> {
    let ln_k = (k as f64).ln();
    let horizon = horizon_t * ln_k;
    let measure = InitialMeasure::build(scenario, k, INITIAL_TAIL_TOL)?;
    let initial = draw_initial_positions(&measure, cap, rng)?;
    let n0 = initial.len() as u64;

    let mut ancestry = Ancestry::with_capacity((initial.len() * 2).clamp(16, MAX_INDIVIDUALS));
    for x in &initial {
        ancestry
            .push(NO_PARENT, 0.0, *x as f32)
            .ok_or(SimError::AncestryFull)?;
    }
    drop(initial);

    let mut tally = Tally {
        time: 0.0,
        integral: 0.0,
        alive: n0,
        events: 0,
        births: 0,
        deaths: 0,
        ghosts: 0,
        capped: n0 > cap,
    };

    if !tally.capped {
        match scenario.constant_rates() {
            Some(rates) => {
                uniform_loop(scenario, &mut ancestry, &mut tally, rng, cap, horizon, ln_k, rates)?
            }
            None => binned_loop(
                scenario,
                &measure,
                &mut ancestry,
                &mut tally,
                rng,
                cap,
                horizon,
                ln_k,
            )?,
        }
    }

    let stop_time_model = if tally.capped {
        tally.time
    } else {
        // No event fit before the horizon; the population is constant on
        // the remaining stretch.
        tally.integral += tally.alive as f64 * (horizon - tally.time);
        horizon
    };

    let alive: Vec<u32> = (0..ancestry.len() as u32)
        .filter(|&i| ancestry.is_open(i as usize))
        .collect();
    assert_eq!(
        alive.len() as u64,
        tally.alive,
        "alive bookkeeping must be exact"
    );

    Ok(SimulationResult {
        scenario_fingerprint: scenario.fingerprint(),
        k,
        ln_k,
        horizon_t,
        horizon_model: horizon,
        stop_time_model,
        ancestry,
        alive,
        initial_count: n0,
        birth_count: tally.births,
        death_count: tally.deaths,
        ghost_count: tally.ghosts,
        event_count: tally.events,
        integral_alive_model: tally.integral,
        capped: tally.capped,
    })
}

/// Event loop for trait-dependent rates: binned thinning with certified
/// per-bin rate bounds.
#[allow(clippy::too_many_arguments)]
fn binned_loop(
    scenario: &Scenario<f64>,
    measure: &InitialMeasure<f64>,
    ancestry: &mut Ancestry,
    tally: &mut Tally,
    rng: &mut impl Rng,
    cap: u64,
    horizon: f64,
    ln_k: f64,
) -> Result<(), SimError> {
    let (ilo, ihi) = measure.interval();
    let mut bins = Bins::new(scenario, ilo - 1.0, ihi + 1.0);
    for i in 0..ancestry.len() {
        bins.insert(i as u32, ancestry.trait_values[i])?;
    }

    while !tally.capped {
        let w = bins.fen.total();
        if !(w > 0.0) {
            break;
        }
        let dt = rng.sample::<f64, _>(Exp1) / w;
        if !dt.is_finite() || tally.time + dt >= horizon {
            break;
        }
        tally.integral += tally.alive as f64 * dt;
        tally.time += dt;

        let target = rng.random::<f64>() * w;
        let Some(bin) = bins.find_bin(target) else {
            break;
        };
        let member = rng.random_range(0..bins.members[bin].len());
        let (id, xf) = bins.members[bin][member];
        let x = f64::from(xf);
        let bound = bins.bound[bin];
        let rates = scenario.rates_at(x);
        if rates.total > bound * (1.0 + 1e-9) {
            return Err(SimError::RateBoundViolated {
                x,
                rate: rates.total,
                bound,
            });
        }
        tally.events += 1;
        let level = rng.random::<f64>() * bound;

        if level >= rates.total {
            tally.ghosts += 1;
        } else if level < rates.birth + rates.death {
            if level < rates.birth {
                // Clonal birth: one child at the same trait.
                let child = ancestry
                    .push(id, tally.time as f32, xf)
                    .ok_or(SimError::AncestryFull)?;
                bins.insert(child, xf)?;
                tally.alive += 1;
                tally.births += 1;
                tally.capped = tally.alive > cap;
            } else {
                ancestry.close(id as usize, tally.time as f32);
                bins.remove(bin, member);
                tally.alive -= 1;
                tally.deaths += 1;
            }
        } else {
            // Mutant birth: the offspring is displaced by a rescaled kernel
            // draw; the parent record stays open.
            let jump = scenario.kernel().sample_jump(rng);
            let child_x = (x + jump / ln_k) as f32;
            let child = ancestry
                .push(id, tally.time as f32, child_x)
                .ok_or(SimError::AncestryFull)?;
            bins.insert(child, child_x)?;
            tally.alive += 1;
            tally.births += 1;
            tally.capped = tally.alive > cap;
        }
    }
    Ok(())
}

/// How many events the uniform engine drafts before touching the alive
/// array. Sized to keep roughly one memory-level-parallelism window of
/// random lines in flight without overrunning the fill buffers.
const UNIFORM_BATCH: usize = 32;

/// One drafted event: everything the apply stage needs except the member's
/// trait, which it loads from the (by then prefetched) slot.
#[derive(Clone, Copy, Default)]
struct Drafted {
    /// Rescaled mutation displacement; meaningful only for `kind == 2`.
    shift: f64,
    member: u32,
    /// Event time, already narrowed for the ancestry record.
    time: f32,
    /// 0 = clonal birth, 1 = death, 2 = mutant birth.
    kind: u8,
}

/// Read-only inputs of the draft stage.
struct DraftCtx<'s> {
    scenario: &'s Scenario<f64>,
    rates: RatePoint<f64>,
    birth_death: f64,
    horizon: f64,
    ln_k: f64,
    cap: u64,
}

/// Advances the jump chain by up to one batch without reading any trait:
/// under constant rates the waiting times, event kinds, member indices and
/// kernel displacements depend only on the running population size. Returns
/// (events drafted, whether the run is over).
fn draft(
    ctx: &DraftCtx,
    batch: &mut [Drafted; UNIFORM_BATCH],
    n: &mut usize,
    tally: &mut Tally,
    rng: &mut impl Rng,
) -> (usize, bool) {
    let mut filled = 0;
    let mut stop = *n == 0;
    while !stop && filled < UNIFORM_BATCH {
        let w = ctx.rates.total * *n as f64;
        let dt = rng.sample::<f64, _>(Exp1) / w;
        if !dt.is_finite() || tally.time + dt >= ctx.horizon {
            stop = true;
            break;
        }
        tally.integral += *n as f64 * dt;
        tally.time += dt;
        let member = rng.random_range(0..*n) as u32;
        let level = rng.random::<f64>() * ctx.rates.total;
        tally.events += 1;

        // Branch-free classification: 0 = clonal, 1 = death, 2 = mutant.
        let kind = u8::from(level >= ctx.rates.birth) + u8::from(level >= ctx.birth_death);
        let mut shift = 0.0;
        if kind == 2 {
            shift = ctx.scenario.kernel().sample_jump(rng) / ctx.ln_k;
        }
        let is_death = (kind == 1) as u64;
        *n = *n + 1 - 2 * is_death as usize;
        tally.deaths += is_death;
        tally.births += 1 - is_death;
        batch[filled] = Drafted {
            shift,
            member,
            time: tally.time as f32,
            kind,
        };
        filled += 1;
        if kind != 1 && *n as u64 > ctx.cap {
            tally.capped = true;
            stop = true;
        }
        stop |= *n == 0;
    }
    (filled, stop)
}

/// Event loop for trait-independent rates: every individual carries the same
/// total rate, so selecting a member is one uniform index into a flat array
/// and classifying the event needs no trait data at all. The loop exploits
/// that by drafting a batch of events from the rates alone — waiting times,
/// kinds, member indices, kernel displacements — and only then applying them
/// to the arrays. With the random-number work and the unpredictable
/// branches hoisted out of the apply stage, a whole batch of independent
/// random accesses can be in flight at once instead of one at a time, which
/// is worth roughly a factor of two at population sizes that spill out of
/// the cache. The per-event draw order is the same as in the binned engine
/// (minus the bin draw), so batching does not change a single sample.
#[allow(clippy::too_many_arguments)]
fn uniform_loop(
    scenario: &Scenario<f64>,
    ancestry: &mut Ancestry,
    tally: &mut Tally,
    rng: &mut impl Rng,
    cap: u64,
    horizon: f64,
    ln_k: f64,
    rates: RatePoint<f64>,
) -> Result<(), SimError> {
    if !(rates.total > 0.0) {
        return Ok(()); // nothing ever happens; the population is frozen
    }
    let birth_death = rates.birth + rates.death;
    let mut alive: Vec<(u32, f32)> = (0..ancestry.len())
        .map(|i| (i as u32, ancestry.trait_values[i]))
        .collect();
    // The draft stage's view of the population size; the apply stage must
    // land exactly here after each batch.
    let mut n = alive.len();
    let ctx = DraftCtx {
        scenario,
        rates,
        birth_death,
        horizon,
        ln_k,
        cap,
    };

    let mut batch = [Drafted::default(); UNIFORM_BATCH];
    loop {
        let (filled, stop) = draft(&ctx, &mut batch, &mut n, tally, rng);

        // Apply: indices were drawn against the population size the array
        // will have at each step, so applying in draft order is exact. Both
        // birth kinds share one path — a clonal birth is a displacement of
        // exactly zero.
        for event in &batch[..filled] {
            let member = event.member as usize;
            if event.kind == 1 {
                let (id, _) = alive.swap_remove(member);
                ancestry.close(id as usize, event.time);
            } else {
                let (parent, x) = alive[member];
                let child_x = (f64::from(x) + event.shift) as f32;
                if !child_x.is_finite() {
                    return Err(SimError::NonFiniteTrait(f64::from(child_x)));
                }
                let child = ancestry
                    .push(parent, event.time, child_x)
                    .ok_or(SimError::AncestryFull)?;
                alive.push((child, child_x));
            }
        }

        debug_assert_eq!(alive.len(), n, "draft and apply stages must agree");
        if stop {
            break;
        }
    }
    tally.alive = alive.len() as u64;
    Ok(())
}
