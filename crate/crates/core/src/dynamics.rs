//! Orbits and their statistics.
//!
//! Orbits of an expanding map computed in floating point are pseudo-orbits:
//! they leave the true orbit exponentially fast. Their empirical statistics
//! are the object studied here, as is customary. [`OrbitMode::Perturb`] adds
//! uniform noise of size [`PERTURB_SCALE`] per step to probe how robust those
//! statistics are.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Ensemble member `i` of a run
//! with master seed `s` draws from `ChaCha8Rng::seed_from_u64(s)` on stream
//! `i`, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::params::{Frac, Variant};
use crate::realization::{Cell, CircleMap, CirclePoint};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_RETURN_CAP: usize = 5000;
pub const DEFAULT_SEED: u64 = 0x5eed_2024;
pub const PERTURB_SCALE: f64 = 1e-15;
pub const CHECKPOINTS: usize = 10;

/// A map of the circle that can be iterated from a random start.
pub trait Dynamics: Sync {
    type State: Clone + Send;

    fn initial(&self, x0: CirclePoint) -> Result<Self::State>;

    /// A Lebesgue-random initial state.
    fn random_state(&self, rng: &mut ChaCha8Rng) -> Result<Self::State>;

    /// Advances one step; `Ok(true)` flags an absorbed deep-branch step.
    fn advance(&self, s: &mut Self::State, rng: &mut ChaCha8Rng) -> Result<bool>;

    fn point(&self, s: &Self::State) -> CirclePoint;

    /// Membership in the inducing domain, for return-time bookkeeping.
    fn in_domain(&self, s: &Self::State) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitMode {
    /// Carries cell indices so that points near `q` keep their depth.
    #[default]
    Structured,
    /// Plain doubles, with a deep form only while just above `q`.
    Plain,
    /// Plain, plus uniform noise of size [`PERTURB_SCALE`] each step.
    Perturb,
}

impl OrbitMode {
    pub fn name(self) -> &'static str {
        match self {
            OrbitMode::Structured => "structured",
            OrbitMode::Plain => "plain",
            OrbitMode::Perturb => "perturb",
        }
    }
}

impl fmt::Display for OrbitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrbitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(OrbitMode::Structured),
            "plain" => Ok(OrbitMode::Plain),
            "perturb" => Ok(OrbitMode::Perturb),
            _ => Err(Error::invalid(
                "mode",
                format!("unknown orbit mode `{s}` (structured, plain, perturb)"),
            )),
        }
    }
}

/// The circle map iterated in a given mode.
#[derive(Debug, Clone, Copy)]
pub struct CircleDynamics<'a> {
    pub map: &'a CircleMap,
    pub mode: OrbitMode,
}

impl<'a> CircleDynamics<'a> {
    pub fn new(map: &'a CircleMap, mode: OrbitMode) -> Self {
        CircleDynamics { map, mode }
    }
}

impl Dynamics for CircleDynamics<'_> {
    type State = CirclePoint;

    fn initial(&self, x0: CirclePoint) -> Result<CirclePoint> {
        match (self.mode, x0.deep) {
            (OrbitMode::Structured, None) => self.map.structurize(x0.value),
            _ => Ok(x0),
        }
    }

    fn random_state(&self, rng: &mut ChaCha8Rng) -> Result<CirclePoint> {
        self.initial(CirclePoint::plain(rng.random::<f64>()))
    }

    fn advance(&self, s: &mut CirclePoint, rng: &mut ChaCha8Rng) -> Result<bool> {
        match self.mode {
            OrbitMode::Structured => {
                let step = self.map.step(*s)?;
                *s = step.point;
                Ok(step.absorbed)
            }
            OrbitMode::Plain => {
                *s = self.map.f_eval(*s)?;
                Ok(false)
            }
            OrbitMode::Perturb => {
                let y = self.map.f_eval(*s)?;
                let noise = PERTURB_SCALE * (2.0 * rng.random::<f64>() - 1.0);
                *s = CirclePoint::plain(y.value + noise);
                Ok(false)
            }
        }
    }

    fn point(&self, s: &CirclePoint) -> CirclePoint {
        *s
    }

    fn in_domain(&self, s: &CirclePoint) -> bool {
        match s.deep {
            Some(Cell::K { .. }) => true,
            Some(Cell::J { .. }) => false,
            None => s.value > self.map.construction().q(),
        }
    }
}

/// The reference map `x ↦ 2x mod 1`.
///
/// A double would collapse to `0` after 53 doublings, so the state is a
/// window onto the binary expansion, refilled with fresh random bits; for
/// a Lebesgue-random start this is the exact law of the orbit.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoublingMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoublingState {
    window: u64,
    /// Pending bits beyond the window; `None` for a deterministic start.
    tail: Option<(u64, u32)>,
}

impl DoublingState {
    pub fn value(&self) -> f64 {
        (self.window >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl Dynamics for DoublingMap {
    type State = DoublingState;

    /// A plain start has finitely many bits and reaches `0`.
    fn initial(&self, x0: CirclePoint) -> Result<DoublingState> {
        let x = x0.value;
        if !(0.0..1.0).contains(&x) {
            return Err(Error::OutOfDomain {
                op: "doubling",
                x,
                domain: "[0, 1)",
            });
        }
        Ok(DoublingState {
            window: (x * 2f64.powi(64)) as u64,
            tail: None,
        })
    }

    fn random_state(&self, rng: &mut ChaCha8Rng) -> Result<DoublingState> {
        Ok(DoublingState {
            window: rng.next_u64(),
            tail: Some((0, 0)),
        })
    }

    fn advance(&self, s: &mut DoublingState, rng: &mut ChaCha8Rng) -> Result<bool> {
        let bit = match &mut s.tail {
            None => 0,
            Some((bits, left)) => {
                if *left == 0 {
                    *bits = rng.next_u64();
                    *left = 64;
                }
                let bit = *bits & 1;
                *bits >>= 1;
                *left -= 1;
                bit
            }
        };
        s.window = (s.window << 1) | bit;
        Ok(false)
    }

    fn point(&self, s: &DoublingState) -> CirclePoint {
        CirclePoint::plain(s.value())
    }

    fn in_domain(&self, s: &DoublingState) -> bool {
        s.value() >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitConfig {
    /// Number of orbit points `x₀, …, x_{N−1}`.
    pub n: u64,
    pub delta: f64,
    pub bins: usize,
    pub mode: OrbitMode,
    /// Number of leading points to keep.
    pub window: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            n: 100_000,
            delta: 0.05,
            bins: DEFAULT_BINS,
            mode: OrbitMode::Structured,
            window: 0,
        }
    }
}

impl OrbitConfig {
    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "an orbit needs at least one point"));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::invalid("delta", format!("need 0 < δ < 1/2, got {}", self.delta)));
        }
        if self.bins == 0 {
            return Err(Error::invalid("bins", "need at least one bin"));
        }
        Ok(())
    }
}

fn serialize_error<S: Serializer>(e: &Option<Error>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match e {
        Some(e) => s.serialize_some(&e.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitStats {
    /// Points recorded; equals `requested` unless the orbit halted.
    pub n: u64,
    pub requested: u64,
    pub delta: f64,
    pub histogram: Vec<u64>,
    pub near_p: u64,
    pub frac_near_p: f64,
    /// `(points so far, fraction near p)` at `N/10, 2N/10, …, N`.
    pub frac_curve: Vec<(u64, f64)>,
    /// Gaps between successive visits to the inducing domain.
    pub return_times: BTreeMap<u64, u64>,
    pub absorbed: u64,
    #[serde(serialize_with = "serialize_error")]
    pub halted: Option<Error>,
}

impl OrbitStats {
    fn new(cfg: &OrbitConfig) -> Self {
        OrbitStats {
            n: 0,
            requested: cfg.n,
            delta: cfg.delta,
            histogram: vec![0; cfg.bins],
            near_p: 0,
            frac_near_p: 0.0,
            frac_curve: Vec::with_capacity(CHECKPOINTS),
            return_times: BTreeMap::new(),
            absorbed: 0,
            halted: None,
        }
    }

    pub fn histogram_total(&self) -> u64 {
        self.histogram.iter().sum()
    }

    pub fn completed(&self) -> bool {
        self.halted.is_none()
    }

    /// The fraction at the first checkpoint.
    pub fn early_fraction(&self) -> Option<f64> {
        self.frac_curve.first().map(|&(_, f)| f)
    }
}

/// `[0, δ) ∪ (1 − δ, 1)`.
pub fn near_p(x: f64, delta: f64) -> bool {
    x < delta || x > 1.0 - delta
}

fn checkpoints(n: u64) -> [u64; CHECKPOINTS] {
    let mut out = [0; CHECKPOINTS];
    for (k, c) in out.iter_mut().enumerate() {
        *c = (n * (k as u64 + 1) / CHECKPOINTS as u64).max(1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Orbit {
    pub stats: OrbitStats,
    /// The first `window` points.
    pub points: Vec<CirclePoint>,
}

/// Runs `x₀, f(x₀), …` for `cfg.n` points, accumulating statistics online.
/// An evaluation error halts the orbit and is reported in the stats.
pub fn orbit<D: Dynamics>(
    dynamics: &D,
    mut state: D::State,
    cfg: &OrbitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Orbit> {
    cfg.check()?;
    let mut stats = OrbitStats::new(cfg);
    let mut points = Vec::with_capacity(cfg.window.min(cfg.n as usize));
    let marks = checkpoints(cfg.n);
    let mut next_mark = 0;
    let mut last_visit: Option<u64> = None;
    let bins = cfg.bins as f64;
    for i in 0..cfg.n {
        let p = dynamics.point(&state);
        if (i as usize) < cfg.window {
            points.push(p);
        }
        let bin = ((p.value * bins) as usize).min(cfg.bins - 1);
        stats.histogram[bin] += 1;
        if near_p(p.value, cfg.delta) {
            stats.near_p += 1;
        }
        if dynamics.in_domain(&state) {
            if let Some(prev) = last_visit {
                *stats.return_times.entry(i - prev).or_default() += 1;
            }
            last_visit = Some(i);
        }
        stats.n = i + 1;
        while next_mark < CHECKPOINTS && marks[next_mark] == stats.n {
            stats
                .frac_curve
                .push((stats.n, stats.near_p as f64 / stats.n as f64));
            next_mark += 1;
        }
        if i + 1 < cfg.n {
            match dynamics.advance(&mut state, rng) {
                Ok(absorbed) => stats.absorbed += absorbed as u64,
                Err(e) => {
                    stats.halted = Some(e);
                    break;
                }
            }
        }
    }
    stats.frac_near_p = stats.near_p as f64 / stats.n as f64;
    Ok(Orbit { stats, points })
}

/// The RNG of ensemble member `index`.
pub fn member_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffResult {
    pub x0: f64,
    pub fraction: f64,
    pub curve: Vec<(u64, f64)>,
    pub absorbed: u64,
    #[serde(serialize_with = "serialize_error")]
    pub halted: Option<Error>,
}

fn check_birkhoff(n: u64, delta: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::invalid("n", format!("need N ≥ 10, got {n}")));
    }
    if !(delta > 0.0 && delta < 0.25) {
        return Err(Error::invalid("delta", format!("need 0 < δ < 1/4, got {delta}")));
    }
    Ok(())
}

fn birkhoff_from<D: Dynamics>(
    dynamics: &D,
    state: D::State,
    n: u64,
    delta: f64,
    mode: OrbitMode,
    rng: &mut ChaCha8Rng,
) -> Result<BirkhoffResult> {
    let x0 = dynamics.point(&state).value;
    let cfg = OrbitConfig {
        n,
        delta,
        bins: 1,
        mode,
        window: 0,
    };
    let o = orbit(dynamics, state, &cfg, rng)?;
    Ok(BirkhoffResult {
        x0,
        fraction: o.stats.frac_near_p,
        curve: o.stats.frac_curve,
        absorbed: o.stats.absorbed,
        halted: o.stats.halted,
    })
}

/// Time fraction of the `N`-point orbit of `x0` within `δ` of `p`.
pub fn birkhoff_near_p<D: Dynamics>(
    dynamics: &D,
    x0: CirclePoint,
    n: u64,
    delta: f64,
    seed: u64,
) -> Result<BirkhoffResult> {
    check_birkhoff(n, delta)?;
    let state = dynamics.initial(x0)?;
    birkhoff_from(dynamics, state, n, delta, OrbitMode::Plain, &mut member_rng(seed, 0))
}

/// Birkhoff fractions from `seeds` Lebesgue-random starts, in member order.
pub fn birkhoff_ensemble<D: Dynamics>(
    dynamics: &D,
    seeds: usize,
    n: u64,
    delta: f64,
    master: u64,
) -> Result<Vec<BirkhoffResult>> {
    check_birkhoff(n, delta)?;
    (0..seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = member_rng(master, i);
            let state = dynamics.random_state(&mut rng)?;
            birkhoff_from(dynamics, state, n, delta, OrbitMode::Plain, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinEstimate {
    pub seeds: usize,
    pub hits: usize,
    pub fraction: f64,
    /// Wilson score interval at 95%.
    pub ci_low: f64,
    pub ci_high: f64,
    pub threshold: f64,
    pub fractions: Vec<f64>,
}

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Proportion of random seeds whose Birkhoff fraction reaches `threshold`.
pub fn basin_sample<D: Dynamics>(
    dynamics: &D,
    seeds: usize,
    n: u64,
    delta: f64,
    threshold: f64,
    master: u64,
) -> Result<BasinEstimate> {
    if seeds == 0 {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let runs = birkhoff_ensemble(dynamics, seeds, n, delta, master)?;
    let fractions: Vec<f64> = runs.iter().map(|r| r.fraction).collect();
    let hits = fractions.iter().filter(|&&f| f >= threshold).count();
    let (ci_low, ci_high) = wilson_interval(hits, seeds, 1.959_963_984_540_054);
    Ok(BasinEstimate {
        seeds,
        hits,
        fraction: hits as f64 / seeds as f64,
        ci_low,
        ci_high,
        threshold,
        fractions,
    })
}

/// Smallest `τ ≥ 1` with `f^τ(x) ∈ (q, 1]`, and that point.
pub fn return_time(map: &CircleMap, x: CirclePoint, cap: usize) -> Result<(usize, CirclePoint)> {
    let q = map.construction().q();
    let mut p = match x.deep {
        Some(Cell::K { .. }) => x,
        Some(Cell::J { .. }) => {
            return Err(Error::OutOfDomain {
                op: "return_time",
                x: x.value,
                domain: "(q, 1]",
            })
        }
        None if x.value > q => map.structurize(x.value)?,
        None => {
            return Err(Error::OutOfDomain {
                op: "return_time",
                x: x.value,
                domain: "(q, 1]",
            })
        }
    };
    for tau in 1..=cap {
        p = map.step(p)?.point;
        if matches!(p.deep, Some(Cell::K { .. })) {
            return Ok((tau, p));
        }
    }
    Err(Error::DepthExceeded { depth: cap + 1, cap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InducedReturn {
    pub n: usize,
    pub pos: Frac,
    pub value: f64,
    /// Number of `F` steps.
    pub tau: usize,
    /// `(F^τ)'(x)` by the chain rule.
    pub derivative: f64,
    /// Whether the excursion passed through `K₁`.
    pub via_k1: bool,
}

/// The first return `G` of `F` to `Δ = ⋃_{n≥2} Kₙ`, started from position
/// `pos` in `Kₙ`.
pub fn g_eval(map: &CircleMap, n: usize, pos: Frac, cap: usize) -> Result<InducedReturn> {
    if map.variant() != Variant::Physical {
        return Err(Error::VariantMismatch {
            op: "G_eval",
            expected: "physical",
        });
    }
    if n < 2 {
        return Err(Error::IndexOutOfRange { index: n, min: 2 });
    }
    let induced = map.induced();
    let (mut m, mut at) = (n, pos);
    let mut derivative = 1.0;
    let mut via_k1 = false;
    for tau in 1..=cap {
        derivative *= induced.deriv_local(m, at)?;
        (m, at) = induced.step_cell(m, at)?;
        if m >= 2 {
            return Ok(InducedReturn {
                n: m,
                pos: at,
                value: map.cell_value(Cell::K { n: m, pos: at }),
                tau,
                derivative,
                via_k1,
            });
        }
        via_k1 = true;
    }
    Err(Error::DepthExceeded { depth: cap + 1, cap })
}

/// [`g_eval`] at a plain coordinate of `Δ`.
pub fn g_eval_plain(map: &CircleMap, x: f64, cap: usize) -> Result<InducedReturn> {
    let (n, pos) = map.construction().locate_i2_frac(x)?;
    g_eval(map, n, pos, cap)
}
