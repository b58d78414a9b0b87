//! One function per subcommand.

use clap::{Args, ValueEnum};
use rand::Rng;
use repeller::dynamics::{
    self, basin_sample, birkhoff_ensemble, member_rng, return_time, BirkhoffResult, Dynamics,
    DEFAULT_BINS, DEFAULT_RETURN_CAP,
};
use repeller::verify::{self, check_all, check_some, VerifyConfig};
use repeller::{
    Cell, CircleDynamics, CircleMap, CirclePoint, ConstructionParams, DoublingMap, Frac,
    OrbitConfig, OrbitMode,
};
use serde::Serialize;
use serde_json::json;

use crate::export::{pretty, OutputArgs, Payload, Sink};
use crate::params_args::ParamArgs;
use crate::CliError;

fn build_map(params: &ConstructionParams) -> Result<CircleMap, CliError> {
    Ok(CircleMap::new(params.clone())?)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let bytes = pretty(value)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

// ---------------------------------------------------------------- build

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Number of cells in the partition table (written with --out-dir).
    #[arg(long, default_value_t = 40)]
    cells: usize,
}

#[derive(Serialize)]
struct PartitionRow {
    n: usize,
    k_left: f64,
    k_right: f64,
    k_offset_left: f64,
    k_offset_right: f64,
    k_width: f64,
    j_left: Option<f64>,
    j_right: Option<f64>,
    p: Option<f64>,
    slope_m: f64,
}

pub fn build(a: &BuildArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let c = map.construction();
    let summary = json!({
        "params": params,
        "derived": c.derived(),
        "slope_at_p": c.q() / c.b(),
        "deep_cap": map.induced().deep_cap(),
        "effective_depth_cap": c.effective_depth_cap(),
        "p_product_lower_bound": c.p_product_lower_bound(),
        "epsilon_margins": c.epsilon_margins().ok(),
    });
    let rows = (1..=a.cells)
        .map(|n| {
            Ok(PartitionRow {
                n,
                k_left: c.k_left(n),
                k_right: c.k_right(n),
                k_offset_left: c.k_offset_left(n),
                k_offset_right: c.k_offset_right(n),
                k_width: c.k_width(n),
                j_left: (n >= 2).then(|| c.j_left(n)),
                j_right: (n >= 2).then(|| c.j_right(n)),
                p: if n >= 2 { Some(c.p_ratio(n)?) } else { None },
                slope_m: c.slope_m(n)?,
            })
        })
        .collect::<Result<Vec<_>, repeller::Error>>()?;
    let sink = Sink {
        output: &a.output,
        command: "build",
        params: Some(&params),
        seed,
        settings: json!({ "cells": a.cells }),
    };
    sink.primary("build.json", Payload::Json(&summary))?;
    sink.extra("partition.csv", Payload::Csv(&rows))
}

// ---------------------------------------------------------------- graph

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MapKind {
    /// The first branch on [0, q].
    #[value(name = "f1")]
    F1,
    /// The first-return map on (q, 1].
    #[value(name = "F", alias = "return")]
    Return,
    /// The second branch on (q, 1].
    #[value(name = "f2")]
    F2,
    /// The circle map on [0, 1).
    #[value(name = "f", alias = "circle")]
    Circle,
    /// The graph piece f₁^{a−b} ∘ f₂ from K_a onto J_b; needs --branch a and --to b.
    #[value(name = "phi")]
    Phi,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Which map to sample.
    #[arg(long, value_enum, default_value = "F")]
    map: MapKind,
    /// Restrict to the cell Kₙ (Jₙ for f1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    branch: Option<u64>,
    /// Spread the samples evenly over the sub-pieces, so that narrow pieces show.
    #[arg(long)]
    pieces: bool,
    /// Target index b of the graph piece (--map phi only).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    to: Option<u64>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
}

/// One sampled point. `x_offset` and `value_offset` are `x − q` and
/// `value − q` kept at full relative precision, for plots zoomed at `q`.
#[derive(Debug, Serialize)]
struct GraphRow {
    x: f64,
    value: f64,
    derivative: Option<f64>,
    branch_index: usize,
    piece_label: &'static str,
    x_offset: Option<f64>,
    value_offset: Option<f64>,
}

/// `k` midpoints of `[lo, hi]`.
fn midpoints(lo: f64, hi: f64, k: u64) -> impl Iterator<Item = f64> {
    (0..k).map(move |j| lo + (hi - lo) * (j as f64 + 0.5) / k as f64)
}

/// Splits `total` samples over `parts` pieces.
fn split(total: u64, parts: usize) -> Vec<u64> {
    let parts = parts as u64;
    (0..parts).map(|i| total / parts + u64::from(i < total % parts)).collect()
}

fn f1_label(map: &CircleMap, x: f64) -> &'static str {
    let f1 = map.f1();
    if x <= f1.b() {
        "affine"
    } else {
        match f1.cap_width() {
            None => "power",
            Some(u) if x <= f1.q() - u => "connector",
            Some(_) => "cap",
        }
    }
}

fn f1_row(map: &CircleMap, x: f64) -> Result<GraphRow, CliError> {
    let c = map.construction();
    let value = map.f1().eval(x)?;
    let branch_index = if x > 0.0 { c.locate_j(x)?.0 } else { 0 };
    Ok(GraphRow {
        x,
        value,
        derivative: map.f1().deriv(x).ok().and_then(finite),
        branch_index,
        piece_label: f1_label(map, x),
        x_offset: None,
        value_offset: (value > c.q()).then(|| value - c.q()),
    })
}

/// A row for `F` or `f₂` at a structured position in `Kₙ`.
fn cell_row(map: &CircleMap, kind: MapKind, n: usize, pos: Frac) -> Result<GraphRow, CliError> {
    let c = map.construction();
    let induced = map.induced();
    let (image, piece) = induced.eval_local(n, pos)?;
    let x = map.cell_value(Cell::K { n, pos });
    let x_offset = CirclePoint { value: x, deep: Some(Cell::K { n, pos }) }.offset_from_q(c);
    let row = if kind == MapKind::Return || n == 1 {
        GraphRow {
            x,
            value: induced.image_value(image),
            derivative: finite(induced.deriv_local(n, pos)?),
            branch_index: n,
            piece_label: piece.label(),
            x_offset,
            value_offset: Some(induced.image_offset(image)),
        }
    } else {
        let jpos = map.f2_local(n, pos)?;
        GraphRow {
            x,
            value: map.cell_value(Cell::J { n, pos: jpos }),
            derivative: finite(map.f2_deriv_local(n, pos)?),
            branch_index: n,
            piece_label: piece.label(),
            x_offset,
            value_offset: None,
        }
    };
    Ok(row)
}

fn branch_positions(map: &CircleMap, n: usize, pieces: bool, samples: u64) -> Result<Vec<Frac>, CliError> {
    if !pieces || n == 1 {
        return Ok(midpoints(0.0, 1.0, samples).map(Frac::from_left).collect());
    }
    let br = map.induced().branch(n)?;
    let counts = split(samples, 3);
    let l_end = br.p;
    let r_start = 1.0 - br.right_width;
    let mut out: Vec<Frac> = midpoints(0.0, l_end, counts[0]).map(Frac::from_left).collect();
    out.extend(midpoints(l_end, r_start, counts[1]).map(Frac::from_left));
    // the right piece can be far below double resolution in x, so count from the right end
    let k = counts[2];
    out.extend((0..k).map(|j| Frac::Right(br.right_width * (k as f64 - j as f64 - 0.5) / k as f64)));
    Ok(out)
}

fn f1_points(map: &CircleMap, branch: Option<usize>, pieces: bool, samples: u64) -> Vec<f64> {
    let c = map.construction();
    let f1 = map.f1();
    let (lo, hi) = match branch {
        Some(n) if n >= 2 => (c.j_left(n), c.j_right(n)),
        _ => (0.0, c.q()),
    };
    if !pieces {
        return midpoints(lo, hi, samples).collect();
    }
    let mut cuts = vec![lo];
    cuts.extend(f1.junctions().into_iter().filter(|&j| j > lo && j < hi));
    cuts.push(hi);
    let counts = split(samples, cuts.len() - 1);
    cuts.windows(2)
        .zip(counts)
        .flat_map(|(w, k)| midpoints(w[0], w[1], k))
        .collect()
}

/// φ_{a,b} at a structured position of K_a, with the chain-rule derivative.
fn phi_row(map: &CircleMap, a: usize, b: usize, pos: Frac) -> Result<GraphRow, CliError> {
    let c = map.construction();
    let x = map.cell_value(Cell::K { n: a, pos });
    let mut y = map.f2_eval(x)?;
    let mut d = map.f2_deriv_local(a, pos)?;
    for _ in b..a {
        d *= map.f1().deriv(y)?;
        y = map.f1().eval(y)?;
    }
    Ok(GraphRow {
        x,
        value: y,
        derivative: finite(d),
        branch_index: a,
        piece_label: map.induced().eval_local(a, pos)?.1.label(),
        x_offset: CirclePoint { value: x, deep: Some(Cell::K { n: a, pos }) }.offset_from_q(c),
        value_offset: None,
    })
}

fn graph_rows(map: &CircleMap, a: &GraphArgs) -> Result<Vec<GraphRow>, CliError> {
    let c = map.construction();
    let branch = a.branch.map(|n| n as usize);
    match (a.map, branch) {
        (MapKind::Phi, branch) => {
            let (Some(n), Some(to)) = (branch, a.to.map(|b| b as usize)) else {
                return Err(CliError::Usage("--map phi needs --branch a and --to b".into()));
            };
            if to > n {
                return Err(CliError::Usage(format!("--to {to} exceeds --branch {n}")));
            }
            branch_positions(map, n, a.pieces, a.samples)?
                .into_iter()
                .map(|pos| phi_row(map, n, to, pos))
                .collect()
        }
        (MapKind::F1, _) => f1_points(map, branch, a.pieces, a.samples)
            .into_iter()
            .map(|x| f1_row(map, x))
            .collect(),
        (kind, Some(n)) => branch_positions(map, n, a.pieces, a.samples)?
            .into_iter()
            .map(|pos| cell_row(map, kind, n, pos))
            .collect(),
        (MapKind::Circle, None) => midpoints(0.0, 1.0, a.samples)
            .map(|x| {
                if x <= c.q() {
                    f1_row(map, x)
                } else {
                    let (n, pos) = c.locate_i2_frac(x)?;
                    cell_row(map, MapKind::F2, n, pos)
                }
            })
            .collect(),
        (kind, None) => {
            let one_q = 1.0 - c.q();
            midpoints(0.0, 1.0, a.samples)
                .map(|t| {
                    let (n, pos) = c.locate_i2_frac(c.q() + t * one_q)?;
                    cell_row(map, kind, n, pos)
                })
                .collect()
        }
    }
}

pub fn graph(a: &GraphArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let rows = graph_rows(&map, a)?;
    let name = match (a.map, a.branch) {
        (MapKind::F1, None) => "graph_f1.csv".to_string(),
        (MapKind::F1, Some(n)) => format!("graph_f1_j{n}.csv"),
        (MapKind::Return, None) => "graph_F.csv".to_string(),
        (MapKind::Return, Some(n)) => format!("graph_F_k{n}.csv"),
        (MapKind::F2, None) => "graph_f2.csv".to_string(),
        (MapKind::F2, Some(n)) => format!("graph_f2_k{n}.csv"),
        (MapKind::Circle, None) => "graph_f.csv".to_string(),
        (MapKind::Circle, Some(n)) => format!("graph_f_k{n}.csv"),
        (MapKind::Phi, n) => format!("graph_phi_{}_{}.csv", n.unwrap_or(0), a.to.unwrap_or(0)),
    };
    let sink = Sink {
        output: &a.output,
        command: "graph",
        params: Some(&params),
        seed,
        settings: json!({
            "map": a.map,
            "branch": a.branch,
            "to": a.to,
            "pieces": a.pieces,
            "samples": a.samples,
        }),
    };
    sink.primary(&name, Payload::Csv(&rows))
}

// ---------------------------------------------------------------- orbit

#[derive(Debug, Args)]
pub struct OrbitArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Starting point; drawn uniformly from the seed when omitted.
    #[arg(long)]
    x0: Option<f64>,
    /// Number of orbit points.
    #[arg(short = 'n', long = "steps", default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = OrbitModeArg::Structured)]
    mode: OrbitModeArg,
    /// Number of leading points written to the point table.
    #[arg(long, default_value_t = 1000)]
    window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrbitModeArg {
    /// Track cell indices exactly; the default for statistics.
    Structured,
    /// Plain floating-point iteration.
    Plain,
    /// Plain iteration with a 1e-15 uniform kick per step.
    Perturb,
}

impl From<OrbitModeArg> for OrbitMode {
    fn from(m: OrbitModeArg) -> Self {
        match m {
            OrbitModeArg::Structured => OrbitMode::Structured,
            OrbitModeArg::Plain => OrbitMode::Plain,
            OrbitModeArg::Perturb => OrbitMode::Perturb,
        }
    }
}

#[derive(Serialize)]
struct OrbitRow {
    i: usize,
    x: f64,
    /// Cell holding the point (`K` in [q, 1], `J` in [0, q]) when tracked.
    cell: Option<&'static str>,
    branch_index: Option<usize>,
    x_offset: Option<f64>,
}

#[derive(Serialize)]
struct HistogramRow {
    bin: usize,
    lo: f64,
    hi: f64,
    count: u64,
}

pub fn orbit(a: &OrbitArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let mode: OrbitMode = a.mode.into();
    let dynamics = CircleDynamics::new(&map, mode);
    let mut rng = member_rng(seed, 0);
    let state = match a.x0 {
        Some(x) => dynamics.initial(CirclePoint::plain(x))?,
        None => dynamics.random_state(&mut rng)?,
    };
    let x0 = state.value;
    let cfg = OrbitConfig {
        n: a.n,
        delta: a.delta,
        bins: a.bins,
        mode,
        window: a.window,
    };
    let o = dynamics::orbit(&dynamics, state, &cfg, &mut rng)?;
    let c = map.construction();
    let rows: Vec<OrbitRow> = o
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| OrbitRow {
            i,
            x: p.value,
            cell: p.deep.map(|cell| match cell {
                Cell::K { .. } => "K",
                Cell::J { .. } => "J",
            }),
            branch_index: p.deep.map(|cell| cell.index()),
            x_offset: p.offset_from_q(c),
        })
        .collect();
    let bins = o.stats.histogram.len();
    let histogram: Vec<HistogramRow> = o
        .stats
        .histogram
        .iter()
        .enumerate()
        .map(|(bin, &count)| HistogramRow {
            bin,
            lo: bin as f64 / bins as f64,
            hi: (bin + 1) as f64 / bins as f64,
            count,
        })
        .collect();
    let summary = json!({ "x0": x0, "mode": mode, "stats": o.stats });
    let sink = Sink {
        output: &a.output,
        command: "orbit",
        params: Some(&params),
        seed,
        settings: json!({
            "x0": a.x0,
            "n": a.n,
            "delta": a.delta,
            "bins": a.bins,
            "mode": mode,
            "window": a.window,
        }),
    };
    sink.primary("orbit.csv", Payload::Csv(&rows))?;
    sink.extra("histogram.csv", Payload::Csv(&histogram))?;
    sink.extra("orbit.json", Payload::Json(&summary))?;
    if sink.writes_files() {
        print_json(&summary)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- birkhoff

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Number of random starts.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Orbit length N.
    #[arg(short = 'n', long = "steps", default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Debug, Args)]
pub struct BirkhoffArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long, value_enum, default_value_t = OrbitModeArg::Structured)]
    mode: OrbitModeArg,
}

#[derive(Serialize)]
struct CurveRow {
    seed_index: usize,
    x0: f64,
    checkpoint: u64,
    fraction: f64,
}

fn curve_rows(runs: &[BirkhoffResult]) -> Vec<CurveRow> {
    runs.iter()
        .enumerate()
        .flat_map(|(seed_index, r)| {
            r.curve.iter().map(move |&(checkpoint, fraction)| CurveRow {
                seed_index,
                x0: r.x0,
                checkpoint,
                fraction,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CheckpointMedian {
    checkpoint: u64,
    runs: usize,
    median: Option<f64>,
}

fn checkpoint_medians(runs: &[BirkhoffResult]) -> Vec<CheckpointMedian> {
    let longest = runs.iter().max_by_key(|r| r.curve.len());
    let Some(longest) = longest else {
        return Vec::new();
    };
    longest
        .curve
        .iter()
        .enumerate()
        .map(|(k, &(checkpoint, _))| {
            let mut values: Vec<f64> = runs.iter().filter_map(|r| r.curve.get(k).map(|p| p.1)).collect();
            CheckpointMedian {
                checkpoint,
                runs: values.len(),
                median: median(&mut values),
            }
        })
        .collect()
}

fn ensemble_summary(runs: &[BirkhoffResult], e: &EnsembleArgs) -> serde_json::Value {
    let halted: Vec<String> = runs
        .iter()
        .filter_map(|r| r.halted.as_ref().map(|h| h.to_string()))
        .collect();
    let mut finals: Vec<f64> = runs.iter().map(|r| r.fraction).collect();
    json!({
        "seeds": e.seeds,
        "n": e.n,
        "delta": e.delta,
        "median_fraction": median(&mut finals),
        "medians": checkpoint_medians(runs),
        "absorbed_steps": runs.iter().map(|r| r.absorbed).sum::<u64>(),
        "halted": halted,
    })
}

pub fn birkhoff(a: &BirkhoffArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let mode: OrbitMode = a.mode.into();
    let dynamics = CircleDynamics::new(&map, mode);
    let e = &a.ensemble;
    let runs = birkhoff_ensemble(&dynamics, e.seeds as usize, e.n, e.delta, seed)?;
    let mut summary = ensemble_summary(&runs, e);
    summary["mode"] = json!(mode);
    let sink = Sink {
        output: &a.output,
        command: "birkhoff",
        params: Some(&params),
        seed,
        settings: json!({ "seeds": e.seeds, "n": e.n, "delta": e.delta, "mode": mode }),
    };
    sink.primary("birkhoff.csv", Payload::Csv(&curve_rows(&runs)))?;
    sink.extra("birkhoff.json", Payload::Json(&summary))?;
    if sink.writes_files() {
        print_json(&summary)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- basin

#[derive(Debug, Args)]
pub struct BasinArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// A start counts as a hit when its fraction near p reaches this.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = OrbitModeArg::Structured)]
    mode: OrbitModeArg,
}

#[derive(Serialize)]
struct BasinRow {
    seed_index: usize,
    fraction: f64,
    hit: bool,
}

fn basin_output<D: Dynamics>(
    dynamics: &D,
    e: &EnsembleArgs,
    threshold: f64,
    seed: u64,
) -> Result<(Vec<BasinRow>, serde_json::Value), CliError> {
    let est = basin_sample(dynamics, e.seeds as usize, e.n, e.delta, threshold, seed)?;
    let rows = est
        .fractions
        .iter()
        .enumerate()
        .map(|(seed_index, &fraction)| BasinRow {
            seed_index,
            fraction,
            hit: fraction >= threshold,
        })
        .collect();
    let summary = json!({
        "seeds": est.seeds,
        "n": e.n,
        "delta": e.delta,
        "threshold": est.threshold,
        "hits": est.hits,
        "fraction": est.fraction,
        "ci95": [est.ci_low, est.ci_high],
    });
    Ok((rows, summary))
}

pub fn basin(a: &BasinArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let mode: OrbitMode = a.mode.into();
    let dynamics = CircleDynamics::new(&map, mode);
    let (rows, mut summary) = basin_output(&dynamics, &a.ensemble, a.threshold, seed)?;
    summary["mode"] = json!(mode);
    let e = &a.ensemble;
    let sink = Sink {
        output: &a.output,
        command: "basin",
        params: Some(&params),
        seed,
        settings: json!({
            "seeds": e.seeds, "n": e.n, "delta": e.delta, "threshold": a.threshold, "mode": mode,
        }),
    };
    sink.primary("basin.csv", Payload::Csv(&rows))?;
    sink.extra("basin.json", Payload::Json(&summary))?;
    if sink.writes_files() {
        print_json(&summary)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- return-times

#[derive(Debug, Args)]
pub struct ReturnArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Cells K₁ … Kₙ are sampled.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    max_n: u64,
    /// Random points per cell.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    per_cell: u64,
    /// Give up after this many steps of f.
    #[arg(long, default_value_t = DEFAULT_RETURN_CAP)]
    cap: usize,
}

#[derive(Serialize)]
struct ReturnRow {
    n: usize,
    x: f64,
    tau: usize,
    value: f64,
    return_map: f64,
    abs_error: f64,
}

pub fn return_times(a: &ReturnArgs, seed: u64) -> Result<(), CliError> {
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let c = map.construction();
    let mut rng = member_rng(seed, 0);
    let mut rows = Vec::new();
    for n in 1..=a.max_n as usize {
        for _ in 0..a.per_cell {
            // (k_left, k_right]
            let x = c.k_right(n) - rng.random::<f64>() * c.k_width(n);
            if x <= c.k_left(n) {
                continue;
            }
            let (tau, y) = return_time(&map, CirclePoint::plain(x), a.cap)?;
            let expected = map.induced().eval(x)?;
            rows.push(ReturnRow {
                n,
                x,
                tau,
                value: y.value,
                return_map: expected,
                abs_error: (y.value - expected).abs(),
            });
        }
    }
    let mismatches = rows.iter().filter(|r| r.tau != r.n).count();
    let max_error = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    let summary = json!({
        "samples": rows.len(),
        "max_n": a.max_n,
        "tau_mismatches": mismatches,
        "max_abs_error": max_error,
    });
    let sink = Sink {
        output: &a.output,
        command: "return-times",
        params: Some(&params),
        seed,
        settings: json!({ "max_n": a.max_n, "per_cell": a.per_cell, "cap": a.cap }),
    };
    sink.primary("return_times.csv", Payload::Csv(&rows))?;
    sink.extra("return_times.json", Payload::Json(&summary))?;
    if sink.writes_files() {
        print_json(&summary)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Run only these checks (comma separated).
    #[arg(long, value_delimiter = ',')]
    checks: Vec<String>,
    /// JSON file overriding sample sizes and tolerances.
    #[arg(long, value_name = "FILE")]
    verify_config: Option<std::path::PathBuf>,
    /// List the check names and exit.
    #[arg(long)]
    list: bool,
}

pub fn verify(a: &VerifyArgs, seed: u64) -> Result<(), CliError> {
    if a.list {
        for name in verify::check_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let params = a.params.resolve()?;
    let map = build_map(&params)?;
    let mut cfg = match &a.verify_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<VerifyConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => VerifyConfig::default(),
    };
    cfg.seed = seed;
    let reports = if a.checks.is_empty() {
        check_all(&map, &cfg)
    } else {
        let names: Vec<&str> = a.checks.iter().map(String::as_str).collect();
        check_some(&map, &cfg, &names).map_err(|e| CliError::Usage(e.to_string()))?
    };
    let table = verify::render_table(&reports);
    eprint!("{table}");
    let sink = Sink {
        output: &a.output,
        command: "verify",
        params: Some(&params),
        seed,
        settings: json!({ "checks": a.checks, "config": cfg }),
    };
    sink.primary("verify.json", Payload::Json(&reports))?;
    if let Some(dir) = &a.output.out_dir {
        std::fs::write(dir.join("verify.txt"), &table).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let failed = reports.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

// ---------------------------------------------------------------- control

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

pub fn control(a: &ControlArgs, seed: u64) -> Result<(), CliError> {
    let e = &a.ensemble;
    let runs = birkhoff_ensemble(&DoublingMap, e.seeds as usize, e.n, e.delta, seed)?;
    let mut summary = ensemble_summary(&runs, e);
    let baseline = 2.0 * e.delta;
    let se = (baseline * (1.0 - baseline) / e.n as f64).sqrt();
    let med = summary["median_fraction"].as_f64().unwrap_or(f64::NAN);
    summary["baseline"] = json!(baseline);
    summary["binomial_se"] = json!(se);
    summary["median_z"] = json!((med - baseline) / se);
    let (_, basin) = basin_output(&DoublingMap, e, a.threshold, seed)?;
    summary["basin"] = basin;
    let sink = Sink {
        output: &a.output,
        command: "control",
        params: None,
        seed,
        settings: json!({
            "map": "doubling", "seeds": e.seeds, "n": e.n, "delta": e.delta, "threshold": a.threshold,
        }),
    };
    sink.primary("control.csv", Payload::Csv(&curve_rows(&runs)))?;
    sink.extra("control.json", Payload::Json(&summary))?;
    if sink.writes_files() {
        print_json(&summary)?;
    }
    Ok(())
}
