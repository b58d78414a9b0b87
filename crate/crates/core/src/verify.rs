//! The verification suite: every numerically checkable property of a
//! construction, run against a built map and reported as data.
//!
//! Failures are entries in the report, never errors. Checks that do not apply
//! to the variant are listed as skipped, so every report names every check
//! exactly once, in registration order.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{g_eval, DEFAULT_RETURN_CAP, DEFAULT_SEED};
use crate::error::{Error, Result};
use crate::params::{Construction, Frac, Variant};
use crate::realization::{CircleMap, CirclePoint, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub variant: Variant,
    pub status: CheckStatus,
    /// Worst value seen.
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    /// Where the worst value occurred.
    pub location: Option<String>,
    pub notes: String,
}

impl CheckReport {
    fn new(name: &str, variant: Variant) -> Self {
        CheckReport {
            name: name.to_string(),
            variant,
            status: CheckStatus::Pass,
            measured: None,
            tolerance: None,
            location: None,
            notes: String::new(),
        }
    }

    fn skip(name: &str, variant: Variant, reason: impl Into<String>) -> Self {
        CheckReport {
            status: CheckStatus::Skip,
            notes: reason.into(),
            ..CheckReport::new(name, variant)
        }
    }

    fn measure(mut self, measured: f64, tolerance: f64) -> Self {
        self.measured = Some(measured);
        self.tolerance = Some(tolerance);
        self
    }

    fn at(mut self, location: impl Into<String>) -> Self {
        self.location = Some(location.into());
        self
    }

    fn note(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    fn verdict(mut self, ok: bool) -> Self {
        self.status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        self
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

/// Sample sizes and tolerances. Every tolerance used is echoed in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub fd_step: f64,
    pub slope_tol: f64,
    pub return_max_n: usize,
    pub return_samples: usize,
    pub return_tol: f64,
    pub partition_max_n: usize,
    pub partition_tol: f64,
    pub product_upto: usize,
    pub l_image_max_n: usize,
    pub l_image_tol: f64,
    pub gluing_max_n: usize,
    pub gluing_tol: f64,
    pub affine_slope_tol: f64,
    pub expansion_samples: usize,
    pub expansion_max_n: usize,
    pub expansion_tol: f64,
    pub convexity_max_n: usize,
    pub convexity_grid: usize,
    pub convexity_tol: f64,
    pub g_samples: usize,
    pub g_max_n: usize,
    pub h_grid: Vec<f64>,
    pub c1_final_max: f64,
    pub c1_tail_indices: Vec<usize>,
    pub midslope_max_n: usize,
    pub monotone_max_n: usize,
    pub monotone_grid: usize,
    pub monotone_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: DEFAULT_SEED,
            fd_step: 1e-7,
            slope_tol: 1e-6,
            return_max_n: 30,
            return_samples: 200,
            return_tol: 1e-8,
            partition_max_n: 40,
            partition_tol: 1e-12,
            product_upto: 10_000,
            l_image_max_n: 40,
            l_image_tol: 1e-12,
            gluing_max_n: 20,
            gluing_tol: 1e-8,
            affine_slope_tol: 1e-9,
            expansion_samples: 100_000,
            expansion_max_n: 200,
            expansion_tol: 1e-9,
            convexity_max_n: 60,
            convexity_grid: 4000,
            convexity_tol: 1e-12,
            g_samples: 10_000,
            g_max_n: 40,
            h_grid: (2..=8).map(|k| 10f64.powi(-k)).collect(),
            c1_final_max: 1e-2,
            c1_tail_indices: vec![10, 20, 40],
            midslope_max_n: 40,
            monotone_max_n: 40,
            monotone_grid: 2000,
            monotone_tol: 1e-12,
        }
    }
}

type Check = fn(&CircleMap, &VerifyConfig) -> CheckReport;

/// Registered checks, in report order.
pub const CHECKS: [(&str, Check); 14] = [
    ("fixed_point_slope", check_fixed_point_slope),
    ("first_return_identity", check_first_return_identity),
    ("partition_consistency", check_partition_consistency),
    ("pn_product", check_pn_product),
    ("l_image", check_l_image),
    ("gluing", check_gluing),
    ("f_expansion", check_f_expansion),
    ("branch_convexity", check_branch_convexity),
    ("g_expansion", check_g_expansion),
    ("c1_at_q", check_c1_report),
    ("epsilon_constraints", check_epsilon_constraints),
    ("alpha_beta_budget", check_alpha_beta_budget),
    ("midslope_bound", check_midslope_bound),
    ("monotone_full_branch", check_monotone_full_branch),
];

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|(name, _)| *name)
}

/// Runs every registered check; independent checks run in parallel.
pub fn check_all(map: &CircleMap, cfg: &VerifyConfig) -> Vec<CheckReport> {
    CHECKS
        .par_iter()
        .map(|(name, check)| {
            let mut report = check(map, cfg);
            report.name = name.to_string();
            report
        })
        .collect()
}

/// Runs the named checks only, in registration order.
pub fn check_some(map: &CircleMap, cfg: &VerifyConfig, names: &[&str]) -> Result<Vec<CheckReport>> {
    for name in names {
        if !check_names().any(|n| n == *name) {
            return Err(Error::invalid("check", format!("unknown check `{name}`")));
        }
    }
    Ok(CHECKS
        .par_iter()
        .filter(|(name, _)| names.contains(name))
        .map(|(_, check)| check(map, cfg))
        .collect())
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    !reports.iter().any(CheckReport::failed)
}

/// Plain-text table of a report.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut out = format!(
        "{:<24} {:<6} {:>14} {:>12}  {}\n",
        "check", "status", "measured", "tolerance", "location"
    );
    let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:<6} {:>14} {:>12}  {}\n",
            r.name,
            r.status,
            num(r.measured),
            num(r.tolerance),
            r.location.as_deref().unwrap_or("-")
        ));
    }
    out
}

fn rng_for(cfg: &VerifyConfig, check: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(check);
    rng
}

fn failed(name: &str, variant: Variant, e: &Error) -> CheckReport {
    CheckReport::new(name, variant)
        .verdict(false)
        .note(format!("evaluation error: {e}"))
}

/// Tracks the largest value and where it occurred.
struct Worst {
    value: f64,
    location: String,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: 0.0,
            location: String::new(),
        }
    }

    fn min() -> Self {
        Worst {
            value: f64::INFINITY,
            location: String::new(),
        }
    }

    fn max(&mut self, v: f64, loc: impl FnOnce() -> String) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.location = loc();
        }
    }

    fn min_of(&mut self, v: f64, loc: impl FnOnce() -> String) {
        if v < self.value || v.is_nan() {
            self.value = v;
            self.location = loc();
        }
    }
}

/// A uniformly random plain point that lies in `Kₙ` by the locator.
fn random_in_cell(c: &Construction, n: usize, rng: &mut ChaCha8Rng) -> Option<f64> {
    for _ in 0..100 {
        let t: f64 = rng.random();
        let x = c.k_left(n) + t * c.k_width(n);
        if let Ok((m, _)) = c.locate_i2(x) {
            if m == n {
                return Some(x);
            }
        }
    }
    None
}

fn check_fixed_point_slope(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "fixed_point_slope";
    let expected = c.q() / c.b();
    let h = cfg.fd_step;
    let run = || -> Result<(f64, f64)> {
        let analytic = map.f_deriv_plain(0.0)?;
        // the lift near 1 is f(x) − 1
        let fd = (map.f_eval_plain(h)? - (map.f_eval_plain(1.0 - h)? - 1.0)) / (2.0 * h);
        Ok((analytic, fd))
    };
    match run() {
        Ok((analytic, fd)) => {
            let err_a = (analytic - expected).abs() / expected;
            let err_fd = (fd - expected).abs() / expected;
            let worst = err_a.max(err_fd);
            CheckReport::new(name, c.variant())
                .measure(worst, cfg.slope_tol)
                .at(if err_a >= err_fd { "analytic" } else { "central difference" })
                .note(format!(
                    "f'(p) analytic {analytic}, central difference {fd} (h = {h:e}), q/b = {expected}"
                ))
                .verdict(worst <= cfg.slope_tol && expected > 1.0)
        }
        Err(e) => failed(name, c.variant(), &e),
    }
}

fn check_first_return_identity(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "first_return_identity";
    let mut rng = rng_for(cfg, 2);
    let mut worst = Worst::new();
    let mut wrong_tau = 0usize;
    let mut first_wrong = None;
    let mut samples = 0usize;
    let q = c.q();
    for n in 1..=cfg.return_max_n {
        for _ in 0..cfg.return_samples {
            let Some(x) = random_in_cell(c, n, &mut rng) else {
                continue;
            };
            samples += 1;
            let run = || -> Result<(usize, f64, f64)> {
                let mut p = CirclePoint::plain(x);
                for tau in 1..=n + 5 {
                    p = map.f_eval(p)?;
                    if p.value > q {
                        return Ok((tau, p.value, map.induced().eval(x)?));
                    }
                }
                Ok((usize::MAX, p.value, map.induced().eval(x)?))
            };
            match run() {
                Ok((tau, y, big_f)) => {
                    if tau != n {
                        wrong_tau += 1;
                        first_wrong.get_or_insert((n, x, tau));
                    }
                    worst.max((y - big_f).abs(), || format!("n={n}, x={x:.17}"));
                }
                Err(e) => return failed(name, c.variant(), &e),
            }
        }
    }
    let mut notes = format!("{samples} points, n = 1..{}", cfg.return_max_n);
    if let Some((n, x, tau)) = first_wrong {
        notes.push_str(&format!(
            "; {wrong_tau} wrong return times, first at n={n}, x={x}, τ={tau}"
        ));
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, cfg.return_tol)
        .at(worst.location)
        .note(notes)
        .verdict(wrong_tau == 0 && worst.value <= cfg.return_tol)
}

fn check_partition_consistency(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "partition_consistency";
    let d = c.derived();
    let f1 = map.f1();
    let mut worst = Worst::new();
    // K endpoints by repeated contraction towards q
    let mut offset = 1.0 - c.q();
    let mut prev_left = f64::NAN;
    for n in 1..=cfg.partition_max_n {
        let right = c.q() + offset;
        offset = if n == 1 {
            (1.0 - c.q()) * (1.0 - c.b() / c.q())
        } else {
            offset * d.a_eff
        };
        let left = c.q() + offset;
        worst.max((c.k_right(n) - right).abs(), || format!("K_{n} right end"));
        worst.max((c.k_left(n) - left).abs(), || format!("K_{n} left end"));
        if n > 1 {
            worst.max((c.k_right(n) - prev_left).abs(), || format!("K_{n} abuts K_{}", n - 1));
        }
        prev_left = c.k_left(n);
    }
    // J endpoints by repeated inversion of f₁
    for n in 2..=cfg.partition_max_n {
        match (f1.inv_iter(c.q(), n - 1), f1.inv_iter(1.0, n - 1)) {
            (Ok(lo), Ok(hi)) => {
                worst.max((c.j_left(n) - lo).abs(), || format!("J_{n} left end"));
                worst.max((c.j_right(n) - hi).abs(), || format!("J_{n} right end"));
            }
            (Err(e), _) | (_, Err(e)) => return failed(name, c.variant(), &e),
        }
    }
    // geometric tails against summed widths, relative
    let deepest = c.effective_depth_cap();
    let sum_from = |widths: &dyn Fn(usize) -> f64, from: usize| -> f64 {
        (from..=deepest).rev().map(widths).sum()
    };
    let mut tails = Worst::new();
    for n in 1..=cfg.partition_max_n {
        let tail_k = sum_from(&|m| c.k_width(m), n + 1) + c.k_offset_left(deepest);
        tails.max((tail_k / c.k_offset_left(n) - 1.0).abs(), || format!("K tail after n={n}"));
        if n >= 2 {
            let tail_j = sum_from(&|m| c.j_width(m), n + 1) + c.j_left(deepest);
            tails.max((tail_j / c.j_left(n) - 1.0).abs(), || format!("J tail after n={n}"));
        }
    }
    let total_k = sum_from(&|m| c.k_width(m), 1) + c.k_offset_left(deepest);
    let total_j = sum_from(&|m| c.j_width(m), 2) + c.j_left(deepest);
    tails.max((total_k - (1.0 - c.q())).abs(), || "Σ|Kₙ| = 1 − q".into());
    tails.max((total_j - c.q()).abs(), || "Σ|Jₙ| = q".into());
    if tails.value > worst.value {
        worst = tails;
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, cfg.partition_tol)
        .at(worst.location)
        .note(format!(
            "closed-form cells against recursive oracles for n ≤ {}; tails summed to n = {deepest}",
            cfg.partition_max_n
        ))
        .verdict(worst.value <= cfg.partition_tol)
}

fn check_pn_product(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "pn_product";
    let mut log = 0.0;
    for n in 2..=cfg.product_upto {
        match c.p_gap(n) {
            Ok(g) => log += (-g).ln_1p(),
            Err(e) => return failed(name, c.variant(), &e),
        }
    }
    let direct = log.exp();
    let bound = c.p_product_lower_bound();
    let library = c.p_product(cfg.product_upto);
    let agree = (direct - library).abs() <= 1e-12 * direct;
    CheckReport::new(name, c.variant())
        .measure(direct, bound)
        .at(format!("N = {}", cfg.product_upto))
        .note(format!(
            "∏ pₙ for n = 2..N is {direct}; the tolerance is the analytic lower bound"
        ))
        .verdict(direct > 0.0 && direct >= bound && agree)
}

fn check_l_image(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "l_image";
    let induced = map.induced();
    let mut rng = rng_for(cfg, 5);
    let mut worst = Worst::new();
    let mut wrong_cell = 0usize;
    for n in 2..=cfg.l_image_max_n {
        let br = match induced.branch(n) {
            Ok(br) => br,
            Err(e) => return failed(name, c.variant(), &e),
        };
        let below = c.k_offset_left(n);
        let mut probe = |t: f64| -> Result<()> {
            let (im, piece) = induced.eval_local(n, Frac::Left(t))?;
            let d = induced.image_offset(im);
            let expected = below * t / br.p;
            worst.max((d / expected - 1.0).abs(), || format!("n={n}, θ={t:?}, piece {}", piece.label()));
            // past the depth cap is deeper than n as well
            match induced.image_cell(im) {
                Ok((m, _)) if m <= n && t < br.p => wrong_cell += 1,
                Ok(_) | Err(Error::DepthExceeded { .. }) => {}
                Err(e) => return Err(e),
            }
            Ok(())
        };
        let mut ts = vec![br.p, 1e-300, 1e-12];
        ts.extend((0..200).map(|_| rng.random::<f64>() * br.p));
        for t in ts.into_iter().filter(|&t| t > 0.0) {
            if let Err(e) = probe(t) {
                return failed(name, c.variant(), &e);
            }
        }
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, cfg.l_image_tol)
        .at(worst.location)
        .note(format!(
            "F on Lₙ against the affine map onto (q, q + |Kₙ⁻|], n = 2..{}; {wrong_cell} images outside Kₙ⁻",
            cfg.l_image_max_n
        ))
        .verdict(worst.value <= cfg.l_image_tol && wrong_cell == 0)
}

/// Richardson-extrapolated one-sided slope from a secant function `s(h)`.
fn richardson(s: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok(2.0 * s(0.5 * h)? - s(h)?)
}

fn check_gluing(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "gluing";
    let induced = map.induced();
    let gap = c.q() - c.b();
    let mut mismatch = Worst::new();
    let mut affine = Worst::new();
    for n in 2..=cfg.gluing_max_n {
        let run = || -> Result<(f64, f64, f64, f64, f64)> {
            let here = induced.branch(n)?;
            let prev = induced.branch(n - 1)?;
            let m_prev = c.slope_m(n - 1)?;
            let w_n = c.k_width(n);
            let w_p = c.k_width(n - 1);
            let g = 0.25 * here.right_width;
            let theta = 1e-6 * if n - 1 == 1 { 1.0 } else { prev.p };
            // f₂ from the left of zₙ, in Jₙ
            let left = richardson(
                |g| {
                    let pos = map.f2_local(n, Frac::Right(g))?;
                    Ok(pos.right() * c.j_width(n) / (g * w_n))
                },
                g,
            )?;
            // f₂ from the right of zₙ, in Jₙ₋₁
            let right = richardson(
                |t| {
                    let y = if n - 1 == 1 {
                        let (im, _) = induced.eval_local(1, Frac::Left(t))?;
                        induced.image_value(im) - c.q()
                    } else {
                        map.f2_local(n - 1, Frac::Left(t))?.left() * c.j_width(n - 1)
                    };
                    Ok(y / (t * w_p))
                },
                theta,
            )?;
            // φ_{n,2}: the right piece of F|Kₙ pulled back once, affine onto J₂
            let phi_n2 = map.f2_local(n, Frac::Right(g))?.right() * gap / (g * w_n);
            // φ_{n−1,1} = F on the left piece of Kₙ₋₁
            let (im, _) = induced.eval_local(n - 1, Frac::Left(theta))?;
            let phi_p1 = induced.image_offset(im) / (theta * w_p);
            Ok((left, right, phi_n2, phi_p1, m_prev))
        };
        match run() {
            Ok((left, right, phi_n2, phi_p1, m_prev)) => {
                mismatch.max((left - right).abs() / left.abs(), || {
                    format!("z_{n}: f₂' left {left:e}, right {right:e}")
                });
                affine.max((phi_n2 / m_prev - 1.0).abs(), || format!("φ_{{{n},2}} at z_{n}"));
                affine.max((phi_p1 / m_prev - 1.0).abs(), || format!("φ_{{{},1}} at z_{n}", n - 1));
            }
            Err(e) => return failed(name, c.variant(), &e),
        }
    }
    let ok = mismatch.value <= cfg.gluing_tol && affine.value <= cfg.affine_slope_tol;
    let (value, tol, loc) = if mismatch.value / cfg.gluing_tol >= affine.value / cfg.affine_slope_tol {
        (mismatch.value, cfg.gluing_tol, mismatch.location)
    } else {
        (affine.value, cfg.affine_slope_tol, affine.location)
    };
    CheckReport::new(name, c.variant())
        .measure(value, tol)
        .at(loc)
        .note(format!(
            "n = 2..{}: one-sided f₂' mismatch {:e} (tol {:e}); glued affine slopes vs mₙ₋₁ {:e} (tol {:e})",
            cfg.gluing_max_n, mismatch.value, cfg.gluing_tol, affine.value, cfg.affine_slope_tol
        ))
        .verdict(ok)
}

fn check_f_expansion(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "f_expansion";
    if c.variant() != Variant::Full {
        return CheckReport::skip(name, c.variant(), "Full variant only; see g_expansion");
    }
    let induced = map.induced();
    let d = c.derived();
    let bound = d.mn_base;
    let max_n = cfg.expansion_max_n.min(induced.deep_cap()).max(2);
    let mut rng = rng_for(cfg, 7);
    let mut worst = Worst::min();
    let mut errors = 0usize;
    let (k_lo, k_hi) = (c.q(), c.k_left(1));
    for i in 0..cfg.expansion_samples {
        // half plain points of ⋃_{n≥2} Kₙ, half structured points of a random cell
        let (n, pos) = if i % 2 == 0 {
            let x = k_lo + rng.random::<f64>() * (k_hi - k_lo);
            match c.locate_i2_frac(x) {
                Ok(cell) if cell.0 >= 2 => cell,
                _ => continue,
            }
        } else {
            (rng.random_range(2..=max_n), Frac::from_left(rng.random()))
        };
        match induced.deriv_local(n, pos) {
            Ok(v) => worst.min_of(v, || format!("n={n}, θ={:?}", pos.left())),
            Err(_) => errors += 1,
        }
    }
    let k1 = induced.deriv_local(1, Frac::Left(0.5));
    let k1_ok = matches!(k1, Ok(s) if (s - d.m1).abs() <= 1e-12 * d.m1 && d.m1 > 1.0);
    CheckReport::new(name, c.variant())
        .measure(worst.value, bound - cfg.expansion_tol)
        .at(worst.location)
        .note(format!(
            "{} samples over ⋃_{{n≥2}} Kₙ (n ≤ {max_n}), bound (a⁻¹ − 1)⁻¹ = {bound}; on K₁ the slope is q/b = {} ({}); {errors} evaluation errors",
            cfg.expansion_samples,
            d.m1,
            if k1_ok { "confirmed" } else { "MISMATCH" }
        ))
        .verdict(worst.value >= bound - cfg.expansion_tol && k1_ok && errors == 0)
}

/// Ordered sample positions across a branch, refined around its junctions.
/// Junctions near the right end are placed by their gap to it.
fn branch_grid(br: &crate::induced_map::FBranch, count: usize) -> Vec<Frac> {
    let mut out: Vec<Frac> = (1..count)
        .map(|i| Frac::from_left(i as f64 / count as f64))
        .collect();
    let mut gaps = vec![br.p_gap, br.right_width];
    if let crate::induced_map::Middle::Corner { t_star, h, .. } = br.middle {
        gaps.extend([br.p_gap - t_star + h, br.p_gap - t_star - h]);
    }
    for &g in &gaps {
        for k in 1..40 {
            let e = 2f64.powi(-k);
            out.push(Frac::from_gaps(1.0 - g * (1.0 + e), g * (1.0 + e), 1.0));
            out.push(Frac::from_gaps(1.0 - g * (1.0 - e), g * (1.0 - e), 1.0));
        }
    }
    // log-spaced across the right end, where the inner pieces crowd
    let top = (2.0 * br.p_gap).min(0.5);
    let bottom = br.right_width * 1e-20;
    for i in 0..=count {
        let g = bottom * (top / bottom).powf(i as f64 / count as f64);
        out.push(Frac::Right(g));
    }
    out.retain(|f| f.left() > 0.0 && f.right() > 0.0);
    out.sort_by(|a, b| frac_order(*a, *b));
    out.dedup();
    out
}

/// Left-to-right order of positions, exact whenever each is in its accurate
/// form (`Left` in the left half, `Right` in the right half).
fn frac_order(a: Frac, b: Frac) -> std::cmp::Ordering {
    match (a, b) {
        (Frac::Left(s), Frac::Left(t)) => s.total_cmp(&t),
        (Frac::Right(g), Frac::Right(h)) => h.total_cmp(&g),
        _ => a.left().total_cmp(&b.left()),
    }
}

fn check_branch_convexity(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "branch_convexity";
    if c.variant() != Variant::Full {
        return CheckReport::skip(name, c.variant(), "Full variant only");
    }
    let induced = map.induced();
    let mut worst = Worst::new();
    for n in 2..=cfg.convexity_max_n {
        let br = match induced.branch(n) {
            Ok(br) => br,
            Err(e) => return failed(name, c.variant(), &e),
        };
        let grid = branch_grid(&br, cfg.convexity_grid);
        let mut prev: Option<(f64, f64)> = None;
        for pos in grid {
            let v = match induced.deriv_local(n, pos) {
                Ok(v) => v,
                Err(e) => return failed(name, c.variant(), &e),
            };
            let t = pos.left();
            if let Some((pt, pv)) = prev {
                let drop = (pv - v) / pv;
                worst.max(drop, || format!("n={n}, between θ={pt} and θ={t:?}"));
            }
            prev = Some((t, v));
        }
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, cfg.convexity_tol)
        .at(worst.location)
        .note(format!(
            "largest relative decrease of F' along each branch, n = 2..{}",
            cfg.convexity_max_n
        ))
        .verdict(worst.value <= cfg.convexity_tol)
}

fn check_g_expansion(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "g_expansion";
    if c.variant() != Variant::Physical {
        return CheckReport::skip(name, c.variant(), "Physical variant only; see f_expansion");
    }
    let mut rng = rng_for(cfg, 9);
    let mut worst = Worst::min();
    let mut errors = Vec::new();
    for _ in 0..cfg.g_samples {
        let n = rng.random_range(2..=cfg.g_max_n.max(2));
        let pos = Frac::from_left(rng.random());
        match g_eval(map, n, pos, DEFAULT_RETURN_CAP) {
            Ok(g) => worst.min_of(g.derivative, || {
                format!("n={n}, θ={:?}, τ={}", pos.left(), g.tau)
            }),
            Err(e) => errors.push(e),
        }
    }
    let mut notes = format!(
        "chain-rule G' over {} samples of ⋃_{{n=2}}^{{{}}} Kₙ",
        cfg.g_samples, cfg.g_max_n
    );
    if let Some(e) = errors.first() {
        notes.push_str(&format!("; {} evaluation errors, first: {e}", errors.len()));
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, 1.0)
        .at(worst.location)
        .note(notes)
        .verdict(worst.value > 1.0 && errors.is_empty())
}

/// Regularity of `f` at `q` for the Physical variant: difference quotients
/// and `f₂'` decay towards `q`, the left derivative vanishes, and the ratio
/// of `Jₙ` tails to `Kₙ` tails decays.
pub fn check_c1_at_q(map: &CircleMap, h_grid: &[f64], cfg: &VerifyConfig) -> Result<CheckReport> {
    let c = map.construction();
    let name = "c1_at_q";
    if c.variant() != Variant::Physical {
        return Err(Error::VariantMismatch {
            op: "check_C1_at_q",
            expected: "physical",
        });
    }
    let q = c.q();
    let mut quotients = Vec::with_capacity(h_grid.len());
    let mut derivs = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let x = q + h;
        let hh = x - q;
        quotients.push(map.f_eval_plain(x)? / hh);
        derivs.push(map.f_deriv_plain(x)?);
    }
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let left = map.f_deriv_one_sided(q, Side::Left)?;
    let left_near: Vec<f64> = h_grid
        .iter()
        .map(|&h| map.f_deriv_plain(q - h))
        .collect::<Result<_>>()?;
    let tails: Vec<f64> = cfg
        .c1_tail_indices
        .iter()
        .map(|&n| c.j_left(n) / c.k_offset_left(n))
        .collect();
    let first = quotients.first().copied().unwrap_or(f64::NAN);
    let last_q = quotients.last().copied().unwrap_or(f64::NAN);
    let last_d = derivs.last().copied().unwrap_or(f64::NAN);
    let mut problems = Vec::new();
    if !decreasing(&quotients) {
        problems.push("difference quotients not decreasing");
    }
    if !(first >= 10.0 * last_q) {
        problems.push("difference quotients decay by less than 10×");
    }
    if !decreasing(&derivs) {
        problems.push("f₂' not decreasing");
    }
    if !(last_q < cfg.c1_final_max && last_d < cfg.c1_final_max) {
        problems.push("final value not below the bound");
    }
    if left != 0.0 || !decreasing(&left_near) {
        problems.push("left derivative not zero");
    }
    if !decreasing(&tails) {
        problems.push("tail ratio |J|/|K| not decreasing");
    }
    let worst = last_q.max(last_d);
    Ok(CheckReport::new(name, c.variant())
        .measure(worst, cfg.c1_final_max)
        .at(format!("h = {:e}", h_grid.last().copied().unwrap_or(f64::NAN)))
        .note(format!(
            "f(q+h)/h = {quotients:?}; f₂'(q+h) = {derivs:?}; f'(q⁻) = {left}; tail ratios at n = {:?}: {tails:?}{}",
            cfg.c1_tail_indices,
            if problems.is_empty() {
                String::new()
            } else {
                format!("; {}", problems.join(", "))
            }
        ))
        .verdict(problems.is_empty()))
}

fn check_c1_report(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let v = map.variant();
    match check_c1_at_q(map, &cfg.h_grid, cfg) {
        Ok(r) => r,
        Err(Error::VariantMismatch { .. }) => CheckReport::skip(
            "c1_at_q",
            v,
            "Physical variant only; the Full map has f'(q⁻) = ∞",
        ),
        Err(e) => failed("c1_at_q", v, &e),
    }
}

fn check_epsilon_constraints(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "epsilon_constraints";
    if c.variant() != Variant::Physical {
        return CheckReport::skip(name, c.variant(), "Physical variant only");
    }
    let induced = map.induced();
    let run = || -> Result<(f64, f64, f64, f64, f64)> {
        // measured on the built branches
        let b2 = induced.branch(2)?;
        let r2 = b2.right_width * b2.width;
        let m2 = b2.middle_width * b2.width;
        let half_k1 = 0.5 * c.k_width(1);
        let k2_over_m2 = c.k_width(2) / m2;
        let bound = 2.0 * c.derived().mn_base;
        let mut widest = 0.0f64;
        for n in 3..=cfg.midslope_max_n {
            let br = induced.branch(n)?;
            widest = widest.max(br.right_width * br.width / r2);
        }
        Ok((r2, half_k1, k2_over_m2, bound, widest))
    };
    match run() {
        Ok((r2, half_k1, k2_over_m2, bound, widest)) => {
            let first = 1.0 - r2 / half_k1;
            let second = k2_over_m2 / bound - 1.0;
            let (value, loc) = if first <= second {
                (first, "|R₂| < |K₁|/2")
            } else {
                (second, "|K₂|/|M₂| > 2(a⁻¹ − 1)⁻¹")
            };
            let general = widest <= 1.0 + 1e-12;
            let loc = if !general { "|Rₙ| ≤ |R₂|" } else { loc };
            CheckReport::new(name, c.variant())
                .measure(value, 0.0)
                .at(loc)
                .note(format!(
                    "relative margins (positive holds): |R₂| = {r2:e} vs |K₁|/2 = {half_k1:e} → {first:e}; |K₂|/|M₂| = {k2_over_m2} vs {bound} → {second:e}; max |Rₙ|/|R₂| for n ≥ 3 is {widest}"
                ))
                .verdict(first > 0.0 && second > 0.0 && general)
        }
        Err(e) => failed(name, c.variant(), &e),
    }
}

fn check_alpha_beta_budget(map: &CircleMap, _cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "alpha_beta_budget";
    if c.variant() != Variant::Physical {
        return CheckReport::skip(name, c.variant(), "Physical variant only");
    }
    let p = c.params();
    let (alpha, beta) = (p.alpha_or_default(), p.beta_or_default());
    let budget = 2.0 * alpha + 2.0 * beta;
    let alpha_ok = alpha > 0.0 && alpha < 0.5;
    CheckReport::new(name, c.variant())
        .measure(budget, 1.0)
        .at(if alpha_ok { "2α + 2β < 1" } else { "α ∈ (0, 1/2)" })
        .note(format!("α = {alpha}, β = {beta}"))
        .verdict(budget < 1.0 && alpha_ok && beta > 0.0)
}

fn check_midslope_bound(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "midslope_bound";
    if c.variant() != Variant::Physical {
        return CheckReport::skip(name, c.variant(), "Physical variant only");
    }
    let induced = map.induced();
    let bound = 2.0 * c.derived().mn_base;
    let mut worst = Worst::min();
    let mut steepest = true;
    for n in 2..=cfg.midslope_max_n {
        let run = || -> Result<(f64, bool)> {
            let ratio = induced.middle_ratio(n)?;
            let br = induced.branch(n)?;
            Ok((ratio, ratio > br.slope_left))
        };
        match run() {
            Ok((ratio, steep)) => {
                worst.min_of(ratio, || format!("n={n}"));
                steepest &= steep;
            }
            Err(e) => return failed(name, c.variant(), &e),
        }
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, bound)
        .at(worst.location)
        .note(format!(
            "min |F(Mₙ)|/|Mₙ| over n = 2..{} against 2(a⁻¹ − 1)⁻¹{}",
            cfg.midslope_max_n,
            if steepest { "" } else { "; middle piece not the steepest" }
        ))
        .verdict(worst.value > bound && steepest)
}

fn check_monotone_full_branch(map: &CircleMap, cfg: &VerifyConfig) -> CheckReport {
    let c = map.construction();
    let name = "monotone_full_branch";
    let induced = map.induced();
    let f1 = map.f1();
    let mut worst = Worst::new();
    let mut violations = 0usize;
    let run = |worst: &mut Worst, violations: &mut usize| -> Result<()> {
        // f₁ : [0, q] → [0, 1]
        worst.max(f1.eval(0.0)?.abs(), || "f₁(0)".into());
        worst.max((f1.eval(c.q())? - 1.0).abs(), || "f₁(q)".into());
        worst.max((f1.eval(c.b())? - c.q()).abs(), || "f₁(b)".into());
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=cfg.monotone_grid * 4 {
            let x = c.q() * i as f64 / (cfg.monotone_grid * 4) as f64;
            let y = f1.eval(x)?;
            if y <= prev {
                *violations += 1;
            }
            prev = y;
        }
        // K₁ → [q, 1]
        let (lo, _) = induced.eval_local(1, Frac::Left(0.0))?;
        let (hi, _) = induced.eval_local(1, Frac::Right(0.0))?;
        worst.max(induced.image_offset(lo).abs(), || "F(K₁) left end".into());
        worst.max((induced.image_value(hi) - 1.0).abs(), || "F(K₁) right end".into());
        // Kₙ → Jₙ, in Jₙ coordinates
        for n in 2..=cfg.monotone_max_n {
            let lo = map.f2_local(n, Frac::Left(0.0))?;
            let hi = map.f2_local(n, Frac::Right(0.0))?;
            worst.max(lo.left().abs(), || format!("f₂(K_{n}) left end"));
            worst.max(hi.right().abs(), || format!("f₂(K_{n}) right end"));
            let br = induced.branch(n)?;
            let mut prev: Option<Frac> = None;
            for pos in branch_grid(&br, cfg.monotone_grid) {
                let j = map.f2_local(n, pos)?;
                if let Some(before) = prev {
                    if frac_order(j, before) == std::cmp::Ordering::Less {
                        *violations += 1;
                    }
                }
                prev = Some(j);
            }
        }
        Ok(())
    };
    if let Err(e) = run(&mut worst, &mut violations) {
        return failed(name, c.variant(), &e);
    }
    CheckReport::new(name, c.variant())
        .measure(worst.value, cfg.monotone_tol)
        .at(worst.location)
        .note(format!(
            "f₁ onto [0, 1] and f₂|Kₙ onto Jₙ for n ≤ {}; {violations} monotonicity violations",
            cfg.monotone_max_n
        ))
        .verdict(worst.value <= cfg.monotone_tol && violations == 0)
}
