//! Construction parameters, derived constants and closed-form access to the
//! partitions of both branches.
//!
//! The inducing domain `I₂ = [q, 1]` is cut into cells `Kₙ` accumulating at
//! `q` from the right; the first branch's domain `[0, q]` is cut into the
//! pullbacks `Jₙ = f₁^{-(n-1)}(I₂)` accumulating at `0`. Every cell is
//! half-open on the left, `(left, right]`, so each point of `(q, 1]` (resp.
//! `(0, q]`) lies in exactly one cell. Nothing is tabulated: every endpoint is
//! evaluated from its closed form on demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_N_MAX: usize = 400;
pub const DEFAULT_TOL_ROOT: f64 = 1e-14;
pub const DEFAULT_TOL_GLUE: f64 = 1e-8;
pub const DEFAULT_DEPTH_CAP: usize = 2000;

pub const DEFAULT_FULL_A: f64 = 0.7;
pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_EPSILON: f64 = 0.04;

/// Smallest cell offset `r·aⁿ⁻¹` we are willing to form explicitly.
const OFFSET_FLOOR: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Physical,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Physical => "physical",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "physical" => Ok(Variant::Physical),
            other => Err(Error::invalid(
                "variant",
                format!("expected `full` or `physical`, got `{other}`"),
            )),
        }
    }
}

/// Rule producing the ratios `pₙ = |Lₙ|/|Kₙ|` of the Full variant.
///
/// Any nondecreasing sequence in `(0, 1)` tending to one with a positive
/// infinite product is admissible; both rules below are of the form
/// `pₙ = 1 − c·ρⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PRule {
    /// `pₙ = 1 − 2⁻ⁿ`.
    #[default]
    Dyadic,
    /// `pₙ = 1 − scale·ratioⁿ`.
    Geometric { scale: f64, ratio: f64 },
}

impl PRule {
    fn scale_ratio(self) -> (f64, f64) {
        match self {
            PRule::Dyadic => (1.0, 0.5),
            PRule::Geometric { scale, ratio } => (scale, ratio),
        }
    }
}

/// User-facing parameter set; this is also the JSON schema read by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionParams {
    pub variant: Variant,
    pub q: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_tol_root")]
    pub tol_root: f64,
    #[serde(default = "default_tol_glue")]
    pub tol_glue: f64,
    #[serde(skip)]
    pub p_rule: PRule,
}

fn default_n_max() -> usize {
    DEFAULT_N_MAX
}
fn default_tol_root() -> f64 {
    DEFAULT_TOL_ROOT
}
fn default_tol_glue() -> f64 {
    DEFAULT_TOL_GLUE
}

impl ConstructionParams {
    /// Full variant with the given `q`, `b` and ratio `a`.
    pub fn full(q: f64, b: f64, a: f64) -> Self {
        ConstructionParams {
            variant: Variant::Full,
            q,
            b,
            a: Some(a),
            alpha: None,
            beta: None,
            epsilon: None,
            n_max: DEFAULT_N_MAX,
            tol_root: DEFAULT_TOL_ROOT,
            tol_glue: DEFAULT_TOL_GLUE,
            p_rule: PRule::Dyadic,
        }
    }

    pub fn physical(q: f64, b: f64, alpha: f64, beta: f64, epsilon: f64) -> Self {
        ConstructionParams {
            variant: Variant::Physical,
            q,
            b,
            a: None,
            alpha: Some(alpha),
            beta: Some(beta),
            epsilon: Some(epsilon),
            n_max: DEFAULT_N_MAX,
            tol_root: DEFAULT_TOL_ROOT,
            tol_glue: DEFAULT_TOL_GLUE,
            p_rule: PRule::Dyadic,
        }
    }

    /// `q = 1/2, b = 3/8, a = 0.7`.
    pub fn full_default() -> Self {
        Self::full(0.5, 0.375, DEFAULT_FULL_A)
    }

    /// `q = 0.4, b = 0.3, α = 0.25, β = 0.2, ε = 0.04`.
    pub fn physical_default() -> Self {
        Self::physical(0.4, 0.3, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_EPSILON)
    }

    pub fn a_or_default(&self) -> f64 {
        self.a.unwrap_or(DEFAULT_FULL_A)
    }
    pub fn alpha_or_default(&self) -> f64 {
        self.alpha.unwrap_or(DEFAULT_ALPHA)
    }
    pub fn beta_or_default(&self) -> f64 {
        self.beta.unwrap_or(DEFAULT_BETA)
    }
    pub fn epsilon_or_default(&self) -> f64 {
        self.epsilon.unwrap_or(DEFAULT_EPSILON)
    }

    /// Copy with every optional field of the active variant filled in.
    pub fn resolved(&self) -> Self {
        let mut p = self.clone();
        match p.variant {
            Variant::Full => {
                p.a = Some(self.a_or_default());
                p.alpha = None;
                p.beta = None;
                p.epsilon = None;
            }
            Variant::Physical => {
                p.a = None;
                p.alpha = Some(self.alpha_or_default());
                p.beta = Some(self.beta_or_default());
                p.epsilon = Some(self.epsilon_or_default());
            }
        }
        p
    }
}

/// Constants derived once at validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// Distance from `q` to the left endpoint of `K₁`.
    pub r: f64,
    /// Geometric ratio of the cells `Kₙ`.
    pub a_eff: f64,
    /// Slope of `f₁` on `[0, b]`, also the slope of `F` on `K₁`.
    pub m1: f64,
    /// Exponent of the convex upper piece of `f₁` (Full only).
    pub s: Option<f64>,
    /// `(a⁻¹ − 1)⁻¹`, the limit of the slopes `mₙ`.
    pub mn_base: f64,
    /// `b/q`, the contraction of `f₁⁻¹` on `[0, q]`.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
    /// Membership in `(lo, hi]`.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x <= self.hi
    }
}

/// Position inside a cell as a fraction of its width, measured from
/// whichever end it is close to so that tiny distances keep full relative
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Frac {
    /// Fraction measured from the left endpoint.
    Left(f64),
    /// Fraction measured back from the right endpoint.
    Right(f64),
}

impl Frac {
    /// Builds a position from both gaps, keeping the smaller one.
    pub fn from_gaps(left: f64, right: f64, width: f64) -> Frac {
        if left <= right {
            Frac::Left(left / width)
        } else {
            Frac::Right(right / width)
        }
    }

    pub fn from_left(t: f64) -> Frac {
        if t > 0.5 {
            Frac::Right(1.0 - t)
        } else {
            Frac::Left(t)
        }
    }

    pub fn left(self) -> f64 {
        match self {
            Frac::Left(t) => t,
            Frac::Right(g) => 1.0 - g,
        }
    }

    pub fn right(self) -> f64 {
        match self {
            Frac::Left(t) => 1.0 - t,
            Frac::Right(g) => g,
        }
    }
}

/// Sub-pieces of a cell `Kₙ`, `n ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubSplits {
    /// The affine piece `Lₙ` sharing the left endpoint.
    pub l: Interval,
    /// The middle piece `Mₙ`, when it has a fixed width (Physical).
    pub m: Option<Interval>,
    /// The right piece (`Rₙ` for Physical, `Uₙ` for Full once the branch is built).
    pub right: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub n: usize,
    pub k_left: f64,
    pub k_right: f64,
    /// Right endpoint, the gluing point of consecutive branches of `f₂`.
    pub z_n: f64,
    /// `k_left − q`, evaluated without cancellation.
    pub offset_left: f64,
    /// `k_right − q`.
    pub offset_right: f64,
    pub width: f64,
    pub splits: Option<SubSplits>,
}

/// Validates `params` and returns the derived constants.
pub fn validate(params: &ConstructionParams) -> Result<DerivedConstants> {
    check_structure(params)?;
    let derived = derive(params);
    match params.variant {
        Variant::Full => validate_full(params, &derived)?,
        Variant::Physical => validate_physical(params, &derived)?,
    }
    Ok(derived)
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} is not finite")))
    }
}

/// Checks needed for the derived constants to make sense at all; the
/// construction-specific inequalities live in `validate_*`.
fn check_structure(p: &ConstructionParams) -> Result<()> {
    finite("q", p.q)?;
    finite("b", p.b)?;
    if p.variant == Variant::Physical && !(p.q > 0.0 && p.q < 0.5) {
        return Err(Error::invalid("q", "physical variant requires q < 1/2"));
    }
    if !(p.q > 0.0 && p.q < 1.0) {
        return Err(Error::invalid("q", format!("q = {} must lie in (0, 1)", p.q)));
    }
    if !(p.b > 0.0 && p.b < p.q) {
        return Err(Error::invalid(
            "b",
            format!("b = {} must lie in (0, q) = (0, {})", p.b, p.q),
        ));
    }
    if p.n_max < 2 {
        return Err(Error::invalid("n_max", "n_max must be at least 2"));
    }
    if !(p.tol_root > 0.0 && p.tol_root < 1e-3) {
        return Err(Error::invalid("tol_root", "tol_root must lie in (0, 1e-3)"));
    }
    if !(p.tol_glue > 0.0) {
        return Err(Error::invalid("tol_glue", "tol_glue must be positive"));
    }
    match p.variant {
        Variant::Full => {
            let a = p.a_or_default();
            finite("a", a)?;
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::invalid("a", format!("a = {a} must lie in (0, 1)")));
            }
            let (scale, ratio) = p.p_rule.scale_ratio();
            if !(ratio > 0.0 && ratio < 1.0 && scale > 0.0 && scale * ratio * ratio < 1.0) {
                return Err(Error::invalid(
                    "p_rule",
                    "rule must satisfy 0 < ratio < 1 and 0 < scale·ratio² < 1",
                ));
            }
        }
        Variant::Physical => {
            let (alpha, beta, eps) = (
                p.alpha_or_default(),
                p.beta_or_default(),
                p.epsilon_or_default(),
            );
            finite("alpha", alpha)?;
            finite("beta", beta)?;
            finite("epsilon", eps)?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::invalid("alpha", "alpha must lie in (0, 1)"));
            }
            if !(beta > 0.0) {
                return Err(Error::invalid("beta", "beta must be positive"));
            }
            let rho = p.b / p.q;
            if !(eps > 0.0 && 2.0 * eps * rho.powf(2.0 * beta) < 1.0) {
                return Err(Error::invalid(
                    "epsilon",
                    "epsilon must be positive with p₂ = 1 − 2ε(b/q)^{2β} > 0",
                ));
            }
        }
    }
    Ok(())
}

fn derive(p: &ConstructionParams) -> DerivedConstants {
    let (q, b) = (p.q, p.b);
    let rho = b / q;
    let r = (1.0 - q) * (1.0 - rho);
    let a_eff = match p.variant {
        Variant::Full => p.a_or_default(),
        Variant::Physical => rho.powf(p.alpha_or_default()),
    };
    let s = match p.variant {
        Variant::Full => Some(q * (q - b) / (b * (1.0 - q))),
        Variant::Physical => None,
    };
    DerivedConstants {
        r,
        a_eff,
        m1: q / b,
        s,
        mn_base: a_eff / (1.0 - a_eff),
        rho,
    }
}

fn validate_full(p: &ConstructionParams, d: &DerivedConstants) -> Result<()> {
    let s = d.s.expect("full variant has an exponent");
    if !(p.b > p.q * p.q) {
        return Err(Error::invalid(
            "b",
            format!(
                "the closed-form upper piece of f₁ needs b ∈ (q², q) so that its exponent \
                 s = q(q−b)/(b(1−q)) is below 1; got s = {s:.6}"
            ),
        ));
    }
    let a = d.a_eff;
    if !(a > 0.5 && a < 1.0) {
        return Err(Error::invalid("a", format!("a = {a} must lie in (1/2, 1)")));
    }
    Ok(())
}

fn validate_physical(p: &ConstructionParams, d: &DerivedConstants) -> Result<()> {
    let alpha = p.alpha_or_default();
    let beta = p.beta_or_default();
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid("alpha", format!("alpha = {alpha} must lie in (0, 1/2)")));
    }
    if !(d.a_eff > 0.5) {
        return Err(Error::invalid(
            "alpha",
            format!("(b/q)^alpha = {} must exceed 1/2", d.a_eff),
        ));
    }
    if !(2.0 * alpha + 2.0 * beta < 1.0) {
        return Err(Error::invalid(
            "beta",
            format!("2·alpha + 2·beta = {} must be below 1", 2.0 * (alpha + beta)),
        ));
    }
    let margins = epsilon_margins_of(p, d);
    if !(margins.r2_vs_k1 > 0.0) {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "|R₂| < |K₁|/2 fails by {:e} (|R₂| = {:e}, |K₁|/2 = {:e})",
                -margins.r2_vs_k1, margins.r2, margins.half_k1
            ),
        ));
    }
    if !(margins.k2_over_m2 > 0.0) {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "|K₂|/|M₂| > 2(a⁻¹ − 1)⁻¹ fails by {:e} (ratio {}, bound {})",
                -margins.k2_over_m2, margins.ratio, margins.bound
            ),
        ));
    }
    Ok(())
}

/// The two smallness conditions on `ε`, with their margins (positive means
/// satisfied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonMargins {
    pub r2: f64,
    pub half_k1: f64,
    /// `|K₁|/2 − |R₂|`.
    pub r2_vs_k1: f64,
    pub ratio: f64,
    pub bound: f64,
    /// `|K₂|/|M₂| − 2(a⁻¹ − 1)⁻¹`.
    pub k2_over_m2: f64,
}

fn epsilon_margins_of(p: &ConstructionParams, d: &DerivedConstants) -> EpsilonMargins {
    let eps = p.epsilon_or_default();
    let beta = p.beta_or_default();
    let side = eps * d.rho.powf(2.0 * beta);
    let k2 = d.r * (1.0 - d.a_eff);
    let k1 = (1.0 - p.q) * d.rho;
    let r2 = side * k2;
    let ratio = 1.0 / side;
    let bound = 2.0 * d.mn_base;
    EpsilonMargins {
        r2,
        half_k1: 0.5 * k1,
        r2_vs_k1: 0.5 * k1 - r2,
        ratio,
        bound,
        k2_over_m2: ratio - bound,
    }
}

/// A parameter set together with its derived constants, offering indexed
/// access to every partition.
#[derive(Debug, Clone)]
pub struct Construction {
    params: ConstructionParams,
    derived: DerivedConstants,
    ln_a: f64,
    ln_rho: f64,
    depth_cap: usize,
    validated: bool,
}

impl Construction {
    pub fn new(params: ConstructionParams) -> Result<Self> {
        let params = params.resolved();
        let derived = validate(&params)?;
        Ok(Self::assemble(params, derived, true))
    }

    /// Skips the construction inequalities (but not the structural checks
    /// the formulas need). Used to build deliberately broken maps.
    pub fn new_unchecked(params: ConstructionParams) -> Result<Self> {
        let params = params.resolved();
        check_structure(&params)?;
        let derived = derive(&params);
        Ok(Self::assemble(params, derived, false))
    }

    fn assemble(params: ConstructionParams, derived: DerivedConstants, validated: bool) -> Self {
        Construction {
            ln_a: derived.a_eff.ln(),
            ln_rho: derived.rho.ln(),
            params,
            derived,
            depth_cap: DEFAULT_DEPTH_CAP,
            validated,
        }
    }

    pub fn with_depth_cap(mut self, cap: usize) -> Self {
        self.depth_cap = cap.max(2);
        self
    }

    pub fn params(&self) -> &ConstructionParams {
        &self.params
    }
    pub fn derived(&self) -> &DerivedConstants {
        &self.derived
    }
    pub fn variant(&self) -> Variant {
        self.params.variant
    }
    pub fn q(&self) -> f64 {
        self.params.q
    }
    pub fn b(&self) -> f64 {
        self.params.b
    }
    pub fn is_validated(&self) -> bool {
        self.validated
    }
    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    /// Hard cap on cell indices handed out by the locators.
    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    /// Deepest index whose cell offsets stay comfortably inside the normal
    /// double range; beyond it orbits use the affine deep-branch model.
    pub fn effective_depth_cap(&self) -> usize {
        let d = &self.derived;
        let n_floor = 1.0 + (OFFSET_FLOOR / d.r).ln() / self.ln_a;
        let n_floor = if n_floor.is_finite() && n_floor > 2.0 {
            n_floor as usize
        } else {
            usize::MAX
        };
        self.depth_cap.min(n_floor)
    }

    fn check_index(n: usize, min: usize) -> Result<()> {
        if n < min {
            Err(Error::IndexOutOfRange { index: n, min })
        } else {
            Ok(())
        }
    }

    fn a_pow(&self, k: usize) -> f64 {
        self.derived.a_eff.powi(k as i32)
    }

    fn rho_pow(&self, k: usize) -> f64 {
        self.derived.rho.powi(k as i32)
    }

    /// `1 − pₙ`, evaluated directly so it stays accurate when `pₙ ≈ 1`.
    pub fn p_gap(&self, n: usize) -> Result<f64> {
        Self::check_index(n, 2)?;
        Ok(match self.variant() {
            Variant::Full => {
                let (scale, ratio) = self.params.p_rule.scale_ratio();
                scale * ratio.powi(n as i32)
            }
            Variant::Physical => 2.0 * self.side_fraction(n),
        })
    }

    /// `pₙ = |Lₙ|/|Kₙ|`.
    pub fn p_ratio(&self, n: usize) -> Result<f64> {
        Ok(1.0 - self.p_gap(n)?)
    }

    /// Physical only: `ε(b/q)^{nβ} = |Mₙ|/|Kₙ| = |Rₙ|/|Kₙ|`.
    pub fn side_fraction(&self, n: usize) -> f64 {
        let eps = self.params.epsilon_or_default();
        let beta = self.params.beta_or_default();
        eps * (n as f64 * beta * self.ln_rho).exp()
    }

    /// Slope of `F` on `K₁` (`n = 1`) or on `Lₙ` (`n ≥ 2`).
    pub fn slope_m(&self, n: usize) -> Result<f64> {
        Self::check_index(n, 1)?;
        if n == 1 {
            return Ok(self.derived.m1);
        }
        Ok(self.derived.mn_base / self.p_ratio(n)?)
    }

    /// `Kₙ` offset of the left endpoint from `q`: `r·aⁿ⁻¹` (`r` for `n = 1`).
    pub fn k_offset_left(&self, n: usize) -> f64 {
        if n <= 1 {
            self.derived.r
        } else {
            self.derived.r * self.a_pow(n - 1)
        }
    }

    pub fn k_offset_right(&self, n: usize) -> f64 {
        if n <= 1 {
            1.0 - self.q()
        } else {
            self.derived.r * self.a_pow(n - 2)
        }
    }

    /// `|Kₙ|`.
    pub fn k_width(&self, n: usize) -> f64 {
        if n <= 1 {
            (1.0 - self.q()) * self.derived.rho
        } else {
            self.derived.r * self.a_pow(n - 2) * (1.0 - self.derived.a_eff)
        }
    }

    pub fn k_left(&self, n: usize) -> f64 {
        self.q() + self.k_offset_left(n)
    }

    pub fn k_right(&self, n: usize) -> f64 {
        if n <= 1 {
            1.0
        } else {
            self.q() + self.k_offset_right(n)
        }
    }

    pub fn cell_k(&self, n: usize) -> Result<PartitionCell> {
        Self::check_index(n, 1)?;
        let width = self.k_width(n);
        let k_left = self.k_left(n);
        let k_right = self.k_right(n);
        let splits = if n >= 2 {
            let p = self.p_ratio(n)?;
            let l_end = k_left + p * width;
            match self.variant() {
                Variant::Full => Some(SubSplits {
                    l: Interval::new(k_left, l_end),
                    m: None,
                    right: None,
                }),
                Variant::Physical => {
                    let side = self.side_fraction(n) * width;
                    let r_start = k_right - side;
                    Some(SubSplits {
                        l: Interval::new(k_left, l_end),
                        m: Some(Interval::new(l_end, r_start)),
                        right: Some(Interval::new(r_start, k_right)),
                    })
                }
            }
        } else {
            None
        };
        Ok(PartitionCell {
            n,
            k_left,
            k_right,
            z_n: k_right,
            offset_left: self.k_offset_left(n),
            offset_right: self.k_offset_right(n),
            width,
            splits,
        })
    }

    /// Left endpoint of `Jₙ`: `b·ρⁿ⁻²` for `n ≥ 2`, `q` for `n = 1`.
    pub fn j_left(&self, n: usize) -> f64 {
        if n <= 1 {
            self.q()
        } else {
            self.b() * self.rho_pow(n - 2)
        }
    }

    pub fn j_right(&self, n: usize) -> f64 {
        match n {
            0 | 1 => 1.0,
            2 => self.q(),
            _ => self.b() * self.rho_pow(n - 3),
        }
    }

    pub fn j_width(&self, n: usize) -> f64 {
        match n {
            0 | 1 => 1.0 - self.q(),
            2 => self.q() - self.b(),
            _ => self.b() * self.rho_pow(n - 3) * (1.0 - self.derived.rho),
        }
    }

    /// `Jₙ = f₁^{-(n-1)}(I₂)`.
    pub fn cell_j(&self, n: usize) -> Result<Interval> {
        Self::check_index(n, 1)?;
        Ok(Interval::new(self.j_left(n), self.j_right(n)))
    }

    /// Index and local offset (`x − k_left`) of the cell `Kₙ ∋ x`.
    pub fn locate_i2(&self, x: f64) -> Result<(usize, f64)> {
        let q = self.q();
        if !(x > q && x <= 1.0) {
            return Err(Error::OutOfDomain {
                op: "locate_I2",
                x,
                domain: "(q, 1]",
            });
        }
        let mut n = self.guess_k_index(x - q);
        if n > 1 && x > self.k_right(n) {
            n -= 1;
        } else if x <= self.k_left(n) {
            n += 1;
        }
        if n > self.depth_cap {
            return Err(Error::DepthExceeded {
                depth: n,
                cap: self.depth_cap,
            });
        }
        Ok((n, x - self.k_left(n)))
    }

    /// Position of a plain coordinate in its cell `Kₙ`.
    pub fn locate_i2_frac(&self, x: f64) -> Result<(usize, Frac)> {
        let (n, local) = self.locate_i2(x)?;
        let right = self.k_right(n) - x;
        Ok((n, Frac::from_gaps(local, right, self.k_width(n))))
    }

    fn guess_k_index(&self, d: f64) -> usize {
        let r = self.derived.r;
        if d > r {
            return 1;
        }
        let t = (d / r).ln() / self.ln_a;
        if !t.is_finite() || t < 0.0 {
            return 2;
        }
        let t = t.floor();
        if t > (usize::MAX / 4) as f64 {
            usize::MAX / 4
        } else {
            2 + t as usize
        }
    }

    /// Locates the point `q + d` from its offset `d ∈ (0, 1 − q]`, which may
    /// be far smaller than the spacing of doubles near `q`.
    pub fn locate_offset(&self, d: f64) -> Result<(usize, Frac)> {
        if !(d > 0.0 && d <= 1.0 - self.q()) {
            return Err(Error::OutOfDomain {
                op: "locate_offset",
                x: d,
                domain: "(0, 1 − q]",
            });
        }
        let mut n = self.guess_k_index(d);
        if n > 1 && d > self.k_offset_right(n) {
            n -= 1;
        } else if d <= self.k_offset_left(n) {
            n += 1;
        }
        if n > self.depth_cap {
            return Err(Error::DepthExceeded {
                depth: n,
                cap: self.depth_cap,
            });
        }
        let left = d - self.k_offset_left(n);
        let right = self.k_offset_right(n) - d;
        Ok((n, Frac::from_gaps(left, right, self.k_width(n))))
    }

    /// Locates the point at relative position `v ∈ (0, 1]` of `Kₙ⁻ = (q, k_left(n)]`
    /// without forming `r·aⁿ⁻¹·v`, so it works at any depth.
    pub fn locate_below(&self, n: usize, v: f64) -> Result<(usize, Frac)> {
        Self::check_index(n, 1)?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::OutOfDomain {
                op: "locate_below",
                x: v,
                domain: "(0, 1]",
            });
        }
        if n == 1 {
            return self.locate_offset(self.derived.r * v);
        }
        let a = self.derived.a_eff;
        // v ∈ (a^j, a^{j−1}] lands in K_{n+j}
        let mut j = {
            let t = v.ln() / self.ln_a;
            if t.is_finite() && t > 0.0 {
                (t.ceil() as usize).max(1)
            } else {
                1
            }
        };
        let mut w = v / a.powi(j as i32 - 1);
        if w > 1.0 {
            j -= 1;
            w = v / a.powi(j as i32 - 1);
        } else if w <= a {
            j += 1;
            w = v / a.powi(j as i32 - 1);
        }
        let depth = n + j;
        if depth > self.depth_cap {
            return Err(Error::DepthExceeded {
                depth,
                cap: self.depth_cap,
            });
        }
        // inside K_{n+j}, position (w − a)/(1 − a)
        Ok((depth, Frac::from_gaps(w - a, 1.0 - w, 1.0 - a)))
    }

    /// Index and position of the cell `Jₙ ∋ y` for `y ∈ (0, q]`.
    pub fn locate_j(&self, y: f64) -> Result<(usize, Frac)> {
        let (q, b) = (self.q(), self.b());
        if !(y > 0.0 && y <= q) {
            return Err(Error::OutOfDomain {
                op: "locate_J",
                x: y,
                domain: "(0, q]",
            });
        }
        let mut n = if y > b {
            2
        } else {
            let t = (y / b).ln() / self.ln_rho;
            if t.is_finite() && t >= 0.0 {
                3 + (t.floor() as usize).min(usize::MAX / 4)
            } else {
                3
            }
        };
        if n > 2 && y > self.j_right(n) {
            n -= 1;
        } else if y <= self.j_left(n) {
            n += 1;
        }
        let left = y - self.j_left(n);
        let right = self.j_right(n) - y;
        Ok((n, Frac::from_gaps(left, right, self.j_width(n))))
    }

    /// Margins of both smallness conditions on `ε` (Physical only).
    pub fn epsilon_margins(&self) -> Result<EpsilonMargins> {
        match self.variant() {
            Variant::Physical => Ok(epsilon_margins_of(&self.params, &self.derived)),
            Variant::Full => Err(Error::VariantMismatch {
                op: "epsilon_margins",
                expected: "physical",
            }),
        }
    }

    /// `∏_{n=2}^{N} pₙ`, accumulated in log space.
    pub fn p_product(&self, upto: usize) -> f64 {
        let mut log = 0.0;
        for n in 2..=upto {
            log += (-self.p_gap(n).unwrap_or(0.0)).ln_1p();
        }
        log.exp()
    }

    /// Lower bound `exp(−2 Σ_{n≥2} (1 − pₙ))` on the infinite product, valid
    /// because every `1 − pₙ ≤ 1/2`.
    pub fn p_product_lower_bound(&self) -> f64 {
        let tail = match self.variant() {
            Variant::Full => {
                let (scale, ratio) = self.params.p_rule.scale_ratio();
                scale * ratio * ratio / (1.0 - ratio)
            }
            Variant::Physical => {
                let beta = self.params.beta_or_default();
                let eps = self.params.epsilon_or_default();
                let g = self.derived.rho.powf(beta);
                2.0 * eps * g * g / (1.0 - g)
            }
        };
        (-2.0 * tail).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> Construction {
        Construction::new(ConstructionParams::full_default()).unwrap()
    }

    fn physical() -> Construction {
        Construction::new(ConstructionParams::physical_default()).unwrap()
    }

    #[test]
    fn full_defaults_derive_expected_constants() {
        let c = full();
        let d = c.derived();
        assert!((d.r - 0.125).abs() < 1e-15);
        assert!((d.m1 - 4.0 / 3.0).abs() < 1e-15);
        assert!((d.s.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.mn_base - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn exponent_matches_c1_condition_at_b() {
        // solve (1−q)s/(q−b) = q/b for s by bisection, independently of the closed form
        let (q, b) = (0.5, 0.375);
        let (mut lo, mut hi) = (0.0f64, 5.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (1.0 - q) * mid / (q - b) < q / b {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((full().derived().s.unwrap() - lo).abs() < 1e-12);
    }

    #[test]
    fn rejects_b_below_q_squared() {
        let err = Construction::new(ConstructionParams::full(0.5, 0.2, 0.7)).unwrap_err();
        match err {
            Error::InvalidParam { field, reason } => {
                assert_eq!(field, "b");
                assert!(reason.contains("s = 1.500000"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn physical_defaults_accepted() {
        let c = physical();
        let d = c.derived();
        assert!((d.a_eff - 0.75f64.powf(0.25)).abs() < 1e-15);
        assert!((d.a_eff - 0.930605).abs() < 1e-6);
        assert!((d.r - 0.15).abs() < 1e-15);
        let m = c.epsilon_margins().unwrap();
        // direct evaluation of both inequalities
        let side = 0.04 * 0.75f64.powf(0.4);
        let k2 = 0.15 * (1.0 - d.a_eff);
        assert!(side * k2 < 0.5 * 0.45);
        assert!(1.0 / side > 2.0 * d.a_eff / (1.0 - d.a_eff));
        assert!(m.r2_vs_k1 > 0.0 && m.k2_over_m2 > 0.0);
    }

    #[test]
    fn physical_requires_q_below_half() {
        let mut p = ConstructionParams::physical_default();
        p.q = 0.5;
        p.b = 0.375;
        let err = Construction::new(p).unwrap_err();
        assert_eq!(
            err,
            Error::InvalidParam {
                field: "q".into(),
                reason: "physical variant requires q < 1/2".into()
            }
        );
    }

    #[test]
    fn physical_rejects_large_epsilon_with_margin() {
        let mut p = ConstructionParams::physical_default();
        p.epsilon = Some(0.1);
        let err = Construction::new(p).unwrap_err();
        match err {
            Error::InvalidParam { field, reason } => {
                assert_eq!(field, "epsilon");
                assert!(reason.contains("fails by"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn physical_rejects_exponent_budget() {
        let mut p = ConstructionParams::physical_default();
        p.beta = Some(0.3);
        assert!(matches!(
            Construction::new(p),
            Err(Error::InvalidParam { field, .. }) if field == "beta"
        ));
    }

    #[test]
    fn p_ratio_values() {
        let c = physical();
        let expected = 1.0 - 0.08 * 0.75f64.powf(0.4);
        assert!((c.p_ratio(2).unwrap() - expected).abs() < 1e-15);
        assert!((c.p_ratio(2).unwrap() - 0.92870).abs() < 1e-5);
        assert_eq!(full().p_ratio(2).unwrap(), 0.75);
        assert!(matches!(
            c.p_ratio(1),
            Err(Error::IndexOutOfRange { index: 1, min: 2 })
        ));
        for c in [full(), physical()] {
            for n in 2..c.n_max() {
                assert!(c.p_ratio(n).unwrap() <= c.p_ratio(n + 1).unwrap());
                if c.p_gap(n + 1).unwrap() > 1e-16 {
                    assert!(c.p_ratio(n).unwrap() < c.p_ratio(n + 1).unwrap());
                }
            }
        }
    }

    #[test]
    fn slopes() {
        let c = full();
        assert!((c.slope_m(1).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((c.slope_m(200).unwrap() - 7.0 / 3.0).abs() < 1e-12);
        for c in [full(), physical()] {
            let base = c.derived().mn_base;
            let mut prev = f64::INFINITY;
            for n in 2..=c.n_max() {
                let m = c.slope_m(n).unwrap();
                assert!(m >= base && m > 1.0);
                assert!(m <= prev);
                prev = m;
            }
            // endpoint arithmetic: |Kₙ⁻| / |Lₙ|
            for n in 2..=50 {
                let cell = c.cell_k(n).unwrap();
                let l = cell.splits.unwrap().l;
                let l_len = (l.hi - cell.k_left) + 0.0;
                let below = cell.offset_left;
                let l_len_offsets = c.p_ratio(n).unwrap() * (cell.offset_right - cell.offset_left);
                let m = c.slope_m(n).unwrap();
                assert!(((below / l_len_offsets) - m).abs() / m < 1e-12, "n={n}");
                // plain endpoints lose digits with depth; still agree loosely
                assert!(((below / l_len) - m).abs() / m < 1e-6, "n={n}");
            }
        }
    }

    #[test]
    fn cells_full_defaults() {
        let c = full();
        let k1 = c.cell_k(1).unwrap();
        assert_eq!((k1.k_left, k1.k_right), (0.625, 1.0));
        let k2 = c.cell_k(2).unwrap();
        assert!((k2.k_left - 0.5875).abs() < 1e-15);
        assert_eq!(k2.k_right, 0.625);
        assert!(matches!(c.cell_k(0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn cells_abut_bit_for_bit() {
        for c in [full(), physical()] {
            for n in 1..c.n_max() {
                let a = c.cell_k(n).unwrap();
                let b = c.cell_k(n + 1).unwrap();
                assert_eq!(b.k_right.to_bits(), a.k_left.to_bits());
                assert!(b.k_left < b.k_right || b.width < 4.0 * f64::EPSILON);
                assert_eq!(c.j_right(n + 2).to_bits(), c.j_left(n + 1).to_bits());
            }
        }
    }

    #[test]
    fn width_matches_length_formula() {
        for c in [full(), physical()] {
            let (r, a) = (c.derived().r, c.derived().a_eff);
            for n in 2..=c.n_max() {
                let expected = r * (a.powi(-2) - a.powi(-1)) * a.powi(n as i32);
                let w = c.k_width(n);
                assert!((w - expected).abs() <= 1e-15 * expected.abs() * 4.0, "n={n}");
            }
        }
    }

    #[test]
    fn l_fraction_is_p_ratio() {
        for c in [full(), physical()] {
            for n in 2..=c.n_max() {
                let w = c.k_width(n);
                let l = c.p_ratio(n).unwrap() * w;
                assert!((l / w - c.p_ratio(n).unwrap()).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn physical_side_pieces_fill_cell() {
        let c = physical();
        let eps = 0.04;
        for n in 2..60 {
            let cell = c.cell_k(n).unwrap();
            let sp = cell.splits.unwrap();
            let m = sp.m.unwrap();
            let r = sp.right.unwrap();
            let side = eps * (c.b() / c.q()).powf(n as f64 * 0.2) * cell.width;
            assert!((r.len() - side).abs() < 1e-12 * cell.width.max(1e-300) + 1e-16);
            assert!((m.len() - side).abs() < 1e-9 * side + 2e-16);
            assert!((sp.l.len() + m.len() + r.len() - cell.width).abs() < 4e-16);
        }
    }

    #[test]
    fn telescoping_k_sum() {
        for c in [full(), physical()] {
            for big_n in [1usize, 2, 5, 40, 400] {
                let mut sum = 0.0;
                let mut comp = 0.0;
                for n in 1..=big_n {
                    let y = c.k_width(n) - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                let tail = c.derived().r * c.derived().a_eff.powi(big_n as i32 - 1);
                assert!((sum + tail - (1.0 - c.q())).abs() < 1e-15, "N={big_n}");
            }
        }
    }

    #[test]
    fn j_cells() {
        let c = full();
        let j2 = c.cell_j(2).unwrap();
        assert_eq!((j2.lo, j2.hi), (0.375, 0.5));
        let j3 = c.cell_j(3).unwrap();
        assert!((j3.lo - 0.28125).abs() < 1e-16 && j3.hi == 0.375);
        assert_eq!(c.cell_j(1).unwrap(), Interval::new(0.5, 1.0));
        for c in [full(), physical()] {
            let (q, rho) = (c.q(), c.derived().rho);
            for n in 2..40 {
                let j = c.cell_j(n).unwrap();
                assert!((j.lo - q * rho.powi(n as i32 - 1)).abs() < 1e-15);
                assert!((j.hi - q * rho.powi(n as i32 - 2)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn locate_examples() {
        let c = full();
        assert_eq!(c.locate_i2(1.0).unwrap().0, 1);
        assert_eq!(c.locate_i2(0.6).unwrap().0, 2);
        assert_eq!(c.locate_i2(0.625).unwrap().0, 2);
        assert!(matches!(c.locate_i2(0.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(c.locate_i2(1.5), Err(Error::OutOfDomain { .. })));
        let shallow = full().with_depth_cap(10);
        let x = shallow.k_left(12) + 0.5 * shallow.k_width(12);
        assert!(matches!(
            shallow.locate_i2(x),
            Err(Error::DepthExceeded { cap: 10, .. })
        ));
    }

    #[test]
    fn locate_endpoints_belong_to_left_cell() {
        for c in [full(), physical()] {
            for n in 1..80 {
                let (m, _) = c.locate_i2(c.k_right(n)).unwrap();
                assert_eq!(m, n);
                let (m, f) = c.locate_offset(c.k_offset_right(n)).unwrap();
                assert_eq!(m, n);
                assert_eq!(f, Frac::Right(0.0));
            }
        }
    }

    #[test]
    fn locate_below_matches_offset() {
        let c = physical();
        for n in 2..30 {
            for &v in &[1.0, 0.9, 0.5, 0.123, 1e-3, 1e-7] {
                let (m1, f1) = c.locate_below(n, v).unwrap();
                let (m2, f2) = c.locate_offset(c.k_offset_left(n) * v).unwrap();
                assert_eq!(m1, m2, "n={n} v={v}");
                assert!((f1.left() - f2.left()).abs() < 1e-9, "n={n} v={v}");
            }
        }
    }

    #[test]
    fn product_of_ratios_bounded() {
        for c in [full(), physical()] {
            let prod = c.p_product(10_000);
            let bound = c.p_product_lower_bound();
            assert!(bound > 0.0);
            assert!(prod >= bound, "{prod} < {bound}");
            assert!(c.p_product(100) >= prod);
        }
    }

    #[test]
    fn json_schema_rejects_unknown_keys() {
        let ok: ConstructionParams =
            serde_json::from_str(r#"{"variant":"full","q":0.5,"b":0.375,"a":0.7}"#).unwrap();
        assert_eq!(ok.n_max, DEFAULT_N_MAX);
        assert!(serde_json::from_str::<ConstructionParams>(
            r#"{"variant":"full","q":0.5,"b":0.375,"bogus":1}"#
        )
        .is_err());
    }
}
