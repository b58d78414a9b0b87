//! The induced map `F : [q, 1] → [q, 1]`, one full branch per cell `Kₙ`.
//!
//! `F|K₁` is affine with slope `q/b`. For `n ≥ 2` the branch is built from
//! three pieces in the local coordinate `θ ∈ [0, 1]` of `Kₙ`:
//!
//! * `Lₙ = [0, pₙ]`: affine onto `Kₙ⁻ = (q, q + r·aⁿ⁻¹]`, slope `mₙ`.
//! * right piece: a rescaled copy of `f₁` near `q`, so that the branch leaves
//!   `Kₙ` through `zₙ` with the same local slope `mₙ₋₁` that the next cell
//!   enters with. Full: `Uₙ`, `F(x) = f₁(q − mₙ₋₁(zₙ − x))`. Physical: `Rₙ`,
//!   `F(x) = 1 − (mₙ₋₁(zₙ − x))²`.
//! * a middle connector. Full: the two tangent lines at the ends of the gap
//!   joined by a parabolic corner, which keeps the branch convex. Physical:
//!   affine with linear derivative ramps of width `|Mₙ|/8` at both ends.
//!
//! Branches are built lazily and cached; the cache is safe to share.

use std::sync::OnceLock;

use serde::Serialize;

use crate::branch_f1::F1Evaluator;
use crate::error::{Error, Result};
use crate::params::{Construction, ConstructionParams, Frac, Interval, Variant};

const MAX_SHRINK: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Piece {
    K1,
    L,
    M,
    U,
    R,
}

impl Piece {
    pub fn label(self) -> &'static str {
        match self {
            Piece::K1 => "K1",
            Piece::L => "L",
            Piece::M => "M",
            Piece::U => "U",
            Piece::R => "R",
        }
    }
}

/// A value of `F`, kept in whichever form is accurate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Image {
    /// `q + v·|Kₙ⁻|`, the image of `Lₙ`.
    Below { n: usize, v: f64 },
    /// `q + d`.
    Offset(f64),
    /// `1 − g`.
    Top(f64),
    /// `f₁(q − σ)`.
    F1Gap(f64),
}

/// Position inside a cell with both distances to its ends, plus the exact
/// distance to the right end when the caller has one.
#[derive(Debug, Clone, Copy)]
struct Local {
    left: f64,
    right: f64,
    abs_right: Option<f64>,
}

impl Local {
    /// Decided on whichever distance is the accurate one.
    fn in_left_piece(&self, br: &FBranch) -> bool {
        if self.left <= self.right {
            self.left <= br.p
        } else {
            self.right >= br.p_gap
        }
    }

    fn from_frac(pos: Frac) -> Self {
        Local {
            left: pos.left(),
            right: pos.right(),
            abs_right: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Middle {
    /// `K₁`: no inner pieces.
    None,
    /// Tangent lines from both ends meeting in a parabolic corner.
    Corner {
        t_star: f64,
        h: f64,
        s_b: f64,
        d_b: f64,
        g_b: f64,
    },
    /// Straight chord between the ends, used with convexity repair disabled.
    Chord { slope: f64, g_b: f64 },
    /// Affine with derivative ramps.
    Ramp {
        h: f64,
        s_mid: f64,
        s_r: f64,
        g_r: f64,
    },
}

/// One branch `F|Kₙ`. Slopes with a `θ` are with respect to the local
/// coordinate; divide by `width` for slopes in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FBranch {
    pub n: usize,
    pub width: f64,
    /// `|Kₙ⁻| = r·aⁿ⁻¹`.
    pub below: f64,
    pub p: f64,
    /// `1 − pₙ`.
    pub p_gap: f64,
    /// `mₙ`.
    pub slope_left: f64,
    /// `mₙ₋₁`, the scale of the right piece.
    pub slope_prev: f64,
    /// `θ`-width of the right piece.
    pub right_width: f64,
    /// `θ`-width of the middle piece.
    pub middle_width: f64,
    /// How many times the right piece was halved to restore convexity.
    pub shrink_steps: usize,
    pub middle: Middle,
}

impl FBranch {
    /// Derivative in `θ` on `Lₙ`.
    fn s_l(&self) -> f64 {
        self.below / self.p
    }

    /// Sub-piece intervals in plain coordinates, given the cell endpoints.
    pub fn pieces(&self, k_left: f64, k_right: f64, variant: Variant) -> Vec<(Piece, Interval)> {
        if self.n == 1 {
            return vec![(Piece::K1, Interval::new(k_left, k_right))];
        }
        let l_end = k_left + self.p * self.width;
        let r_start = k_right - self.right_width * self.width;
        let right = match variant {
            Variant::Full => Piece::U,
            Variant::Physical => Piece::R,
        };
        vec![
            (Piece::L, Interval::new(k_left, l_end)),
            (Piece::M, Interval::new(l_end, r_start)),
            (right, Interval::new(r_start, k_right)),
        ]
    }
}

#[derive(Debug)]
pub struct InducedMap {
    c: Construction,
    f1: F1Evaluator,
    convexity_repair: bool,
    cache: Vec<OnceLock<Result<FBranch>>>,
    deep_cap: OnceLock<usize>,
}

impl Clone for InducedMap {
    fn clone(&self) -> Self {
        InducedMap::from_parts(self.c.clone(), self.f1, self.convexity_repair)
    }
}

impl InducedMap {
    pub fn new(params: ConstructionParams) -> Result<Self> {
        let c = Construction::new(params)?;
        let f1 = F1Evaluator::new(&c)?;
        Ok(Self::from_parts(c, f1, true))
    }

    pub fn from_parts(c: Construction, f1: F1Evaluator, convexity_repair: bool) -> Self {
        let slots = c.depth_cap() + 1;
        InducedMap {
            c,
            f1,
            convexity_repair,
            cache: (0..slots).map(|_| OnceLock::new()).collect(),
            deep_cap: OnceLock::new(),
        }
    }

    pub fn construction(&self) -> &Construction {
        &self.c
    }

    pub fn f1(&self) -> &F1Evaluator {
        &self.f1
    }

    pub fn convexity_repair(&self) -> bool {
        self.convexity_repair
    }

    /// Deepest index up to which every branch can be built in double
    /// precision, capped by [`Construction::effective_depth_cap`].
    pub fn deep_cap(&self) -> usize {
        *self.deep_cap.get_or_init(|| {
            let cap = self.c.effective_depth_cap();
            (2..=cap)
                .find(|&n| self.with_branch(n, |_| ()).is_err())
                .map_or(cap, |n| n - 1)
        })
    }

    /// The cached branch on `Kₙ`.
    pub fn branch(&self, n: usize) -> Result<FBranch> {
        match self.cache.get(n) {
            Some(slot) => slot.get_or_init(|| self.build_branch(n)).clone(),
            None => self.build_branch(n),
        }
    }

    fn with_branch<T>(&self, n: usize, f: impl FnOnce(&FBranch) -> T) -> Result<T> {
        match self.cache.get(n) {
            Some(slot) => match slot.get_or_init(|| self.build_branch(n)) {
                Ok(br) => Ok(f(br)),
                Err(e) => Err(e.clone()),
            },
            None => self.build_branch(n).map(|br| f(&br)),
        }
    }

    /// Builds `F|Kₙ` from scratch.
    pub fn build_branch(&self, n: usize) -> Result<FBranch> {
        if n == 0 {
            return Err(Error::IndexOutOfRange { index: 0, min: 1 });
        }
        let c = &self.c;
        let width = c.k_width(n);
        if n == 1 {
            return Ok(FBranch {
                n,
                width,
                below: c.derived().r,
                p: 1.0,
                p_gap: 0.0,
                slope_left: c.derived().m1,
                slope_prev: c.derived().m1,
                right_width: 0.0,
                middle_width: 0.0,
                shrink_steps: 0,
                middle: Middle::None,
            });
        }
        if !(width > 0.0) {
            return Err(Error::ConstructionFailed {
                n,
                reason: "cell width underflows".into(),
            });
        }
        let p_gap = c.p_gap(n)?;
        let base = FBranch {
            n,
            width,
            below: c.k_offset_left(n),
            p: 1.0 - p_gap,
            p_gap,
            slope_left: c.slope_m(n)?,
            slope_prev: c.slope_m(n - 1)?,
            right_width: 0.0,
            middle_width: 0.0,
            shrink_steps: 0,
            middle: Middle::None,
        };
        match c.variant() {
            Variant::Full => self.build_full(base),
            Variant::Physical => self.build_physical(base),
        }
    }

    fn build_full(&self, mut br: FBranch) -> Result<FBranch> {
        let one_q = 1.0 - self.c.q();
        let gap_qb = self.c.q() - self.c.b();
        let scale = br.slope_prev * br.width;
        let s_l = br.s_l();
        let d_a = br.below;
        let mut u = (0.5 * br.p_gap).min(0.5 * gap_qb / scale);
        let mut step = 0;
        if self.convexity_repair {
            // Jump straight to the halving that makes the right piece's entry
            // slope exceed twice the steepest possible chord; f₁' is a power
            // law there, so the count is explicit.
            let s = self.c.derived().s.expect("full variant has an exponent");
            let target = 4.0 * (one_q - d_a) / br.p_gap;
            let amp = one_q * s / gap_qb * scale;
            let ln_u = (gap_qb / scale).ln() + (target.ln() - amp.ln()) / (s - 1.0);
            let needed = (u.ln() - ln_u) / std::f64::consts::LN_2;
            if needed > 0.0 {
                step = needed.ceil() as usize;
                u *= 0.5f64.powi(step as i32);
            }
        }
        for _ in 0..=MAX_SHRINK {
            let sigma_b = scale * u;
            if !(sigma_b >= f64::MIN_POSITIVE * 1e16) {
                return Err(Error::ConstructionFailed {
                    n: br.n,
                    reason: "the right piece needed for convexity is below double resolution"
                        .into(),
                });
            }
            let g_b = self.f1.top_gap(sigma_b);
            let d_b = one_q - g_b;
            let s_b = self.f1.deriv_at_gap(sigma_b) * scale;
            let len = br.p_gap - u;
            let chord = (d_b - d_a) / len;
            br.right_width = u;
            br.middle_width = len;
            br.shrink_steps = step;
            if !self.convexity_repair {
                br.middle = Middle::Chord { slope: chord, g_b };
                return Ok(br);
            }
            if s_l < chord && chord < s_b {
                let t_star = (s_b * len - (d_b - d_a)) / (s_b - s_l);
                let h = t_star.min(len - t_star);
                br.middle = Middle::Corner {
                    t_star,
                    h,
                    s_b,
                    d_b,
                    g_b,
                };
                return Ok(br);
            }
            u *= 0.5;
            step += 1;
        }
        Err(Error::ConstructionFailed {
            n: br.n,
            reason: format!("no convex connector after {MAX_SHRINK} halvings of the right piece"),
        })
    }

    fn build_physical(&self, mut br: FBranch) -> Result<FBranch> {
        let n = br.n;
        let one_q = 1.0 - self.c.q();
        let e = self.c.side_fraction(n);
        let cap = self.f1.cap_width().expect("physical f₁ has a cap");
        let sigma_max = br.slope_prev * e * br.width;
        if sigma_max > cap {
            return Err(Error::ConstructionFailed {
                n,
                reason: format!(
                    "right piece reaches σ = {sigma_max:e} beyond the quadratic cap of f₁ (u = {cap:e})"
                ),
            });
        }
        let g_r = sigma_max * sigma_max;
        let d_r = one_q - g_r;
        let h = e / 8.0;
        let s_l = br.s_l();
        let s_r = 2.0 * br.slope_prev * br.slope_prev * br.width * br.width * e;
        let s_mid = (d_r - br.below - h * (s_l + s_r) / 2.0) / (e - h);
        if !(s_mid > 0.0) {
            return Err(Error::ConstructionFailed {
                n,
                reason: format!("middle slope {s_mid:e} is not positive"),
            });
        }
        br.right_width = e;
        br.middle_width = e;
        br.middle = Middle::Ramp { h, s_mid, s_r, g_r };
        Ok(br)
    }

    fn eval_branch(&self, br: &FBranch, pos: Local) -> (Image, Piece) {
        let one_q = 1.0 - self.c.q();
        if br.n == 1 {
            return if pos.left <= pos.right {
                (Image::Offset(pos.left * one_q), Piece::K1)
            } else {
                (Image::Top(pos.right * one_q), Piece::K1)
            };
        }
        if pos.in_left_piece(br) {
            return (
                Image::Below {
                    n: br.n,
                    v: pos.left / br.p,
                },
                Piece::L,
            );
        }
        let right_piece = match self.c.variant() {
            Variant::Full => Piece::U,
            Variant::Physical => Piece::R,
        };
        if pos.right < br.right_width {
            let abs = pos.abs_right.unwrap_or(pos.right * br.width);
            return (Image::F1Gap(br.slope_prev * abs), right_piece);
        }
        // from the left end of the middle, and from its right end
        let t = if pos.left <= 0.5 {
            pos.left - br.p
        } else {
            br.p_gap - pos.right
        };
        let v = pos.right - br.right_width;
        let s_l = br.s_l();
        let pick = |d: f64, g: f64| {
            if d < 0.5 * one_q {
                Image::Offset(d)
            } else {
                Image::Top(g)
            }
        };
        let image = match br.middle {
            Middle::Corner {
                t_star,
                h,
                s_b,
                d_b,
                g_b,
            } => {
                let k = (s_b - s_l) / (4.0 * h);
                if t <= t_star - h {
                    let d = br.below + s_l * t;
                    Image::Offset(d).normalize(one_q)
                } else if t < t_star + h {
                    let d = br.below + s_l * t + k * (t - t_star + h).powi(2);
                    let g = g_b + s_b * v - k * (t_star + h - t).powi(2);
                    pick(d, g)
                } else {
                    let g = g_b + s_b * v;
                    pick(d_b - s_b * v, g)
                }
            }
            Middle::Chord { slope, g_b } => {
                let d = br.below + slope * t;
                pick(d, g_b + slope * v)
            }
            Middle::Ramp { h, s_mid, s_r, g_r } => {
                if t <= h {
                    let d = br.below + s_l * t + (s_mid - s_l) * t * t / (2.0 * h);
                    Image::Offset(d).normalize(one_q)
                } else if v >= h {
                    let g = g_r + h * (s_r + s_mid) / 2.0 + s_mid * (v - h);
                    let d = br.below + h * (s_l + s_mid) / 2.0 + s_mid * (t - h);
                    pick(d, g)
                } else {
                    let g = g_r + s_r * v + (s_mid - s_r) * v * v / (2.0 * h);
                    Image::Top(g)
                }
            }
            Middle::None => unreachable!("only K₁ has no middle"),
        };
        (image, Piece::M)
    }

    /// Derivative in `x` of the branch at a local position.
    fn deriv_branch(&self, br: &FBranch, pos: Local) -> f64 {
        if br.n == 1 || pos.in_left_piece(br) {
            return br.slope_left;
        }
        if pos.right < br.right_width {
            let abs = pos.abs_right.unwrap_or(pos.right * br.width);
            let sigma = br.slope_prev * abs;
            return match self.c.variant() {
                Variant::Full if sigma == 0.0 => f64::INFINITY,
                _ => self.f1.deriv_at_gap(sigma) * br.slope_prev,
            };
        }
        let t = if pos.left <= 0.5 {
            pos.left - br.p
        } else {
            br.p_gap - pos.right
        };
        let v = pos.right - br.right_width;
        let s_l = br.s_l();
        let dtheta = match br.middle {
            Middle::Corner { t_star, h, s_b, .. } => {
                if t <= t_star - h {
                    s_l
                } else if t < t_star + h {
                    s_l + (s_b - s_l) * (t - t_star + h) / (2.0 * h)
                } else {
                    s_b
                }
            }
            Middle::Chord { slope, .. } => slope,
            Middle::Ramp { h, s_mid, s_r, .. } => {
                if t <= h {
                    s_l + (s_mid - s_l) * t / h
                } else if v >= h {
                    s_mid
                } else {
                    s_r + (s_mid - s_r) * v / h
                }
            }
            Middle::None => unreachable!("only K₁ has no middle"),
        };
        dtheta / br.width
    }

    /// `F` on `Kₙ` at a structured position.
    pub fn eval_local(&self, n: usize, pos: Frac) -> Result<(Image, Piece)> {
        self.with_branch(n, |br| self.eval_branch(br, Local::from_frac(pos)))
    }

    pub fn deriv_local(&self, n: usize, pos: Frac) -> Result<f64> {
        self.with_branch(n, |br| self.deriv_branch(br, Local::from_frac(pos)))
    }

    fn locate_plain(&self, x: f64) -> Result<(usize, Local)> {
        let (n, left) = self.c.locate_i2(x)?;
        let right = self.c.k_right(n) - x;
        let w = self.c.k_width(n);
        Ok((
            n,
            Local {
                left: left / w,
                right: right / w,
                abs_right: Some(right),
            },
        ))
    }

    /// `F(x)` in structured form, with the branch index and piece.
    pub fn eval_image(&self, x: f64) -> Result<(usize, Image, Piece)> {
        let (n, pos) = self.locate_plain(x)?;
        let (im, piece) = self.with_branch(n, |br| self.eval_branch(br, pos))?;
        Ok((n, im, piece))
    }

    /// `F(x)` together with the branch index and piece.
    pub fn eval_detailed(&self, x: f64) -> Result<(f64, usize, Piece)> {
        let (n, im, piece) = self.eval_image(x)?;
        Ok((self.image_value(im), n, piece))
    }

    /// `F(x)` for `x ∈ (q, 1]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.eval_detailed(x)?.0)
    }

    /// `F'(x)`; at a junction the value of the left piece is returned.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        let (n, pos) = self.locate_plain(x)?;
        self.deriv_at(n, pos, x)
    }

    /// Piece containing `x`.
    pub fn piece_at(&self, x: f64) -> Result<(usize, Piece)> {
        let (n, _, piece) = self.eval_image(x)?;
        Ok((n, piece))
    }

    fn deriv_at(&self, n: usize, pos: Local, x: f64) -> Result<f64> {
        let d = self.with_branch(n, |br| self.deriv_branch(br, pos))?;
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unbounded { x })
        }
    }

    pub fn image_value(&self, im: Image) -> f64 {
        let q = self.c.q();
        match im {
            Image::Below { n, v } => q + self.c.k_offset_left(n) * v,
            Image::Offset(d) => q + d,
            Image::Top(g) => 1.0 - g,
            Image::F1Gap(sigma) => 1.0 - self.f1.top_gap(sigma),
        }
    }

    /// `F − q` for an image.
    pub fn image_offset(&self, im: Image) -> f64 {
        let one_q = 1.0 - self.c.q();
        match im {
            Image::Below { n, v } => self.c.k_offset_left(n) * v,
            Image::Offset(d) => d,
            Image::Top(g) => one_q - g,
            Image::F1Gap(sigma) => one_q - self.f1.top_gap(sigma),
        }
    }

    /// The cell of `[q, 1]` holding an image, with its position there.
    pub fn image_cell(&self, im: Image) -> Result<(usize, Frac)> {
        let c = &self.c;
        match im {
            Image::Below { n, v } => c.locate_below(n, v),
            Image::Offset(d) => c.locate_offset(d),
            Image::Top(g) => self.top_cell(g),
            Image::F1Gap(sigma) => self.top_cell(self.f1.top_gap(sigma)),
        }
    }

    pub fn top_cell(&self, g: f64) -> Result<(usize, Frac)> {
        let k1 = self.c.k_width(1);
        if g < k1 {
            Ok((1, Frac::Right(g / k1)))
        } else {
            self.c.locate_offset(1.0 - self.c.q() - g)
        }
    }

    /// One step of `F` on structured positions.
    pub fn step_cell(&self, n: usize, pos: Frac) -> Result<(usize, Frac)> {
        let (im, _) = self.eval_local(n, pos)?;
        self.image_cell(im)
    }

    /// `F(Mₙ)` for the Physical variant.
    pub fn image_middle(&self, n: usize) -> Result<Interval> {
        if self.c.variant() != Variant::Physical {
            return Err(Error::VariantMismatch {
                op: "F_image_middle",
                expected: "physical",
            });
        }
        if n < 2 {
            return Err(Error::IndexOutOfRange { index: n, min: 2 });
        }
        let br = self.branch(n)?;
        let sigma = br.slope_prev * br.right_width * br.width;
        Ok(Interval::new(
            self.c.q() + br.below,
            1.0 - sigma * sigma,
        ))
    }

    /// `|F(Mₙ)|/|Mₙ|`, evaluated from offsets.
    pub fn middle_ratio(&self, n: usize) -> Result<f64> {
        self.image_middle(n)?;
        let br = self.branch(n)?;
        let sigma = br.slope_prev * br.right_width * br.width;
        let len = (1.0 - self.c.q()) - sigma * sigma - br.below;
        Ok(len / (br.middle_width * br.width))
    }
}

impl Image {
    /// Switches an offset close to the top into a top gap.
    fn normalize(self, one_q: f64) -> Image {
        match self {
            Image::Offset(d) if d >= 0.5 * one_q => Image::Top(one_q - d),
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> InducedMap {
        InducedMap::new(ConstructionParams::full_default()).unwrap()
    }

    fn physical() -> InducedMap {
        InducedMap::new(ConstructionParams::physical_default()).unwrap()
    }

    fn top_gap(f: &InducedMap, im: Image) -> f64 {
        match im {
            Image::Top(g) => g,
            Image::F1Gap(s) => f.f1().top_gap(s),
            _ => (1.0 - f.construction().q()) - f.image_offset(im),
        }
    }

    /// Mix of uniform positions and positions crowding both ends.
    fn positions(count: usize) -> Vec<Frac> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let t = (i as f64 + 0.5) / count as f64;
            out.push(Frac::from_left(t));
        }
        for k in 1..120 {
            let g = 0.7f64.powi(k);
            out.push(Frac::Right(g));
            out.push(Frac::Left(g));
        }
        out
    }

    #[test]
    fn first_branch_is_affine() {
        let f = full();
        let br = f.branch(1).unwrap();
        assert!((br.slope_left - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
        assert!((f.deriv(0.8).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((f.eval(0.625 + 1e-12).unwrap() - 0.5).abs() < 1e-11);
    }

    #[test]
    fn right_endpoint_maps_to_one() {
        for f in [full(), physical()] {
            for n in 2..40 {
                let z = f.construction().k_right(n);
                assert_eq!(f.eval(z).unwrap(), 1.0, "n={n}");
                let (im, _) = f.eval_local(n, Frac::Right(0.0)).unwrap();
                assert_eq!(f.image_value(im), 1.0);
            }
        }
    }

    #[test]
    fn l_piece_covers_lower_cells() {
        for f in [full(), physical()] {
            let c = f.construction().clone();
            for n in 2..=20 {
                let br = f.branch(n).unwrap();
                let (im, piece) = f.eval_local(n, Frac::Right(br.p_gap)).unwrap();
                assert_eq!(piece, Piece::L);
                let expected = c.q() + c.derived().r * c.derived().a_eff.powi(n as i32 - 1);
                // oracle: slope times |Lₙ|
                let oracle = c.q() + c.slope_m(n).unwrap() * c.p_ratio(n).unwrap() * c.k_width(n);
                assert!((f.image_value(im) - expected).abs() <= 1e-12);
                assert!((oracle - expected).abs() <= 1e-12);
                assert_eq!(f.image_offset(im), c.k_offset_left(n));
            }
        }
    }

    #[test]
    fn l_piece_slope() {
        let f = full();
        let c = f.construction();
        let x = c.k_left(5) + 0.3 * c.k_width(5);
        assert_eq!(f.deriv(x).unwrap(), c.slope_m(5).unwrap());
    }

    #[test]
    fn physical_cap_is_exact() {
        let f = physical();
        let c = f.construction().clone();
        for n in 2..30 {
            let br = f.branch(n).unwrap();
            let z = c.k_right(n);
            let m = c.slope_m(n - 1).unwrap();
            for k in 1..6 {
                let x = z - br.right_width * br.width * 0.9f64.powi(k * 3);
                let expected = 1.0 - (m * (x - z)).powi(2);
                assert_eq!(f.eval(x).unwrap().to_bits(), expected.to_bits(), "n={n} k={k}");
                let d = f.deriv(x).unwrap();
                assert!((d - 2.0 * m * m * (z - x)).abs() <= 1e-15 * d.max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn branches_are_increasing_homeomorphisms() {
        for f in [full(), physical()] {
            for n in 1..=60 {
                let mut pos: Vec<Frac> = positions(1000);
                pos.sort_by(|a, b| a.left().partial_cmp(&b.left()).unwrap().then(
                    b.right().partial_cmp(&a.right()).unwrap(),
                ));
                let mut prev_off = 0.0;
                let mut prev_top = 1.0 - f.construction().q();
                for p in pos {
                    let (im, _) = f.eval_local(n, p).unwrap();
                    let off = f.image_offset(im);
                    let top = top_gap(&f, im);
                    assert!(off >= prev_off, "n={n} {p:?}");
                    assert!(top <= prev_top, "n={n} {p:?}");
                    prev_off = off;
                    prev_top = top;
                }
                // endpoint limits q and 1
                let br = f.branch(n).unwrap();
                let (lo, _) = f.eval_local(n, Frac::Left(1e-12)).unwrap();
                let (hi, _) = f.eval_local(n, Frac::Right(1e-40 * br.right_width)).unwrap();
                assert!(f.image_value(lo) - f.construction().q() < 1e-9);
                assert!(1.0 - f.image_value(hi) < 1e-9);
            }
        }
    }

    #[test]
    fn internal_junctions_are_continuous() {
        for f in [full(), physical()] {
            for n in 2..=40 {
                let br = f.branch(n).unwrap();
                let junctions = [
                    Frac::Right(br.p_gap),
                    Frac::Right(br.right_width),
                ];
                for j in junctions {
                    let (a, _) = f.eval_local(n, j).unwrap();
                    let eps = 1e-12 * br.middle_width.min(br.right_width);
                    let nudged = match j {
                        Frac::Left(t) => Frac::Right(br.p_gap - (t - br.p) - eps),
                        Frac::Right(g) => Frac::Right(g - eps),
                    };
                    let (b, _) = f.eval_local(n, nudged).unwrap();
                    let gap = (f.image_offset(a) - f.image_offset(b)).abs();
                    assert!(gap <= 1e-13, "n={n} {j:?} gap={gap:e}");
                }
            }
        }
    }

    #[test]
    fn full_branches_are_convex() {
        let f = full();
        for n in 2..=60 {
            let mut pos = positions(1000);
            pos.sort_by(|a, b| a.left().partial_cmp(&b.left()).unwrap().then(
                b.right().partial_cmp(&a.right()).unwrap(),
            ));
            let mut prev = 0.0;
            for p in pos {
                if p.right() == 0.0 {
                    continue;
                }
                let d = f.deriv_local(n, p).unwrap();
                assert!(d - prev >= -1e-10 * d, "n={n} {p:?} {prev} {d}");
                prev = d;
            }
        }
    }

    #[test]
    fn full_expansion() {
        let f = full();
        let base = f.construction().derived().mn_base;
        let mut min = f64::INFINITY;
        // K₁ has slope q/b, below the bound that holds on the deeper cells
        assert_eq!(f.deriv(0.9).unwrap(), f.construction().derived().m1);
        for n in 2..=60 {
            for p in positions(1500) {
                if p.right() == 0.0 {
                    continue;
                }
                min = min.min(f.deriv_local(n, p).unwrap());
            }
        }
        assert!(min >= base - 1e-9, "{min}");
    }

    #[test]
    fn derivative_matches_differences_of_offsets() {
        for f in [full(), physical()] {
            for n in 1..=30 {
                let br = f.branch(n).unwrap();
                for i in 1..200 {
                    let t = i as f64 / 200.0;
                    let p = Frac::from_left(t);
                    let near = |x: f64| (x - br.p).abs() < 1e-3 || ((1.0 - x) - br.right_width).abs() < 1e-3;
                    if near(t) {
                        continue;
                    }
                    let h = 1e-6 * t.min(1.0 - t);
                    let shift = |p: Frac, dt: f64| match p {
                        Frac::Left(x) => Frac::Left(x + dt),
                        Frac::Right(g) => Frac::Right(g - dt),
                    };
                    let (a, _) = f.eval_local(n, shift(p, -h)).unwrap();
                    let (b, _) = f.eval_local(n, shift(p, h)).unwrap();
                    let rise = if top_gap(&f, a) < f.image_offset(a) {
                        top_gap(&f, a) - top_gap(&f, b)
                    } else {
                        f.image_offset(b) - f.image_offset(a)
                    };
                    let fd = rise / (2.0 * h * br.width);
                    let d = f.deriv_local(n, p).unwrap();
                    assert!(((fd - d) / d).abs() < 1e-6, "n={n} t={t} {fd} {d}");
                }
            }
        }
    }

    #[test]
    fn middle_image_physical() {
        let f = physical();
        let c = f.construction().clone();
        let iv = f.image_middle(2).unwrap();
        assert!((iv.lo - (c.q() + c.derived().r * c.derived().a_eff)).abs() < 1e-16);
        let bound = 2.0 * c.derived().mn_base;
        for n in 2..=c.n_max() {
            assert!(f.middle_ratio(n).unwrap() > bound, "n={n}");
        }
        assert!(f.middle_ratio(50).unwrap() >= 10.0 * f.middle_ratio(5).unwrap());
        assert!(matches!(
            full().image_middle(2),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn deep_cap_is_reachable() {
        for f in [full(), physical()] {
            let cap = f.deep_cap();
            assert!(cap >= 300, "{cap}");
            assert!(f.branch(cap).is_ok());
        }
    }

    #[test]
    fn chord_without_repair_is_not_convex() {
        let c = Construction::new(ConstructionParams::full_default()).unwrap();
        let f1 = F1Evaluator::new(&c).unwrap();
        let f = InducedMap::from_parts(c, f1, false);
        let br = f.branch(2).unwrap();
        let Middle::Chord { slope, .. } = br.middle else {
            panic!("expected a chord")
        };
        let right = f.deriv_local(2, Frac::Right(br.right_width * 0.999)).unwrap();
        assert!(slope / br.width > right);
    }

    #[test]
    fn structured_step_agrees_with_plain() {
        for f in [full(), physical()] {
            let c = f.construction().clone();
            for n in 1..=25 {
                for i in 1..50 {
                    let t = i as f64 / 50.0;
                    let x = c.k_left(n) + t * c.k_width(n);
                    let (m, pos) = c.locate_i2_frac(x).unwrap();
                    let (im, _) = f.eval_local(m, pos).unwrap();
                    assert!((f.image_value(im) - f.eval(x).unwrap()).abs() < 1e-12);
                    let y = f.image_value(im);
                    if y > c.q() {
                        let (k, p) = f.image_cell(im).unwrap();
                        let (k2, _) = c.locate_i2(y).unwrap();
                        let close = k == k2 || p.left() < 1e-6 || p.right() < 1e-6;
                        assert!(close, "n={n} t={t}: {k} vs {k2}");
                    }
                }
            }
        }
    }
}
