//! The first branch `f₁ : [0, q] → [0, 1]`.
//!
//! Both variants are affine with slope `q/b` on `[0, b]`, so that `f₁(b) = q`.
//! Above `b`:
//!
//! * Full: `f₁(x) = 1 − (1 − q)·((q − x)/(q − b))^s`, convex, with
//!   `s = q(q − b)/(b(1 − q))` forcing the slope `q/b` at `b` and an infinite
//!   slope at `q`.
//! * Physical: a cubic Hermite connector on `[b, q − u]` followed by the cap
//!   `1 − (q − x)²` on `[q − u, q]`, which is flat at `q`.
//!
//! Besides plain evaluation the evaluator works in two coordinates that stay
//! accurate near the ends of `[b, q]`: the fraction `φ = (x − b)/(q − b)`
//! paired with the offset `f₁(x) − q`, and the gap `σ = q − x` paired with
//! the top gap `1 − f₁(x)`.

use crate::error::{Error, Result};
use crate::params::{Construction, Variant};
use crate::roots::newton_bisect;

const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connector {
    /// Width of the quadratic cap below `q`.
    pub u: f64,
    /// Width `q − u − b` of the cubic.
    pub width: f64,
    /// Rise `1 − u² − q` of the cubic.
    pub rise: f64,
    pub slope_left: f64,
    pub slope_right: f64,
    /// How many times `u` was halved to reach a monotone cubic.
    pub halvings: usize,
}

impl Connector {
    fn build(q: f64, b: f64) -> Result<Self> {
        let mut u = 0.25 * (q - b);
        for halvings in 0..=MAX_HALVINGS {
            let c = Connector {
                u,
                width: q - u - b,
                rise: 1.0 - u * u - q,
                slope_left: q / b,
                slope_right: 2.0 * u,
                halvings,
            };
            if c.is_monotone() {
                return Ok(c);
            }
            u *= 0.5;
        }
        Err(Error::ConstructionFailed {
            n: 1,
            reason: format!("no monotone connector on [b, q − u] after {MAX_HALVINGS} halvings of u"),
        })
    }

    /// Fritsch–Carlson region for a single monotone cubic segment.
    pub fn is_monotone(&self) -> bool {
        if !(self.rise > 0.0 && self.width > 0.0) {
            return false;
        }
        let delta = self.rise / self.width;
        let al = self.slope_left / delta;
        let be = self.slope_right / delta;
        if !(al > 0.0 && be > 0.0) {
            return false;
        }
        if al + be - 2.0 <= 0.0 || 2.0 * al + be - 3.0 <= 0.0 || al + 2.0 * be - 3.0 <= 0.0 {
            return true;
        }
        al - (2.0 * al + be - 3.0).powi(2) / (3.0 * (al + be - 2.0)) >= 0.0
    }

    /// `f₁ − q` at `b + τ·width`.
    fn offset(&self, tau: f64) -> f64 {
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let h01 = 3.0 * t2 - 2.0 * t3;
        let h10 = t3 - 2.0 * t2 + tau;
        let h11 = t3 - t2;
        self.rise * h01 + self.width * (self.slope_left * h10 + self.slope_right * h11)
    }

    /// Derivative of the offset with respect to `τ`.
    fn offset_dtau(&self, tau: f64) -> f64 {
        let d01 = 6.0 * tau * (1.0 - tau);
        let d10 = 3.0 * tau * tau - 4.0 * tau + 1.0;
        let d11 = 3.0 * tau * tau - 2.0 * tau;
        self.rise * d01 + self.width * (self.slope_left * d10 + self.slope_right * d11)
    }

    fn slope(&self, tau: f64) -> f64 {
        self.offset_dtau(tau) / self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Upper {
    Power { s: f64 },
    Capped(Connector),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Evaluator {
    variant: Variant,
    q: f64,
    b: f64,
    slope: f64,
    rho: f64,
    tol_root: f64,
    upper: Upper,
}

impl F1Evaluator {
    pub fn new(c: &Construction) -> Result<Self> {
        let (q, b) = (c.q(), c.b());
        let upper = match c.variant() {
            Variant::Full => Upper::Power {
                s: c.derived().s.expect("full variant has an exponent"),
            },
            Variant::Physical => Upper::Capped(Connector::build(q, b)?),
        };
        Ok(F1Evaluator {
            variant: c.variant(),
            q,
            b,
            slope: q / b,
            rho: b / q,
            tol_root: c.params().tol_root,
            upper,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Width of the quadratic cap (Physical).
    pub fn cap_width(&self) -> Option<f64> {
        match self.upper {
            Upper::Capped(c) => Some(c.u),
            Upper::Power { .. } => None,
        }
    }

    pub fn connector(&self) -> Option<&Connector> {
        match &self.upper {
            Upper::Capped(c) => Some(c),
            Upper::Power { .. } => None,
        }
    }

    /// Points where the formula changes.
    pub fn junctions(&self) -> Vec<f64> {
        match self.upper {
            Upper::Power { .. } => vec![self.b],
            Upper::Capped(c) => vec![self.b, self.q - c.u],
        }
    }

    fn check_domain(&self, op: &'static str, x: f64) -> Result<()> {
        if x >= 0.0 && x <= self.q {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                op,
                x,
                domain: "[0, q]",
            })
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain("f1_eval", x)?;
        if x <= self.b {
            return Ok(self.slope * x);
        }
        let sigma = self.q - x;
        if sigma < 0.5 * (self.q - self.b) {
            Ok(1.0 - self.top_gap(sigma))
        } else {
            Ok(self.q + self.offset_above_q((x - self.b) / (self.q - self.b)))
        }
    }

    pub fn deriv(&self, x: f64) -> Result<f64> {
        self.check_domain("f1_deriv", x)?;
        if x <= self.b {
            return Ok(self.slope);
        }
        if x == self.q && self.variant == Variant::Full {
            return Err(Error::Unbounded { x });
        }
        Ok(self.deriv_at_gap(self.q - x))
    }

    /// `f₁'(q − σ)`, infinite at `σ = 0` for Full.
    pub fn deriv_at_gap(&self, sigma: f64) -> f64 {
        let gap = self.q - self.b;
        if sigma >= gap {
            return self.slope;
        }
        match self.upper {
            Upper::Power { s } => (1.0 - self.q) * s / gap * (sigma / gap).powf(s - 1.0),
            Upper::Capped(c) => {
                if sigma <= c.u {
                    2.0 * sigma
                } else {
                    c.slope((gap - sigma) / c.width)
                }
            }
        }
    }

    /// `f₁'(b + φ(q − b))`.
    pub fn deriv_at_phi(&self, phi: f64) -> f64 {
        let gap = self.q - self.b;
        if phi <= 0.0 {
            return self.slope;
        }
        match self.upper {
            Upper::Power { s } => {
                (1.0 - self.q) * s / gap * ((s - 1.0) * (-phi).ln_1p()).exp()
            }
            Upper::Capped(c) => {
                let t = phi * gap;
                if t <= c.width {
                    c.slope(t / c.width)
                } else {
                    2.0 * (1.0 - phi) * gap
                }
            }
        }
    }

    /// `f₁(b + φ(q − b)) − q` for `φ ∈ [0, 1]`, accurate for small `φ`.
    pub fn offset_above_q(&self, phi: f64) -> f64 {
        let one_q = 1.0 - self.q;
        match self.upper {
            Upper::Power { s } => -one_q * (s * (-phi).ln_1p()).exp_m1(),
            Upper::Capped(c) => {
                let t = phi * (self.q - self.b);
                if t <= c.width {
                    c.offset(t / c.width)
                } else {
                    let sigma = (1.0 - phi) * (self.q - self.b);
                    one_q - sigma * sigma
                }
            }
        }
    }

    /// Inverse of [`Self::offset_above_q`] on `d ∈ [0, 1 − q]`.
    pub fn phi_from_offset(&self, d: f64) -> Result<f64> {
        let one_q = 1.0 - self.q;
        if !(d >= 0.0 && d <= one_q) {
            return Err(Error::OutOfDomain {
                op: "f1_inv",
                x: self.q + d,
                domain: "[q, 1]",
            });
        }
        let gap = self.q - self.b;
        match self.upper {
            Upper::Power { s } => Ok((-((-d / one_q).ln_1p() / s).exp_m1()).min(1.0)),
            Upper::Capped(c) => {
                if d >= c.rise {
                    let sigma = (one_q - d).max(0.0).sqrt();
                    return Ok(1.0 - sigma / gap);
                }
                let guess = d / (c.width * c.slope_left);
                let tau = newton_bisect(
                    "f1_inv",
                    |t| (c.offset(t) - d, c.offset_dtau(t)),
                    0.0,
                    1.0,
                    Some(guess),
                    self.tol_root,
                    f64::MIN_POSITIVE,
                )?;
                Ok(tau * c.width / gap)
            }
        }
    }

    /// `1 − f₁(q − σ)` for `σ ∈ [0, q]`, accurate for small `σ`.
    pub fn top_gap(&self, sigma: f64) -> f64 {
        let gap = self.q - self.b;
        if sigma >= gap {
            return 1.0 - self.slope * (self.q - sigma);
        }
        match self.upper {
            Upper::Power { s } => (1.0 - self.q) * (sigma / gap).powf(s),
            Upper::Capped(c) => {
                if sigma <= c.u {
                    sigma * sigma
                } else {
                    (1.0 - self.q) - c.offset((gap - sigma) / c.width)
                }
            }
        }
    }

    /// Inverse of [`Self::top_gap`]: the `σ` with `1 − f₁(q − σ) = g`.
    pub fn sigma_from_top_gap(&self, g: f64) -> Result<f64> {
        if !(g >= 0.0 && g <= 1.0) {
            return Err(Error::OutOfDomain {
                op: "f1_inv",
                x: 1.0 - g,
                domain: "[0, 1]",
            });
        }
        let one_q = 1.0 - self.q;
        let gap = self.q - self.b;
        if g >= one_q {
            return Ok(self.q - (1.0 - g) * self.rho);
        }
        match self.upper {
            Upper::Power { s } => Ok(gap * (g / one_q).powf(1.0 / s)),
            Upper::Capped(c) => {
                if g <= c.u * c.u {
                    Ok(g.sqrt())
                } else {
                    let phi = self.phi_from_offset(one_q - g)?;
                    Ok((1.0 - phi) * gap)
                }
            }
        }
    }

    pub fn inv(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0 && y <= 1.0) {
            return Err(Error::OutOfDomain {
                op: "f1_inv",
                x: y,
                domain: "[0, 1]",
            });
        }
        if y <= self.q {
            return Ok(self.rho * y);
        }
        if y > 0.5 * (1.0 + self.q) {
            return Ok(self.q - self.sigma_from_top_gap(1.0 - y)?);
        }
        let phi = self.phi_from_offset(y - self.q)?;
        Ok(self.b + phi * (self.q - self.b))
    }

    /// `f₁^{-k}(y)`: one inversion, then the affine contraction by `(b/q)^{k−1}`.
    pub fn inv_iter(&self, y: f64, k: usize) -> Result<f64> {
        if k == 0 {
            if !(y >= 0.0 && y <= 1.0) {
                return Err(Error::OutOfDomain {
                    op: "f1_inv_iter",
                    x: y,
                    domain: "[0, 1]",
                });
            }
            return Ok(y);
        }
        let x = self.inv(y)?;
        Ok(x * self.rho.powi(k as i32 - 1))
    }
}
