//! The circle map `f`, assembled from `f₁` on `[0, q]` and the realized second
//! branch `f₂|Kₙ = f₁^{-(n-1)} ∘ F|Kₙ` on `(q, 1]`.
//!
//! `f₂` carries `Kₙ` onto `Jₙ = f₁^{-(n-1)}([q, 1])`, the orbit then walks
//! `Jₙ → Jₙ₋₁ → … → J₂` under the affine part of `f₁`, and `f₁` carries `J₂`
//! back onto `[q, 1]` at `F(x)`. So the first return to `[q, 1]` from `Kₙ`
//! takes exactly `n` steps and lands at `F`.
//!
//! Cells accumulate at `q` (the `Kₙ`) and at `0` (the `Jₙ`). Plain doubles
//! cannot tell deep cells `Kₙ` apart, so points may carry a structured form,
//! the cell index and a position measured from the nearer end.

use serde::Serialize;

use crate::branch_f1::F1Evaluator;
use crate::error::{Error, Result};
use crate::induced_map::{Image, InducedMap, Piece};
use crate::params::{Construction, ConstructionParams, Frac, Variant};
use crate::roots::bisect_increasing;

/// Plain points closer than this to `q` from the right get a structured form.
pub const DEEP_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Cell {
    /// Inside `Kₙ ⊂ (q, 1]`.
    K { n: usize, pos: Frac },
    /// Inside `Jₙ ⊂ (0, q]`, `n ≥ 2`.
    J { n: usize, pos: Frac },
}

impl Cell {
    pub fn index(&self) -> usize {
        match *self {
            Cell::K { n, .. } | Cell::J { n, .. } => n,
        }
    }

    pub fn pos(&self) -> Frac {
        match *self {
            Cell::K { pos, .. } | Cell::J { pos, .. } => pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CirclePoint {
    /// Coordinate in `[0, 1)`.
    pub value: f64,
    pub deep: Option<Cell>,
}

impl CirclePoint {
    /// A plain point, wrapped into `[0, 1)`.
    pub fn plain(x: f64) -> Self {
        CirclePoint {
            value: wrap(x),
            deep: None,
        }
    }

    pub fn origin() -> Self {
        CirclePoint {
            value: 0.0,
            deep: None,
        }
    }

    pub fn is_fixed_point(&self) -> bool {
        self.value == 0.0 && self.deep.is_none()
    }

    /// Distance to `q` along the cell structure, when the point is in `Kₙ`.
    pub fn offset_from_q(&self, c: &Construction) -> Option<f64> {
        match self.deep {
            Some(Cell::K { n, pos }) => Some(match pos {
                Frac::Left(t) => c.k_offset_left(n) + t * c.k_width(n),
                Frac::Right(g) => c.k_offset_right(n) - g * c.k_width(n),
            }),
            _ => None,
        }
    }
}

/// `x mod 1` in `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// Result of one structured step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub point: CirclePoint,
    /// The input was beyond the deepest buildable branch and was moved by
    /// the affine model of `f₂` on `Kₙ`.
    pub absorbed: bool,
}

#[derive(Debug, Clone)]
pub struct CircleMap {
    induced: InducedMap,
}

impl CircleMap {
    pub fn new(params: ConstructionParams) -> Result<Self> {
        Ok(CircleMap {
            induced: InducedMap::new(params)?,
        })
    }

    /// Builds without the construction inequalities; `convexity_repair`
    /// switches the Full middle pieces between convex corners and plain chords.
    pub fn new_unchecked(params: ConstructionParams, convexity_repair: bool) -> Result<Self> {
        let c = Construction::new_unchecked(params)?;
        let f1 = F1Evaluator::new(&c)?;
        Ok(CircleMap {
            induced: InducedMap::from_parts(c, f1, convexity_repair),
        })
    }

    pub fn from_induced(induced: InducedMap) -> Self {
        CircleMap { induced }
    }

    pub fn induced(&self) -> &InducedMap {
        &self.induced
    }

    pub fn construction(&self) -> &Construction {
        self.induced.construction()
    }

    pub fn f1(&self) -> &F1Evaluator {
        self.induced.f1()
    }

    pub fn variant(&self) -> Variant {
        self.construction().variant()
    }

    fn q(&self) -> f64 {
        self.construction().q()
    }

    /// Position in `J₂` (equally in `Jₙ`) of `f₁⁻¹` of an image of `F`.
    fn image_to_j(&self, im: Image) -> Result<Frac> {
        let f1 = self.f1();
        let c = self.construction();
        let gap = c.q() - c.b();
        let one_q = 1.0 - c.q();
        let from_top = |g: f64| -> Result<Frac> {
            let sigma = f1.sigma_from_top_gap(g)?;
            Ok(Frac::Right((sigma / gap).min(1.0)))
        };
        match im {
            Image::F1Gap(sigma) => Ok(Frac::Right((sigma / gap).min(1.0))),
            Image::Top(g) => from_top(g),
            Image::Offset(d) if d >= 0.5 * one_q => from_top(one_q - d),
            Image::Offset(d) => Ok(Frac::from_left(f1.phi_from_offset(d)?)),
            Image::Below { .. } => {
                let d = self.induced.image_offset(im);
                Ok(Frac::from_left(f1.phi_from_offset(d)?))
            }
        }
    }

    /// `f₂` on `Kₙ` at a structured position: the position inside `Jₙ`.
    pub fn f2_local(&self, n: usize, pos: Frac) -> Result<Frac> {
        if n == 1 {
            return Err(Error::IndexOutOfRange { index: n, min: 2 });
        }
        let (im, _) = self.induced.eval_local(n, pos)?;
        self.image_to_j(im)
    }

    /// Plain coordinate of a structured cell position.
    pub fn cell_value(&self, cell: Cell) -> f64 {
        let c = self.construction();
        let v = match cell {
            Cell::K { n, pos } => match pos {
                Frac::Left(t) => c.k_left(n) + t * c.k_width(n),
                Frac::Right(g) => c.k_right(n) - g * c.k_width(n),
            },
            Cell::J { n, pos } => match pos {
                Frac::Left(t) => c.j_left(n) + t * c.j_width(n),
                Frac::Right(g) => c.j_right(n) - g * c.j_width(n),
            },
        };
        wrap(v)
    }

    fn point(&self, cell: Cell) -> CirclePoint {
        // the right end of K₁ is 1 ≡ 0 = p
        if let Cell::K { n: 1, pos } = cell {
            if pos.right() == 0.0 {
                return CirclePoint::origin();
            }
        }
        CirclePoint {
            value: self.cell_value(cell),
            deep: Some(cell),
        }
    }

    /// Structured form of a plain coordinate.
    pub fn structurize(&self, x: f64) -> Result<CirclePoint> {
        let x = wrap(x);
        let c = self.construction();
        if x == 0.0 {
            return Ok(CirclePoint::origin());
        }
        let cell = if x <= c.q() {
            let (n, pos) = c.locate_j(x)?;
            Cell::J { n, pos }
        } else {
            let (n, pos) = c.locate_i2_frac(x)?;
            Cell::K { n, pos }
        };
        Ok(CirclePoint {
            value: x,
            deep: Some(cell),
        })
    }

    /// Cell of `[q, 1]` where `f₁` sends a position of `J₂`.
    fn j2_forward(&self, pos: Frac) -> Result<Option<Cell>> {
        let f1 = self.f1();
        let c = self.construction();
        let gap = c.q() - c.b();
        let one_q = 1.0 - c.q();
        let (n, p) = match pos {
            Frac::Right(g) if g == 0.0 => return Ok(None),
            Frac::Right(g) => self.induced.top_cell(f1.top_gap(g * gap))?,
            Frac::Left(t) => {
                let d = f1.offset_above_q(t);
                if d >= 0.5 * one_q {
                    self.induced.top_cell(one_q - d)?
                } else {
                    c.locate_offset(d)?
                }
            }
        };
        Ok(Some(Cell::K { n, pos: p }))
    }

    fn too_deep(&self) -> Error {
        let cap = self.construction().depth_cap();
        Error::DepthExceeded {
            depth: cap + 1,
            cap,
        }
    }

    /// Cells past the depth cap are parked in the deepest one.
    fn clamp_depth(&self, cell: Result<(usize, Frac)>, absorbed: &mut bool) -> Result<Cell> {
        match cell {
            Ok((n, pos)) => Ok(Cell::K { n, pos }),
            Err(Error::DepthExceeded { .. }) => {
                *absorbed = true;
                Ok(Cell::K {
                    n: self.construction().depth_cap(),
                    pos: Frac::Left(0.5),
                })
            }
            Err(e) => Err(e),
        }
    }

    /// One step of `f` on the structured form. Plain points are structurized
    /// first; the fixed point stays put.
    pub fn step(&self, p: CirclePoint) -> Result<Step> {
        let cell = match p.deep {
            Some(cell) => cell,
            None => match self.structurize(p.value)?.deep {
                Some(cell) => cell,
                None => {
                    return Ok(Step {
                        point: CirclePoint::origin(),
                        absorbed: false,
                    })
                }
            },
        };
        let mut absorbed = false;
        let next = match cell {
            Cell::K { n: 1, pos } => {
                let (im, _) = self.induced.eval_local(1, pos)?;
                if let Image::Top(g) = im {
                    if g == 0.0 {
                        return Ok(Step {
                            point: CirclePoint::origin(),
                            absorbed,
                        });
                    }
                }
                Some(self.clamp_depth(self.induced.image_cell(im), &mut absorbed)?)
            }
            Cell::K { n, pos } => {
                if n > self.induced.deep_cap() {
                    absorbed = true;
                    Some(Cell::J { n, pos })
                } else {
                    Some(Cell::J {
                        n,
                        pos: self.f2_local(n, pos)?,
                    })
                }
            }
            Cell::J { n, pos } if n >= 3 => Some(Cell::J { n: n - 1, pos }),
            Cell::J { pos, .. } => match self.j2_forward(pos) {
                Ok(cell) => cell,
                Err(Error::DepthExceeded { .. }) => {
                    Some(self.clamp_depth(Err(self.too_deep()), &mut absorbed)?)
                }
                Err(e) => return Err(e),
            },
        };
        let point = match next {
            Some(cell) => self.point(cell),
            None => CirclePoint::origin(),
        };
        Ok(Step { point, absorbed })
    }

    /// `f` on a circle point. A structured form is honoured while the point
    /// stays in `(q, 1]` and dropped when it leaves; plain results landing
    /// just above `q` gain one.
    pub fn f_eval(&self, p: CirclePoint) -> Result<CirclePoint> {
        if let Some(Cell::K { .. }) = p.deep {
            let next = self.step(p)?.point;
            return Ok(match next.deep {
                Some(Cell::J { .. }) => CirclePoint::plain(next.value),
                _ => next,
            });
        }
        let x = p.value;
        if x == 0.0 {
            return Ok(CirclePoint::origin());
        }
        let q = self.q();
        if x <= q {
            let y = self.f1().eval(x)?;
            if y >= 1.0 {
                return Ok(CirclePoint::origin());
            }
            if y > q && y - q <= DEEP_THRESHOLD && x > self.construction().b() {
                let gap = q - self.construction().b();
                let d = self.f1().offset_above_q((x - self.construction().b()) / gap);
                let (n, pos) = self.construction().locate_offset(d)?;
                return Ok(CirclePoint {
                    value: y,
                    deep: Some(Cell::K { n, pos }),
                });
            }
            return Ok(CirclePoint::plain(y));
        }
        let y = self.f2_eval(x)?;
        if y > q && y - q <= DEEP_THRESHOLD {
            // only K₁ returns into (q, 1] directly
            let (_, im, _) = self.induced.eval_image(x)?;
            let (n, pos) = self.induced.image_cell(im)?;
            return Ok(CirclePoint {
                value: y,
                deep: Some(Cell::K { n, pos }),
            });
        }
        Ok(CirclePoint::plain(y))
    }

    /// `f` on a plain coordinate.
    pub fn f_eval_plain(&self, x: f64) -> Result<f64> {
        Ok(self.f_eval(CirclePoint::plain(x))?.value)
    }

    /// `f₂(x) = f₁^{-(n-1)}(F(x))` for `x ∈ (q, 1]`.
    pub fn f2_eval(&self, x: f64) -> Result<f64> {
        let (n, im, _) = self.induced.eval_image(x)?;
        if n == 1 {
            return Ok(self.induced.image_value(im));
        }
        let pos = self.image_to_j(im)?;
        Ok(self.cell_value(Cell::J { n, pos }).max(f64::MIN_POSITIVE))
    }

    /// `f₂'(x)` by the chain rule; at a junction the left piece is used.
    pub fn f2_deriv(&self, x: f64) -> Result<f64> {
        let (n, pos) = self.construction().locate_i2_frac(x)?;
        let (_, _, piece) = self.induced.eval_image(x)?;
        self.f2_deriv_with(n, pos, piece, || self.induced.deriv(x))
    }

    /// `f₂'` at a structured position of `Kₙ`.
    pub fn f2_deriv_local(&self, n: usize, pos: Frac) -> Result<f64> {
        let (_, piece) = self.induced.eval_local(n, pos)?;
        self.f2_deriv_with(n, pos, piece, || self.induced.deriv_local(n, pos))
    }

    fn f2_deriv_with(
        &self,
        n: usize,
        pos: Frac,
        piece: Piece,
        big_f: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        let c = self.construction();
        if n == 1 {
            return big_f();
        }
        let contraction = c.derived().rho.powi(n as i32 - 2);
        if matches!(piece, Piece::U | Piece::R) {
            // F = f₁(q − mₙ₋₁·(zₙ − x)) there, so the ratio is exact
            return Ok(contraction * c.slope_m(n - 1)?);
        }
        let slope = big_f()?;
        let (im, _) = self.induced.eval_local(n, pos)?;
        let jpos = self.image_to_j(im)?;
        let inner = match jpos {
            Frac::Left(phi) => self.f1().deriv_at_phi(phi),
            Frac::Right(g) => self.f1().deriv_at_gap(g * (c.q() - c.b())),
        };
        Ok(contraction * slope / inner)
    }

    /// The `x ∈ (q, 1]` with `f₂(x) = y`, for `y ∈ (0, 1]`.
    pub fn f2_inv(&self, y: f64) -> Result<f64> {
        let c = self.construction();
        if !(y > 0.0 && y <= 1.0) {
            return Err(Error::OutOfDomain {
                op: "f2_inv",
                x: y,
                domain: "(0, 1]",
            });
        }
        if y > c.q() {
            return Ok(c.k_left(1) + (y - c.q()) / c.derived().m1);
        }
        let (n, _) = c.locate_j(y)?;
        if c.k_right(n) <= c.q() {
            // the whole cell rounds onto q
            return Err(Error::DepthExceeded {
                depth: n,
                cap: c.effective_depth_cap(),
            });
        }
        let (lo, hi) = bisect_increasing(
            |x| self.f2_eval(x).unwrap_or(f64::NAN),
            c.k_left(n),
            c.k_right(n),
            y,
        );
        // the open left end of Kₙ belongs to Kₙ₊₁ and maps to the left end of Jₙ
        let at_lo = if lo > c.k_left(n) { self.f2_eval(lo)? } else { c.j_left(n) };
        Ok(if (at_lo - y).abs() < (self.f2_eval(hi)? - y).abs() {
            lo
        } else {
            hi
        })
    }

    /// The graph piece `φ_{a,b} = f₁^{a−b} ∘ f₂|K_a`, mapping `K_a` onto `J_b`.
    pub fn graph_piece(&self, a: usize, b: usize, x: f64) -> Result<f64> {
        if b == 0 {
            return Err(Error::IndexOutOfRange { index: b, min: 1 });
        }
        if b > a {
            return Err(Error::IndexOutOfRange { index: a, min: b });
        }
        let c = self.construction();
        let cell = c.cell_k(a)?;
        if !(x > cell.k_left && x <= cell.k_right) {
            return Err(Error::OutOfDomain {
                op: "graph_piece",
                x,
                domain: "K_a",
            });
        }
        let mut y = self.f2_eval(x)?;
        for _ in 0..(a - b) {
            y = self.f1().eval(y)?;
        }
        Ok(y)
    }

    /// `f'(x)`; the singular point `q` needs [`Self::f_deriv_one_sided`].
    pub fn f_deriv_plain(&self, x: f64) -> Result<f64> {
        let x = wrap(x);
        let q = self.q();
        if x == q {
            return Err(Error::AtSingularPoint { x });
        }
        if x < q {
            self.f1().deriv(x)
        } else {
            self.f2_deriv(x)
        }
    }

    pub fn f_deriv(&self, p: CirclePoint) -> Result<f64> {
        match p.deep {
            Some(Cell::K { n, pos }) => self.f2_deriv_local(n, pos),
            Some(Cell::J { n, pos }) if n == 2 => {
                let c = self.construction();
                Ok(match pos {
                    Frac::Left(phi) => self.f1().deriv_at_phi(phi),
                    Frac::Right(g) if g == 0.0 => return self.f_deriv_plain(c.q()),
                    Frac::Right(g) => self.f1().deriv_at_gap(g * (c.q() - c.b())),
                })
            }
            Some(Cell::J { .. }) => Ok(self.construction().derived().m1),
            None => self.f_deriv_plain(p.value),
        }
    }

    /// One-sided derivative at any point; at `q` from the left this is
    /// infinite for Full and zero for Physical, from the right it is zero.
    pub fn f_deriv_one_sided(&self, x: f64, side: Side) -> Result<f64> {
        let x = wrap(x);
        let q = self.q();
        if x == q {
            return Ok(match (side, self.variant()) {
                (Side::Left, Variant::Full) => f64::INFINITY,
                (Side::Left, Variant::Physical) => 0.0,
                (Side::Right, _) => 0.0,
            });
        }
        if x == 0.0 {
            // affine with slope q/b on both sides of p
            return Ok(self.construction().derived().m1);
        }
        self.f_deriv_plain(x)
    }
}
