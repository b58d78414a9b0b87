//! Explicit circle maps with a hyperbolic repelling fixed point that carries
//! a physical measure.
//!
//! A map `f` of the circle `[0, 1)` is assembled from two branches. The first,
//! `f₁` on `[0, q]`, is given in closed form. The second, `f₂` on `[q, 1]`, is
//! realized from a prescribed first-return map `F` of `[q, 1]` through
//! `f₂|Kₙ = f₁^{-(n-1)} ∘ F|Kₙ`, where `{Kₙ}` is a countable partition of
//! `[q, 1]` accumulating at `q`.
//!
//! Two parameter families are provided: [`Variant::Full`], whose return map is
//! uniformly expanding, and [`Variant::Physical`], whose first branch is
//! flat at `q` so that `f` is C¹ there with vanishing derivative.
//!
//! ```
//! use repeller::{CircleMap, ConstructionParams};
//!
//! let map = CircleMap::new(ConstructionParams::full_default()).unwrap();
//! let slope = map.f_deriv_plain(0.0).unwrap();
//! assert!((slope - 4.0 / 3.0).abs() < 1e-15);
//! ```

pub mod branch_f1;
pub mod dynamics;
pub mod error;
pub mod induced_map;
pub mod params;
pub mod realization;
pub mod roots;
pub mod verify;

pub use branch_f1::F1Evaluator;
pub use dynamics::{CircleDynamics, DoublingMap, Dynamics, OrbitConfig, OrbitMode, OrbitStats};
pub use induced_map::{FBranch, Image, InducedMap, Piece};
pub use realization::{Cell, CircleMap, CirclePoint, Side};
pub use verify::{CheckReport, CheckStatus, VerifyConfig};
pub use error::{Error, Result};

pub use params::{
    Construction, ConstructionParams, DerivedConstants, Frac, Interval, PRule, PartitionCell,
    Variant,
};
