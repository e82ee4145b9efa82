//! Points, tangent vectors and the exponential map on the unit sphere S².
//!
//! Everything here is a pure function of its arguments. Vectors are plain
//! `[f64; 3]` arrays; [`UnitVector`] and [`TangentVector`] wrap them with the
//! unit-norm and tangency invariants.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Below this norm `exp_map` returns its base point unchanged.
pub const EXP_MAP_CUTOFF: f64 = 1e-12;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// A point on S².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector(Vec3);

impl UnitVector {
    /// Normalizes `coords`; fails on zero or non-finite input. Vectors
    /// already unit length to rounding are kept bit-for-bit.
    pub fn new(coords: Vec3) -> Result<Self> {
        let n = norm(&coords);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize vector {coords:?}"
            )));
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(UnitVector(coords));
        }
        Ok(UnitVector(scale(&coords, 1.0 / n)))
    }

    /// Wraps coordinates that are already unit length.
    pub(crate) fn from_unit(coords: Vec3) -> Self {
        debug_assert!((norm(&coords) - 1.0).abs() < 1e-9, "{coords:?}");
        UnitVector(coords)
    }

    pub const fn north_pole() -> Self {
        UnitVector([0.0, 0.0, 1.0])
    }

    /// Point at the given longitude and latitude, both in degrees.
    pub fn from_lon_lat_degrees(lon: f64, lat: f64) -> Self {
        let (lon, lat) = (lon.to_radians(), lat.to_radians());
        let (slat, clat) = lat.sin_cos();
        let (slon, clon) = lon.sin_cos();
        UnitVector([clat * clon, clat * slon, slat])
    }

    /// Longitude in [-180, 180] and latitude in [-90, 90], degrees.
    pub fn to_lon_lat_degrees(&self) -> (f64, f64) {
        let [x, y, z] = self.0;
        let lon = y.atan2(x).to_degrees();
        let lat = z.clamp(-1.0, 1.0).asin().to_degrees();
        (lon, lat)
    }

    #[inline]
    pub fn coords(&self) -> &Vec3 {
        &self.0
    }

    pub fn neg(&self) -> Self {
        UnitVector(scale(&self.0, -1.0))
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl TryFrom<[f64; 3]> for UnitVector {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for [f64; 3] {
    fn from(u: UnitVector) -> Self {
        u.0
    }
}

/// A vector in the tangent plane at `base`. Its norm is an arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: UnitVector,
    pub vec: Vec3,
}

impl TangentVector {
    pub fn zero(base: UnitVector) -> Self {
        TangentVector {
            base,
            vec: [0.0; 3],
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }
}

/// Right-handed orthonormal frame `(e1, e2, base)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBasis {
    pub base: UnitVector,
    pub e1: Vec3,
    pub e2: Vec3,
}

/// Great-circle distance in `[0, π]`.
pub fn geodesic_distance(a: &UnitVector, b: &UnitVector) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// `cos‖v‖·base + sin‖v‖·v/‖v‖`.
pub fn exp_map(base: &UnitVector, v: &TangentVector) -> UnitVector {
    let r = v.norm();
    if r < EXP_MAP_CUTOFF {
        return *base;
    }
    let (s, c) = r.sin_cos();
    let out = add(&scale(base.coords(), c), &scale(&v.vec, s / r));
    // exact up to rounding; renormalize to keep the invariant tight
    UnitVector(scale(&out, 1.0 / norm(&out)))
}

/// Index of the coordinate axis least aligned with `base` (ties go low).
pub(crate) fn least_aligned_axis(base: &[f64; 3]) -> usize {
    let a = [base[0].abs(), base[1].abs(), base[2].abs()];
    let mut best = 0;
    for i in 1..3 {
        if a[i] < a[best] {
            best = i;
        }
    }
    best
}

/// Deterministic frame: Gram–Schmidt the least aligned axis, then `e2 = base × e1`.
pub fn tangent_basis(base: &UnitVector) -> TangentBasis {
    let x = base.coords();
    let axis = least_aligned_axis(x);
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let t = sub(&a, &scale(x, x[axis]));
    let e1 = scale(&t, 1.0 / norm(&t));
    let e2 = cross(x, &e1);
    TangentBasis {
        base: *base,
        e1,
        e2,
    }
}

/// `(I − base·baseᵀ) w`.
pub fn project_to_tangent(base: &UnitVector, w: &Vec3) -> TangentVector {
    let x = base.coords();
    TangentVector {
        base: *base,
        vec: sub(w, &scale(x, dot(x, w))),
    }
}

/// Builds a tangent vector, checking `⟨vec, base⟩ ≈ 0`.
pub fn tangent_vector(base: &UnitVector, vec: Vec3) -> Result<TangentVector> {
    let off = dot(base.coords(), &vec);
    if off.abs() > 1e-10 * norm(&vec).max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "vector {vec:?} is not tangent at {:?} (inner product {off:e})",
            base.coords()
        )));
    }
    Ok(TangentVector { base: *base, vec })
}

/// 1/(4π), the uniform density on S².
pub const UNIFORM_DENSITY: f64 = 1.0 / (4.0 * PI);
