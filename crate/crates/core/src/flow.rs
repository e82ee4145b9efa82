//! Exponential-map flows built from radial wrapping potentials.
//!
//! One layer is `T(x) = exp_x(∇φ(x))` with
//! `φ(x) = Σ_i (η_i/β_i)·exp(β_i(⟨x, m_i⟩ − 1))`. A component composes `K`
//! layers and has density `(1/4π)·Π_k |det J_k|` along the trajectory, where
//! `J_k` is the 2×2 Jacobian of layer `k` between orthonormal tangent frames.
//!
//! The layer Jacobian is assembled in closed form: with `g = Σ η_i e_i m_i`
//! (the ambient gradient, `e_i = exp(β_i(⟨x,m_i⟩−1))`), `H = Σ η_i β_i e_i m_i m_iᵀ`,
//! `v = g − ⟨x,g⟩x` and `r = ‖v‖`, a tangent direction `u` maps to
//!
//! ```text
//! dv = H u − (⟨u,g⟩ + ⟨x,H u⟩) x − ⟨x,g⟩ u,   q = ⟨v, dv⟩
//! dT = cos r · u + sinc r · (dv − q x) + κ(r) · q · v,   κ(r) = (r cos r − sin r)/r³
//! ```
//!
//! The kernel is generic over [`Real`] so the same code produces densities
//! (`f64`) and parameter gradients ([`crate::autodiff::Var`]).

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{self, tangent_basis, TangentVector, UnitVector};

/// `|det J|` below this is treated as a failure of the diffeomorphism.
pub const DEGENERATE_DET: f64 = 1e-300;

/// `ln 4π`
pub const LN_4PI: f64 = 2.531_024_246_969_290_7;

/// One radial bump `(β, m, η)` of a wrapping potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub beta: f64,
    pub center: UnitVector,
    pub eta: f64,
}

/// Parameters of one exponential-map layer: `p` radial bumps with convex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct LayerParams {
    bumps: Vec<RadialBump>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    betas: Vec<f64>,
    centers: Vec<UnitVector>,
    etas: Vec<f64>,
}

impl TryFrom<LayerRepr> for LayerParams {
    type Error = Error;
    fn try_from(r: LayerRepr) -> Result<Self> {
        LayerParams::new(r.betas, r.centers, r.etas)
    }
}

impl From<LayerParams> for LayerRepr {
    fn from(l: LayerParams) -> Self {
        LayerRepr {
            betas: l.betas(),
            centers: l.centers(),
            etas: l.etas(),
        }
    }
}

impl LayerParams {
    pub fn new(betas: Vec<f64>, centers: Vec<UnitVector>, etas: Vec<f64>) -> Result<Self> {
        let p = betas.len();
        if p == 0 || centers.len() != p || etas.len() != p {
            return Err(Error::InvalidParameter(format!(
                "layer needs p >= 1 matching betas/centers/etas, got {}/{}/{}",
                p,
                centers.len(),
                etas.len()
            )));
        }
        if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "concentration must be positive, got {b}"
            )));
        }
        if let Some(e) = etas.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "basis weight must be positive, got {e}"
            )));
        }
        let total: f64 = etas.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "basis weights must sum to 1, got {total}"
            )));
        }
        let bumps = betas
            .into_iter()
            .zip(centers)
            .zip(etas)
            .map(|((beta, center), eta)| RadialBump { beta, center, eta })
            .collect();
        Ok(LayerParams { bumps })
    }

    /// Caller guarantees the invariants (used by the decoder, which enforces them by construction).
    pub(crate) fn from_bumps(bumps: Vec<RadialBump>) -> Self {
        debug_assert!(!bumps.is_empty());
        LayerParams { bumps }
    }

    /// Single-bump layer (`p = 1`, `η = 1`).
    pub fn single(beta: f64, center: UnitVector) -> Result<Self> {
        LayerParams::new(vec![beta], vec![center], vec![1.0])
    }

    pub fn bumps(&self) -> &[RadialBump] {
        &self.bumps
    }

    pub fn p(&self) -> usize {
        self.bumps.len()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.bumps.iter().map(|b| b.beta).collect()
    }

    pub fn centers(&self) -> Vec<UnitVector> {
        self.bumps.iter().map(|b| b.center).collect()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.bumps.iter().map(|b| b.eta).collect()
    }

    pub(crate) fn kernel_bumps(&self) -> impl Iterator<Item = (f64, [f64; 3], f64)> + '_ {
        self.bumps.iter().map(|b| (b.beta, *b.center.coords(), b.eta))
    }
}

/// A `K`-layer flow; layer 0 is applied first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerParams>", into = "Vec<LayerParams>")]
pub struct ComponentParams {
    layers: Vec<LayerParams>,
}

impl TryFrom<Vec<LayerParams>> for ComponentParams {
    type Error = Error;
    fn try_from(layers: Vec<LayerParams>) -> Result<Self> {
        ComponentParams::new(layers)
    }
}

impl From<ComponentParams> for Vec<LayerParams> {
    fn from(c: ComponentParams) -> Self {
        c.layers
    }
}

impl ComponentParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a flow needs K >= 1 layers".into()));
        }
        Ok(ComponentParams { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn k(&self) -> usize {
        self.layers.len()
    }
}

// ---------------------------------------------------------------------------
// generic kernel

#[inline]
fn gdot<S: Real>(a: &[S; 3], b: &[S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn gcross<S: Real>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `(cos r, sin r / r, (r cos r − sin r)/r³)` from `r²`, smooth through 0.
#[inline]
fn trig_terms<S: Real>(r2: S) -> (S, S, S) {
    if r2.value() < 1e-4 {
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let cos_r = -(r2 * 0.5) + r4 * (1.0 / 24.0) - r6 * (1.0 / 720.0) + 1.0;
        let sinc = -(r2 * (1.0 / 6.0)) + r4 * (1.0 / 120.0) - r6 * (1.0 / 5040.0) + 1.0;
        let kappa = r2 * (1.0 / 30.0) - r4 * (1.0 / 840.0) + r6 * (1.0 / 45360.0)
            - 1.0 / 3.0;
        (cos_r, sinc, kappa)
    } else {
        let r = r2.sqrt();
        let (s, c) = (r.sin(), r.cos());
        let sinc = s / r;
        let kappa = (r * c - s) / (r2 * r);
        (c, sinc, kappa)
    }
}

/// `(e1, e2)` completing `x` to a right-handed orthonormal frame.
#[inline]
fn generic_basis<S: Real>(x: &[S; 3]) -> ([S; 3], [S; 3]) {
    let vals = [x[0].value(), x[1].value(), x[2].value()];
    let axis = geometry::least_aligned_axis(&vals);
    let xa = x[axis];
    let mut t = [-(x[0] * xa), -(x[1] * xa), -(x[2] * xa)];
    t[axis] = t[axis] + 1.0;
    let inv = S::constant(1.0) / gdot(&t, &t).sqrt();
    let e1 = [t[0] * inv, t[1] * inv, t[2] * inv];
    let e2 = gcross(x, &e1);
    (e1, e2)
}

/// Image of `x` and the images of the tangent frame `(e1, e2)` at `x`.
pub(crate) struct LayerDifferential<S> {
    pub point: [S; 3],
    pub d_e1: [S; 3],
    pub d_e2: [S; 3],
}

pub(crate) fn layer_differential<S: Real>(
    x: &[S; 3],
    bumps: impl IntoIterator<Item = (S, [S; 3], S)>,
) -> Result<LayerDifferential<S>> {
    let zero = S::constant(0.0);
    let mut g = [zero; 3];
    // symmetric: h[0]=xx h[1]=yy h[2]=zz h[3]=xy h[4]=xz h[5]=yz
    let mut h = [zero; 6];
    for (beta, m, eta) in bumps {
        let c = gdot(x, &m);
        let a = eta * (beta * (c - 1.0)).exp();
        let ab = a * beta;
        for i in 0..3 {
            g[i] = g[i] + a * m[i];
        }
        let (m0, m1, m2) = (ab * m[0], ab * m[1], ab * m[2]);
        h[0] = h[0] + m0 * m[0];
        h[1] = h[1] + m1 * m[1];
        h[2] = h[2] + m2 * m[2];
        h[3] = h[3] + m0 * m[1];
        h[4] = h[4] + m0 * m[2];
        h[5] = h[5] + m1 * m[2];
    }
    let s = gdot(x, &g);
    let v = [g[0] - s * x[0], g[1] - s * x[1], g[2] - s * x[2]];
    let r2 = gdot(&v, &v);
    let grad_norm = r2.value().sqrt();
    if !(grad_norm < FRAC_PI_2) {
        return Err(Error::WrappingViolation { norm: grad_norm });
    }
    let (cos_r, sinc, kappa) = trig_terms(r2);
    let point = [
        cos_r * x[0] + sinc * v[0],
        cos_r * x[1] + sinc * v[1],
        cos_r * x[2] + sinc * v[2],
    ];

    let basis = generic_basis(x);
    let push = |u: &[S; 3]| -> [S; 3] {
        let hu = [
            h[0] * u[0] + h[3] * u[1] + h[4] * u[2],
            h[3] * u[0] + h[1] * u[1] + h[5] * u[2],
            h[4] * u[0] + h[5] * u[1] + h[2] * u[2],
        ];
        let ds = gdot(u, &g) + gdot(x, &hu);
        let dv = [
            hu[0] - ds * x[0] - s * u[0],
            hu[1] - ds * x[1] - s * u[1],
            hu[2] - ds * x[2] - s * u[2],
        ];
        let q = gdot(&v, &dv);
        let kq = kappa * q;
        [
            cos_r * u[0] + sinc * (dv[0] - q * x[0]) + kq * v[0],
            cos_r * u[1] + sinc * (dv[1] - q * x[1]) + kq * v[1],
            cos_r * u[2] + sinc * (dv[2] - q * x[2]) + kq * v[2],
        ]
    };
    let d_e1 = push(&basis.0);
    let d_e2 = push(&basis.1);
    Ok(LayerDifferential {
        point,
        d_e1,
        d_e2,
    })
}

/// One layer: image point and `ln |det J|`.
#[inline]
pub(crate) fn layer_step<S: Real>(
    x: &[S; 3],
    bumps: impl IntoIterator<Item = (S, [S; 3], S)>,
) -> Result<([S; 3], S)> {
    let d = layer_differential(x, bumps)?;
    // det of the tangent map between right-handed frames at x and T(x)
    let det = gdot(&gcross(&d.d_e1, &d.d_e2), &d.point);
    if !(det.value().abs() >= DEGENERATE_DET) {
        return Err(Error::DegenerateJacobian {
            det: det.value(),
            point: [x[0].value(), x[1].value(), x[2].value()],
        });
    }
    Ok((d.point, det.ln_abs()))
}

// ---------------------------------------------------------------------------
// f64 surface

/// `Σ_i (η_i/β_i)·exp(β_i(⟨x, m_i⟩ − 1))`
pub fn potential(x: &UnitVector, layer: &LayerParams) -> f64 {
    layer
        .bumps
        .iter()
        .map(|b| b.eta / b.beta * (b.beta * (x.dot(&b.center) - 1.0)).exp())
        .sum()
}

/// Riemannian gradient of [`potential`] at `x`.
pub fn potential_gradient(x: &UnitVector, layer: &LayerParams) -> Result<TangentVector> {
    let mut g = [0.0; 3];
    for b in &layer.bumps {
        let a = b.eta * (b.beta * (x.dot(&b.center) - 1.0)).exp();
        g = geometry::add(&g, &geometry::scale(b.center.coords(), a));
    }
    let v = geometry::project_to_tangent(x, &g);
    let n = v.norm();
    if !(n < FRAC_PI_2) {
        return Err(Error::WrappingViolation { norm: n });
    }
    Ok(v)
}

/// `exp_x(∇φ(x))`
pub fn layer_forward(x: &UnitVector, layer: &LayerParams) -> Result<UnitVector> {
    let v = potential_gradient(x, layer)?;
    Ok(geometry::exp_map(x, &v))
}

/// Jacobian of one layer in `tangent_basis(x)` → `tangent_basis(layer_forward(x))`.
///
/// Row `a`, column `b` is the component along output frame vector `a` of the
/// derivative along input frame vector `b`.
pub fn layer_jacobian(x: &UnitVector, layer: &LayerParams) -> Result<[[f64; 2]; 2]> {
    let d = layer_differential(x.coords(), layer.kernel_bumps())?;
    let y = UnitVector::new(d.point)?;
    let out = tangent_basis(&y);
    Ok([
        [
            geometry::dot(&out.e1, &d.d_e1),
            geometry::dot(&out.e1, &d.d_e2),
        ],
        [
            geometry::dot(&out.e2, &d.d_e1),
            geometry::dot(&out.e2, &d.d_e2),
        ],
    ])
}

/// `ln |det J|` for one layer at `x`.
pub fn layer_jacobian_logdet(x: &UnitVector, layer: &LayerParams) -> Result<f64> {
    Ok(layer_step(x.coords(), layer.kernel_bumps())?.1)
}

/// Endpoint of the flow and the log-density of the component at `x`.
pub fn component_trajectory(x: &UnitVector, comp: &ComponentParams) -> Result<(UnitVector, f64)> {
    let mut z = *x.coords();
    let mut total = -LN_4PI;
    for layer in &comp.layers {
        let (next, ld) = layer_step(&z, layer.kernel_bumps())?;
        z = next;
        total += ld;
    }
    Ok((UnitVector::new(z)?, total))
}

/// `ln f(x; Θ) = −ln 4π + Σ_k ln |det J_k|`.
pub fn component_logdensity(x: &UnitVector, comp: &ComponentParams) -> Result<f64> {
    component_trajectory(x, comp).map(|(_, ld)| ld)
}

/// Same computation on arbitrary scalars; `layers` yields each layer's bumps.
pub(crate) fn component_logdensity_generic<S: Real>(
    x: &UnitVector,
    layers: &[Vec<(S, [S; 3], S)>],
) -> Result<S> {
    let c = x.coords();
    let mut z = [S::constant(c[0]), S::constant(c[1]), S::constant(c[2])];
    let mut total = S::constant(-LN_4PI);
    for bumps in layers {
        let (next, ld) = layer_step(&z, bumps.iter().copied())?;
        z = next;
        total = total + ld;
    }
    Ok(total)
}
