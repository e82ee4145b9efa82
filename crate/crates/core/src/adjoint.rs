//! Hand-written reverse pass of a component log-density.
//!
//! Computes the same quantity as [`flow::component_logdensity`] together
//! with its gradient with respect to every decoded layer parameter. Much
//! faster than taping the generic kernel; the tape remains the reference
//! the tests compare against.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::flow::{ComponentParams, DEGENERATE_DET, LN_4PI};
use crate::geometry::{self, cross, dot, UnitVector, Vec3};

#[inline]
fn axpy(acc: &mut Vec3, a: f64, x: &Vec3) {
    acc[0] += a * x[0];
    acc[1] += a * x[1];
    acc[2] += a * x[2];
}

/// `H u` for `H` stored as `[xx, yy, zz, xy, xz, yz]`.
#[inline]
fn sym_mul(h: &[f64; 6], u: &Vec3) -> Vec3 {
    [
        h[0] * u[0] + h[3] * u[1] + h[4] * u[2],
        h[3] * u[0] + h[1] * u[1] + h[5] * u[2],
        h[4] * u[0] + h[5] * u[1] + h[2] * u[2],
    ]
}

#[inline]
fn mat_mul(m: &[[f64; 3]; 3], u: &Vec3) -> Vec3 {
    [dot(&m[0], u), dot(&m[1], u), dot(&m[2], u)]
}

#[inline]
fn mat_t_mul(m: &[[f64; 3]; 3], u: &Vec3) -> Vec3 {
    [
        m[0][0] * u[0] + m[1][0] * u[1] + m[2][0] * u[2],
        m[0][1] * u[0] + m[1][1] * u[1] + m[2][1] * u[2],
        m[0][2] * u[0] + m[1][2] * u[1] + m[2][2] * u[2],
    ]
}

/// `(cos r, sinc r, κ(r))` and their derivatives with respect to `r²`.
fn trig_with_derivatives(r2: f64) -> ([f64; 3], [f64; 3]) {
    if r2 < 1e-4 {
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let vals = [
            1.0 - r2 * 0.5 + r4 / 24.0 - r6 / 720.0,
            1.0 - r2 / 6.0 + r4 / 120.0 - r6 / 5040.0,
            -1.0 / 3.0 + r2 / 30.0 - r4 / 840.0 + r6 / 45360.0,
        ];
        let ders = [
            -0.5 + r2 / 12.0 - r4 / 240.0,
            -1.0 / 6.0 + r2 / 60.0 - r4 / 1680.0,
            1.0 / 30.0 - r2 / 420.0 + r4 / 15120.0,
        ];
        (vals, ders)
    } else {
        let r = r2.sqrt();
        let (s, c) = r.sin_cos();
        let sinc = s / r;
        let kappa = (r * c - s) / (r2 * r);
        (
            [c, sinc, kappa],
            [-0.5 * sinc, 0.5 * kappa, -(sinc + 3.0 * kappa) / (2.0 * r2)],
        )
    }
}

#[derive(Default, Clone, Copy)]
struct Frame {
    u: Vec3,
    hu: Vec3,
    ds: f64,
    dv: Vec3,
    q: f64,
    w: Vec3,
}

#[derive(Default, Clone, Copy)]
struct BumpState {
    c: f64,
    e: f64,
    a: f64,
}

#[derive(Default, Clone, Copy)]
struct LayerState {
    x: Vec3,
    axis: usize,
    t_norm: f64,
    g: Vec3,
    h: [f64; 6],
    s: f64,
    v: Vec3,
    trig: [f64; 3],
    trig_d: [f64; 3],
    y: Vec3,
    frames: [Frame; 2],
    det: f64,
}

/// `ln f(x; Θ)`; the gradient over decoded parameters is written to `grad`
/// in the raw layout (per layer: betas, centers, etas).
pub(crate) fn logdensity_and_gradient(
    x: &UnitVector,
    comp: &ComponentParams,
    grad: &mut [f64],
) -> Result<f64> {
    let layers = comp.layers();
    let p = layers[0].p();
    debug_assert_eq!(grad.len(), layers.len() * 5 * p);

    let mut states = Vec::with_capacity(layers.len());
    let mut bump_states = Vec::with_capacity(layers.len() * p);
    let mut z = *x.coords();
    let mut total = -LN_4PI;

    for layer in layers {
        let mut st = LayerState {
            x: z,
            ..LayerState::default()
        };
        for b in layer.bumps() {
            let m = b.center.coords();
            let c = dot(&z, m);
            let e = (b.beta * (c - 1.0)).exp();
            let a = b.eta * e;
            let ab = a * b.beta;
            axpy(&mut st.g, a, m);
            st.h[0] += ab * m[0] * m[0];
            st.h[1] += ab * m[1] * m[1];
            st.h[2] += ab * m[2] * m[2];
            st.h[3] += ab * m[0] * m[1];
            st.h[4] += ab * m[0] * m[2];
            st.h[5] += ab * m[1] * m[2];
            bump_states.push(BumpState { c, e, a });
        }
        st.s = dot(&z, &st.g);
        st.v = geometry::sub(&st.g, &geometry::scale(&z, st.s));
        let r2 = dot(&st.v, &st.v);
        let norm = r2.sqrt();
        if !(norm < FRAC_PI_2) {
            return Err(Error::WrappingViolation { norm });
        }
        let (trig, trig_d) = trig_with_derivatives(r2);
        st.trig = trig;
        st.trig_d = trig_d;
        let [cos_r, sinc, kappa] = trig;
        for i in 0..3 {
            st.y[i] = cos_r * z[i] + sinc * st.v[i];
        }

        st.axis = geometry::least_aligned_axis(&z);
        let mut t = geometry::scale(&z, -z[st.axis]);
        t[st.axis] += 1.0;
        st.t_norm = geometry::norm(&t);
        let e1 = geometry::scale(&t, 1.0 / st.t_norm);
        let e2 = cross(&z, &e1);
        for (f, u) in st.frames.iter_mut().zip([e1, e2]) {
            f.u = u;
            f.hu = sym_mul(&st.h, &u);
            f.ds = dot(&u, &st.g) + dot(&z, &f.hu);
            for i in 0..3 {
                f.dv[i] = f.hu[i] - f.ds * z[i] - st.s * u[i];
            }
            f.q = dot(&st.v, &f.dv);
            for i in 0..3 {
                f.w[i] = cos_r * u[i] + sinc * (f.dv[i] - f.q * z[i]) + kappa * f.q * st.v[i];
            }
        }
        st.det = dot(&cross(&st.frames[0].w, &st.frames[1].w), &st.y);
        if !(st.det.abs() >= DEGENERATE_DET) {
            return Err(Error::DegenerateJacobian { det: st.det, point: z });
        }
        total += st.det.abs().ln();
        z = st.y;
        states.push(st);
    }

    let mut y_bar = [0.0; 3];
    for (l, (layer, st)) in layers.iter().zip(&states).enumerate().rev() {
        let x = &st.x;
        let [cos_r, sinc, kappa] = st.trig;
        let [w1, w2] = [st.frames[0].w, st.frames[1].w];
        let det_bar = 1.0 / st.det;

        let mut x_bar = [0.0; 3];
        let mut g_bar = [0.0; 3];
        let mut h_bar = [[0.0; 3]; 3];
        let mut v_bar = [0.0; 3];
        let mut s_bar = 0.0;
        let mut trig_bar = [0.0; 3];

        let mut yt_bar = y_bar;
        axpy(&mut yt_bar, det_bar, &cross(&w1, &w2));
        let w_bars = [
            geometry::scale(&cross(&w2, &st.y), det_bar),
            geometry::scale(&cross(&st.y, &w1), det_bar),
        ];

        // y = cos r · x + sinc r · v
        trig_bar[0] += dot(&yt_bar, x);
        axpy(&mut x_bar, cos_r, &yt_bar);
        trig_bar[1] += dot(&yt_bar, &st.v);
        axpy(&mut v_bar, sinc, &yt_bar);

        let mut u_bars = [[0.0; 3]; 2];
        for ((f, w_bar), u_bar) in st.frames.iter().zip(&w_bars).zip(&mut u_bars) {
            let u = &f.u;
            // w = cos r · u + sinc r · (dv − q x) + κ q v
            trig_bar[0] += dot(w_bar, u);
            axpy(u_bar, cos_r, w_bar);
            let mut dvqx = f.dv;
            axpy(&mut dvqx, -f.q, x);
            trig_bar[1] += dot(w_bar, &dvqx);
            let wv = dot(w_bar, &st.v);
            let mut dv_bar = geometry::scale(w_bar, sinc);
            let q_bar = -sinc * dot(w_bar, x) + kappa * wv;
            axpy(&mut x_bar, -sinc * f.q, w_bar);
            trig_bar[2] += f.q * wv;
            axpy(&mut v_bar, kappa * f.q, w_bar);
            // q = ⟨v, dv⟩
            axpy(&mut v_bar, q_bar, &f.dv);
            axpy(&mut dv_bar, q_bar, &st.v);
            // dv = Hu − ds x − s u
            let mut hu_bar = dv_bar;
            let ds_bar = -dot(&dv_bar, x);
            axpy(&mut x_bar, -f.ds, &dv_bar);
            s_bar -= dot(&dv_bar, u);
            axpy(u_bar, -st.s, &dv_bar);
            // ds = ⟨u, g⟩ + ⟨x, Hu⟩
            axpy(u_bar, ds_bar, &st.g);
            axpy(&mut g_bar, ds_bar, u);
            axpy(&mut x_bar, ds_bar, &f.hu);
            axpy(&mut hu_bar, ds_bar, x);
            // Hu
            for (i, row) in h_bar.iter_mut().enumerate() {
                for (j, hij) in row.iter_mut().enumerate() {
                    *hij += hu_bar[i] * u[j];
                }
            }
            let back = sym_mul(&st.h, &hu_bar);
            axpy(u_bar, 1.0, &back);
        }

        // frame at x: t = e_axis − x_axis x, e1 = t/‖t‖, e2 = x × e1
        let e1 = st.frames[0].u;
        let [mut e1_bar, e2_bar] = u_bars;
        axpy(&mut x_bar, 1.0, &cross(&e1, &e2_bar));
        axpy(&mut e1_bar, 1.0, &cross(&e2_bar, x));
        let mut t_bar = e1_bar;
        axpy(&mut t_bar, -dot(&e1, &e1_bar), &e1);
        let t_bar = geometry::scale(&t_bar, 1.0 / st.t_norm);
        axpy(&mut x_bar, -x[st.axis], &t_bar);
        x_bar[st.axis] -= dot(x, &t_bar);

        // r² = ⟨v, v⟩
        let r2_bar = trig_bar[0] * st.trig_d[0]
            + trig_bar[1] * st.trig_d[1]
            + trig_bar[2] * st.trig_d[2];
        axpy(&mut v_bar, 2.0 * r2_bar, &st.v);
        // v = g − s x
        axpy(&mut g_bar, 1.0, &v_bar);
        s_bar -= dot(&v_bar, x);
        axpy(&mut x_bar, -st.s, &v_bar);
        // s = ⟨x, g⟩
        axpy(&mut x_bar, s_bar, &st.g);
        axpy(&mut g_bar, s_bar, x);

        let o = l * 5 * p;
        let bs = &bump_states[l * p..(l + 1) * p];
        for (i, (b, bst)) in layer.bumps().iter().zip(bs).enumerate() {
            let m = b.center.coords();
            let ab = bst.a * b.beta;
            let mut a_bar = dot(&g_bar, m);
            let mut m_bar = geometry::scale(&g_bar, bst.a);
            let hm = mat_mul(&h_bar, m);
            let htm = mat_t_mul(&h_bar, m);
            let ab_bar = dot(m, &hm);
            axpy(&mut m_bar, ab, &hm);
            axpy(&mut m_bar, ab, &htm);
            a_bar += ab_bar * b.beta;
            let mut beta_bar = ab_bar * bst.a;
            // a = η exp(β(c − 1))
            let t = a_bar * bst.a;
            let eta_bar = a_bar * bst.e;
            beta_bar += t * (bst.c - 1.0);
            let c_bar = t * b.beta;
            axpy(&mut x_bar, c_bar, m);
            axpy(&mut m_bar, c_bar, x);

            grad[o + i] = beta_bar;
            grad[o + p + 3 * i..o + p + 3 * i + 3].copy_from_slice(&m_bar);
            grad[o + 4 * p + i] = eta_bar;
        }
        y_bar = x_bar;
    }
    Ok(total)
}
