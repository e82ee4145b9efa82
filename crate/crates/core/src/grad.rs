//! Unconstrained parameterization of a flow component, exact gradients of
//! the weighted log-likelihood, and the mini-batch SGD used in every M-step.
//!
//! Raw parameters decode to valid layer parameters:
//!
//! * `β = s / (1 + s/cap)` with `s = softplus(raw)`, so `0 < β < cap`;
//! * `m = raw / ‖raw‖`;
//! * `η = softmax(raw)` over the `p` bumps of a layer.
//!
//! Gradients are taken by recording the flow kernel on the autodiff tape
//! per observation, then chaining through the decoder in closed form.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adjoint;
use crate::autodiff::{self, Real, Var};
use crate::error::{Error, Result};
use crate::flow::{self, ComponentParams, LayerParams, RadialBump};
use crate::geometry::{self, UnitVector};
use crate::numeric::{pairwise_sum, pairwise_sum_rows};

pub const DEFAULT_BETA_CAP: f64 = 50.0;

/// Number of step halvings tried before a backtracking step is rejected.
const MAX_HALVINGS: usize = 30;

/// Layer count `K` and bumps per layer `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowShape {
    pub layers: usize,
    pub bases: usize,
}

impl FlowShape {
    pub fn new(layers: usize, bases: usize) -> Result<Self> {
        if layers == 0 || bases == 0 {
            return Err(Error::InvalidParameter(format!(
                "flow shape needs K, p >= 1, got K={layers} p={bases}"
            )));
        }
        Ok(FlowShape { layers, bases })
    }

    /// Raw values per layer: `p` betas, `3p` center coordinates, `p` etas.
    pub fn per_layer(&self) -> usize {
        5 * self.bases
    }

    pub fn len(&self) -> usize {
        self.layers * self.per_layer()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw → concentration. `raw = 0` gives `ln 2` when the cap is infinite.
pub fn beta_from_raw(raw: f64, cap: f64) -> f64 {
    let s = softplus(raw);
    (s / (1.0 + s / cap)).max(f64::MIN_POSITIVE)
}

fn beta_from_raw_derivative(raw: f64, cap: f64) -> f64 {
    let s = softplus(raw);
    let d = 1.0 + s / cap;
    sigmoid(raw) / (d * d)
}

/// Inverse of [`beta_from_raw`] on `(0, cap)`.
pub fn raw_from_beta(beta: f64, cap: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < cap) {
        return Err(Error::InvalidParameter(format!(
            "concentration {beta} outside (0, {cap})"
        )));
    }
    let s = beta / (1.0 - beta / cap);
    // softplus⁻¹(s) = s + ln(1 − e^{−s})
    Ok(s + (-(-s).exp_m1()).ln())
}

/// Unconstrained parameters of one component, stored flat layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParams {
    shape: FlowShape,
    beta_cap: f64,
    values: Vec<f64>,
}

impl FreeParams {
    pub fn new(shape: FlowShape, beta_cap: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} raw values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if !(beta_cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta cap must be positive, got {beta_cap}"
            )));
        }
        Ok(FreeParams {
            shape,
            beta_cap,
            values,
        })
    }

    /// Concentrations all equal to `init_beta`, centers uniform on the
    /// sphere, equal bump weights.
    pub fn init(
        shape: FlowShape,
        beta_cap: f64,
        init_beta: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let raw_beta = raw_from_beta(init_beta, beta_cap)?;
        let mut values = Vec::with_capacity(shape.len());
        for _ in 0..shape.layers {
            values.extend(std::iter::repeat_n(raw_beta, shape.bases));
            for _ in 0..shape.bases {
                let c = random_unit(rng);
                values.extend_from_slice(c.coords());
            }
            values.extend(std::iter::repeat_n(0.0, shape.bases));
        }
        FreeParams::new(shape, beta_cap, values)
    }

    pub fn shape(&self) -> FlowShape {
        self.shape
    }

    pub fn beta_cap(&self) -> f64 {
        self.beta_cap
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offset(&self, layer: usize) -> usize {
        layer * self.shape.per_layer()
    }

    pub fn raw_beta(&self, layer: usize, i: usize) -> f64 {
        self.values[self.offset(layer) + i]
    }

    pub fn raw_center(&self, layer: usize, i: usize) -> [f64; 3] {
        let o = self.offset(layer) + self.shape.bases + 3 * i;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    pub fn set_raw_center(&mut self, layer: usize, i: usize, c: [f64; 3]) {
        let o = self.offset(layer) + self.shape.bases + 3 * i;
        self.values[o..o + 3].copy_from_slice(&c);
    }

    pub fn set_raw_beta(&mut self, layer: usize, i: usize, raw: f64) {
        let o = self.offset(layer) + i;
        self.values[o] = raw;
    }

    pub fn raw_eta(&self, layer: usize, i: usize) -> f64 {
        self.values[self.offset(layer) + 4 * self.shape.bases + i]
    }

    /// Rescales raw centers to unit length; the decoded parameters are unchanged.
    pub fn normalize_centers(&mut self) {
        for l in 0..self.shape.layers {
            for i in 0..self.shape.bases {
                let c = self.raw_center(l, i);
                let n = geometry::norm(&c);
                if n > 0.0 && n.is_finite() {
                    self.set_raw_center(l, i, geometry::scale(&c, 1.0 / n));
                }
            }
        }
    }
}

pub(crate) fn random_unit(rng: &mut impl Rng) -> UnitVector {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Valid layer parameters from raw values. Degenerate raw centers decode to
/// the north pole; underflowing weights are floored at the smallest normal.
pub fn decode(free: &FreeParams) -> ComponentParams {
    let p = free.shape.bases;
    let layers = (0..free.shape.layers)
        .map(|l| {
            let raw_etas: Vec<f64> = (0..p).map(|i| free.raw_eta(l, i)).collect();
            let etas = softmax(&raw_etas);
            let bumps = (0..p)
                .map(|i| RadialBump {
                    beta: beta_from_raw(free.raw_beta(l, i), free.beta_cap),
                    center: UnitVector::new(free.raw_center(l, i))
                        .unwrap_or(UnitVector::north_pole()),
                    eta: etas[i].max(f64::MIN_POSITIVE),
                })
                .collect();
            LayerParams::from_bumps(bumps)
        })
        .collect();
    ComponentParams::new(layers).expect("shape has K >= 1")
}

/// Right inverse of [`decode`]: raw centers are the unit centers, raw etas are `ln η`.
pub fn encode(comp: &ComponentParams, beta_cap: f64) -> Result<FreeParams> {
    let k = comp.k();
    let p = comp.layers()[0].p();
    let shape = FlowShape::new(k, p)?;
    let mut values = Vec::with_capacity(shape.len());
    for layer in comp.layers() {
        if layer.p() != p {
            return Err(Error::InvalidParameter(
                "all layers must have the same number of bumps".into(),
            ));
        }
        for b in layer.bumps() {
            values.push(raw_from_beta(b.beta, beta_cap)?);
        }
        for b in layer.bumps() {
            values.extend_from_slice(b.center.coords());
        }
        for b in layer.bumps() {
            values.push(b.eta.ln());
        }
    }
    FreeParams::new(shape, beta_cap, values)
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Observations with nonnegative weights (responsibilities, or 0/1 assignments).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    points: Vec<UnitVector>,
    weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn new(points: Vec<UnitVector>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weights must be finite and nonnegative, got {w}"
            )));
        }
        Ok(WeightedBatch { points, weights })
    }

    pub fn unit(points: Vec<UnitVector>) -> Self {
        let weights = vec![1.0; points.len()];
        WeightedBatch { points, weights }
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.weights[j] > 0.0).collect()
    }
}

fn objective_on(comp: &ComponentParams, batch: &WeightedBatch, idx: &[usize]) -> Result<f64> {
    let terms = idx
        .iter()
        .map(|&j| Ok(batch.weights[j] * flow::component_logdensity(&batch.points[j], comp)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// `Σ_j w_j · ln f(x_j; decode(free))`; zero-weight points are not evaluated.
pub fn objective(free: &FreeParams, batch: &WeightedBatch) -> Result<f64> {
    objective_on(&decode(free), batch, &batch.active())
}

/// Log-density at `x` and its gradient with respect to the decoded
/// parameters, laid out like the raw vector, by taping the generic kernel.
fn taped_point_gradient(
    comp: &ComponentParams,
    shape: FlowShape,
    x: &UnitVector,
    grad: &mut [f64],
) -> Result<f64> {
    let p = shape.bases;
    autodiff::record(|rec| {
        let mut inputs = vec![Var::constant(0.0); shape.len()];
        let layers: Vec<Vec<(Var, [Var; 3], Var)>> = comp
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let o = l * shape.per_layer();
                layer
                    .bumps()
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let c = b.center.coords();
                        let beta = rec.input(b.beta);
                        let m = [rec.input(c[0]), rec.input(c[1]), rec.input(c[2])];
                        let eta = rec.input(b.eta);
                        inputs[o + i] = beta;
                        inputs[o + p + 3 * i..o + p + 3 * i + 3].copy_from_slice(&m);
                        inputs[o + 4 * p + i] = eta;
                        (beta, m, eta)
                    })
                    .collect()
            })
            .collect();
        let out = flow::component_logdensity_generic(x, &layers)?;
        rec.gradient(out, &inputs, grad);
        Ok(out.value())
    })
}

/// Pulls a gradient over decoded parameters back to raw parameters.
fn chain_to_raw(free: &FreeParams, comp: &ComponentParams, decoded: &[f64]) -> Vec<f64> {
    let shape = free.shape;
    let p = shape.bases;
    let mut raw = vec![0.0; shape.len()];
    for (l, layer) in comp.layers().iter().enumerate() {
        let o = l * shape.per_layer();
        let etas = layer.etas();
        let weighted: f64 = (0..p).map(|i| etas[i] * decoded[o + 4 * p + i]).sum();
        for i in 0..p {
            raw[o + i] =
                decoded[o + i] * beta_from_raw_derivative(free.raw_beta(l, i), free.beta_cap);
            let r = free.raw_center(l, i);
            let n = geometry::norm(&r);
            let m = geometry::scale(&r, 1.0 / n);
            let gm = [
                decoded[o + p + 3 * i],
                decoded[o + p + 3 * i + 1],
                decoded[o + p + 3 * i + 2],
            ];
            let t = geometry::project_to_tangent(&UnitVector::from_unit(m), &gm).vec;
            for d in 0..3 {
                raw[o + p + 3 * i + d] = t[d] / n;
            }
            raw[o + 4 * p + i] = etas[i] * (decoded[o + 4 * p + i] - weighted);
        }
    }
    raw
}

type PointGradient = fn(&ComponentParams, FlowShape, &UnitVector, &mut [f64]) -> Result<f64>;

fn adjoint_point_gradient(
    comp: &ComponentParams,
    _shape: FlowShape,
    x: &UnitVector,
    grad: &mut [f64],
) -> Result<f64> {
    adjoint::logdensity_and_gradient(x, comp, grad)
}

fn value_and_gradient_on(
    free: &FreeParams,
    batch: &WeightedBatch,
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    accumulate(free, batch, idx, adjoint_point_gradient)
}

fn accumulate(
    free: &FreeParams,
    batch: &WeightedBatch,
    idx: &[usize],
    point_gradient: PointGradient,
) -> Result<(f64, Vec<f64>)> {
    let comp = decode(free);
    let width = free.shape.len();
    let mut values = Vec::with_capacity(idx.len());
    let mut rows = Vec::with_capacity(idx.len());
    for &j in idx {
        let w = batch.weights[j];
        let mut g = vec![0.0; width];
        let v = point_gradient(&comp, free.shape, &batch.points[j], &mut g)?;
        g.iter_mut().for_each(|x| *x *= w);
        values.push(w * v);
        rows.push(g);
    }
    let decoded = pairwise_sum_rows(&rows, width);
    Ok((pairwise_sum(&values), chain_to_raw(free, &comp, &decoded)))
}

/// Exact gradient of [`objective`] with respect to every raw parameter.
pub fn gradient(free: &FreeParams, batch: &WeightedBatch) -> Result<Vec<f64>> {
    value_and_gradient_on(free, batch, &batch.active()).map(|(_, g)| g)
}

/// Objective value and gradient in one pass.
pub fn value_and_gradient(free: &FreeParams, batch: &WeightedBatch) -> Result<(f64, Vec<f64>)> {
    value_and_gradient_on(free, batch, &batch.active())
}

/// Same as [`value_and_gradient`], computed by recording the density on the
/// autodiff tape. Slower; kept as an independent check of the fast path.
pub fn taped_value_and_gradient(
    free: &FreeParams,
    batch: &WeightedBatch,
) -> Result<(f64, Vec<f64>)> {
    accumulate(free, batch, &batch.active(), taped_point_gradient)
}

/// Mini-batch SGD settings for one M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Step size applied to the gradient of the batch's weighted mean log-density.
    pub learning_rate: f64,
    /// Upper bound; the effective size is `min(batch_size, #points with weight > 0)`.
    pub batch_size: usize,
    pub epochs_per_mstep: usize,
    pub seed: u64,
    pub momentum: f64,
    /// Halve a step until the batch objective does not decrease.
    pub backtracking: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-2,
            batch_size: 256,
            epochs_per_mstep: 30,
            seed: 0,
            momentum: 0.9,
            backtracking: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SgdConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaximizeOutcome {
    pub params: FreeParams,
    pub objective_before: f64,
    pub objective_after: f64,
    pub steps_taken: usize,
    pub steps_rejected: usize,
}

/// Mini-batch gradient ascent on [`objective`].
///
/// The full-data objective is evaluated after every epoch and the best
/// iterate seen (including the start) is returned, so the result never
/// scores below `free0`. Deterministic for a given `cfg.seed`.
pub fn maximize(
    free0: &FreeParams,
    data: &WeightedBatch,
    cfg: &SgdConfig,
) -> Result<MaximizeOutcome> {
    cfg.validate()?;
    let active = data.active();
    let before = objective_on(&decode(free0), data, &active)?;
    if !before.is_finite() {
        return Err(Error::NonFiniteObjective { value: before });
    }
    let mut outcome = MaximizeOutcome {
        params: free0.clone(),
        objective_before: before,
        objective_after: before,
        steps_taken: 0,
        steps_rejected: 0,
    };
    if active.is_empty() || cfg.epochs_per_mstep == 0 {
        return Ok(outcome);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.min(active.len());
    let mut current = free0.clone();
    let mut velocity = vec![0.0; current.values.len()];
    let mut order = active.clone();

    for _ in 0..cfg.epochs_per_mstep {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let total_weight: f64 = chunk.iter().map(|&j| data.weights[j]).sum();
            if total_weight <= 0.0 {
                continue;
            }
            let (value, grad) = value_and_gradient_on(&current, data, chunk)?;
            // compare trial steps against the same evaluation path
            let value = if cfg.backtracking {
                objective_on(&decode(&current), data, chunk)?
            } else {
                value
            };
            if !value.is_finite() {
                return Err(Error::NonFiniteObjective { value });
            }
            let scale = cfg.learning_rate / total_weight;
            for (v, g) in velocity.iter_mut().zip(&grad) {
                *v = cfg.momentum * *v + scale * g;
            }
            if cfg.backtracking {
                let mut step = velocity.clone();
                let mut accepted = false;
                for _ in 0..MAX_HALVINGS {
                    let candidate = stepped(&current, &step);
                    let trial = objective_on(&decode(&candidate), data, chunk);
                    if matches!(trial, Ok(t) if t >= value) {
                        current = candidate;
                        velocity = step;
                        accepted = true;
                        break;
                    }
                    step.iter_mut().for_each(|s| *s *= 0.5);
                }
                if accepted {
                    outcome.steps_taken += 1;
                } else {
                    velocity.fill(0.0);
                    outcome.steps_rejected += 1;
                }
            } else {
                current = stepped(&current, &velocity);
                outcome.steps_taken += 1;
            }
        }
        let full = objective_on(&decode(&current), data, &active)?;
        if !full.is_finite() {
            return Err(Error::NonFiniteObjective { value: full });
        }
        if full > outcome.objective_after {
            outcome.objective_after = full;
            outcome.params = current.clone();
        }
    }
    Ok(outcome)
}

fn stepped(free: &FreeParams, step: &[f64]) -> FreeParams {
    let mut next = free.clone();
    for (v, s) in next.values.iter_mut().zip(step) {
        *v += s;
    }
    next.normalize_centers();
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::LN_4PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_free(r: &mut ChaCha8Rng, k: usize, p: usize) -> FreeParams {
        let shape = FlowShape::new(k, p).unwrap();
        let mut f = FreeParams::init(shape, DEFAULT_BETA_CAP, 1.0, r).unwrap();
        for l in 0..k {
            for i in 0..p {
                f.set_raw_beta(l, i, r.random_range(-1.5..2.5));
            }
        }
        for l in 0..k {
            for i in 0..p {
                let o = l * shape.per_layer() + 4 * p + i;
                f.values_mut()[o] = r.random_range(-1.0..1.0);
            }
        }
        f
    }

    fn random_batch(r: &mut ChaCha8Rng, n: usize) -> WeightedBatch {
        let pts = (0..n).map(|_| random_unit(r)).collect();
        let w = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
        WeightedBatch::new(pts, w).unwrap()
    }

    #[test]
    fn decode_examples() {
        let shape = FlowShape::new(2, 3).unwrap();
        let mut values = vec![0.0; shape.len()];
        // raw centers must be non-degenerate
        for l in 0..2 {
            for i in 0..3 {
                let o = l * shape.per_layer() + 3 + 3 * i;
                values[o..o + 3].copy_from_slice(&[1.0, 2.0 * i as f64, -3.0]);
            }
        }
        let f = FreeParams::new(shape, f64::INFINITY, values).unwrap();
        let c = decode(&f);
        for layer in c.layers() {
            for b in layer.bumps() {
                assert!((b.eta - 1.0 / 3.0).abs() < 1e-15);
                assert!((b.beta - 2f64.ln()).abs() < 1e-15);
                assert!((geometry::norm(b.center.coords()) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beta_map_respects_cap_and_inverts() {
        for &raw in &[-30.0, -3.0, 0.0, 1.0, 10.0, 200.0] {
            let b = beta_from_raw(raw, 50.0);
            assert!(b > 0.0 && b < 50.0);
            if raw > -30.0 && raw < 100.0 {
                let back = raw_from_beta(b, 50.0).unwrap();
                assert!((back - raw).abs() < 1e-8 * raw.abs().max(1.0), "{raw} {back}");
            }
        }
        assert!(raw_from_beta(50.0, 50.0).is_err());
        assert!(raw_from_beta(0.0, 50.0).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut r = rng(1);
        for _ in 0..50 {
            let f = random_free(&mut r, 3, 2);
            let comp = decode(&f);
            let back = decode(&encode(&comp, DEFAULT_BETA_CAP).unwrap());
            for (a, b) in comp.layers().iter().zip(back.layers()) {
                for (x, y) in a.bumps().iter().zip(b.bumps()) {
                    assert!((x.beta - y.beta).abs() < 1e-10 * x.beta.max(1.0));
                    assert!((x.eta - y.eta).abs() < 1e-10);
                    let d = geometry::sub(x.center.coords(), y.center.coords());
                    assert!(geometry::norm(&d) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn objective_examples() {
        let mut r = rng(2);
        let f = random_free(&mut r, 2, 1);
        let pts: Vec<UnitVector> = (0..5).map(|_| random_unit(&mut r)).collect();
        let zero = WeightedBatch::new(pts.clone(), vec![0.0; 5]).unwrap();
        assert_eq!(objective(&f, &zero).unwrap(), 0.0);
        assert!(gradient(&f, &zero).unwrap().iter().all(|g| *g == 0.0));

        // near-identity layers: large β, centers far from the data
        let shape = FlowShape::new(3, 1).unwrap();
        let mut flat = FreeParams::init(shape, f64::INFINITY, 1.0, &mut r).unwrap();
        for l in 0..3 {
            flat.set_raw_beta(l, 0, 1e6);
            flat.set_raw_center(l, 0, [0.0, 0.0, 1.0]);
        }
        let eq: Vec<UnitVector> = (0..7)
            .map(|j| UnitVector::from_lon_lat_degrees(j as f64 * 50.0, 0.0))
            .collect();
        let v = objective(&flat, &WeightedBatch::unit(eq)).unwrap();
        assert!((v + 7.0 * LN_4PI).abs() < 1e-9);
    }

    #[test]
    fn objective_matches_naive_sum() {
        let mut r = rng(3);
        for _ in 0..20 {
            let f = random_free(&mut r, 3, 2);
            let b = random_batch(&mut r, 10);
            let comp = decode(&f);
            let naive: f64 = b
                .points()
                .iter()
                .zip(b.weights())
                .map(|(x, w)| w * flow::component_logdensity(x, &comp).unwrap())
                .sum();
            assert!((objective(&f, &b).unwrap() - naive).abs() < 1e-10);
            // tape value agrees with the f64 path
            let (v, _) = value_and_gradient(&f, &b).unwrap();
            assert!((v - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(4);
        let f = random_free(&mut r, 2, 1);
        let b = random_batch(&mut r, 5);
        let g = gradient(&f, &b).unwrap();
        let h = 1e-6;
        for i in 0..g.len() {
            let mut plus = f.clone();
            plus.values_mut()[i] += h;
            let mut minus = f.clone();
            minus.values_mut()[i] -= h;
            let fd = (objective(&plus, &b).unwrap() - objective(&minus, &b).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            assert!(rel < 1e-4, "coord {i}: analytic {} fd {}", g[i], fd);
        }
    }

    #[test]
    fn fast_gradient_matches_tape() {
        let mut r = rng(10);
        for case in 0..60 {
            let k = 1 + case % 4;
            let p = 1 + case % 3;
            let mut f = random_free(&mut r, k, p);
            if case % 5 == 0 {
                // tiny gradients exercise the series branch
                for l in 0..k {
                    for i in 0..p {
                        f.set_raw_beta(l, i, 30.0);
                    }
                }
            }
            let mut pts: Vec<UnitVector> = (0..6).map(|_| random_unit(&mut r)).collect();
            pts.push(UnitVector::north_pole());
            pts.push(UnitVector::new([1.0, 1.0, 1.0]).unwrap());
            let b = WeightedBatch::unit(pts);
            let (v1, g1) = value_and_gradient(&f, &b).unwrap();
            let (v2, g2) = taped_value_and_gradient(&f, &b).unwrap();
            assert!((v1 - v2).abs() < 1e-10 * v1.abs().max(1.0));
            for (a, t) in g1.iter().zip(&g2) {
                assert!((a - t).abs() < 1e-8 * t.abs().max(1.0), "{a} vs {t}");
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_weights() {
        let mut r = rng(5);
        let f = random_free(&mut r, 2, 2);
        let x = random_unit(&mut r);
        let y = random_unit(&mut r);
        let doubled = WeightedBatch::new(vec![x, y], vec![2.0, 1.0]).unwrap();
        let copies = WeightedBatch::new(vec![x, x, y], vec![1.0, 1.0, 1.0]).unwrap();
        let a = gradient(&f, &doubled).unwrap();
        let b = gradient(&f, &copies).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10 * u.abs().max(1.0));
        }
    }

    #[test]
    fn permuting_bumps_permutes_gradient() {
        let mut r = rng(6);
        let f = random_free(&mut r, 2, 2);
        let b = random_batch(&mut r, 6);
        let shape = f.shape();
        let mut swapped = f.clone();
        let perm = |i: usize| 1 - i;
        for l in 0..shape.layers {
            let o = l * shape.per_layer();
            for i in 0..2 {
                let src = perm(i);
                swapped.values_mut()[o + i] = f.values()[o + src];
                swapped.set_raw_center(l, i, f.raw_center(l, src));
                swapped.values_mut()[o + 8 + i] = f.values()[o + 8 + src];
            }
        }
        let (v1, g1) = value_and_gradient(&f, &b).unwrap();
        let (v2, g2) = value_and_gradient(&swapped, &b).unwrap();
        assert!((v1 - v2).abs() < 1e-10);
        for l in 0..shape.layers {
            let o = l * shape.per_layer();
            for i in 0..2 {
                let src = perm(i);
                assert!((g2[o + i] - g1[o + src]).abs() < 1e-9);
                assert!((g2[o + 8 + i] - g1[o + 8 + src]).abs() < 1e-9);
                for d in 0..3 {
                    assert!((g2[o + 2 + 3 * i + d] - g1[o + 2 + 3 * src + d]).abs() < 1e-9);
                }
            }
        }
    }

    fn cluster(r: &mut ChaCha8Rng, n: usize) -> WeightedBatch {
        let mu = UnitVector::new([0.3, 0.4, 0.8]).unwrap();
        let pts = crate::vmf::vmf_sample(
            &crate::vmf::VmfParams::new(mu, 20.0).unwrap(),
            n,
            r.random(),
        );
        WeightedBatch::unit(pts)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut r = rng(7);
        let f = random_free(&mut r, 3, 1);
        let data = cluster(&mut r, 20);
        let cfg = SgdConfig {
            epochs_per_mstep: 0,
            ..SgdConfig::default()
        };
        let out = maximize(&f, &data, &cfg).unwrap();
        assert_eq!(out.params, f);
        assert_eq!(out.objective_before, out.objective_after);
    }

    #[test]
    fn maximize_is_deterministic_and_does_not_regress() {
        let mut r = rng(8);
        let data = cluster(&mut r, 60);
        let shape = FlowShape::new(4, 1).unwrap();
        let f = FreeParams::init(shape, DEFAULT_BETA_CAP, 1.0, &mut r).unwrap();
        let cfg = SgdConfig {
            epochs_per_mstep: 5,
            batch_size: 16,
            seed: 99,
            ..SgdConfig::default()
        };
        let a = maximize(&f, &data, &cfg).unwrap();
        let b = maximize(&f, &data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective_after.to_bits(), b.objective_after.to_bits());
        assert!(a.objective_after >= a.objective_before);
        assert!((objective(&a.params, &data).unwrap() - a.objective_after).abs() < 1e-9);
    }

    #[test]
    fn full_batch_backtracking_is_monotone() {
        let mut r = rng(9);
        let data = cluster(&mut r, 40);
        let shape = FlowShape::new(3, 1).unwrap();
        let mut f = FreeParams::init(shape, DEFAULT_BETA_CAP, 1.0, &mut r).unwrap();
        let cfg = SgdConfig {
            epochs_per_mstep: 1,
            batch_size: 40,
            momentum: 0.0,
            backtracking: true,
            learning_rate: 0.5,
            ..SgdConfig::default()
        };
        let mut last = objective(&f, &data).unwrap();
        for s in 0..10 {
            let out = maximize(&f, &data, &cfg.with_seed(s)).unwrap();
            assert!(out.objective_after >= last);
            last = out.objective_after;
            f = out.params;
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SgdConfig {
                learning_rate: 0.0,
                ..SgdConfig::default()
            },
            SgdConfig {
                batch_size: 0,
                ..SgdConfig::default()
            },
            SgdConfig {
                momentum: 1.0,
                ..SgdConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(WeightedBatch::new(vec![UnitVector::north_pole()], vec![-1.0]).is_err());
        assert!(WeightedBatch::new(vec![UnitVector::north_pole()], vec![]).is_err());
        assert!(FlowShape::new(0, 1).is_err());
    }
}
