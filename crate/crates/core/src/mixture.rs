//! Mixtures of flow components, fitted by soft or hard EM, and the
//! committee-of-flows baseline.

use log::{debug, info, warn};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, ComponentParams};
use crate::geometry::{self, TangentVector, UnitVector};
use crate::grad::{self, FlowShape, FreeParams, SgdConfig, WeightedBatch, DEFAULT_BETA_CAP};
use crate::numeric::{derive_seed, log_sum_exp, pairwise_sum};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<ComponentParams>,
    weights: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<ComponentParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "mixture needs G >= 1 components and as many weights (got {} and {})",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "mixture weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(MixtureModel {
            components,
            weights,
        })
    }

    /// Equal weights over `components`.
    pub fn uniform(components: Vec<ComponentParams>) -> Result<Self> {
        let g = components.len().max(1) as f64;
        let weights = vec![1.0 / g; components.len()];
        MixtureModel::new(components, weights)
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn g(&self) -> usize {
        self.components.len()
    }

    /// `ln τ_g + ln f(x; Θ_g)` for every component.
    pub fn weighted_logdensities(&self, x: &UnitVector) -> Result<Vec<f64>> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                if *w == 0.0 {
                    Ok(f64::NEG_INFINITY)
                } else {
                    Ok(w.ln() + flow::component_logdensity(x, c)?)
                }
            })
            .collect()
    }

    pub fn logdensity(&self, x: &UnitVector) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_logdensities(x)?))
    }

    pub fn density(&self, x: &UnitVector) -> Result<f64> {
        self.logdensity(x).map(f64::exp)
    }
}

/// `ln Σ_g τ_g f(x; Θ_g)` with max-shift.
pub fn mixture_logdensity(x: &UnitVector, model: &MixtureModel) -> Result<f64> {
    model.logdensity(x)
}

/// Posterior component probabilities, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    g: usize,
    values: Vec<f64>,
}

impl ResponsibilityMatrix {
    /// `rows` is row-major with `g` entries per row; each row must sum to 1.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let g = rows.first().map_or(0, Vec::len);
        if g == 0 {
            return Err(Error::InvalidParameter("responsibilities are empty".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * g);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != g || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!(
                    "row {j} is not a probability vector of length {g}"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("row {j} sums to {total}")));
            }
            values.extend_from_slice(row);
        }
        Ok(ResponsibilityMatrix { g, values })
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.g
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.g..(j + 1) * self.g]
    }

    pub fn get(&self, j: usize, g: usize) -> f64 {
        self.values[j * self.g + g]
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.n()).map(|j| self.get(j, g)).collect()
    }
}

/// One component label per observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    g: usize,
    labels: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn new(labels: Vec<usize>, g: usize) -> Result<Self> {
        if let Some(l) = labels.iter().find(|l| **l >= g) {
            return Err(Error::InvalidParameter(format!(
                "label {l} out of range for {g} components"
            )));
        }
        Ok(AssignmentMatrix { g, labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn g(&self) -> usize {
        self.g
    }

    /// Indicator `ẑ_{j,g}`.
    pub fn get(&self, j: usize, g: usize) -> bool {
        self.labels[j] == g
    }

    /// `N_g` for every component.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.g];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn nonempty(&self) -> usize {
        self.counts().iter().filter(|c| **c > 0).count()
    }
}

/// Row-major table of `ln τ_g + ln f(x_j; Θ_g)`.
struct LogTable {
    g: usize,
    values: Vec<f64>,
    row_totals: Vec<f64>,
}

impl LogTable {
    fn build(points: &[UnitVector], model: &MixtureModel) -> Result<Self> {
        let g = model.g();
        let mut values = Vec::with_capacity(points.len() * g);
        let mut row_totals = Vec::with_capacity(points.len());
        for (j, x) in points.iter().enumerate() {
            let row = model.weighted_logdensities(x)?;
            let total = log_sum_exp(&row);
            if total == f64::NEG_INFINITY {
                return Err(Error::ZeroDensity { index: j });
            }
            if !total.is_finite() {
                return Err(Error::NonFiniteObjective { value: total });
            }
            values.extend(row);
            row_totals.push(total);
        }
        Ok(LogTable {
            g,
            values,
            row_totals,
        })
    }

    fn log_likelihood(&self) -> f64 {
        pairwise_sum(&self.row_totals)
    }

    fn responsibilities(&self) -> ResponsibilityMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for (row, total) in self.values.chunks(self.g).zip(&self.row_totals) {
            let start = values.len();
            values.extend(row.iter().map(|v| (v - total).exp()));
            // absorb rounding so rows sum to 1
            let s: f64 = values[start..].iter().sum();
            values[start..].iter_mut().for_each(|v| *v /= s);
        }
        ResponsibilityMatrix { g: self.g, values }
    }
}

/// `π̂_{j,g} = τ_g f(x_j; Θ_g) / Σ_h τ_h f(x_j; Θ_h)`.
pub fn e_step(points: &[UnitVector], model: &MixtureModel) -> Result<ResponsibilityMatrix> {
    Ok(LogTable::build(points, model)?.responsibilities())
}

/// `Σ_j ln Σ_g τ_g f(x_j; Θ_g)`.
pub fn log_likelihood(points: &[UnitVector], model: &MixtureModel) -> Result<f64> {
    Ok(LogTable::build(points, model)?.log_likelihood())
}

/// Row-wise argmax; ties go to the lowest component index.
pub fn harden(resp: &ResponsibilityMatrix) -> AssignmentMatrix {
    let labels = (0..resp.n())
        .map(|j| {
            let row = resp.row(j);
            let mut best = 0;
            for (g, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect();
    AssignmentMatrix { g: resp.g, labels }
}

/// Column means of the responsibilities.
pub fn update_weights_soft(resp: &ResponsibilityMatrix) -> Vec<f64> {
    let n = resp.n() as f64;
    let mut w: Vec<f64> = (0..resp.g)
        .map(|g| pairwise_sum(&resp.column(g)) / n)
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// `N_g / N`.
pub fn update_weights_hard(assign: &AssignmentMatrix) -> Vec<f64> {
    let n = assign.n() as f64;
    assign.counts().iter().map(|c| *c as f64 / n).collect()
}

/// Drops components with no assigned observations and renormalizes the
/// surviving weights. Returns the pruned model, the relabeled assignments,
/// and the original indices of the survivors.
pub fn prune_empty(
    model: &MixtureModel,
    assign: &AssignmentMatrix,
) -> Result<(MixtureModel, AssignmentMatrix, Vec<usize>)> {
    if assign.g() != model.g() {
        return Err(Error::InvalidParameter(format!(
            "assignments cover {} components, model has {}",
            assign.g(),
            model.g()
        )));
    }
    let counts = assign.counts();
    let kept: Vec<usize> = (0..model.g()).filter(|&g| counts[g] > 0).collect();
    if kept.is_empty() {
        return Err(Error::AllComponentsEmpty);
    }
    let mut new_index = vec![usize::MAX; model.g()];
    for (i, &g) in kept.iter().enumerate() {
        new_index[g] = i;
    }
    let total: f64 = kept.iter().map(|&g| model.weights[g]).sum();
    let weights = if total > 0.0 {
        kept.iter().map(|&g| model.weights[g] / total).collect()
    } else {
        vec![1.0 / kept.len() as f64; kept.len()]
    };
    let components = kept.iter().map(|&g| model.components[g].clone()).collect();
    let labels = assign.labels.iter().map(|&l| new_index[l]).collect();
    Ok((
        MixtureModel::new(components, weights)?,
        AssignmentMatrix {
            g: kept.len(),
            labels,
        },
        kept,
    ))
}

/// Architecture and initialization of every flow component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub layers: usize,
    pub bases: usize,
    pub beta_cap: f64,
    /// Concentration every bump starts from.
    pub init_beta: f64,
    /// Angular jitter (radians) of initial bump centers around their anchor.
    pub init_spread: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            layers: 20,
            bases: 1,
            beta_cap: DEFAULT_BETA_CAP,
            init_beta: 1.0,
            init_spread: 0.3,
        }
    }
}

impl FlowConfig {
    pub fn shape(&self) -> Result<FlowShape> {
        FlowShape::new(self.layers, self.bases)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        grad::raw_from_beta(self.init_beta, self.beta_cap)?;
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "init_spread must be >= 0, got {}",
                self.init_spread
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop once `|ℓ_t − ℓ_{t−1}| / |ℓ_{t−1}|` falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-5,
            max_iters: 100,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be >= 0, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Observed-data log-likelihood of the initial model.
    pub initial_log_likelihood: f64,
    /// Observed-data log-likelihood after each M-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Observed-data log-likelihood of the returned model.
    pub final_log_likelihood: f64,
    pub nonempty_components: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Flow whose bumps all sit near the antipode of `anchor`, so its density
/// starts out raised around `anchor`.
fn anchored_component(
    shape: FlowShape,
    flow: &FlowConfig,
    anchor: &UnitVector,
    rng: &mut ChaCha8Rng,
) -> Result<FreeParams> {
    let mut free = FreeParams::init(shape, flow.beta_cap, flow.init_beta, rng)?;
    let base = anchor.neg();
    let basis = geometry::tangent_basis(&base);
    for l in 0..shape.layers {
        for i in 0..shape.bases {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let v = geometry::add(
                &geometry::scale(&basis.e1, a * flow.init_spread),
                &geometry::scale(&basis.e2, b * flow.init_spread),
            );
            let c = geometry::exp_map(&base, &TangentVector { base, vec: v });
            free.set_raw_center(l, i, *c.coords());
        }
    }
    Ok(free)
}

/// One starting component per group, anchored at distinct random observations.
fn initial_components(
    points: &[UnitVector],
    groups: usize,
    flow: &FlowConfig,
    seed: u64,
) -> Result<Vec<FreeParams>> {
    let shape = flow.shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = index::sample(&mut rng, points.len(), groups).into_vec();
    anchors
        .iter()
        .map(|&j| anchored_component(shape, flow, &points[j], &mut rng))
        .collect()
}

fn decode_all(free: &[FreeParams], weights: Vec<f64>) -> Result<MixtureModel> {
    MixtureModel::new(free.iter().map(grad::decode).collect(), weights)
}

fn check_inputs(
    points: &[UnitVector],
    groups: usize,
    flow: &FlowConfig,
    sgd: &SgdConfig,
    em: &EmConfig,
) -> Result<()> {
    if groups == 0 {
        return Err(Error::InvalidParameter("G must be >= 1".into()));
    }
    if points.len() < groups {
        return Err(Error::InvalidParameter(format!(
            "need at least G = {groups} observations, got {}",
            points.len()
        )));
    }
    flow.validate()?;
    sgd.validate()?;
    em.validate()
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Soft,
    Hard,
}

struct EmState {
    model: MixtureModel,
    table: LogTable,
    report: FitReport,
}

fn run_em(
    points: &[UnitVector],
    groups: usize,
    flow: &FlowConfig,
    sgd: &SgdConfig,
    em: &EmConfig,
    variant: Variant,
) -> Result<EmState> {
    check_inputs(points, groups, flow, sgd, em)?;
    let root = sgd.seed;
    let mut free = initial_components(points, groups, flow, derive_seed(root, 0))?;
    let mut model = decode_all(&free, vec![1.0 / groups as f64; groups])?;
    let mut table = LogTable::build(points, &model)?;
    let initial = table.log_likelihood();
    let mut prev = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    info!("EM start: G={groups} N={} loglik={initial:.6}", points.len());

    for t in 0..em.max_iters {
        let (weights, batch_weights): (Vec<f64>, Vec<Vec<f64>>) = match variant {
            Variant::Soft => {
                let resp = table.responsibilities();
                let w = update_weights_soft(&resp);
                let cols = (0..groups).map(|g| resp.column(g)).collect();
                (w, cols)
            }
            Variant::Hard => {
                let assign = harden(&table.responsibilities());
                let w = update_weights_hard(&assign);
                let cols = (0..groups)
                    .map(|g| {
                        assign
                            .labels()
                            .iter()
                            .map(|&l| if l == g { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                (w, cols)
            }
        };
        for (g, col) in batch_weights.into_iter().enumerate() {
            // empty components are frozen
            if weights[g] == 0.0 {
                continue;
            }
            let batch = WeightedBatch::new(points.to_vec(), col)?;
            let step_cfg = sgd.with_seed(derive_seed(root, 1 + (t * groups + g) as u64));
            let out = grad::maximize(&free[g], &batch, &step_cfg)?;
            debug!(
                "iter {t} component {g}: {:.6} -> {:.6}",
                out.objective_before, out.objective_after
            );
            free[g] = out.params;
        }
        model = decode_all(&free, weights)?;
        table = LogTable::build(points, &model)?;
        let ll = table.log_likelihood();
        trace.push(ll);
        info!("EM iteration {}: loglik={ll:.6}", t + 1);
        if relative_change(prev, ll) < em.tol {
            converged = true;
            break;
        }
        prev = ll;
    }

    let final_ll = table.log_likelihood();
    let nonempty = model.weights().iter().filter(|w| **w > 0.0).count();
    Ok(EmState {
        model,
        table,
        report: FitReport {
            initial_log_likelihood: initial,
            iterations: trace.len(),
            log_likelihood_trace: trace,
            final_log_likelihood: final_ll,
            nonempty_components: nonempty,
            converged,
        },
    })
}

/// Soft EM. Responsibilities are those of the returned model.
pub fn fit_soft(
    points: &[UnitVector],
    groups: usize,
    flow: &FlowConfig,
    sgd: &SgdConfig,
    em: &EmConfig,
) -> Result<(MixtureModel, ResponsibilityMatrix, FitReport)> {
    let state = run_em(points, groups, flow, sgd, em, Variant::Soft)?;
    let resp = state.table.responsibilities();
    Ok((state.model, resp, state.report))
}

/// Hard (classification) EM followed by pruning of empty components.
///
/// After the last M-step the assignments and `τ = N_g/N` are refreshed from
/// the final parameters and components left without observations are
/// removed. The returned assignments are `harden(e_step(model))` for the
/// returned model, so one more E-step reproduces them exactly.
pub fn fit_hard(
    points: &[UnitVector],
    groups: usize,
    flow: &FlowConfig,
    sgd: &SgdConfig,
    em: &EmConfig,
) -> Result<(MixtureModel, AssignmentMatrix, FitReport)> {
    let state = run_em(points, groups, flow, sgd, em, Variant::Hard)?;
    let mut report = state.report;
    let mut model = state.model;
    let mut assign = harden(&state.table.responsibilities());
    loop {
        let weights = update_weights_hard(&assign);
        model = MixtureModel::new(model.components, weights)?;
        let (pruned, _, _) = prune_empty(&model, &assign)?;
        model = pruned;
        let table = LogTable::build(points, &model)?;
        let next = harden(&table.responsibilities());
        report.final_log_likelihood = table.log_likelihood();
        // rounding in the renormalized weights can empty a component again
        if next.nonempty() == model.g() {
            assign = next;
            break;
        }
        assign = next;
    }
    report.nonempty_components = model.g();
    info!(
        "hard EM finished: {} nonempty components, loglik={:.6}",
        model.g(),
        report.final_log_likelihood
    );
    Ok((model, assign, report))
}

/// Fits `members` single-flow models from different random starts and
/// averages their densities with equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeReport {
    pub requested: usize,
    pub fitted: usize,
    pub member_log_likelihoods: Vec<f64>,
}

/// Committee of single-component flows. Each member is anchored at its own
/// random observation and trained by EM with `G = 1`; failed members are
/// skipped with a warning.
pub fn fit_committee(
    points: &[UnitVector],
    members: usize,
    flow: &FlowConfig,
    sgd: &SgdConfig,
    em: &EmConfig,
) -> Result<(MixtureModel, CommitteeReport)> {
    if members == 0 {
        return Err(Error::InvalidParameter("committee needs >= 1 member".into()));
    }
    let mut comps = Vec::with_capacity(members);
    let mut lls = Vec::with_capacity(members);
    for m in 0..members {
        let cfg = sgd.with_seed(derive_seed(sgd.seed, m as u64));
        match fit_soft(points, 1, flow, &cfg, em) {
            Ok((model, _, report)) => {
                comps.push(model.components[0].clone());
                lls.push(report.final_log_likelihood);
            }
            Err(e) => warn!("committee member {m} failed: {e}"),
        }
    }
    if comps.is_empty() {
        return Err(Error::InvalidParameter(
            "every committee member failed to fit".into(),
        ));
    }
    let report = CommitteeReport {
        requested: members,
        fitted: comps.len(),
        member_log_likelihoods: lls,
    };
    Ok((MixtureModel::uniform(comps)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::LayerParams;
    use crate::vmf::{vmf_sample, VmfParams};

    fn identity_like(center: UnitVector) -> ComponentParams {
        ComponentParams::new(vec![LayerParams::single(1e6, center).unwrap()]).unwrap()
    }

    fn small_flow() -> FlowConfig {
        FlowConfig {
            layers: 3,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn single_component_equals_component_density() {
        let c = ComponentParams::new(vec![
            LayerParams::single(0.7, UnitVector::new([0.0, 0.6, 0.8]).unwrap()).unwrap(),
        ])
        .unwrap();
        let m = MixtureModel::new(vec![c.clone()], vec![1.0]).unwrap();
        let x = UnitVector::new([0.3, -0.2, 0.9]).unwrap();
        let a = mixture_logdensity(&x, &m).unwrap();
        let b = flow::component_logdensity(&x, &c).unwrap();
        assert!((a - b).abs() < 1e-14);
        let two = MixtureModel::new(vec![c.clone(), c.clone()], vec![0.5, 0.5]).unwrap();
        assert!((mixture_logdensity(&x, &two).unwrap() - b).abs() < 1e-14);
    }

    #[test]
    fn e_step_examples() {
        let c = identity_like(UnitVector::north_pole());
        let m = MixtureModel::new(vec![c.clone(), c], vec![0.5, 0.5]).unwrap();
        let pts = [UnitVector::new([1.0, 0.0, 0.0]).unwrap()];
        let r = e_step(&pts, &m).unwrap();
        assert_eq!(r.row(0), &[0.5, 0.5]);
        assert_eq!(harden(&r).labels(), &[0]);
    }

    #[test]
    fn harden_examples() {
        let r = ResponsibilityMatrix::new(vec![
            vec![0.1, 0.7, 0.2],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(harden(&r).labels(), &[1, 0, 2]);
    }

    #[test]
    fn weight_updates() {
        let r = ResponsibilityMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap();
        let w = update_weights_soft(&r);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = AssignmentMatrix::new(vec![0, 0, 1, 0], 2).unwrap();
        assert_eq!(update_weights_hard(&a), vec![0.75, 0.25]);
        let all = AssignmentMatrix::new(vec![0; 5], 3).unwrap();
        assert_eq!(update_weights_hard(&all), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn prune_examples() {
        let c = identity_like(UnitVector::north_pole());
        let m = MixtureModel::new(vec![c.clone(), c.clone(), c], vec![0.5, 0.0, 0.5]).unwrap();
        let a = AssignmentMatrix::new(vec![0, 2, 2, 0], 3).unwrap();
        let (p, relabeled, kept) = prune_empty(&m, &a).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);
        assert_eq!(relabeled.labels(), &[0, 1, 1, 0]);
        assert_eq!(kept, vec![0, 2]);
        let full = AssignmentMatrix::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(prune_empty(&m, &full).unwrap().0.g(), 3);
    }

    #[test]
    fn invalid_inputs() {
        assert!(ResponsibilityMatrix::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(AssignmentMatrix::new(vec![3], 3).is_err());
        let c = identity_like(UnitVector::north_pole());
        assert!(MixtureModel::new(vec![c.clone()], vec![0.9]).is_err());
        assert!(MixtureModel::new(vec![], vec![]).is_err());
        let pts = vec![UnitVector::north_pole()];
        let r = fit_soft(&pts, 2, &small_flow(), &SgdConfig::default(), &EmConfig::default());
        assert!(r.is_err());
    }

    fn cluster_data(seed: u64) -> Vec<UnitVector> {
        let a = VmfParams::new(UnitVector::new([1.0, 0.0, 0.2]).unwrap(), 40.0).unwrap();
        let b = VmfParams::new(UnitVector::new([-1.0, 0.1, -0.2]).unwrap(), 40.0).unwrap();
        let mut pts = vmf_sample(&a, 40, seed);
        pts.extend(vmf_sample(&b, 40, seed + 1));
        pts
    }

    #[test]
    fn soft_em_increases_likelihood() {
        let pts = cluster_data(1);
        let sgd = SgdConfig {
            epochs_per_mstep: 3,
            batch_size: 32,
            seed: 4,
            ..SgdConfig::default()
        };
        let em = EmConfig {
            max_iters: 4,
            ..EmConfig::default()
        };
        let (model, resp, report) = fit_soft(&pts, 2, &small_flow(), &sgd, &em).unwrap();
        assert_eq!(report.iterations, report.log_likelihood_trace.len());
        assert!(report.final_log_likelihood >= report.initial_log_likelihood);
        let mut prev = report.initial_log_likelihood;
        for v in &report.log_likelihood_trace {
            assert!(*v >= prev - 1e-8);
            prev = *v;
        }
        assert_eq!(resp, e_step(&pts, &model).unwrap());
    }

    #[test]
    fn hard_em_returns_fixed_point() {
        let pts = cluster_data(2);
        let sgd = SgdConfig {
            epochs_per_mstep: 2,
            batch_size: 32,
            seed: 9,
            ..SgdConfig::default()
        };
        let em = EmConfig {
            max_iters: 3,
            ..EmConfig::default()
        };
        let (model, assign, report) = fit_hard(&pts, 4, &small_flow(), &sgd, &em).unwrap();
        assert_eq!(harden(&e_step(&pts, &model).unwrap()), assign);
        assert_eq!(assign.nonempty(), model.g());
        assert_eq!(report.nonempty_components, model.g());
        assert!(model.g() <= 4);
    }

    #[test]
    fn single_group_hard_matches_soft() {
        let pts = cluster_data(3);
        let sgd = SgdConfig {
            epochs_per_mstep: 2,
            batch_size: 16,
            seed: 1,
            ..SgdConfig::default()
        };
        let em = EmConfig {
            max_iters: 2,
            ..EmConfig::default()
        };
        let (s, _, _) = fit_soft(&pts, 1, &small_flow(), &sgd, &em).unwrap();
        let (h, _, _) = fit_hard(&pts, 1, &small_flow(), &sgd, &em).unwrap();
        assert_eq!(s, h);
    }

    #[test]
    fn committee_of_one_is_a_single_fit() {
        let pts = cluster_data(4);
        let sgd = SgdConfig {
            epochs_per_mstep: 1,
            batch_size: 32,
            seed: 3,
            ..SgdConfig::default()
        };
        let em = EmConfig {
            max_iters: 1,
            ..EmConfig::default()
        };
        let (c, report) = fit_committee(&pts, 1, &small_flow(), &sgd, &em).unwrap();
        let (single, _, _) =
            fit_soft(&pts, 1, &small_flow(), &sgd.with_seed(derive_seed(3, 0)), &em).unwrap();
        assert_eq!(c, single);
        assert_eq!(report.fitted, 1);
    }
}
