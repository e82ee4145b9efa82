//! von Mises–Fisher densities on S², exact sampling, and synthetic mixtures.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::data::EventDataset;
use crate::error::{Error, Result};
use crate::geometry::{self, UnitVector, UNIFORM_DENSITY};
use crate::grad::random_unit;
use crate::numeric::log_sum_exp;

/// Below this concentration the density is evaluated by its first-order series.
const SMALL_KAPPA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mean_direction: UnitVector,
    pub concentration: f64,
}

impl VmfParams {
    pub fn new(mean_direction: UnitVector, concentration: f64) -> Result<Self> {
        if !(concentration >= 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "concentration must be finite and >= 0, got {concentration}"
            )));
        }
        Ok(VmfParams {
            mean_direction,
            concentration,
        })
    }
}

/// `ln f(x; μ, κ)` in the overflow-free form `κ/(2π(1 − e^{−2κ})) · e^{κ(⟨x,μ⟩ − 1)}`.
pub fn vmf_logdensity(x: &UnitVector, params: &VmfParams) -> f64 {
    let k = params.concentration;
    let c = x.dot(&params.mean_direction);
    if k < SMALL_KAPPA {
        return (UNIFORM_DENSITY * (1.0 + k * c)).ln();
    }
    (k / (2.0 * PI * -(-2.0 * k).exp_m1())).ln() + k * (c - 1.0)
}

pub fn vmf_density(x: &UnitVector, params: &VmfParams) -> f64 {
    vmf_logdensity(x, params).exp()
}

/// One exact draw. The cosine to the mean direction is sampled by inverting
/// its CDF, `w = 1 + ln(u + (1 − u)e^{−2κ})/κ`.
fn draw(params: &VmfParams, rng: &mut impl Rng) -> UnitVector {
    let k = params.concentration;
    let u: f64 = rng.random();
    let w = if k < SMALL_KAPPA {
        2.0 * u - 1.0
    } else {
        (1.0 + (u + (1.0 - u) * (-2.0 * k).exp()).ln() / k).clamp(-1.0, 1.0)
    };
    let angle = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - w * w).max(0.0).sqrt();
    let basis = geometry::tangent_basis(&params.mean_direction);
    let (sa, ca) = angle.sin_cos();
    let mu = params.mean_direction.coords();
    let v = [
        w * mu[0] + s * (ca * basis.e1[0] + sa * basis.e2[0]),
        w * mu[1] + s * (ca * basis.e1[1] + sa * basis.e2[1]),
        w * mu[2] + s * (ca * basis.e1[2] + sa * basis.e2[2]),
    ];
    UnitVector::new(v).expect("vMF draw has unit length")
}

/// `n` i.i.d. draws; identical for identical `seed`.
pub fn vmf_sample(params: &VmfParams, n: usize, seed: u64) -> Vec<UnitVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw(params, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfMixture {
    components: Vec<VmfParams>,
    weights: Vec<f64>,
}

impl VmfMixture {
    pub fn new(components: Vec<VmfParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "vMF mixture needs J >= 1 components and as many weights (got {} and {})",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "vMF mixture weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "vMF mixture weights sum to {total}, not 1"
            )));
        }
        Ok(VmfMixture {
            components,
            weights,
        })
    }

    pub fn uniform(components: Vec<VmfParams>) -> Result<Self> {
        let j = components.len().max(1) as f64;
        let weights = vec![1.0 / j; components.len()];
        VmfMixture::new(components, weights)
    }

    pub fn components(&self) -> &[VmfParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn logdensity(&self, x: &UnitVector) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.ln() + vmf_logdensity(x, c))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: &UnitVector) -> f64 {
        self.logdensity(x).exp()
    }

    /// Draws component labels by weight, then a point from that component.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<UnitVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut u: f64 = rng.random();
                let mut pick = self.components.len() - 1;
                for (j, w) in self.weights.iter().enumerate() {
                    if u < *w {
                        pick = j;
                        break;
                    }
                    u -= w;
                }
                draw(&self.components[pick], &mut rng)
            })
            .collect()
    }
}

pub const DEFAULT_SAMPLE_SIZE: usize = 2000;

/// One synthetic setting: `J` components with uniform mean directions,
/// concentrations drawn from `Exp(λ)`, and equal weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub components: usize,
    pub lambda: f64,
    pub n: usize,
    pub seed: u64,
}

impl SimSetting {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidParameter("J must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be >= 1".into()));
        }
        Ok(())
    }
}

/// The true mixture for a setting, and `N` draws from it (labels discarded).
pub fn generate_setting(s: &SimSetting) -> Result<(EventDataset, VmfMixture)> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let rate = Exp::new(s.lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let components = (0..s.components)
        .map(|_| {
            let mu = random_unit(&mut rng);
            let kappa = rate.sample(&mut rng);
            VmfParams::new(mu, kappa)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = VmfMixture::uniform(components)?;
    let points = truth.sample(s.n, rng.random());
    let source = format!(
        "vmf-mixture J={} lambda={} N={} seed={}",
        s.components, s.lambda, s.n, s.seed
    );
    Ok((EventDataset::new(points, source)?, truth))
}
