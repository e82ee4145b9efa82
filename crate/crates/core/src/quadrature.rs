//! Quadrature on the sphere, L¹ distances between densities, and raster export.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::Result;
use crate::geometry::UnitVector;
use crate::mixture::MixtureModel;
use crate::numeric::pairwise_sum;
use crate::vmf::{VmfMixture, VmfParams};

pub const DEFAULT_GRID_NODES: usize = 20_000;

/// Something that can be evaluated as a density on the sphere.
pub trait DensityField {
    fn density_at(&self, x: &UnitVector) -> Result<f64>;
}

impl<F> DensityField for F
where
    F: Fn(&UnitVector) -> Result<f64>,
{
    fn density_at(&self, x: &UnitVector) -> Result<f64> {
        self(x)
    }
}

impl DensityField for MixtureModel {
    fn density_at(&self, x: &UnitVector) -> Result<f64> {
        self.density(x)
    }
}

impl DensityField for VmfMixture {
    fn density_at(&self, x: &UnitVector) -> Result<f64> {
        Ok(self.density(x))
    }
}

impl DensityField for VmfParams {
    fn density_at(&self, x: &UnitVector) -> Result<f64> {
        Ok(crate::vmf::vmf_density(x, self))
    }
}

/// Equal-weight Fibonacci lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<UnitVector>,
    weight: f64,
}

/// `M = resolution` nodes at `z_i = 1 − (2i + 1)/M`, consecutive longitudes
/// a golden angle apart, each carrying `4π/M` steradians.
pub fn build_grid(resolution: usize) -> QuadratureGrid {
    let m = resolution.max(1);
    let golden = PI * (3.0 - 5f64.sqrt());
    let nodes = (0..m)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / m as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            UnitVector::new([r * c, r * s, z]).expect("lattice node is nonzero")
        })
        .collect();
    QuadratureGrid {
        nodes,
        weight: 4.0 * PI / m as f64,
    }
}

impl QuadratureGrid {
    pub fn nodes(&self) -> &[UnitVector] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_weight(&self) -> f64 {
        self.weight
    }

    pub fn node_weights(&self) -> Vec<f64> {
        vec![self.weight; self.nodes.len()]
    }

    /// Field values at every node.
    pub fn evaluate(&self, field: &impl DensityField) -> Result<Vec<f64>> {
        self.nodes.iter().map(|x| field.density_at(x)).collect()
    }

    /// `Σ_m w_m v_m` for precomputed node values.
    pub fn sum(&self, values: &[f64]) -> f64 {
        self.weight * pairwise_sum(values)
    }
}

pub fn integrate(field: &impl DensityField, grid: &QuadratureGrid) -> Result<f64> {
    Ok(grid.sum(&grid.evaluate(field)?))
}

/// `∫ |f − g| dA` on the grid.
pub fn l1_distance(
    f: &impl DensityField,
    g: &impl DensityField,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let a = grid.evaluate(f)?;
    let b = grid.evaluate(g)?;
    Ok(l1_from_values(grid, &a, &b))
}

pub fn l1_from_values(grid: &QuadratureGrid, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    grid.sum(&diff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterCell {
    pub lon: f64,
    pub lat: f64,
    pub density: f64,
    pub relative_density: f64,
}

/// Density on a regular grid: `lon_i = −180 + 360 i / lon_steps`,
/// `lat_j = −90 + 180 j / (lat_steps − 1)`; rows ordered by latitude, then
/// longitude. Relative density is `density · 4π`.
pub fn export_density_grid(
    field: &impl DensityField,
    lon_steps: usize,
    lat_steps: usize,
) -> Result<Vec<RasterCell>> {
    if lon_steps < 2 || lat_steps < 2 {
        return Err(crate::Error::InvalidParameter(format!(
            "raster needs at least 2 steps per axis, got {lon_steps}x{lat_steps}"
        )));
    }
    let mut cells = Vec::with_capacity(lon_steps * lat_steps);
    for j in 0..lat_steps {
        let lat = -90.0 + 180.0 * j as f64 / (lat_steps - 1) as f64;
        for i in 0..lon_steps {
            let lon = -180.0 + 360.0 * i as f64 / lon_steps as f64;
            let density = field.density_at(&UnitVector::from_lon_lat_degrees(lon, lat))?;
            cells.push(RasterCell {
                lon,
                lat,
                density,
                relative_density: density * 4.0 * PI,
            });
        }
    }
    Ok(cells)
}

pub fn write_raster(cells: &[RasterCell], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "lon,lat,density,relative_density")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{}",
            c.lon, c.lat, c.density, c.relative_density
        )?;
    }
    Ok(())
}
