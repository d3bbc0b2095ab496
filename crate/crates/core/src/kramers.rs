//! Harmonic transition state theory: Eyring–Kramers prefactors and rates,
//! asymptotic exit laws, and TAD extrapolation factors.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::potential::{symmetric_eigen, Potential, DEGENERACY_TOL};
use crate::statemap::{BoundaryCurve, BoundaryShape, StateGeometry};
use crate::{Error, Result};

/// Prefactor convention used at genuine index-1 saddles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SaddleFlavor {
    Overdamped,
    Langevin { gamma: f64 },
    /// (1/π)|λ⁻| √det∇²V(x₁)/√|det∇²V(z)|; from formal expansions only.
    RealSaddleExperimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Langevin,
    Overdamped,
    GeneralizedSaddle,
    RealSaddleExperimental,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Langevin => "langevin",
            Flavor::Overdamped => "overdamped",
            Flavor::GeneralizedSaddle => "generalized",
            Flavor::RealSaddleExperimental => "real_saddle_experimental",
        }
    }
}

fn minimum_det(surface: &dyn Potential, x1: &[f64]) -> Result<f64> {
    let (eig, _) = symmetric_eigen(&surface.hessian(x1));
    check_nondegenerate(x1, &eig)?;
    if eig[0] <= 0.0 {
        return Err(Error::Signature { position: x1.to_vec(), expected: "minimum", eigenvalues: eig });
    }
    Ok(eig.iter().product())
}

fn check_nondegenerate(x: &[f64], eig: &[f64]) -> Result<()> {
    let min_abs = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min_abs < DEGENERACY_TOL {
        return Err(Error::DegenerateCriticalPoint { position: x.to_vec(), min_abs_eigenvalue: min_abs });
    }
    Ok(())
}

/// (|λ⁻|, |det ∇²V(z)|) at an index-1 saddle.
fn saddle_data(surface: &dyn Potential, z: &[f64]) -> Result<(f64, f64)> {
    let (eig, _) = symmetric_eigen(&surface.hessian(z));
    check_nondegenerate(z, &eig)?;
    let negatives = eig.iter().filter(|v| **v < 0.0).count();
    if negatives != 1 {
        return Err(Error::Signature { position: z.to_vec(), expected: "index-1 saddle", eigenvalues: eig });
    }
    Ok((eig[0].abs(), eig.iter().product::<f64>().abs()))
}

/// ν = |λ⁻(z)| √det∇²V(x₁) / (2π √|det∇²V(z)|).
pub fn prefactor_overdamped(surface: &dyn Potential, x1: &[f64], z: &[f64]) -> Result<f64> {
    let d1 = minimum_det(surface, x1)?;
    let (lm, dz) = saddle_data(surface, z)?;
    Ok(lm * d1.sqrt() / (2.0 * PI * dz.sqrt()))
}

/// ν = (√(γ² + 4|λ⁻|) − γ)/(4π) · √det∇²V(x₁)/√|det∇²V(z)|, unit masses.
pub fn prefactor_langevin(surface: &dyn Potential, x1: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be >= 0 (got {gamma})")));
    }
    let d1 = minimum_det(surface, x1)?;
    let (lm, dz) = saddle_data(surface, z)?;
    Ok(((gamma * gamma + 4.0 * lm).sqrt() - gamma) / (4.0 * PI) * d1.sqrt() / dz.sqrt())
}

/// Twice the overdamped prefactor.
pub fn prefactor_real_saddle_experimental(surface: &dyn Potential, x1: &[f64], z: &[f64]) -> Result<f64> {
    Ok(2.0 * prefactor_overdamped(surface, x1, z)?)
}

/// Second derivative of V along the boundary at `z`, per unit arclength.
pub fn boundary_curvature(surface: &dyn Potential, z: &[f64], normal: &[f64], curve: &BoundaryCurve) -> Result<f64> {
    let h = surface.hessian(z);
    let quad = |t: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() {
            for j in 0..t.len() {
                s += t[i] * h[(i, j)] * t[j];
            }
        }
        s
    };
    match curve {
        BoundaryCurve::Point => Ok(1.0),
        BoundaryCurve::Line { tangent } => Ok(quad(tangent)),
        BoundaryCurve::Circle { radius, .. } => {
            let t = [-normal[1], normal[0]];
            let g = surface.gradient_vec(z);
            Ok(quad(&t) - (g[0] * normal[0] + g[1] * normal[1]) / radius)
        }
    }
}

/// ν = √(β/2π) ∂_nV(z) √det∇²V(x₁) / √det∇²(V|∂S)(z).
pub fn prefactor_generalized(
    surface: &dyn Potential,
    x1: &[f64],
    z: &[f64],
    normal: &[f64],
    curve: &BoundaryCurve,
    beta: f64,
) -> Result<f64> {
    let g = surface.gradient_vec(z);
    let dn: f64 = g.iter().zip(normal).map(|(a, b)| a * b).sum();
    if !(dn > 0.0) {
        return Err(Error::NotGeneralizedSaddle { normal_derivative: dn });
    }
    let d1 = minimum_det(surface, x1)?;
    let db = boundary_curvature(surface, z, normal, curve)?;
    if !(db > DEGENERACY_TOL) {
        return Err(Error::Signature {
            position: z.to_vec(),
            expected: "boundary minimum",
            eigenvalues: vec![db],
        });
    }
    Ok((beta / (2.0 * PI)).sqrt() * dn * d1.sqrt() / db.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub region: usize,
    pub barrier: f64,
    pub prefactor: f64,
    pub rate: f64,
    pub flavor: Flavor,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateTable {
    pub entries: Vec<RateEntry>,
}

impl RateTable {
    pub fn total_rate(&self) -> f64 {
        self.entries.iter().map(|e| e.rate).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,barrier,prefactor,rate,flavor\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.region, e.barrier, e.prefactor, e.rate, e.flavor.name());
        }
        out
    }
}

/// k_i = ν_i exp(−β ΔV_i) for every boundary minimum of the state.
pub fn rate_table(geometry: &StateGeometry, surface: &dyn Potential, beta: f64, saddles: SaddleFlavor) -> Result<RateTable> {
    let x1 = &geometry.interior_min;
    let mut entries = Vec::with_capacity(geometry.boundary.len());
    for z in &geometry.boundary {
        let barrier = z.value - geometry.min_value;
        let (prefactor, flavor) = match &z.shape {
            BoundaryShape::Saddle => match saddles {
                SaddleFlavor::Overdamped => (prefactor_overdamped(surface, x1, &z.position)?, Flavor::Overdamped),
                SaddleFlavor::Langevin { gamma } => {
                    (prefactor_langevin(surface, x1, &z.position, gamma)?, Flavor::Langevin)
                }
                SaddleFlavor::RealSaddleExperimental => (
                    prefactor_real_saddle_experimental(surface, x1, &z.position)?,
                    Flavor::RealSaddleExperimental,
                ),
            },
            BoundaryShape::Generalized { normal, curve } => (
                prefactor_generalized(surface, x1, &z.position, normal, curve, beta)?,
                Flavor::GeneralizedSaddle,
            ),
        };
        entries.push(RateEntry { region: z.region, barrier, prefactor, rate: prefactor * (-beta * barrier).exp(), flavor });
    }
    Ok(RateTable { entries })
}

#[derive(Debug, Clone)]
pub struct AsymptoticExitLaw {
    pub lambda1: f64,
    /// (region, k_i / Σ k_j) in the table's order.
    pub probabilities: Vec<(usize, f64)>,
    pub table: RateTable,
}

impl AsymptoticExitLaw {
    pub fn probability(&self, region: usize) -> f64 {
        self.probabilities.iter().filter(|(r, _)| *r == region).map(|(_, p)| p).sum()
    }
}

/// λ₁ ≈ Σ k_j and P(region i) = k_i / Σ k_j.
pub fn exit_law_asymptotic(
    geometry: &StateGeometry,
    surface: &dyn Potential,
    beta: f64,
    saddles: SaddleFlavor,
) -> Result<AsymptoticExitLaw> {
    if geometry.boundary.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let table = rate_table(geometry, surface, beta, saddles)?;
    Ok(law_from_table(table))
}

pub fn law_from_table(table: RateTable) -> AsymptoticExitLaw {
    let total = table.total_rate();
    AsymptoticExitLaw {
        lambda1: total,
        probabilities: table.entries.iter().map(|e| (e.region, e.rate / total)).collect(),
        table,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaVariant {
    #[default]
    Plain,
    SqrtCorrected,
}

/// Θ = k^hi / k^lo ≈ exp(−(β_hi − β_lo) ΔV), optionally times √(β_hi/β_lo).
pub fn tad_theta(beta_hi: f64, beta_lo: f64, barrier: f64, variant: ThetaVariant) -> f64 {
    let plain = (-(beta_hi - beta_lo) * barrier).exp();
    match variant {
        ThetaVariant::Plain => plain,
        ThetaVariant::SqrtCorrected => plain * (beta_hi / beta_lo).sqrt(),
    }
}
