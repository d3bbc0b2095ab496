//! Finite-difference Dirichlet eigensolver for L* = div(∇V · + β⁻¹∇ ·).
//!
//! With w = e^{β(V−V₀)} u the operator becomes β⁻¹ div(ρ ∇w) with
//! ρ = e^{−β(V−V₀)}, so −L*u = λu is the symmetric generalized problem
//! K w = λ M w with K the flux-form stiffness matrix (face weights ρ at
//! midpoints) and M = diag(ρ). We iterate on A = M^{-1/2} K M^{-1/2}.

use std::fmt::Write as _;

use rand::Rng;

use crate::potential::Potential;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
}

/// Probability flux through one boundary face of the grid.
#[derive(Debug, Clone)]
pub struct BoundaryFlux {
    /// Boundary node the face leads to.
    pub position: Vec<f64>,
    /// 0/1 = low/high end along x, 2/3 = low/high along y.
    pub face: usize,
    pub flux: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub domain: Domain,
    pub beta: f64,
    pub h: f64,
    /// Cells per axis.
    pub cells: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Ground state on every grid node (x fastest), zero on the boundary,
    /// normalized to unit integral.
    pub u1: Vec<f64>,
    pub boundary_flux: Vec<BoundaryFlux>,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 20_000;
const TOL: f64 = 1e-13;

fn cells_for(lo: f64, hi: f64, h: f64) -> Result<usize> {
    if !(hi > lo) || !(h > 0.0) {
        return Err(Error::InvalidInput(format!("bad grid: [{lo}, {hi}] with h = {h}")));
    }
    let n = ((hi - lo) / h).round();
    if n < 2.0 || ((hi - lo) - n * h).abs() > 1e-9 * (hi - lo) {
        return Err(Error::InvalidInput(format!("h = {h} does not divide [{lo}, {hi}]")));
    }
    Ok(n as usize)
}

/// Discretized operator: interior unknowns, node weights ρ and face weights.
struct Operator {
    dims: Vec<usize>,
    /// ρ at interior unknowns.
    rho: Vec<f64>,
    /// Face weights: faces[axis][unknown] couples the unknown with its
    /// +axis neighbour (which may be a boundary node).
    faces_plus: Vec<Vec<f64>>,
    faces_minus: Vec<Vec<f64>>,
    c: f64,
}

impl Operator {
    fn n(&self) -> usize {
        self.rho.len()
    }

    fn neighbor(&self, k: usize, axis: usize, plus: bool) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dims.len());
        let mut r = k;
        for &d in &self.dims {
            idx.push(r % d);
            r /= d;
        }
        if plus {
            if idx[axis] + 1 >= self.dims[axis] {
                return None;
            }
            idx[axis] += 1;
        } else {
            if idx[axis] == 0 {
                return None;
            }
            idx[axis] -= 1;
        }
        let mut out = 0;
        let mut stride = 1;
        for (a, &d) in self.dims.iter().enumerate() {
            out += idx[a] * stride;
            stride *= d;
        }
        Some(out)
    }

    /// y ↦ A y.
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        for k in 0..self.n() {
            let sk = self.rho[k].sqrt();
            let mut acc = 0.0;
            for axis in 0..self.dims.len() {
                let (ap, am) = (self.faces_plus[axis][k], self.faces_minus[axis][k]);
                acc += (ap + am) / self.rho[k] * y[k];
                if let Some(j) = self.neighbor(k, axis, true) {
                    acc -= ap / (sk * self.rho[j].sqrt()) * y[j];
                }
                if let Some(j) = self.neighbor(k, axis, false) {
                    acc -= am / (sk * self.rho[j].sqrt()) * y[j];
                }
            }
            out[k] = self.c * acc;
        }
    }

    fn diagonal(&self, k: usize) -> f64 {
        let mut d = 0.0;
        for axis in 0..self.dims.len() {
            d += (self.faces_plus[axis][k] + self.faces_minus[axis][k]) / self.rho[k];
        }
        self.c * d
    }

    /// Rayleigh quotient as a positive sum over faces: c Σ a (Δw)² / Σ ρ w².
    fn rayleigh(&self, y: &[f64]) -> f64 {
        let w: Vec<f64> = y.iter().zip(&self.rho).map(|(v, r)| v / r.sqrt()).collect();
        let mut num = 0.0;
        for k in 0..self.n() {
            for axis in 0..self.dims.len() {
                let wp = self.neighbor(k, axis, true).map_or(0.0, |j| w[j]);
                num += self.faces_plus[axis][k] * (wp - w[k]).powi(2);
                if self.neighbor(k, axis, false).is_none() {
                    num += self.faces_minus[axis][k] * w[k] * w[k];
                }
            }
        }
        let den: f64 = y.iter().map(|v| v * v).sum();
        self.c * num / den
    }

    /// Solve A x = b.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.dims.len() == 1 {
            Ok(self.solve_tridiagonal(b))
        } else {
            self.solve_cg(b)
        }
    }

    fn solve_tridiagonal(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let diag: Vec<f64> = (0..n).map(|k| self.diagonal(k)).collect();
        let off: Vec<f64> = (0..n.saturating_sub(1))
            .map(|k| -self.c * self.faces_plus[0][k] / (self.rho[k] * self.rho[k + 1]).sqrt())
            .collect();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        for k in 0..n {
            let lower = if k > 0 { off[k - 1] } else { 0.0 };
            let denom = diag[k] - if k > 0 { lower * cp[k - 1] } else { 0.0 };
            cp[k] = if k + 1 < n { off[k] / denom } else { 0.0 };
            dp[k] = (b[k] - if k > 0 { lower * dp[k - 1] } else { 0.0 }) / denom;
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            x[k] = dp[k] - if k + 1 < n { cp[k] * x[k + 1] } else { 0.0 };
        }
        x
    }

    fn solve_cg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let dinv: Vec<f64> = (0..n).map(|k| 1.0 / self.diagonal(k)).collect();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 20 * n + 1000;
        for _ in 0..max_iter {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= 1e-14 * bnorm {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            for k in 0..n {
                z[k] = r[k] * dinv[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        if residual < 1e-10 {
            Ok(x)
        } else {
            Err(Error::SolverNonConvergence { iterations: max_iter, residual })
        }
    }
}

fn normalize(y: &mut [f64]) {
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in y.iter_mut() {
        *v /= n;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse iteration for the smallest eigenpair orthogonal to `deflate`.
fn inverse_iteration(op: &Operator, start: Vec<f64>, deflate: Option<&[f64]>) -> Result<(f64, Vec<f64>, usize)> {
    let mut y = start;
    let project = |y: &mut Vec<f64>| {
        if let Some(d) = deflate {
            let c = dot(y, d);
            for (v, e) in y.iter_mut().zip(d) {
                *v -= c * e;
            }
        }
    };
    project(&mut y);
    normalize(&mut y);
    let mut lambda = op.rayleigh(&y);
    let mut ay = vec![0.0; y.len()];
    let mut settled_runs = 0;
    for it in 1..=MAX_ITERATIONS {
        let mut next = op.solve(&y)?;
        project(&mut next);
        normalize(&mut next);
        let new_lambda = op.rayleigh(&next);
        y = next;
        if (new_lambda - lambda).abs() <= TOL * new_lambda.abs() {
            settled_runs += 1;
        } else {
            settled_runs = 0;
        }
        lambda = new_lambda;
        if settled_runs >= 2 {
            return Ok((lambda, y, it));
        }
    }
    op.apply(&y, &mut ay);
    let residual = ay.iter().zip(&y).map(|(a, v)| (a - lambda * v).powi(2)).sum::<f64>().sqrt();
    Err(Error::SolverNonConvergence { iterations: MAX_ITERATIONS, residual })
}

/// Two smallest Dirichlet eigenvalues of −L* on the domain, plus the ground state.
pub fn solve_ground_state(surface: &dyn Potential, domain: &Domain, beta: f64, h: f64) -> Result<SpectralSolution> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be > 0 (got {beta})")));
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) = match domain {
        Domain::Interval { lo, hi } => (vec![*lo], vec![*hi]),
        Domain::Rectangle { lo, hi } => (lo.to_vec(), hi.to_vec()),
    };
    if surface.dim() != lo.len() {
        return Err(Error::InvalidInput("domain dimension does not match surface".into()));
    }
    let d = lo.len();
    let cells: Vec<usize> = (0..d).map(|a| cells_for(lo[a], hi[a], h)).collect::<Result<_>>()?;
    let dims: Vec<usize> = cells.iter().map(|c| c - 1).collect();
    let n: usize = dims.iter().product();

    // Interior unknown k ↦ node multi-index (1-based along each axis).
    let coords = |k: usize| -> Vec<f64> {
        let mut r = k;
        (0..d)
            .map(|a| {
                let i = r % dims[a] + 1;
                r /= dims[a];
                lo[a] + i as f64 * h
            })
            .collect()
    };
    let positions: Vec<Vec<f64>> = (0..n).map(coords).collect();
    let v_nodes: Vec<f64> = positions.iter().map(|x| surface.value(x)).collect();
    let mut v_faces = vec![(vec![0.0; n], vec![0.0; n]); d];
    for k in 0..n {
        for a in 0..d {
            let mut p = positions[k].clone();
            p[a] += 0.5 * h;
            v_faces[a].0[k] = surface.value(&p);
            p[a] -= h;
            v_faces[a].1[k] = surface.value(&p);
        }
    }
    let v_ref = v_nodes
        .iter()
        .chain(v_faces.iter().flat_map(|(p, m)| p.iter().chain(m)))
        .copied()
        .fold(f64::INFINITY, f64::min);
    let weight = |v: f64| (-beta * (v - v_ref)).exp();
    let op = Operator {
        rho: v_nodes.iter().map(|v| weight(*v)).collect(),
        faces_plus: v_faces.iter().map(|(p, _)| p.iter().map(|v| weight(*v)).collect()).collect(),
        faces_minus: v_faces.iter().map(|(_, m)| m.iter().map(|v| weight(*v)).collect()).collect(),
        dims: dims.clone(),
        c: 1.0 / (beta * h * h),
    };

    let bump = |x: &[f64], odd: bool| -> f64 {
        let mut s = 1.0;
        for a in 0..d {
            let t = (x[a] - lo[a]) / (hi[a] - lo[a]);
            s *= (std::f64::consts::PI * t).sin();
        }
        if odd {
            let t = (x[0] - lo[0]) / (hi[0] - lo[0]);
            s *= (std::f64::consts::PI * t).cos() + 0.1;
        }
        s
    };
    let start1: Vec<f64> = positions.iter().zip(&op.rho).map(|(x, r)| r.sqrt() * bump(x, false) + 1e-300).collect();
    let (lambda1, mut y1, it1) = inverse_iteration(&op, start1, None)?;
    let sign = y1.iter().sum::<f64>().signum();
    for v in y1.iter_mut() {
        *v *= sign;
    }
    let start2: Vec<f64> = positions.iter().zip(&op.rho).map(|(x, r)| r.sqrt() * bump(x, true)).collect();
    let (lambda2, _, it2) = inverse_iteration(&op, start2, Some(&y1))?;

    // u = ρ w = √ρ y on interior nodes.
    let u_int: Vec<f64> = y1.iter().zip(&op.rho).map(|(y, r)| (y * r.sqrt()).max(0.0)).collect();
    let w: Vec<f64> = y1.iter().zip(&op.rho).map(|(y, r)| y / r.sqrt()).collect();
    let cell_volume = h.powi(d as i32);
    let mass: f64 = u_int.iter().sum::<f64>() * cell_volume;

    let mut boundary_flux = Vec::new();
    for k in 0..n {
        for a in 0..d {
            for (plus, face_w) in [(false, op.faces_minus[a][k]), (true, op.faces_plus[a][k])] {
                if op.neighbor(k, a, plus).is_none() {
                    let mut pos = positions[k].clone();
                    pos[a] += if plus { h } else { -h };
                    let flux = face_w * w[k].max(0.0) / beta * h.powi(d as i32 - 2) / mass;
                    boundary_flux.push(BoundaryFlux { position: pos, face: 2 * a + usize::from(plus), flux });
                }
            }
        }
    }

    let total: Vec<usize> = cells.iter().map(|c| c + 1).collect();
    let mut u1 = vec![0.0; total.iter().product()];
    for k in 0..n {
        let mut r = k;
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..d {
            idx += (r % dims[a] + 1) * stride;
            r /= dims[a];
            stride *= total[a];
        }
        u1[idx] = u_int[k] / mass;
    }
    Ok(SpectralSolution {
        domain: domain.clone(),
        beta,
        h,
        cells,
        lambda1,
        lambda2,
        u1,
        boundary_flux,
        iterations: it1 + it2,
    })
}

/// Exit rate and per-region exit probabilities from the boundary flux of u₁.
#[derive(Debug, Clone)]
pub struct ExitLaw {
    pub lambda1: f64,
    pub probabilities: Vec<f64>,
    /// k_i = λ₁ p_i.
    pub rates: Vec<f64>,
    /// Σ p_i before any correction; should be 1.
    pub total: f64,
    /// Set when the probabilities miss 1 by more than 1e-6.
    pub warning: Option<String>,
}

impl SpectralSolution {
    /// Normalized QSD density on the grid nodes.
    pub fn qsd_density(&self) -> &[f64] {
        &self.u1
    }

    pub fn nodes_1d(&self) -> Vec<f64> {
        let lo = match self.domain {
            Domain::Interval { lo, .. } => lo,
            Domain::Rectangle { lo, .. } => lo[0],
        };
        (0..=self.cells[0]).map(|k| lo + k as f64 * self.h).collect()
    }

    fn lo_1d(&self) -> Result<f64> {
        match self.domain {
            Domain::Interval { lo, .. } => Ok(lo),
            Domain::Rectangle { .. } => Err(Error::InvalidInput("1d operation on a 2d solution".into())),
        }
    }

    /// Piecewise-linear interpolation of the QSD density (1d).
    pub fn density_at(&self, x: f64) -> Result<f64> {
        let lo = self.lo_1d()?;
        let t = (x - lo) / self.h;
        if t <= 0.0 || t >= self.cells[0] as f64 {
            return Ok(0.0);
        }
        let k = (t.floor() as usize).min(self.cells[0] - 1);
        let f = t - k as f64;
        Ok(self.u1[k] * (1.0 - f) + self.u1[k + 1] * f)
    }

    /// CDF of the interpolated QSD density (1d).
    pub fn cdf(&self) -> Result<impl Fn(f64) -> f64 + '_> {
        let lo = self.lo_1d()?;
        let mut cum = vec![0.0; self.u1.len()];
        for k in 1..self.u1.len() {
            cum[k] = cum[k - 1] + 0.5 * (self.u1[k - 1] + self.u1[k]) * self.h;
        }
        let total = *cum.last().unwrap_or(&1.0);
        Ok(move |x: f64| {
            let t = (x - lo) / self.h;
            if t <= 0.0 {
                return 0.0;
            }
            if t >= self.cells[0] as f64 {
                return 1.0;
            }
            let k = t.floor() as usize;
            let f = t - k as f64;
            let (a, b) = (self.u1[k], self.u1[k + 1]);
            (cum[k] + self.h * (a * f + 0.5 * (b - a) * f * f)) / total
        })
    }

    /// Exact draws from the interpolated QSD density (1d).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<f64>> {
        let lo = self.lo_1d()?;
        let masses: Vec<f64> = self.u1.windows(2).map(|p| 0.5 * (p[0] + p[1]) * self.h).collect();
        let total: f64 = masses.iter().sum();
        let mut cum = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m / total;
            cum.push(acc);
        }
        Ok((0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let k = cum.partition_point(|c| *c < u).min(masses.len() - 1);
                let (a, b) = (self.u1[k], self.u1[k + 1]);
                let v: f64 = rng.random();
                // Invert a f + (b − a) f²/2 = v (a + b)/2 on [0, 1].
                let target = v * 0.5 * (a + b);
                let f = if (b - a).abs() < 1e-12 * (a + b) {
                    v
                } else {
                    let q = 0.5 * (b - a);
                    ((-a + (a * a + 4.0 * q * target).max(0.0).sqrt()) / (2.0 * q)).clamp(0.0, 1.0)
                };
                lo + (k as f64 + f) * self.h
            })
            .collect())
    }

    /// CSV dump: coordinates then u1.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.domain {
            Domain::Interval { lo, .. } => {
                out.push_str("x,u1\n");
                for (k, u) in self.u1.iter().enumerate() {
                    let _ = writeln!(out, "{},{}", lo + k as f64 * self.h, u);
                }
            }
            Domain::Rectangle { lo, .. } => {
                out.push_str("x,y,u1\n");
                let nx = self.cells[0] + 1;
                for (k, u) in self.u1.iter().enumerate() {
                    let (i, j) = (k % nx, k / nx);
                    let _ = writeln!(out, "{},{},{}", lo[0] + i as f64 * self.h, lo[1] + j as f64 * self.h, u);
                }
            }
        }
        out
    }
}

/// Maps a boundary node and face index to an exit-region label.
pub type RegionOf<'a> = &'a dyn Fn(&[f64], usize) -> usize;

/// λ₁ and exit probabilities p_i = −∫_{∂S_i} ∂_n u₁ / (β λ₁ ∫ u₁), using the
/// discrete flux through boundary faces. `region_of(position, face)` maps a
/// boundary face to its region label; by default the face index is used.
pub fn exit_law_from_spectrum(
    sol: &SpectralSolution,
    region_of: Option<RegionOf<'_>>,
) -> ExitLaw {
    let label = |f: &BoundaryFlux| region_of.map_or(f.face, |g| g(&f.position, f.face));
    let n_regions = sol.boundary_flux.iter().map(|f| label(f) + 1).max().unwrap_or(0);
    let mut probabilities = vec![0.0; n_regions];
    for f in &sol.boundary_flux {
        probabilities[label(f)] += f.flux / sol.lambda1;
    }
    let total: f64 = probabilities.iter().sum();
    let warning = ((total - 1.0).abs() > 1e-6)
        .then(|| format!("exit probabilities sum to {total:.9}; discretization too coarse"));
    ExitLaw {
        lambda1: sol.lambda1,
        rates: probabilities.iter().map(|p| p * sol.lambda1).collect(),
        probabilities,
        total,
        warning,
    }
}
