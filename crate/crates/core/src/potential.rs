//! Analytic potential-energy surfaces.
//!
//! Every built-in surface provides exact gradients and Hessians; finite
//! differences only appear in tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// A potential energy function V on R^d.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes ∇V(x) into `out` (length `dim`).
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }
}

pub type Surface = Arc<dyn Potential>;

impl<P: Potential + ?Sized> Potential for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        (**self).hessian(x)
    }
}

/// One-dimensional polynomial V(x) = Σ c_k x^k.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial1d {
    coeffs: Vec<f64>,
}

impl Polynomial1d {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn horner(c: impl DoubleEndedIterator<Item = f64>, x: f64) -> f64 {
        c.rev().fold(0.0, |acc, a| acc * x + a)
    }

    pub fn eval(&self, x: f64) -> f64 {
        Self::horner(self.coeffs.iter().copied(), x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        Self::horner(
            self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c),
            x,
        )
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        Self::horner(
            self.coeffs
                .iter()
                .enumerate()
                .skip(2)
                .map(|(k, &c)| (k * (k - 1)) as f64 * c),
            x,
        )
    }
}

impl Potential for Polynomial1d {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x[0])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative(x[0]);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.second_derivative(x[0]))
    }
}

/// V(x) = barrier·(x² − 1)² + tilt·x. Minima near ±1, saddle near 0.
pub fn make_double_well_1d(barrier: f64, tilt: f64) -> Polynomial1d {
    Polynomial1d::new(vec![barrier, tilt, -2.0 * barrier, 0.0, barrier])
}

/// Tilted sextic with three wells: V(x) = c·(x⁶/6 − 5x⁴/4 + 2x²) + tilt·x.
///
/// Minima near −2, 0, 2 and interior saddles near ±1. The defaults give
/// barriers of roughly 0.8 (left) and 1.0 (right) out of the middle well.
pub fn make_triple_well_1d() -> Polynomial1d {
    triple_well_1d(0.9818, 0.1)
}

pub fn triple_well_1d(scale: f64, tilt: f64) -> Polynomial1d {
    Polynomial1d::new(vec![
        0.0,
        tilt,
        2.0 * scale,
        0.0,
        -1.25 * scale,
        0.0,
        scale / 6.0,
    ])
}

/// V ≡ 0 on R^d.
#[derive(Debug, Clone, Copy)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

/// Separable harmonic bowl V(x) = ½ Σ k_i (x_i − c_i)².
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub stiffness: Vec<f64>,
    pub center: Vec<f64>,
}

impl Quadratic {
    pub fn isotropic(dim: usize, k: f64) -> Self {
        Self {
            stiffness: vec![k; dim],
            center: vec![0.0; dim],
        }
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.stiffness.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.stiffness
            .iter()
            .zip(&self.center)
            .zip(x)
            .map(|((k, c), xi)| 0.5 * k * (xi - c) * (xi - c))
            .sum()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (i, g) in out.iter_mut().enumerate() {
            *g = self.stiffness[i] * (x[i] - self.center[i]);
        }
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.stiffness))
    }
}

/// The Müller–Brown surface with its published parameters.
#[derive(Debug, Clone)]
pub struct MullerBrown {
    a: [f64; 4],
    b: [f64; 4],
    c: [f64; 4],
    amp: [f64; 4],
    x0: [f64; 4],
    y0: [f64; 4],
    scale: f64,
}

impl Default for MullerBrown {
    fn default() -> Self {
        Self {
            amp: [-200.0, -100.0, -170.0, 15.0],
            a: [-1.0, -1.0, -6.5, 0.7],
            b: [0.0, 0.0, 11.0, 0.6],
            c: [-10.0, -10.0, -6.5, 0.7],
            x0: [1.0, 0.0, -0.5, -1.0],
            y0: [0.0, 0.5, 1.5, 1.0],
            scale: 1.0,
        }
    }
}

impl MullerBrown {
    /// Multiplies the whole surface by `scale` (useful to bring barriers to
    /// a few k_BT).
    pub fn scaled(scale: f64) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    /// Published approximate minima, used as Newton starting points.
    pub const MINIMA: [[f64; 2]; 3] = [[-0.558, 1.442], [0.623, 0.028], [-0.050, 0.467]];
    pub const SADDLES: [[f64; 2]; 2] = [[-0.822, 0.624], [0.212, 0.293]];

    fn term(&self, k: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.x0[k];
        let dy = y - self.y0[k];
        let e = self.amp[k]
            * (self.a[k] * dx * dx + self.b[k] * dx * dy + self.c[k] * dy * dy).exp();
        (e, dx, dy)
    }
}

impl Potential for MullerBrown {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * (0..4).map(|k| self.term(k, x[0], x[1]).0).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..4 {
            let (e, dx, dy) = self.term(k, x[0], x[1]);
            gx += e * (2.0 * self.a[k] * dx + self.b[k] * dy);
            gy += e * (self.b[k] * dx + 2.0 * self.c[k] * dy);
        }
        out[0] = self.scale * gx;
        out[1] = self.scale * gy;
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
        for k in 0..4 {
            let (e, dx, dy) = self.term(k, x[0], x[1]);
            let px = 2.0 * self.a[k] * dx + self.b[k] * dy;
            let py = self.b[k] * dx + 2.0 * self.c[k] * dy;
            hxx += e * (px * px + 2.0 * self.a[k]);
            hxy += e * (px * py + self.b[k]);
            hyy += e * (py * py + 2.0 * self.c[k]);
        }
        DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]).scale(self.scale)
    }
}

/// Axis-aligned rectangle used by [`EntropicChannel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    fn excess(&self, x: &[f64]) -> [f64; 2] {
        let mut e = [0.0; 2];
        for i in 0..2 {
            e[i] = if x[i] < self.lo[i] {
                x[i] - self.lo[i]
            } else if x[i] > self.hi[i] {
                x[i] - self.hi[i]
            } else {
                0.0
            };
        }
        e
    }
}

/// Two flat chambers joined by a narrow corridor. V is zero on the allowed
/// domain and grows as `stiffness · dist²` outside it, so the only barrier is
/// geometric.
#[derive(Debug, Clone)]
pub struct EntropicChannel {
    pub pieces: Vec<Rect>,
    pub stiffness: f64,
}

impl Default for EntropicChannel {
    fn default() -> Self {
        Self::new(0.1, 100.0)
    }
}

impl EntropicChannel {
    pub fn new(half_width: f64, stiffness: f64) -> Self {
        Self {
            pieces: vec![
                Rect { lo: [-2.0, -1.0], hi: [-0.5, 1.0] },
                Rect { lo: [-0.5, -half_width], hi: [0.5, half_width] },
                Rect { lo: [0.5, -1.0], hi: [2.0, 1.0] },
            ],
            stiffness,
        }
    }

    fn nearest_excess(&self, x: &[f64]) -> [f64; 2] {
        self.pieces
            .iter()
            .map(|r| r.excess(x))
            .min_by(|a, b| {
                let da = a[0] * a[0] + a[1] * a[1];
                let db = b[0] * b[0] + b[1] * b[1];
                da.total_cmp(&db)
            })
            .unwrap_or([0.0; 2])
    }

    pub fn inside(&self, x: &[f64]) -> bool {
        self.nearest_excess(x) == [0.0, 0.0]
    }
}

impl Potential for EntropicChannel {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        let e = self.nearest_excess(x);
        self.stiffness * (e[0] * e[0] + e[1] * e[1])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let e = self.nearest_excess(x);
        out[0] = 2.0 * self.stiffness * e[0];
        out[1] = 2.0 * self.stiffness * e[1];
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let e = self.nearest_excess(x);
        let d = |v: f64| if v != 0.0 { 2.0 * self.stiffness } else { 0.0 };
        DMatrix::from_row_slice(2, 2, &[d(e[0]), 0.0, 0.0, d(e[1])])
    }
}

/// c·V for a base surface V.
pub struct Scaled<P> {
    pub base: P,
    pub factor: f64,
}

impl<P: Potential> Potential for Scaled<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.factor * self.base.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.base.gradient(x, out);
        out.iter_mut().for_each(|g| *g *= self.factor);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.hessian(x).scale(self.factor)
    }
}

// ---------------------------------------------------------------------------
// Bias potentials

/// A bias δV added to V for hyperdynamics. It must vanish identically near
/// the boundary of the states it is used in.
pub trait BiasPotential: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// C² quintic smoothstep clamped to [0, 1].
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        let s = t2 * t * (10.0 - 15.0 * t + 6.0 * t2);
        let ds = 30.0 * t2 * (1.0 - t) * (1.0 - t);
        let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        (s, ds, dds)
    }
}

/// Energy-gated bump: δV = height · S((e_hi − V)/(e_hi − e_lo)).
///
/// Equal to `height` wherever V ≤ e_lo and exactly zero wherever V ≥ e_hi.
/// When `e_hi − e_lo > 1.875·height` the biased energy is a strictly
/// increasing function of V, so V + δV keeps the critical points of V.
#[derive(Clone)]
pub struct EnergyBump {
    pub base: Surface,
    pub height: f64,
    pub e_lo: f64,
    pub e_hi: f64,
}

impl EnergyBump {
    pub fn new(base: Surface, height: f64, e_lo: f64, e_hi: f64) -> Result<Self> {
        if !(e_hi > e_lo) || !(height >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "energy bump requires e_hi > e_lo and height >= 0 (got {e_lo}, {e_hi}, {height})"
            )));
        }
        Ok(Self { base, height, e_lo, e_hi })
    }

    fn parts(&self, v: f64) -> (f64, f64, f64, f64) {
        let width = self.e_hi - self.e_lo;
        let (s, ds, dds) = smoothstep((self.e_hi - v) / width);
        (s, ds, dds, width)
    }
}

impl BiasPotential for EnergyBump {
    fn value(&self, x: &[f64]) -> f64 {
        let (s, ..) = self.parts(self.base.value(x));
        self.height * s
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (_, ds, _, width) = self.parts(self.base.value(x));
        if ds == 0.0 {
            out.iter_mut().for_each(|g| *g = 0.0);
            return;
        }
        self.base.gradient(x, out);
        let f = -self.height * ds / width;
        out.iter_mut().for_each(|g| *g *= f);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.base.dim();
        let (_, ds, dds, width) = self.parts(self.base.value(x));
        if ds == 0.0 && dds == 0.0 {
            return DMatrix::zeros(d, d);
        }
        let g = DVector::from_vec(self.base.gradient_vec(x));
        let h = self.base.hessian(x);
        (&g * g.transpose()).scale(self.height * dds / (width * width))
            - h.scale(self.height * ds / width)
    }
}

/// Radial bump: δV = height on the ball of radius `plateau` around `center`,
/// tapering smoothly to zero at radius `plateau + taper`.
#[derive(Debug, Clone)]
pub struct RadialBump {
    pub center: Vec<f64>,
    pub plateau: f64,
    pub taper: f64,
    pub height: f64,
}

impl RadialBump {
    fn radius(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Outer radius of the support.
    pub fn support_radius(&self) -> f64 {
        self.plateau + self.taper
    }
}

impl BiasPotential for RadialBump {
    fn value(&self, x: &[f64]) -> f64 {
        let r = self.radius(x);
        self.height * smoothstep((self.support_radius() - r) / self.taper).0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = self.radius(x);
        let (_, ds, _) = smoothstep((self.support_radius() - r) / self.taper);
        for (i, g) in out.iter_mut().enumerate() {
            *g = if ds == 0.0 {
                0.0
            } else {
                -self.height * ds / self.taper * (x[i] - self.center[i]) / r
            };
        }
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.center.len();
        let r = self.radius(x);
        let (_, ds, dds) = smoothstep((self.support_radius() - r) / self.taper);
        if ds == 0.0 && dds == 0.0 {
            return DMatrix::zeros(d, d);
        }
        let u = DVector::from_iterator(d, (0..d).map(|i| (x[i] - self.center[i]) / r));
        let uu = &u * u.transpose();
        let radial2 = self.height * dds / (self.taper * self.taper);
        let radial1 = -self.height * ds / self.taper;
        uu.scale(radial2) + (DMatrix::identity(d, d) - uu).scale(radial1 / r)
    }
}

/// V + δV.
#[derive(Clone)]
pub struct BiasedSurface {
    pub base: Surface,
    pub bias: Arc<dyn BiasPotential>,
}

impl Potential for BiasedSurface {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.base.value(x) + self.bias.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.base.gradient(x, out);
        let mut b = vec![0.0; out.len()];
        self.bias.gradient(x, &mut b);
        out.iter_mut().zip(b).for_each(|(g, bi)| *g += bi);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.hessian(x) + self.bias.hessian(x)
    }
}

// ---------------------------------------------------------------------------
// Critical points

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriticalKind {
    Minimum,
    Saddle1,
    Other,
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub position: Vec<f64>,
    pub value: f64,
    pub kind: CriticalKind,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

/// Ascending eigenvalues and matching eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Eigenvalues below this magnitude make a critical point degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Critical points closer than this are merged.
pub const MERGE_TOL: f64 = 1e-6;
/// Gradient norm accepted after Newton polishing.
pub const POLISH_TOL: f64 = 1e-10;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Type a critical point from the signature of its Hessian.
pub fn classify_critical(surface: &dyn Potential, x: &[f64]) -> Result<CriticalPoint> {
    let (eigenvalues, _) = symmetric_eigen(&surface.hessian(x));
    let min_abs = eigenvalues.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    if min_abs < DEGENERACY_TOL {
        return Err(Error::DegenerateCriticalPoint {
            position: x.to_vec(),
            min_abs_eigenvalue: min_abs,
        });
    }
    let negatives = eigenvalues.iter().filter(|e| **e < 0.0).count();
    let kind = match negatives {
        0 => CriticalKind::Minimum,
        1 => CriticalKind::Saddle1,
        _ => CriticalKind::Other,
    };
    Ok(CriticalPoint {
        position: x.to_vec(),
        value: surface.value(x),
        kind,
        eigenvalues,
    })
}

/// Newton iteration on ∇V = 0 with a backtracking line search on |∇V|².
/// Returns `None` when it fails to reach `POLISH_TOL`.
pub fn newton_polish(surface: &dyn Potential, start: &[f64], max_step: f64) -> Option<Vec<f64>> {
    let d = surface.dim();
    let mut x = DVector::from_column_slice(start);
    let mut g = DVector::from_vec(surface.gradient_vec(x.as_slice()));
    for _ in 0..200 {
        let gn = g.norm();
        if gn < POLISH_TOL {
            for _ in 0..3 {
                let Some(step) = surface.hessian(x.as_slice()).lu().solve(&g) else { break };
                let trial = &x - step;
                let gt = DVector::from_vec(surface.gradient_vec(trial.as_slice()));
                if !(gt.norm() < g.norm()) {
                    break;
                }
                x = trial;
                g = gt;
            }
            return Some(x.as_slice().to_vec());
        }
        let h = surface.hessian(x.as_slice());
        let step = h.lu().solve(&g)?;
        let mut step = -step;
        let sn = step.norm();
        if !sn.is_finite() {
            return None;
        }
        if sn > max_step {
            step *= max_step / sn;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + &step * t;
            let gt = DVector::from_vec(surface.gradient_vec(trial.as_slice()));
            if gt.norm() < gn || gt.norm() < POLISH_TOL {
                x = trial;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Stalled at the floating-point floor; accept if already tiny.
            return (gn < 1e3 * POLISH_TOL && d > 0).then(|| x.as_slice().to_vec());
        }
    }
    (g.norm() < POLISH_TOL).then(|| x.as_slice().to_vec())
}

/// Scan a box with a uniform seed grid, Newton-polish every seed and
/// deduplicate. Points are returned sorted lexicographically by position.
pub fn find_critical_points(
    surface: &dyn Potential,
    lo: &[f64],
    hi: &[f64],
    grid: &[usize],
) -> Result<Vec<CriticalPoint>> {
    let d = surface.dim();
    if lo.len() != d || hi.len() != d || grid.len() != d {
        return Err(Error::InvalidInput("box and grid must match surface dimension".into()));
    }
    if grid.iter().any(|&n| n < 2) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidInput("grid needs >= 2 nodes per axis and hi > lo".into()));
    }
    let diag = distance(lo, hi);
    let total: usize = grid.iter().product();
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut seed = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for k in 0..d {
            let i = rem % grid[k];
            rem /= grid[k];
            seed[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (grid[k] - 1) as f64;
        }
        let Some(x) = newton_polish(surface, &seed, 0.25 * diag) else {
            continue;
        };
        let inside = x
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(v, (a, b))| *v >= *a - 1e-9 && *v <= *b + 1e-9);
        if inside && !found.iter().any(|p| distance(p, &x) < MERGE_TOL) {
            found.push(x);
        }
    }
    found.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    found.iter().map(|x| classify_critical(surface, x)).collect()
}
