//! Metastable state definitions, classification and exit detection.
//!
//! Three kinds of states are supported:
//!
//! * basins of attraction of the gradient flow ẋ = −∇V(x), labelled by the
//!   minimum a steepest descent reaches (minima are registered on discovery);
//! * core sets C_i, where the state is the last visited core set and an exit
//!   is the entrance into a different one (S_i = R^d \ ∪_{j≠i} C_j);
//! * explicit regions (intervals, boxes, balls, polygons, sublevel sets).

use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, DynamicsParams, Walker};
use crate::rng::StreamId;
use crate::potential::{
    distance, find_critical_points, newton_polish, norm, symmetric_eigen, CriticalKind, Potential, Surface,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateLabel(pub u64);

impl StateLabel {
    /// Positions that belong to no core set / explicit region.
    pub const OUTSIDE: StateLabel = StateLabel(u64::MAX);

    pub fn is_outside(self) -> bool {
        self == Self::OUTSIDE
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_outside() {
            f.write_str("outside")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Open regions of configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
    /// {x in the box : V(x) < level}.
    Sublevel { level: f64, lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn contains(&self, x: &[f64], surface: &dyn Potential) -> bool {
        match self {
            Region::Interval { lo, hi } => x[0] > *lo && x[0] < *hi,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v > a && v < b),
            Region::Ball { center, radius } => distance(x, center) < *radius,
            Region::Polygon { vertices } => point_in_polygon(vertices, x[0], x[1]),
            Region::Sublevel { level, lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v > a && v < b) && surface.value(x) < *level
            }
        }
    }

    /// Index of the boundary piece crossed by an exit at `x`.
    ///
    /// Intervals: 0 = left end, 1 = right end. Boxes: face `2k` (low) or
    /// `2k+1` (high) along the axis with the largest violation. Polygons:
    /// nearest edge. Balls and sublevel sets have a single region 0.
    pub fn exit_face(&self, x: &[f64]) -> usize {
        match self {
            Region::Interval { lo, hi } => usize::from(x[0] - lo > hi - x[0]),
            Region::Box { lo, hi } => {
                let mut best = (f64::NEG_INFINITY, 0);
                for k in 0..lo.len() {
                    let below = lo[k] - x[k];
                    let above = x[k] - hi[k];
                    if below > best.0 {
                        best = (below, 2 * k);
                    }
                    if above > best.0 {
                        best = (above, 2 * k + 1);
                    }
                }
                best.1
            }
            Region::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| (segment_distance(vertices[i], vertices[(i + 1) % n], x), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map_or(0, |(_, i)| i)
            }
            Region::Ball { .. } | Region::Sublevel { .. } => 0,
        }
    }

    /// A point well inside the region, used to seed dephasing.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Region::Interval { lo, hi } => vec![finite_mid(*lo, *hi)],
            Region::Box { lo, hi } | Region::Sublevel { lo, hi, .. } => {
                lo.iter().zip(hi).map(|(a, b)| finite_mid(*a, *b)).collect()
            }
            Region::Ball { center, .. } => center.clone(),
            Region::Polygon { vertices } => {
                let n = vertices.len() as f64;
                vec![
                    vertices.iter().map(|v| v[0]).sum::<f64>() / n,
                    vertices.iter().map(|v| v[1]).sum::<f64>() / n,
                ]
            }
        }
    }
}

fn finite_mid(a: f64, b: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => 0.5 * (a + b),
        (true, false) => a + 1.0,
        (false, true) => b - 1.0,
        (false, false) => 0.0,
    }
}

fn point_in_polygon(v: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = v.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (v[i][0], v[i][1]);
        let (xj, yj) = (v[j][0], v[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: &[f64]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    distance(&[a[0] + t * dx, a[1] + t * dy], p)
}

// ---------------------------------------------------------------------------
// Basins of attraction

/// Region around a minimum proven to lie in its basin: the ball of radius
/// `radius` intersected with {V < level}, where `level` does not exceed V on
/// the sphere and the ball contains no other critical point.
#[derive(Debug, Clone)]
struct Certificate {
    radius: f64,
    level: f64,
}

#[derive(Debug, Clone)]
pub struct RegisteredMinimum {
    pub position: Vec<f64>,
    pub value: f64,
    /// Indices into [`BasinMap::saddles`] bounding this basin.
    pub saddles: Vec<usize>,
    certificate: Option<Certificate>,
}

#[derive(Debug, Clone)]
pub struct SaddleRecord {
    pub position: Vec<f64>,
    pub value: f64,
    /// Basins on either side of the saddle (descending along ±unstable mode).
    pub minima: [StateLabel; 2],
}

#[derive(Debug)]
pub struct BasinMap {
    registry: RwLock<Vec<RegisteredMinimum>>,
    saddles: Vec<SaddleRecord>,
    pub max_iterations: usize,
}

/// Descent stops once |∇V| falls below this.
pub const DESCENT_TOL: f64 = 1e-8;
/// Descent end points within this distance of a registered minimum match it.
pub const MATCH_TOL: f64 = 1e-5;

impl BasinMap {
    /// Empty registry; minima are added as descents discover them.
    pub fn empty() -> Self {
        Self {
            registry: RwLock::new(Vec::new()),
            saddles: Vec::new(),
            max_iterations: 100_000,
        }
    }

    /// Register every minimum and index-1 saddle found by a critical-point
    /// scan of the box. Minima get labels in lexicographic position order.
    pub fn from_scan(surface: &dyn Potential, lo: &[f64], hi: &[f64], grid: &[usize]) -> Result<Self> {
        let cps = find_critical_points(surface, lo, hi, grid)?;
        let map = Self::empty();
        {
            let mut reg = map.registry.write().expect("registry lock");
            for c in cps.iter().filter(|c| c.kind == CriticalKind::Minimum) {
                reg.push(RegisteredMinimum {
                    position: c.position.clone(),
                    value: c.value,
                    saddles: Vec::new(),
                    certificate: None,
                });
            }
        }
        let mut saddles = Vec::new();
        for c in cps.iter().filter(|c| c.kind == CriticalKind::Saddle1) {
            let (_, vecs) = symmetric_eigen(&surface.hessian(&c.position));
            let v: Vec<f64> = vecs.column(0).iter().copied().collect();
            let side = |sign: f64| -> Result<StateLabel> {
                let start: Vec<f64> = c.position.iter().zip(&v).map(|(x, e)| x + sign * 1e-3 * e).collect();
                map.classify_by_descent(surface, &start)
            };
            saddles.push(SaddleRecord {
                position: c.position.clone(),
                value: c.value,
                minima: [side(-1.0)?, side(1.0)?],
            });
        }
        let mut map = map;
        {
            let mut reg = map.registry.write().expect("registry lock");
            for (k, s) in saddles.iter().enumerate() {
                for m in s.minima {
                    let rec = &mut reg[m.0 as usize];
                    if !rec.saddles.contains(&k) {
                        rec.saddles.push(k);
                    }
                }
            }
            for i in 0..reg.len() {
                let others = cps
                    .iter()
                    .map(|c| distance(&c.position, &reg[i].position))
                    .filter(|d| *d > MERGE_EPS);
                let mut radius = 0.5 * others.fold(f64::INFINITY, f64::min);
                for k in 0..lo.len() {
                    let p = reg[i].position[k];
                    radius = radius.min(p - lo[k]).min(hi[k] - p);
                }
                reg[i].certificate = build_certificate(surface, &reg[i].position, radius);
            }
        }
        map.saddles = saddles;
        Ok(map)
    }

    pub fn minima(&self) -> Vec<RegisteredMinimum> {
        self.registry.read().expect("registry lock").clone()
    }

    pub fn saddles(&self) -> &[SaddleRecord] {
        &self.saddles
    }

    fn certified(&self, label: StateLabel, x: &[f64], surface: &dyn Potential) -> bool {
        let reg = self.registry.read().expect("registry lock");
        match reg.get(label.0 as usize) {
            Some(RegisteredMinimum { position, certificate: Some(c), .. }) => {
                distance(x, position) < c.radius && surface.value(x) < c.level
            }
            _ => false,
        }
    }

    fn classify(&self, surface: &dyn Potential, x: &[f64]) -> Result<StateLabel> {
        let n = self.registry.read().expect("registry lock").len();
        for i in 0..n {
            if self.certified(StateLabel(i as u64), x, surface) {
                return Ok(StateLabel(i as u64));
            }
        }
        self.classify_by_descent(surface, x)
    }

    /// Steepest descent with adaptive step and Armijo backtracking, finished
    /// by Newton steps once the Hessian is positive definite.
    fn classify_by_descent(&self, surface: &dyn Potential, start: &[f64]) -> Result<StateLabel> {
        let end = descend(surface, start, self.max_iterations)?;
        let mut reg = self.registry.write().expect("registry lock");
        if let Some(i) = reg.iter().position(|m| distance(&m.position, &end) < MATCH_TOL) {
            return Ok(StateLabel(i as u64));
        }
        let position = newton_polish(surface, &end, 1e-3).unwrap_or(end);
        if let Some(i) = reg.iter().position(|m| distance(&m.position, &position) < MATCH_TOL) {
            return Ok(StateLabel(i as u64));
        }
        reg.push(RegisteredMinimum {
            value: surface.value(&position),
            position,
            saddles: Vec::new(),
            certificate: None,
        });
        Ok(StateLabel(reg.len() as u64 - 1))
    }
}

const MERGE_EPS: f64 = 1e-9;

fn build_certificate(surface: &dyn Potential, center: &[f64], radius: f64) -> Option<Certificate> {
    if !(radius > 0.0) || !radius.is_finite() {
        return None;
    }
    let v0 = surface.value(center);
    let level = match center.len() {
        1 => surface.value(&[center[0] - radius]).min(surface.value(&[center[0] + radius])),
        2 => {
            let n = 4096;
            let m = (0..n)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    surface.value(&[center[0] + radius * t.cos(), center[1] + radius * t.sin()])
                })
                .fold(f64::INFINITY, f64::min);
            m - 1e-3 * (m - v0).abs()
        }
        _ => return None,
    };
    (level > v0).then_some(Certificate { radius, level })
}

/// Gradient descent to a local minimum; returns the end point.
pub fn descend(surface: &dyn Potential, start: &[f64], max_iterations: usize) -> Result<Vec<f64>> {
    let d = start.len();
    let mut x = start.to_vec();
    let mut g = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut step = 1e-2;
    let mut nudges = 0;
    for _ in 0..max_iterations {
        surface.gradient(&x, &mut g);
        let gn = norm(&g);
        if gn < DESCENT_TOL {
            let (eig, vecs) = symmetric_eigen(&surface.hessian(&x));
            if eig[0] > 0.0 || nudges >= 4 {
                return Ok(x);
            }
            // Stuck on a saddle or maximum: leave along the most unstable mode.
            nudges += 1;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += 1e-6 * vecs[(i, 0)];
            }
            continue;
        }
        let v = surface.value(&x);
        if gn < 1e-3 {
            let h = surface.hessian(&x);
            let (eig, _) = symmetric_eigen(&h);
            if eig[0] > 0.0 {
                if let Some(dx) = h.lu().solve(&DVector::from_column_slice(&g)) {
                    for i in 0..d {
                        trial[i] = x[i] - dx[i];
                    }
                    if norm(&surface.gradient_vec(&trial)) < gn {
                        x.copy_from_slice(&trial);
                        continue;
                    }
                }
            }
        }
        let mut accepted = false;
        while step > 1e-300 {
            for i in 0..d {
                trial[i] = x[i] - step * g[i];
            }
            if surface.value(&trial) <= v - 1e-4 * step * gn * gn {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(x);
        }
        x.copy_from_slice(&trial);
        step *= 1.5;
    }
    Err(Error::ClassificationTimeout {
        iterations: max_iterations,
        start: start.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// State definitions

#[derive(Debug)]
pub enum StateDefinition {
    Basin(BasinMap),
    CoreSets(Vec<Region>),
    Explicit(Vec<Region>),
}

/// Exit-boundary geometry around a state's interior minimum.
#[derive(Debug, Clone)]
pub struct StateGeometry {
    pub interior_min: Vec<f64>,
    pub min_value: f64,
    /// Boundary minima z_1..z_I sorted by non-decreasing V.
    pub boundary: Vec<BoundaryPoint>,
}

#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub position: Vec<f64>,
    pub value: f64,
    /// Exit-region label reported by exit events crossing near this point.
    pub region: usize,
    pub shape: BoundaryShape,
}

#[derive(Debug, Clone)]
pub enum BoundaryShape {
    /// Index-1 saddle point of V.
    Saddle,
    /// Local minimum of V restricted to a boundary with ∂_nV > 0.
    Generalized { normal: Vec<f64>, curve: BoundaryCurve },
}

/// Local parametrisation of the boundary through a generalized saddle.
#[derive(Debug, Clone)]
pub enum BoundaryCurve {
    /// 1d states: the boundary is a point.
    Point,
    /// Straight boundary with unit tangent.
    Line { tangent: Vec<f64> },
    /// Circular boundary (2d).
    Circle { center: Vec<f64>, radius: f64 },
}

impl StateGeometry {
    /// Number I₀ of boundary minima sharing the lowest value (within `tol`).
    pub fn n_degenerate(&self, tol: f64) -> usize {
        match self.boundary.first() {
            None => 0,
            Some(z1) => self.boundary.iter().take_while(|z| z.value - z1.value <= tol).count(),
        }
    }

    /// Boundary point closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> Option<&BoundaryPoint> {
        self.boundary
            .iter()
            .min_by(|a, b| distance(&a.position, x).total_cmp(&distance(&b.position, x)))
    }

    fn sort(&mut self) {
        self.boundary.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.region.cmp(&b.region)));
    }
}

impl StateDefinition {
    pub fn basins(map: BasinMap) -> Self {
        Self::Basin(map)
    }

    pub fn core_sets(sets: Vec<Region>) -> Result<Self> {
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if regions_overlap(&sets[i], &sets[j]) {
                    return Err(Error::InvalidInput(format!("core sets {i} and {j} overlap")));
                }
            }
        }
        Ok(Self::CoreSets(sets))
    }

    pub fn explicit(regions: Vec<Region>) -> Self {
        Self::Explicit(regions)
    }

    /// Label of the state containing `x` (`OUTSIDE` when none applies).
    pub fn classify(&self, x: &[f64], surface: &dyn Potential) -> Result<StateLabel> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("cannot classify non-finite position {x:?}")));
        }
        Ok(match self {
            StateDefinition::Basin(map) => map.classify(surface, x)?,
            StateDefinition::CoreSets(sets) | StateDefinition::Explicit(sets) => sets
                .iter()
                .position(|r| r.contains(x, surface))
                .map_or(StateLabel::OUTSIDE, |i| StateLabel(i as u64)),
        })
    }

    /// Whether a walker currently in state `label` is still in it at `x`.
    pub fn contains(&self, label: StateLabel, x: &[f64], surface: &dyn Potential) -> Result<bool> {
        match self {
            StateDefinition::Basin(map) => {
                if map.certified(label, x, surface) {
                    return Ok(true);
                }
                Ok(map.classify(surface, x)? == label)
            }
            StateDefinition::CoreSets(sets) => Ok(!sets
                .iter()
                .enumerate()
                .any(|(j, r)| j as u64 != label.0 && r.contains(x, surface))),
            StateDefinition::Explicit(regions) => Ok(regions
                .get(label.0 as usize)
                .is_some_and(|r| r.contains(x, surface))),
        }
    }

    /// Next state and exit-region label for an exit from `label` at `x`.
    pub fn exit_record(&self, label: StateLabel, x: &[f64], surface: &dyn Potential) -> Result<(StateLabel, usize)> {
        match self {
            StateDefinition::Basin(map) => {
                let next = map.classify(surface, x)?;
                let reg = map.registry.read().expect("registry lock");
                let region = reg
                    .get(label.0 as usize)
                    .and_then(|m| {
                        m.saddles
                            .iter()
                            .min_by(|&&a, &&b| {
                                distance(&map.saddles[a].position, x).total_cmp(&distance(&map.saddles[b].position, x))
                            })
                            .copied()
                    })
                    .unwrap_or(0);
                Ok((next, region))
            }
            StateDefinition::CoreSets(_) => {
                let next = self.classify(x, surface)?;
                Ok((next, next.0 as usize))
            }
            StateDefinition::Explicit(regions) => {
                let next = self.classify(x, surface)?;
                let face = regions.get(label.0 as usize).map_or(0, |r| r.exit_face(x));
                Ok((next, face))
            }
        }
    }

    /// A point inside the state, used as a default entry/dephasing seed.
    pub fn representative(&self, label: StateLabel) -> Option<Vec<f64>> {
        match self {
            StateDefinition::Basin(map) => map.minima().get(label.0 as usize).map(|m| m.position.clone()),
            StateDefinition::CoreSets(sets) | StateDefinition::Explicit(sets) => {
                sets.get(label.0 as usize).map(Region::center)
            }
        }
    }

    /// Interior minimum and ordered boundary minima of a state.
    pub fn geometry(&self, label: StateLabel, surface: &dyn Potential) -> Result<StateGeometry> {
        match self {
            StateDefinition::Basin(map) => {
                let reg = map.registry.read().expect("registry lock");
                let m = reg
                    .get(label.0 as usize)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown state {label}")))?;
                let mut g = StateGeometry {
                    interior_min: m.position.clone(),
                    min_value: m.value,
                    boundary: m
                        .saddles
                        .iter()
                        .map(|&k| BoundaryPoint {
                            position: map.saddles[k].position.clone(),
                            value: map.saddles[k].value,
                            region: k,
                            shape: BoundaryShape::Saddle,
                        })
                        .collect(),
                };
                g.sort();
                Ok(g)
            }
            StateDefinition::Explicit(regions) => {
                let r = regions
                    .get(label.0 as usize)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown state {label}")))?;
                region_geometry(r, surface)
            }
            StateDefinition::CoreSets(_) => Err(Error::InvalidInput(
                "core-set states are unbounded; no exit geometry".into(),
            )),
        }
    }
}

fn regions_overlap(a: &Region, b: &Region) -> bool {
    match (a, b) {
        (Region::Interval { lo: a0, hi: a1 }, Region::Interval { lo: b0, hi: b1 }) => a0.max(*b0) < a1.min(*b1),
        (Region::Box { lo: a0, hi: a1 }, Region::Box { lo: b0, hi: b1 }) => {
            (0..a0.len()).all(|k| a0[k].max(b0[k]) < a1[k].min(b1[k]))
        }
        (Region::Ball { center: c0, radius: r0 }, Region::Ball { center: c1, radius: r1 }) => {
            distance(c0, c1) < r0 + r1
        }
        _ => false,
    }
}

fn lowest_minimum(surface: &dyn Potential, lo: &[f64], hi: &[f64], grid: &[usize]) -> Result<(Vec<f64>, f64)> {
    let cps = find_critical_points(surface, lo, hi, grid)?;
    cps.into_iter()
        .filter(|c| c.kind == CriticalKind::Minimum)
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .map(|c| (c.position, c.value))
        .ok_or_else(|| Error::InvalidInput("no interior minimum in region".into()))
}

fn region_geometry(region: &Region, surface: &dyn Potential) -> Result<StateGeometry> {
    match region {
        Region::Interval { lo, hi } => {
            let (x1, v1) = lowest_minimum(surface, &[*lo], &[*hi], &[401])?;
            let mut g = StateGeometry {
                interior_min: x1,
                min_value: v1,
                boundary: vec![
                    BoundaryPoint {
                        position: vec![*lo],
                        value: surface.value(&[*lo]),
                        region: 0,
                        shape: BoundaryShape::Generalized { normal: vec![-1.0], curve: BoundaryCurve::Point },
                    },
                    BoundaryPoint {
                        position: vec![*hi],
                        value: surface.value(&[*hi]),
                        region: 1,
                        shape: BoundaryShape::Generalized { normal: vec![1.0], curve: BoundaryCurve::Point },
                    },
                ],
            };
            g.sort();
            Ok(g)
        }
        Region::Box { lo, hi } if lo.len() == 2 => {
            let (x1, v1) = lowest_minimum(surface, lo, hi, &[41, 41])?;
            let mut boundary = Vec::new();
            for axis in 0..2 {
                for (side, fixed) in [(0usize, lo[axis]), (1, hi[axis])] {
                    let other = 1 - axis;
                    let mut normal = vec![0.0; 2];
                    normal[axis] = if side == 0 { -1.0 } else { 1.0 };
                    let mut tangent = vec![0.0; 2];
                    tangent[other] = 1.0;
                    for z in face_minima(surface, axis, fixed, lo[other], hi[other]) {
                        boundary.push(BoundaryPoint {
                            value: surface.value(&z),
                            position: z,
                            region: 2 * axis + side,
                            shape: BoundaryShape::Generalized {
                                normal: normal.clone(),
                                curve: BoundaryCurve::Line { tangent: tangent.clone() },
                            },
                        });
                    }
                }
            }
            let mut g = StateGeometry { interior_min: x1, min_value: v1, boundary };
            g.sort();
            Ok(g)
        }
        _ => Err(Error::InvalidInput(
            "exit geometry is only available for intervals and 2d boxes".into(),
        )),
    }
}

/// Interior local minima of V along the face {x_axis = fixed} of a 2d box.
fn face_minima(surface: &dyn Potential, axis: usize, fixed: f64, a: f64, b: f64) -> Vec<Vec<f64>> {
    let other = 1 - axis;
    let point = |s: f64| {
        let mut p = vec![0.0; 2];
        p[axis] = fixed;
        p[other] = s;
        p
    };
    let n = 400;
    let s: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    let v: Vec<f64> = s.iter().map(|&t| surface.value(&point(t))).collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for k in 1..n {
        if v[k] <= v[k - 1] && v[k] <= v[k + 1] {
            // Newton on the tangential derivative.
            let mut t = s[k];
            for _ in 0..50 {
                let p = point(t);
                let g = surface.gradient_vec(&p)[other];
                let h = surface.hessian(&p)[(other, other)];
                if h <= 0.0 {
                    break;
                }
                let nt = (t - g / h).clamp(a, b);
                if (nt - t).abs() < 1e-14 {
                    t = nt;
                    break;
                }
                t = nt;
            }
            if t > a && t < b && !out.iter().any(|q| (q[other] - t).abs() < 1e-6) {
                out.push(point(t));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Exit detection

/// First exit from a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitEvent {
    pub from: StateLabel,
    pub to: StateLabel,
    /// Physical exit time T_S (for accelerated methods: the reconstructed time).
    pub exit_time: f64,
    /// First recorded out-of-state position.
    pub exit_point: Vec<f64>,
    pub region_label: usize,
    /// Steps from the start of the measurement to the first out-of-state position.
    pub first_exit_step: u64,
}

/// Surface, dynamics parameters and state definition bundled together.
#[derive(Clone)]
pub struct System {
    pub surface: Surface,
    pub params: DynamicsParams,
    pub states: Arc<StateDefinition>,
}

impl System {
    pub fn new(surface: Surface, params: DynamicsParams, states: StateDefinition) -> Result<Self> {
        params.validate()?;
        Ok(Self { surface, params, states: Arc::new(states) })
    }

    pub fn with_params(&self, params: DynamicsParams) -> Self {
        Self { params, ..self.clone() }
    }

    pub fn with_surface(&self, surface: Surface) -> Self {
        Self { surface, ..self.clone() }
    }

    /// New walker; Langevin dynamics start from zero momentum.
    pub fn walker(&self, position: Vec<f64>, stream: StreamId) -> Walker {
        let d = position.len();
        let w = Walker::new(position, stream);
        if self.params.gamma.is_some() {
            w.with_momentum(vec![0.0; d])
        } else {
            w
        }
    }

    pub fn step(&self, walker: &mut Walker) -> Result<()> {
        dynamics::step(walker, self.surface.as_ref(), &self.params)
    }

    pub fn classify(&self, x: &[f64]) -> Result<StateLabel> {
        self.states.classify(x, self.surface.as_ref())
    }

    pub fn contains(&self, label: StateLabel, x: &[f64]) -> Result<bool> {
        self.states.contains(label, x, self.surface.as_ref())
    }

    pub fn exit_record(&self, label: StateLabel, x: &[f64]) -> Result<(StateLabel, usize)> {
        self.states.exit_record(label, x, self.surface.as_ref())
    }

    pub fn geometry(&self, label: StateLabel) -> Result<StateGeometry> {
        self.states.geometry(label, self.surface.as_ref())
    }
}

/// Step `walker` until it leaves `state`, classifying after every step.
///
/// Exit time is `first_exit_step × dt`, counted from the call.
pub fn detect_exit(walker: &mut Walker, sys: &System, state: StateLabel, max_steps: u64) -> Result<ExitEvent> {
    for s in 1..=max_steps {
        sys.step(walker)?;
        if !sys.contains(state, &walker.position)? {
            let (to, region_label) = sys.exit_record(state, &walker.position)?;
            return Ok(ExitEvent {
                from: state,
                to,
                exit_time: s as f64 * sys.params.dt,
                exit_point: walker.position.clone(),
                region_label,
                first_exit_step: s,
            });
        }
    }
    Err(Error::NoExitWithinBudget { state, steps: max_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{make_double_well_1d, make_triple_well_1d, Flat};

    fn double_well_basins() -> (Surface, StateDefinition) {
        let s: Surface = Arc::new(make_double_well_1d(1.0, 0.0));
        let map = BasinMap::from_scan(s.as_ref(), &[-2.0], &[2.0], &[41]).unwrap();
        (s, StateDefinition::basins(map))
    }

    #[test]
    fn basin_classification_by_sign() {
        let (s, def) = double_well_basins();
        let right = def.classify(&[1.0], s.as_ref()).unwrap();
        let left = def.classify(&[-1.0], s.as_ref()).unwrap();
        assert_ne!(left, right);
        assert_eq!(def.classify(&[0.3], s.as_ref()).unwrap(), right);
        assert_eq!(def.classify(&[-0.3], s.as_ref()).unwrap(), left);
        // Outside the certificate: falls back to descent.
        assert_eq!(def.classify(&[1.9], s.as_ref()).unwrap(), right);
        assert_eq!(def.classify(&[-1.9], s.as_ref()).unwrap(), left);
    }

    #[test]
    fn classification_is_idempotent() {
        let (s, def) = double_well_basins();
        for x in [-1.7, -0.01, 0.01, 0.4, 1.2] {
            let a = def.classify(&[x], s.as_ref()).unwrap();
            let b = def.classify(&[x], s.as_ref()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn registry_is_order_independent() {
        let s = make_triple_well_1d();
        let points = [-2.5, -0.3, 0.2, 1.7, 2.4, -1.6];
        let collect = |order: &[f64]| {
            let map = BasinMap::empty();
            for &x in order {
                map.classify(&s, &[x]).unwrap();
            }
            let mut pos: Vec<f64> = map.minima().iter().map(|m| m.position[0]).collect();
            pos.sort_by(f64::total_cmp);
            pos
        };
        let a = collect(&points);
        let mut rev = points;
        rev.reverse();
        let b = collect(&rev);
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn core_set_outside_label() {
        let def = StateDefinition::core_sets(vec![
            Region::Interval { lo: -10.0, hi: -0.6 },
            Region::Interval { lo: 0.6, hi: 10.0 },
        ])
        .unwrap();
        let flat = Flat { dim: 1 };
        assert_eq!(def.classify(&[0.0], &flat).unwrap(), StateLabel::OUTSIDE);
        assert_eq!(def.classify(&[-1.0], &flat).unwrap(), StateLabel(0));
        // Still in state 0 until core set 1 is entered.
        assert!(def.contains(StateLabel(0), &[0.5], &flat).unwrap());
        assert!(!def.contains(StateLabel(0), &[0.7], &flat).unwrap());
    }

    #[test]
    fn overlapping_core_sets_rejected() {
        assert!(StateDefinition::core_sets(vec![
            Region::Interval { lo: 0.0, hi: 1.0 },
            Region::Interval { lo: 0.5, hi: 2.0 },
        ])
        .is_err());
    }

    #[test]
    fn double_well_exit_always_through_single_saddle() {
        let (s, def) = double_well_basins();
        let sys = System::new(s, DynamicsParams::overdamped(3.0, 1e-3), def).unwrap();
        let left = sys.classify(&[-1.0]).unwrap();
        for k in 0..20 {
            let mut w = Walker::new(vec![-1.0], StreamId::new(5, k));
            let ev = detect_exit(&mut w, &sys, left, 10_000_000).unwrap();
            assert_eq!(ev.region_label, 0);
            assert_ne!(sys.classify(&ev.exit_point).unwrap(), left);
            assert!((ev.exit_time - ev.first_exit_step as f64 * 1e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn interval_geometry_orders_by_value() {
        let s = make_double_well_1d(1.0, 0.0);
        let def = StateDefinition::explicit(vec![Region::Interval { lo: -1.45, hi: 0.0 }]);
        let g = def.geometry(StateLabel(0), &s).unwrap();
        assert!((g.interior_min[0] + 1.0).abs() < 1e-10);
        assert_eq!(g.boundary[0].region, 1);
        assert_eq!(g.boundary[1].region, 0);
        assert!(g.boundary[0].value <= g.boundary[1].value);
    }

    #[test]
    fn descent_timeout() {
        let s = make_double_well_1d(1.0, 0.0);
        let map = BasinMap { max_iterations: 2, ..BasinMap::empty() };
        assert!(matches!(
            map.classify(&s, &[-1.9]),
            Err(Error::ClassificationTimeout { .. })
        ));
    }
}
