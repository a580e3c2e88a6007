//! Second-kind double layer equation `(1/2 Id - K) u = g` on a polyhedral
//! surface: Galerkin assembly with piecewise constants on dyadic cells,
//! direct and iterative solvers, potential evaluation and the analysis of the
//! computed density in the wavelet basis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{
    alpha_star, fit_rate, gamma_star, tail_sums, uniform_approx, NTermPlan, RateReport, TailClass,
};
use crate::error::BemError;
use crate::quadrature::GaussRule;
use crate::spaces::{BesovSpec, WeightedSpec};
use crate::surface::{PolyhedralSurface, SurfacePoint, Vec3};
use crate::wavelet::{from_cell_averages, BasisSpec, CoefficientField, Rect};

const FOUR_PI: f64 = 4.0 * PI;

/// `(1/4 pi) d/d eta(x) |x - y|^{-1}`.
pub fn kernel(x: &Vec3, normal: &Vec3, y: &Vec3) -> Result<f64, BemError> {
    let d = x - y;
    let r2 = d.norm_squared();
    if r2 == 0.0 {
        return Err(BemError::Coincident);
    }
    Ok(-normal.dot(&d) / (FOUR_PI * r2 * r2.sqrt()))
}

/// `+1` if the patch normals point out of the enclosed volume, `-1` otherwise.
pub fn orientation(surface: &PolyhedralSurface) -> f64 {
    // x . n is constant on a planar patch, so this is 3 |volume| with a sign
    let v: f64 = surface.patches.iter().map(|p| p.area * p.points[0].dot(&p.normal)).sum();
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Quadrature orders and thresholds for the Galerkin entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Gauss points per direction for pairs closer than `far_ratio` diameters.
    pub near_order: usize,
    /// Gauss points per direction for well-separated pairs.
    pub far_order: usize,
    /// Gauss points per direction for pairs closer than one diameter.
    pub close_order: usize,
    pub far_ratio: f64,
    /// Levels of subdivision toward a shared edge or vertex.
    pub singular_depth: u32,
    pub max_unknowns: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { near_order: 4, far_order: 2, close_order: 6, far_ratio: 3.0, singular_depth: 4, max_unknowns: 8192 }
    }
}

/// One dyadic cell of the discretization.
#[derive(Debug, Clone)]
pub struct Cell {
    pub patch: usize,
    pub rect: Rect,
    pub corners: [Vec3; 4],
    pub center: Vec3,
    pub area: f64,
    pub diam: f64,
}

impl Cell {
    fn new(surface: &PolyhedralSurface, patch: usize, rect: Rect) -> Self {
        let p = &surface.patches[patch];
        let corners = [
            p.param([rect.x0, rect.y0]),
            p.param([rect.x1, rect.y0]),
            p.param([rect.x1, rect.y1]),
            p.param([rect.x0, rect.y1]),
        ];
        // the area element is affine, so the midpoint rule is exact
        let area = rect.area() * p.area_element(rect.center());
        let diam = (corners[0] - corners[2]).norm().max((corners[1] - corners[3]).norm());
        Self { patch, rect, corners, center: p.param(rect.center()), area, diam }
    }

    fn children(&self, surface: &PolyhedralSurface) -> [Cell; 4] {
        let r = &self.rect;
        let (mx, my) = (0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1));
        [
            Rect { x0: r.x0, x1: mx, y0: r.y0, y1: my },
            Rect { x0: mx, x1: r.x1, y0: r.y0, y1: my },
            Rect { x0: r.x0, x1: mx, y0: my, y1: r.y1 },
            Rect { x0: mx, x1: r.x1, y0: my, y1: r.y1 },
        ]
        .map(|rect| Cell::new(surface, self.patch, rect))
    }

    /// Gauss points `(x, weight)` including the area element.
    fn points(&self, surface: &PolyhedralSurface, rule: &GaussRule) -> Vec<(Vec3, f64)> {
        let p = &surface.patches[self.patch];
        let r = &self.rect;
        let (hx, hy) = (r.x1 - r.x0, r.y1 - r.y0);
        let mut out = Vec::with_capacity(rule.len() * rule.len());
        for (a, wa) in rule.nodes.iter().zip(&rule.weights) {
            for (b, wb) in rule.nodes.iter().zip(&rule.weights) {
                let uv = [r.x0 + a * hx, r.y0 + b * hy];
                out.push((p.param(uv), wa * wb * hx * hy * p.area_element(uv)));
            }
        }
        out
    }

    fn edges(&self) -> [(Vec3, Vec3); 4] {
        let c = &self.corners;
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance between segments `p1 q1` and `p2 q2`.
fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Distance from a point to a planar convex quadrilateral with the given normal.
fn point_quad_distance(x: &Vec3, corners: &[Vec3; 4], normal: &Vec3) -> f64 {
    let off = (x - corners[0]).dot(normal);
    let proj = x - normal * off;
    let inside = (0..4).all(|k| {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        (b - a).cross(&(proj - a)).dot(normal) >= 0.0
    }) || (0..4).all(|k| {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        (b - a).cross(&(proj - a)).dot(normal) <= 0.0
    });
    if inside {
        off.abs()
    } else {
        (0..4).map(|k| segment_distance(x, &corners[k], &corners[(k + 1) % 4])).fold(f64::INFINITY, f64::min)
    }
}

fn cell_distance(surface: &PolyhedralSurface, a: &Cell, b: &Cell) -> f64 {
    let mut d = f64::INFINITY;
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            d = d.min(segment_segment_distance(&p, &q, &r, &s));
        }
    }
    let na = &surface.patches[a.patch].normal;
    let nb = &surface.patches[b.patch].normal;
    for c in &a.corners {
        d = d.min(point_quad_distance(c, &b.corners, nb));
    }
    for c in &b.corners {
        d = d.min(point_quad_distance(c, &a.corners, na));
    }
    d
}

/// `int_{y in test} int_{x in trial} kernel(x, y)`, by Gauss points of both cells.
fn gauss_pair(surface: &PolyhedralSurface, sign: f64, ypts: &[(Vec3, f64)], trial: &Cell, xpts: &[(Vec3, f64)]) -> f64 {
    let q = &surface.patches[trial.patch];
    let mut total = 0.0;
    for (y, wy) in ypts {
        // <eta(x), y - x> is constant over the planar trial patch
        let off = sign * q.plane_offset(y);
        if off == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (x, wx) in xpts {
            let r2 = (x - y).norm_squared();
            inner += wx / (r2 * r2.sqrt());
        }
        total += wy * off * inner;
    }
    total / FOUR_PI
}

struct Rules {
    far: GaussRule,
    near: GaussRule,
    close: GaussRule,
}

fn pair_recursive(
    surface: &PolyhedralSurface,
    sign: f64,
    rules: &Rules,
    cfg: &QuadConfig,
    test: &Cell,
    trial: &Cell,
    depth: u32,
    touch_tol: f64,
) -> f64 {
    let d = cell_distance(surface, test, trial);
    let diam = test.diam.max(trial.diam);
    if d <= touch_tol && depth < cfg.singular_depth {
        let mut s = 0.0;
        for a in test.children(surface) {
            for b in trial.children(surface) {
                s += pair_recursive(surface, sign, rules, cfg, &a, &b, depth + 1, touch_tol);
            }
        }
        return s;
    }
    let rule = if d < diam {
        &rules.close
    } else if d < cfg.far_ratio * diam {
        &rules.near
    } else {
        &rules.far
    };
    gauss_pair(surface, sign, &test.points(surface, rule), trial, &trial.points(surface, rule))
}

/// Patch `b` lies in the plane of patch `a`.
fn coplanar(surface: &PolyhedralSurface, a: usize, b: usize) -> bool {
    let pa = &surface.patches[a];
    let tol = 1e-12 * surface.scale();
    surface.patches[b].points.iter().all(|x| pa.plane_offset(x).abs() <= tol)
}

/// Galerkin matrix of `(1/2) Id - K` for piecewise constants on level-`L` cells.
#[derive(Debug, Clone)]
pub struct DoubleLayerSystem {
    pub surface: PolyhedralSurface,
    pub level: u32,
    pub cells: Vec<Cell>,
    pub matrix: DMatrix<f64>,
    pub config: QuadConfig,
    /// Sign turning the stored patch normals into outward normals.
    pub orientation: f64,
}

impl DoubleLayerSystem {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells of patch `patch` touching no other patch.
    pub fn is_edge_cell(&self, m: usize) -> bool {
        let r = &self.cells[m].rect;
        r.x0 == 0.0 || r.y0 == 0.0 || r.x1 == 1.0 || r.y1 == 1.0
    }

    /// `A 1`, which should reproduce the cell areas.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.matrix.row(m).iter().sum()).collect()
    }
}

/// Level-`L` cells in the order `patch * 4^L + k1 * 2^L + k2`.
pub fn cells(surface: &PolyhedralSurface, level: u32) -> Vec<Cell> {
    let n = 1usize << level;
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(surface.num_patches() * n * n);
    for patch in 0..surface.num_patches() {
        for k1 in 0..n {
            for k2 in 0..n {
                let rect = Rect { x0: k1 as f64 * h, x1: (k1 + 1) as f64 * h, y0: k2 as f64 * h, y1: (k2 + 1) as f64 * h };
                out.push(Cell::new(surface, patch, rect));
            }
        }
    }
    out
}

pub fn assemble(surface: &PolyhedralSurface, level: u32, cfg: &QuadConfig) -> Result<DoubleLayerSystem, BemError> {
    if level < 1 {
        return Err(BemError::Level);
    }
    let unknowns = surface.num_patches() << (2 * level);
    if unknowns > cfg.max_unknowns {
        return Err(BemError::Budget { unknowns, budget: cfg.max_unknowns });
    }
    let cells = cells(surface, level);
    let sign = orientation(surface);
    let rules = Rules {
        far: GaussRule::new(cfg.far_order),
        near: GaussRule::new(cfg.near_order),
        close: GaussRule::new(cfg.close_order),
    };
    let np = surface.num_patches();
    let flat: Vec<bool> = (0..np * np).map(|k| coplanar(surface, k % np, k / np)).collect();
    let far_pts: Vec<Vec<(Vec3, f64)>> = cells.par_iter().map(|c| c.points(surface, &rules.far)).collect();
    let near_pts: Vec<Vec<(Vec3, f64)>> = cells.par_iter().map(|c| c.points(surface, &rules.near)).collect();
    let touch_tol = 1e-10 * surface.scale();
    let n = cells.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let test = &cells[m];
            let mut row = vec![0.0; n];
            for (k, trial) in cells.iter().enumerate() {
                if flat[trial.patch * np + test.patch] {
                    continue;
                }
                let diam = test.diam.max(trial.diam);
                let lower = (test.center - trial.center).norm() - 0.5 * (test.diam + trial.diam);
                let v = if lower > cfg.far_ratio * diam {
                    gauss_pair(surface, sign, &far_pts[m], trial, &far_pts[k])
                } else if lower > diam {
                    gauss_pair(surface, sign, &near_pts[m], trial, &near_pts[k])
                } else {
                    pair_recursive(surface, sign, &rules, cfg, test, trial, 0, touch_tol)
                };
                row[k] = -v;
            }
            row[m] += 0.5 * test.area;
            row
        })
        .collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(DoubleLayerSystem { surface: surface.clone(), level, cells, matrix, config: *cfg, orientation: sign })
}

fn adaptive_one(surface: &PolyhedralSurface, sign: f64, cell: &Cell, y: &Vec3, rule: &GaussRule, depth: u32) -> f64 {
    let n = &surface.patches[cell.patch].normal;
    let d = point_quad_distance(y, &cell.corners, n);
    if d < 3.0 * cell.diam && depth < 40 {
        return cell.children(surface).iter().map(|c| adaptive_one(surface, sign, c, y, rule, depth + 1)).sum();
    }
    let off = sign * surface.patches[cell.patch].plane_offset(y);
    let s: f64 = cell
        .points(surface, rule)
        .iter()
        .map(|(x, w)| {
            let r2 = (x - y).norm_squared();
            w / (r2 * r2.sqrt())
        })
        .sum();
    off * s / FOUR_PI
}

fn whole_patch(surface: &PolyhedralSurface, patch: usize) -> Cell {
    Cell::new(surface, patch, Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 })
}

/// Distance from `y` to the surface.
pub fn surface_distance(surface: &PolyhedralSurface, y: &Vec3) -> f64 {
    surface.patches.iter().map(|p| point_quad_distance(y, &p.points, &p.normal)).fold(f64::INFINITY, f64::min)
}

/// `K(1)(x)` at a point inside a patch; the coplanar part vanishes exactly.
pub fn gauss_check(surface: &PolyhedralSurface, x: &SurfacePoint) -> Result<f64, BemError> {
    let patch = &surface.patches[x.patch];
    if patch.boundary_distance(&x.x) <= 1e-9 * surface.scale() {
        return Err(BemError::OnEdge);
    }
    let sign = orientation(surface);
    let rule = GaussRule::new(4);
    let total = (0..surface.num_patches())
        .into_par_iter()
        .filter(|&q| !coplanar(surface, x.patch, q))
        .map(|q| adaptive_one(surface, sign, &whole_patch(surface, q), &x.x, &rule, 0))
        .collect::<Vec<f64>>();
    Ok(total.iter().sum())
}

/// `K(1)(y)` off the surface: `-1` inside, `0` outside.
pub fn gauss_check_off_surface(surface: &PolyhedralSurface, y: &Vec3) -> Result<f64, BemError> {
    let dist = surface_distance(surface, y);
    let min = 1e-9 * surface.scale();
    if dist <= min {
        return Err(BemError::TooClose { dist, min });
    }
    let sign = orientation(surface);
    let rule = GaussRule::new(4);
    let total = (0..surface.num_patches())
        .into_par_iter()
        .map(|q| adaptive_one(surface, sign, &whole_patch(surface, q), y, &rule, 0))
        .collect::<Vec<f64>>();
    Ok(total.iter().sum())
}

/// Whether `y` lies in the bounded domain.
pub fn contains(surface: &PolyhedralSurface, y: &Vec3) -> bool {
    gauss_check_off_surface(surface, y).is_ok_and(|v| v < -0.5)
}

/// Which equation the right-hand side enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// `(1/2 Id - K) u = g`.
    Direct,
    /// `(1/2 Id - K) u = -g`, whose potential has interior trace `g`.
    InteriorDirichlet,
}

/// Galerkin right-hand side `int_{cell} g`.
pub fn rhs_vector(system: &DoubleLayerSystem, g: &(dyn Fn(&SurfacePoint) -> f64 + Sync), convention: Convention) -> Vec<f64> {
    let rule = GaussRule::new(4);
    let s = &system.surface;
    let sign = match convention {
        Convention::Direct => 1.0,
        Convention::InteriorDirichlet => -1.0,
    };
    system
        .cells
        .par_iter()
        .map(|c| {
            let p = &s.patches[c.patch];
            let r = &c.rect;
            sign * rule.integrate_rect((r.x0, r.x1), (r.y0, r.y1), |u, v| g(&s.point(c.patch, [u, v])) * p.area_element([u, v]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    /// LU below `6 * 4^5` unknowns, GMRES from there on.
    Auto,
    Lu,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub solver: SolverKind,
    pub gmres_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    /// Estimate the 1-norm condition number (LU only).
    pub condition: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { solver: SolverKind::Auto, gmres_tol: 1e-13, restart: 60, max_iter: 2000, condition: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Cell values in cell order.
    pub density: Vec<f64>,
    /// `||A u - b|| / ||b||`.
    pub residual: f64,
    pub condition: Option<f64>,
    pub solver: SolverKind,
    pub iterations: usize,
}

const LU_LIMIT: usize = 6 * 1024;

pub fn solve(
    system: &DoubleLayerSystem,
    g: &(dyn Fn(&SurfacePoint) -> f64 + Sync),
    convention: Convention,
    opts: &SolveOptions,
) -> Result<Solution, BemError> {
    let b = rhs_vector(system, g, convention);
    solve_rhs(system, &b, opts)
}

pub fn solve_rhs(system: &DoubleLayerSystem, b: &[f64], opts: &SolveOptions) -> Result<Solution, BemError> {
    let n = system.len();
    if b.len() != n {
        return Err(BemError::RhsLength { got: b.len(), expected: n });
    }
    let kind = match opts.solver {
        SolverKind::Auto if n >= LU_LIMIT => SolverKind::Gmres,
        SolverKind::Auto => SolverKind::Lu,
        k => k,
    };
    let a = &system.matrix;
    let bv = DVector::from_column_slice(b);
    let (x, iterations, condition) = match kind {
        SolverKind::Gmres => {
            let (x, it) = gmres(a, &bv, opts)?;
            (x, it, None)
        }
        _ => {
            let lu = a.clone().lu();
            check_pivots(lu.u().diagonal().as_slice())?;
            let x = lu.solve(&bv).ok_or(BemError::Singular)?;
            let cond = if opts.condition { Some(condition_1norm(a, &lu)?) } else { None };
            (x, 1, cond)
        }
    };
    let bn = bv.norm();
    let residual = if bn > 0.0 { (a * &x - &bv).norm() / bn } else { (a * &x).norm() };
    Ok(Solution { density: x.as_slice().to_vec(), residual, condition, solver: kind, iterations })
}

fn check_pivots(diag: &[f64]) -> Result<(), BemError> {
    let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !(max > 0.0) || min <= 1e-14 * max {
        return Err(BemError::Singular);
    }
    Ok(())
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `||A||_1 ||A^{-1}||_1`, the inverse norm by Hager's estimator.
fn condition_1norm(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<f64, BemError> {
    let n = a.nrows();
    let lut = a.transpose().lu();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x).ok_or(BemError::Singular)?;
        est = y.iter().map(|v| v.abs()).sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = lut.solve(&xi).ok_or(BemError::Singular)?;
        let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |(j, m), (i, v)| if v.abs() > m { (i, v.abs()) } else { (j, m) });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    Ok(norm1(a) * est)
}

/// Restarted GMRES with Givens rotations.
fn gmres(a: &DMatrix<f64>, b: &DVector<f64>, opts: &SolveOptions) -> Result<(DVector<f64>, usize), BemError> {
    let n = b.len();
    let bn = b.norm();
    let mut x = DVector::zeros(n);
    if bn == 0.0 {
        return Ok((x, 0));
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let matvec = |v: &DVector<f64>| -> DVector<f64> { a * v };
    loop {
        let r = b - matvec(&x);
        let beta = r.norm();
        if beta / bn <= opts.gmres_tol {
            return Ok((x, total));
        }
        if total >= opts.max_iter {
            return Err(BemError::NoConvergence(beta / bn));
        }
        let mut v: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = DVector::<f64>::zeros(m + 1);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = matvec(&v[k]);
            for i in 0..=k {
                let hik = w.dot(&v[i]);
                h[(i, k)] = hik;
                w -= &v[i] * hik;
            }
            let hn = w.norm();
            h[(k + 1, k)] = hn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let den = h[(k, k)].hypot(h[(k + 1, k)]);
            cs[k] = h[(k, k)] / den;
            sn[k] = h[(k + 1, k)] / den;
            h[(k, k)] = den;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() / bn <= opts.gmres_tol * 0.5 || hn == 0.0 || total >= opts.max_iter {
                break;
            }
            v.push(w / hn);
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x += &v[i] * *yi;
        }
    }
}

/// `D u(y) = int u(x) kernel(x, y) dsigma(x)` at a point off the surface.
pub fn potential_eval(system: &DoubleLayerSystem, density: &[f64], y: &Vec3) -> Result<f64, BemError> {
    if density.len() != system.len() {
        return Err(BemError::RhsLength { got: density.len(), expected: system.len() });
    }
    let s = &system.surface;
    let dist = surface_distance(s, y);
    let min = system.cells.iter().flat_map(|c| c.edges().map(|(a, b)| (a - b).norm())).fold(0.0, f64::max);
    if dist <= min {
        return Err(BemError::TooClose { dist, min });
    }
    let rule = GaussRule::new(4);
    let parts: Vec<f64> = system
        .cells
        .par_iter()
        .zip(density.par_iter())
        .map(|(c, &u)| if u == 0.0 { 0.0 } else { u * adaptive_one(s, system.orientation, c, y, &rule, 0) })
        .collect();
    Ok(parts.iter().sum())
}

/// Harmonic functions used to test the interior Dirichlet reproduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HarmonicProbe {
    /// `a . y + c`.
    Linear { a: [f64; 3], c: f64 },
    /// `1 / |y - p|` with `p` outside the closed domain.
    Pole { p: [f64; 3] },
}

impl HarmonicProbe {
    pub fn eval(&self, y: &Vec3) -> f64 {
        match self {
            HarmonicProbe::Linear { a, c } => Vec3::from(*a).dot(y) + c,
            HarmonicProbe::Pole { p } => 1.0 / (y - Vec3::from(*p)).norm(),
        }
    }

    pub fn trace(&self, x: &SurfacePoint) -> f64 {
        self.eval(&x.x)
    }

    /// Laplacian by fourth-order central differences.
    pub fn laplacian(&self, y: &Vec3, step: f64) -> f64 {
        (0..3)
            .map(|k| {
                let mut e = Vec3::zeros();
                e[k] = step;
                let f = |t: f64| self.eval(&(y + e * t));
                (-f(2.0) + 16.0 * f(1.0) - 30.0 * f(0.0) + 16.0 * f(-1.0) - f(-2.0)) / (12.0 * step * step)
            })
            .sum()
    }
}

/// Pseudo-random points inside the domain at least `margin` away from the surface.
pub fn interior_points(surface: &PolyhedralSurface, count: usize, margin: f64, seed: u64) -> Vec<Vec3> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in &surface.vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 1000 * count.max(1) {
        tries += 1;
        let y = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
        if surface_distance(surface, &y) > margin && contains(surface, &y) {
            out.push(y);
        }
    }
    out
}

/// Options for [`analyze_solution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub basis: BasisSpec,
    /// Highest wavelet level analyzed; at most the discretization level.
    pub max_level: u32,
    /// Target `(s', 2, 2)`.
    pub s_prime: f64,
    /// Sobolev regularity `s` assumed for the prediction.
    pub s: f64,
    pub weighted: WeightedSpec,
    /// Exponent of the reported tail sums.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionAnalysis {
    pub adaptive: RateReport,
    pub uniform: RateReport,
    /// Adaptive over uniform fitted exponent.
    pub exponent_ratio: f64,
    pub alpha_star: Option<f64>,
    pub gamma_star: Option<f64>,
    pub boundary_tail: Vec<f64>,
    pub interior_tail: Vec<f64>,
}

/// Relative error below which a sample is treated as exact and left out of the fits.
const NOISE_FLOOR: f64 = 1e-12;

/// Coefficients of the cellwise density.
pub fn density_field(system: &DoubleLayerSystem, density: &[f64], basis: &BasisSpec, max_level: u32) -> Result<CoefficientField, BemError> {
    if max_level > system.level {
        return Err(BemError::Level);
    }
    let per = 1usize << (2 * system.level);
    let values: Vec<Vec<f64>> = density.chunks(per).map(|c| c.to_vec()).collect();
    Ok(from_cell_averages(&system.surface, &values, system.level, basis, max_level)?)
}

pub fn analyze_solution(system: &DoubleLayerSystem, density: &[f64], opts: &AnalysisOptions) -> Result<SolutionAnalysis, BemError> {
    let field = density_field(system, density, &opts.basis, opts.max_level)?;
    let target = BesovSpec::sobolev(opts.s_prime);
    let plan = NTermPlan::new(&field, &target)?;
    let full = plan.error(0);
    let floor = NOISE_FLOOR * full.max(f64::MIN_POSITIVE);
    let mut uniform = Vec::new();
    for j in field.coarsest() as i32..=opts.max_level as i32 {
        let u = uniform_approx(&field, &target, j)?;
        if u.error > floor && u.n_effective > 0 {
            uniform.push((u.n_effective as f64, u.error));
        }
    }
    let n_max = uniform.last().map(|s| s.0 as usize).unwrap_or(0);
    let mut adaptive = Vec::new();
    let mut n = 1usize;
    while n <= n_max.max(1) {
        let e = plan.error(n);
        if e > floor {
            adaptive.push((n as f64, e));
        }
        n *= 2;
    }
    let adaptive = fit_rate(&adaptive, None)?;
    let uniform = fit_rate(&uniform, None)?;
    let exponent_ratio = adaptive.slope / uniform.slope;
    let a_star = alpha_star(opts.weighted.rho, opts.weighted.k, opts.s, 2.0).ok();
    let g_star = a_star.and_then(|a| gamma_star(opts.s, opts.s_prime, 2.0, a).ok());
    Ok(SolutionAnalysis {
        adaptive,
        uniform,
        exponent_ratio,
        alpha_star: a_star,
        gamma_star: g_star,
        boundary_tail: tail_sums(&system.surface, &field, opts.tau, TailClass::Boundary),
        interior_tail: tail_sums(&system.surface, &field, opts.tau, TailClass::Interior),
    })
}
