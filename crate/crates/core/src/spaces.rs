//! Norms and parameter arithmetic: Besov-type norms through wavelet
//! coefficients, sequence norms, Sobolev-equivalent norms, the weighted
//! Sobolev norm of `X^k_rho` by graded polar quadrature, admissibility,
//! embeddings and interpolation parameters.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SpacesError;
use crate::jet::Jet2;
use crate::models::SmoothFunction;
use crate::quadrature::GaussRule;
use crate::surface::{sector_boundary_distance, ConeFace, PolyhedralSurface, ResolutionOfUnity, SurfacePoint};
use crate::wavelet::CoefficientField;

const REL_TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Smoothness `alpha`, integrability `p` and fine index `q`; `p`, `q` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovSpec {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovSpec {
    pub fn new(alpha: f64, p: f64, q: f64) -> Self {
        Self { alpha, p, q }
    }

    /// Point `(alpha, tau, tau)` on the adaptivity scale.
    pub fn critical(alpha: f64) -> Self {
        let tau = adaptivity_tau(alpha);
        Self { alpha, p: tau, q: tau }
    }

    pub fn sobolev(s: f64) -> Self {
        Self { alpha: s, p: 2.0, q: 2.0 }
    }

    pub fn is_admissible(&self) -> bool {
        admissible(self.alpha, self.p, self.q)
    }

    /// Level weight exponent `alpha + 2 (1/2 - 1/p)`.
    pub fn level_exponent(&self) -> f64 {
        self.alpha + 2.0 * (0.5 - 1.0 / self.p)
    }
}

impl fmt::Display for BesovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.alpha, self.p, self.q)
    }
}

/// Admissibility: `1/2 <= 1/p <= alpha/2 + 1/2`, with `q <= 2` on the critical line.
pub fn admissible(alpha: f64, p: f64, q: f64) -> bool {
    if !(alpha >= 0.0 && p > 0.0 && q > 0.0) || alpha.is_nan() || p.is_nan() || q.is_nan() {
        return false;
    }
    let ip = 1.0 / p;
    let crit = alpha / 2.0 + 0.5;
    if close(ip, crit) {
        return q <= 2.0 * (1.0 + REL_TOL);
    }
    (ip >= 0.5 || close(ip, 0.5)) && ip <= crit
}

/// `tau` with `1/tau = alpha/2 + 1/2`.
pub fn adaptivity_tau(alpha: f64) -> f64 {
    1.0 / (alpha / 2.0 + 0.5)
}

/// `2^{j (alpha + 2 (1/2 - 1/p))}`.
pub fn level_weight(j: u32, alpha: f64, p: f64) -> f64 {
    (j as f64 * (alpha + 2.0 * (0.5 - 1.0 / p))).exp2()
}

/// `(sum |c|^p)^{1/p}`, the maximum for `p = inf`.
pub fn lp_sum(values: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let s: f64 = values.iter().map(|v| v.abs().powf(p)).sum();
    s.powf(1.0 / p)
}

/// Per-level terms `2^{j w} ||c_j||_p` of the sequence norm.
fn level_terms<'a>(levels: impl IntoIterator<Item = (u32, &'a [f64])>, alpha: f64, p: f64) -> Vec<f64> {
    levels.into_iter().map(|(j, c)| level_weight(j, alpha, p) * lp_sum(c, p)).collect()
}

fn combine(terms: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return terms.iter().fold(0.0, |m: f64, &t| m.max(t));
    }
    let s: f64 = terms.iter().map(|t| t.powf(q)).sum();
    s.powf(1.0 / q)
}

/// Sequence norm of `b^alpha_{p,q}`: `(sum_j 2^{j w q} (sum |c_{j}|^p)^{q/p})^{1/q}`.
pub fn seq_norm<'a>(levels: impl IntoIterator<Item = (u32, &'a [f64])>, alpha: f64, p: f64, q: f64) -> f64 {
    combine(&level_terms(levels, alpha, p), q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub max_level: u32,
    /// Estimated contribution of the levels beyond `max_level`, from the last three levels.
    pub tail_estimate: Option<f64>,
    pub flags: Vec<&'static str>,
}

/// `||P_{j*-1} u | L_p(surface)||` by patch quadrature on the generator cells.
pub fn coarse_lp_norm(surface: &PolyhedralSurface, field: &CoefficientField, p: f64) -> f64 {
    let rule = GaussRule::new(6);
    let n = 1usize << field.basis.coarsest;
    let h = 1.0 / n as f64;
    let mut total = 0.0f64;
    for patch in 0..field.num_patches.min(surface.num_patches()) {
        let pa = &surface.patches[patch];
        for k1 in 0..n {
            for k2 in 0..n {
                let (x0, y0) = (k1 as f64 * h, k2 as f64 * h);
                if p.is_infinite() {
                    let mut pts: Vec<[f64; 2]> = vec![[x0, y0], [x0 + h, y0], [x0, y0 + h], [x0 + h, y0 + h]];
                    for &a in &rule.nodes {
                        for &b in &rule.nodes {
                            pts.push([x0 + a * h, y0 + b * h]);
                        }
                    }
                    for uv in pts {
                        let v = field.coarse_value_at(&surface.point(patch, uv));
                        total = total.max(v.abs());
                    }
                } else {
                    total += rule.integrate_rect((x0, x0 + h), (y0, y0 + h), |u, v| {
                        let val = field.coarse_value_at(&surface.point(patch, [u, v]));
                        val.abs().powf(p) * pa.area_element([u, v])
                    });
                }
            }
        }
    }
    if p.is_infinite() {
        total
    } else {
        total.powf(1.0 / p)
    }
}

fn tail_estimate(terms: &[f64], q: f64) -> (Option<f64>, Option<&'static str>) {
    let k = terms.len();
    if k < 3 {
        return (None, Some("tail_too_few_levels"));
    }
    let (a, b, c) = (terms[k - 3], terms[k - 2], terms[k - 1]);
    if c == 0.0 {
        return (Some(0.0), None);
    }
    if a <= 0.0 || b <= 0.0 {
        return (None, Some("tail_irregular"));
    }
    let ratio = (b / a).max(c / b);
    if ratio >= 1.0 {
        return (None, Some("tail_not_decaying"));
    }
    if q.is_infinite() {
        return (Some(0.0), None);
    }
    let s: f64 = terms.iter().map(|t| t.powf(q)).sum();
    let rq = ratio.powf(q);
    let extra = c.powf(q) * rq / (1.0 - rq);
    (Some((s + extra).powf(1.0 / q) - s.powf(1.0 / q)), None)
}

/// Besov-type norm: coarse `L_p` norm plus the weighted sequence norm of the wavelet levels.
pub fn besov_norm(surface: &PolyhedralSurface, field: &CoefficientField, spec: &BesovSpec) -> Result<NormReport, SpacesError> {
    if !spec.is_admissible() {
        return Err(SpacesError::NotAdmissible { alpha: spec.alpha, p: spec.p, q: spec.q });
    }
    Ok(besov_unchecked(surface, field, spec))
}

fn besov_unchecked(surface: &PolyhedralSurface, field: &CoefficientField, spec: &BesovSpec) -> NormReport {
    let coarse = coarse_lp_norm(surface, field, spec.p);
    let terms = level_terms(field.level_range().map(|j| (j, field.level(j))), spec.alpha, spec.p);
    let tail = combine(&terms, spec.q);
    let (tail_estimate, flag) = tail_estimate(&terms, spec.q);
    NormReport { value: coarse + tail, max_level: field.max_level, tail_estimate, flags: flag.into_iter().collect() }
}

/// Largest `s` for which the patchwise bases characterize `H^s`.
pub const SOBOLEV_VALIDATED_MAX: f64 = 0.5;

/// Sobolev-equivalent norm `||P u||_{L_2} + (sum_j 2^{2sj} sum |c|^2)^{1/2}`.
pub fn sobolev_norm(surface: &PolyhedralSurface, field: &CoefficientField, s: f64) -> NormReport {
    let mut r = besov_unchecked(surface, field, &BesovSpec::sobolev(s));
    if !(0.0..SOBOLEV_VALIDATED_MAX).contains(&s) {
        r.flags.push("s_outside_validated_range");
    }
    r
}

/// `(alpha0, p0, q0) -> (alpha1, p1, q1)` embeds iff `gamma > 2 max{0, 1/p0 - 1/p1}`
/// or equality holds with `q0 <= q1`, where `gamma = alpha0 - alpha1`.
pub fn embedding_predicate(spec0: &BesovSpec, spec1: &BesovSpec) -> bool {
    let gamma = spec0.alpha - spec1.alpha;
    let thr = 2.0 * (1.0 / spec0.p - 1.0 / spec1.p).max(0.0);
    if close(gamma, thr) {
        return spec0.q <= spec1.q;
    }
    gamma > thr
}

/// Parameters of the complex interpolation space `[spec0, spec1]_theta`.
pub fn interpolation_params(spec0: &BesovSpec, spec1: &BesovSpec, theta: f64) -> Result<BesovSpec, SpacesError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SpacesError::Theta(theta));
    }
    for s in [spec0, spec1] {
        if !s.is_admissible() {
            return Err(SpacesError::NotAdmissible { alpha: s.alpha, p: s.p, q: s.q });
        }
    }
    if spec0.q.is_infinite() && spec1.q.is_infinite() {
        return Err(SpacesError::InfiniteFineIndices);
    }
    let mix = |a: f64, b: f64| (1.0 - theta) * a + theta * b;
    Ok(BesovSpec {
        alpha: mix(spec0.alpha, spec1.alpha),
        p: 1.0 / mix(1.0 / spec0.p, 1.0 / spec1.p),
        q: 1.0 / mix(1.0 / spec0.q, 1.0 / spec1.q),
    })
}

/// `X^k_rho` with `mu = rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSpec {
    pub k: u32,
    pub rho: f64,
}

impl WeightedSpec {
    /// Any `rho >= 0` defines a norm; see [`WeightedSpec::in_standard_range`].
    pub fn new(k: u32, rho: f64) -> Result<Self, SpacesError> {
        if k > 2 {
            return Err(SpacesError::UnsupportedOrder(k));
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(SpacesError::BadWeightedSpec { k, rho });
        }
        Ok(Self { k, rho })
    }

    /// `0 <= rho <= k`, the range where `X^k_rho` behaves as a Sobolev space.
    pub fn in_standard_range(&self) -> bool {
        self.rho <= self.k as f64
    }

    /// Multi-indices `(beta_r, beta_phi)` with `1 <= |beta| <= k`.
    pub fn betas(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for order in 1..=self.k {
            for br in (0..=order).rev() {
                out.push((br, order - br));
            }
        }
        out
    }
}

/// Graded polar quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradedOptions {
    /// Number of geometric layers toward the vertex and the rays.
    pub depth: usize,
    pub gauss_points: usize,
    /// Relative growth per layer counted as divergent.
    pub growth_tol: f64,
    /// Consecutive growing layers that declare divergence.
    pub window: usize,
    /// Finite-difference step relative to the face radius.
    pub fd_step: f64,
}

impl Default for GradedOptions {
    fn default() -> Self {
        Self { depth: 40, gauss_points: 8, growth_tol: 0.01, window: 5, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedReport {
    pub value: f64,
    /// `||phi_n u | X^k_rho(boundary of C_n)||` per vertex.
    pub per_vertex: Vec<f64>,
    /// Largest relative growth over the final layers, across faces and terms.
    pub worst_growth: f64,
}

/// Value, first and second polar derivatives of `f` from its planar jet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarDerivs {
    pub v: f64,
    pub r: f64,
    pub phi: f64,
    pub rr: f64,
    pub rphi: f64,
    pub phiphi: f64,
}

pub fn polar_derivatives(j: &Jet2, r: f64, phi: f64) -> PolarDerivs {
    let (s, c) = phi.sin_cos();
    let [fx, fy] = j.d;
    let (fxx, fxy, fyy) = (j.h[0][0], j.h[0][1], j.h[1][1]);
    PolarDerivs {
        v: j.v,
        r: c * fx + s * fy,
        phi: r * (-s * fx + c * fy),
        rr: c * c * fxx + 2.0 * c * s * fxy + s * s * fyy,
        rphi: -s * fx + c * fy + r * (-c * s * fxx + (c * c - s * s) * fxy + c * s * fyy),
        phiphi: r * r * (s * s * fxx - 2.0 * c * s * fxy + c * c * fyy) - r * (c * fx + s * fy),
    }
}

impl PolarDerivs {
    fn get(&self, br: u32, bp: u32) -> f64 {
        match (br, bp) {
            (0, 0) => self.v,
            (1, 0) => self.r,
            (0, 1) => self.phi,
            (2, 0) => self.rr,
            (1, 1) => self.rphi,
            (0, 2) => self.phiphi,
            _ => unreachable!("order above two"),
        }
    }
}

/// Jet of `phi_n u` at planar point `y` of `face`.
fn localized_jet(
    surface: &PolyhedralSurface,
    res: &ResolutionOfUnity,
    handle: &dyn SmoothFunction,
    face: &ConeFace,
    y: [f64; 2],
    fd_h: f64,
) -> Result<Jet2, SpacesError> {
    let phi = res.jet_on_face(surface, face, y);
    if phi.v == 0.0 && phi.d == [0.0; 2] && phi.h == [[0.0; 2]; 2] {
        return Ok(Jet2::constant(0.0));
    }
    let u = match handle.face_jet(face, y) {
        Some(j) => j,
        None => {
            let dist = sector_boundary_distance(face.angle, y);
            if dist < 10.0 * fd_h {
                return Err(SpacesError::FiniteDifferenceNearBoundary { dist, min: 10.0 * fd_h });
            }
            fd_jet(surface, handle, face, y, fd_h)
        }
    };
    let out = phi * u;
    if !out.is_finite() {
        return Err(SpacesError::NonFinite { vertex: face.vertex, face: 0 });
    }
    Ok(out)
}

fn fd_jet(surface: &PolyhedralSurface, handle: &dyn SmoothFunction, face: &ConeFace, y: [f64; 2], h: f64) -> Jet2 {
    let patch = &surface.patches[face.patch];
    let at = |a: f64, b: f64| {
        let x = face.from_planar([a, b]);
        let uv = patch.inverse(&x).unwrap_or([0.5, 0.5]);
        handle.value(&SurfacePoint { patch: face.patch, uv, x })
    };
    let f0 = at(y[0], y[1]);
    let (fxp, fxm) = (at(y[0] + h, y[1]), at(y[0] - h, y[1]));
    let (fyp, fym) = (at(y[0], y[1] + h), at(y[0], y[1] - h));
    let fxy = (at(y[0] + h, y[1] + h) - at(y[0] + h, y[1] - h) - at(y[0] - h, y[1] + h) + at(y[0] - h, y[1] - h)) / (4.0 * h * h);
    Jet2 {
        v: f0,
        d: [(fxp - fxm) / (2.0 * h), (fyp - fym) / (2.0 * h)],
        h: [[(fxp - 2.0 * f0 + fxm) / (h * h), fxy], [fxy, (fyp - 2.0 * f0 + fym) / (h * h)]],
    }
}

/// Outcome of the graded quadrature on one face: integrals per component and
/// the relative growth of each component over the final layers.
struct FaceIntegral {
    totals: Vec<f64>,
    growth: Vec<Vec<f64>>,
}

/// Integrates nonnegative `integrand(r, phi) -> components` over the sector
/// `[0, radius] x [0, angle]` (measure `r dr dphi`), grading geometrically
/// toward `r = 0` and both rays.
fn graded_polar<F>(radius: f64, angle: f64, ncomp: usize, opts: &GradedOptions, integrand: F) -> Result<FaceIntegral, SpacesError>
where
    F: Fn(f64, f64, &mut [f64]) -> Result<(), SpacesError>,
{
    let rule = GaussRule::new(opts.gauss_points);
    let half = 0.5 * angle;
    let rband = |i: usize| (radius * 0.5f64.powi(i as i32 + 1), radius * 0.5f64.powi(i as i32));
    // angular bands near phi = 0 (side 0) and phi = angle (side 1)
    let aband = |i: usize, side: usize| {
        let lo = half * 0.5f64.powi(i as i32 + 1);
        let hi = half * 0.5f64.powi(i as i32);
        if side == 0 {
            (lo, hi)
        } else {
            (angle - hi, angle - lo)
        }
    };
    let mut vals = vec![0.0; ncomp];
    let mut cell = |(r0, r1): (f64, f64), (p0, p1): (f64, f64), acc: &mut [f64]| -> Result<(), SpacesError> {
        let (hr, hp) = (r1 - r0, p1 - p0);
        for (&tr, &wr) in rule.nodes.iter().zip(&rule.weights) {
            let r = r0 + hr * tr;
            for (&tp, &wp) in rule.nodes.iter().zip(&rule.weights) {
                let phi = p0 + hp * tp;
                vals.iter_mut().for_each(|v| *v = 0.0);
                integrand(r, phi, &mut vals)?;
                let w = wr * wp * hr * hp * r;
                for (a, v) in acc.iter_mut().zip(&vals) {
                    *a += w * v;
                }
            }
        }
        Ok(())
    };
    let mut totals = vec![0.0; ncomp];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(opts.depth + 1);
    for d in 0..=opts.depth {
        let mut layer = vec![0.0; ncomp];
        for i in 0..=d {
            for side in 0..2 {
                cell(rband(d), aband(i, side), &mut layer)?;
            }
        }
        for i in 0..d {
            for side in 0..2 {
                cell(rband(i), aband(d, side), &mut layer)?;
            }
        }
        for (t, l) in totals.iter_mut().zip(&layer) {
            *t += l;
        }
        history.push(totals.clone());
    }
    // relative growth of the last `window` layers
    let mut growth = vec![Vec::new(); ncomp];
    let k = history.len();
    for c in 0..ncomp {
        for d in k.saturating_sub(opts.window)..k {
            if d == 0 {
                continue;
            }
            let prev = history[d - 1][c];
            let inc = history[d][c] - prev;
            let g = if prev > 0.0 {
                inc / prev
            } else if inc > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            growth[c].push(g);
        }
    }
    Ok(FaceIntegral { totals, growth })
}

fn diverges(growth: &[f64], opts: &GradedOptions) -> bool {
    growth.len() >= opts.window && growth.iter().all(|&g| g > opts.growth_tol)
}

/// `||u | X^k_rho(surface)|| = sum_n ||phi_n u | X^k_rho(boundary of C_n)||`.
pub fn weighted_sobolev_norm(
    handle: &dyn SmoothFunction,
    surface: &PolyhedralSurface,
    res: &ResolutionOfUnity,
    spec: &WeightedSpec,
    opts: &GradedOptions,
) -> Result<WeightedReport, SpacesError> {
    let spec = WeightedSpec::new(spec.k, spec.rho)?;
    let betas = spec.betas();
    let ncomp = 1 + betas.len();
    let rho = spec.rho;
    let faces: Vec<(usize, usize)> =
        (0..surface.num_vertices()).flat_map(|n| (0..surface.cones[n].len()).map(move |t| (n, t))).collect();
    let results: Vec<Result<FaceIntegral, SpacesError>> = faces
        .par_iter()
        .map(|&(n, t)| {
            let face = &surface.cones[n][t];
            let radius = res.r1[n];
            let fd_h = opts.fd_step * radius;
            let gamma = face.angle;
            graded_polar(radius, gamma, ncomp, opts, |r, phi, out| {
                let y = [r * phi.cos(), r * phi.sin()];
                let j = localized_jet(surface, res, handle, face, y, fd_h).map_err(|e| match e {
                    SpacesError::NonFinite { vertex, .. } => SpacesError::NonFinite { vertex, face: t },
                    e => e,
                })?;
                if j.v == 0.0 && j.d == [0.0; 2] && j.h == [[0.0; 2]; 2] {
                    return Ok(());
                }
                let pd = polar_derivatives(&j, r, phi);
                let q = face.q(phi);
                out[0] = pd.v * pd.v;
                let base = r.powf(-rho) * (1.0 + r).powf(rho);
                for (c, &(br, bp)) in betas.iter().enumerate() {
                    let w = base * (q * r).powi(br as i32) * q.powf(bp as f64 - rho);
                    let v = w * pd.get(br, bp);
                    out[c + 1] = v * v;
                }
                Ok(())
            })
        })
        .collect();
    let mut per_vertex = vec![0.0; surface.num_vertices()];
    let mut l2 = vec![0.0; surface.num_vertices()];
    let mut worst: Option<(f64, usize, usize)> = None;
    let mut worst_growth = 0.0f64;
    let mut divergent: Option<(f64, usize, usize)> = None;
    for (&(n, t), r) in faces.iter().zip(results) {
        let fi = r?;
        l2[n] += fi.totals[0];
        for c in 1..ncomp {
            per_vertex[n] += fi.totals[c].sqrt();
        }
        for g in &fi.growth {
            let last = g.last().copied().unwrap_or(0.0);
            worst_growth = worst_growth.max(last);
            if worst.is_none_or(|w| last > w.0) {
                worst = Some((last, n, t));
            }
            if diverges(g, opts) {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                if divergent.is_none_or(|d| mean > d.0) {
                    divergent = Some((mean, n, t));
                }
            }
        }
    }
    if let Some((_, vertex, face)) = divergent {
        return Err(SpacesError::Divergent { vertex, face });
    }
    for n in 0..per_vertex.len() {
        per_vertex[n] += l2[n].sqrt();
    }
    let value = per_vertex.iter().sum();
    Ok(WeightedReport { value, per_vertex, worst_growth })
}

/// `sum_{n,t} sum_{|a| <= k} ||delta_{n,t}^{k - rho} D^a_y (phi_n u)_{n,t} | L_2||`,
/// the left side of the weighted Sobolev embedding of the localized pieces.
pub fn delta_weighted_norm(
    handle: &dyn SmoothFunction,
    surface: &PolyhedralSurface,
    res: &ResolutionOfUnity,
    spec: &WeightedSpec,
    opts: &GradedOptions,
) -> Result<f64, SpacesError> {
    let spec = WeightedSpec::new(spec.k, spec.rho)?;
    // Cartesian multi-indices up to order k: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2)
    let alphas: Vec<(usize, usize)> = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        .into_iter()
        .filter(|&(a, b)| (a + b) as u32 <= spec.k)
        .collect();
    let ncomp = alphas.len();
    let c2 = res.c2;
    let expo = spec.k as f64 - spec.rho;
    let faces: Vec<(usize, usize)> =
        (0..surface.num_vertices()).flat_map(|n| (0..surface.cones[n].len()).map(move |t| (n, t))).collect();
    let results: Vec<Result<FaceIntegral, SpacesError>> = faces
        .par_iter()
        .map(|&(n, t)| {
            let face = &surface.cones[n][t];
            let radius = res.r1[n];
            let fd_h = opts.fd_step * radius;
            graded_polar(radius, face.angle, ncomp, opts, |r, phi, out| {
                let y = [r * phi.cos(), r * phi.sin()];
                let j = localized_jet(surface, res, handle, face, y, fd_h)?;
                let delta = sector_boundary_distance(face.angle, y).min(c2);
                let w = delta.powf(expo);
                for (c, &(a, b)) in alphas.iter().enumerate() {
                    let d = match (a, b) {
                        (0, 0) => j.v,
                        (1, 0) => j.d[0],
                        (0, 1) => j.d[1],
                        (2, 0) => j.h[0][0],
                        (1, 1) => j.h[0][1],
                        _ => j.h[1][1],
                    };
                    out[c] = (w * d) * (w * d);
                }
                Ok(())
            })
        })
        .collect();
    let mut total = 0.0;
    for r in results {
        total += r?.totals.iter().map(|v| v.sqrt()).sum::<f64>();
    }
    Ok(total)
}
