//! Best n-term approximation in sequence norms, uniform truncation, rate
//! fitting and predicted exponents, synthetic coefficient fields, tail sums
//! over the interior/boundary index split and the local Whitney estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ApproxError;
use crate::jet::Jet2;
use crate::models::SmoothFunction;
use crate::quadrature::GaussRule;
use crate::spaces::{
    admissible, besov_norm, embedding_predicate, level_weight, lp_sum, weighted_sobolev_norm, BesovSpec, GradedOptions,
    WeightedSpec,
};
use crate::surface::{PolyhedralSurface, ResolutionOfUnity};
use crate::wavelet::{classify_index, BasisSpec, CoefficientField, WaveletIndex};

const TOL: f64 = 1e-12;

fn check_target(target: &BesovSpec) -> Result<(), ApproxError> {
    if target.p != target.q || !target.p.is_finite() {
        return Err(ApproxError::TargetNotDiagonal { p: target.p, q: target.q });
    }
    if !target.is_admissible() {
        return Err(ApproxError::Precondition(format!("target {target} is not admissible")));
    }
    Ok(())
}

/// `(2^{j w} |c|)^p`, the contribution of one coefficient to the `p`-th power of the target norm.
fn weighted_power(j: u32, c: f64, target: &BesovSpec) -> f64 {
    (level_weight(j, target.alpha, target.p) * c.abs()).powf(target.p)
}

/// Sum in ascending order. Floating-point addition is monotone in each
/// argument, so the ascending sum of an elementwise smaller multiset is never larger.
fn ascending_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Wavelet indices ordered by decreasing weighted modulus, with the error of every prefix.
#[derive(Debug, Clone)]
pub struct NTermPlan {
    pub target: BesovSpec,
    /// `(index, weighted modulus 2^{j w} |c|)`, largest first, ties by index.
    pub order: Vec<(WaveletIndex, f64)>,
    /// `tail[n]`: sum of the `p`-th powers of the entries `n..`, accumulated from the smallest.
    tail: Vec<f64>,
}

impl NTermPlan {
    pub fn new(field: &CoefficientField, target: &BesovSpec) -> Result<Self, ApproxError> {
        check_target(target)?;
        let w = target.level_exponent();
        let mut entries: Vec<(WaveletIndex, f64, f64)> = field
            .wavelets()
            .map(|(idx, c)| {
                let j = idx.level as u32;
                (idx, (j as f64 * w).exp2() * c.abs(), weighted_power(j, c, target))
            })
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tail = vec![0.0; entries.len() + 1];
        for n in (0..entries.len()).rev() {
            tail[n] = tail[n + 1] + entries[n].2;
        }
        let order = entries.into_iter().map(|(i, m, _)| (i, m)).collect();
        Ok(Self { target: *target, order, tail })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `sigma_n` in the target sequence norm; zero for `n >= len`.
    pub fn error(&self, n: usize) -> f64 {
        self.tail[n.min(self.order.len())].powf(1.0 / self.target.p)
    }

    pub fn retained(&self, n: usize) -> Vec<WaveletIndex> {
        self.order.iter().take(n).map(|e| e.0).collect()
    }
}

/// Keeps the `n` largest weighted wavelet coefficients (the generator block is always kept).
pub fn best_n_term(
    field: &CoefficientField,
    target: &BesovSpec,
    n: usize,
) -> Result<(Vec<WaveletIndex>, f64), ApproxError> {
    let plan = NTermPlan::new(field, target)?;
    Ok((plan.retained(n), plan.error(n)))
}

/// Field with only the given wavelet indices (and all generators) kept.
pub fn restrict(field: &CoefficientField, keep: &[WaveletIndex]) -> CoefficientField {
    let mut out = field.clone();
    for j in field.level_range() {
        out.level_mut(j).iter_mut().for_each(|c| *c = 0.0);
    }
    for idx in keep {
        if let Ok(c) = field.get(idx) {
            out.set(idx, c).expect("index taken from the same field");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformApprox {
    pub error: f64,
    /// Wavelet indices on levels `<= j_keep`.
    pub n_effective: usize,
}

/// Error of dropping every level above `j_keep` (`j_keep < j*` drops all wavelets).
pub fn uniform_approx(field: &CoefficientField, target: &BesovSpec, j_keep: i32) -> Result<UniformApprox, ApproxError> {
    check_target(target)?;
    let mut dropped = Vec::new();
    let mut n_effective = 0;
    for j in field.level_range() {
        if j as i64 <= j_keep as i64 {
            n_effective += field.count_at_level(j);
        } else {
            dropped.extend(field.level(j).iter().map(|&c| weighted_power(j, c, target)));
        }
    }
    Ok(UniformApprox { error: ascending_sum(dropped).powf(1.0 / target.p), n_effective })
}

/// Predicted decay exponent of `sigma_n` for the pair `spec0 -> spec1`.
pub fn predicted_rate(spec0: &BesovSpec, spec1: &BesovSpec) -> Result<f64, ApproxError> {
    if !embedding_predicate(spec0, spec1) {
        return Err(ApproxError::NoEmbedding);
    }
    let gamma = spec0.alpha - spec1.alpha;
    let thr = 2.0 * (1.0 / spec0.p - 1.0 / spec1.p).max(0.0);
    if gamma - thr > TOL * gamma.abs().max(1.0) {
        Ok(gamma / 2.0)
    } else {
        Ok((gamma / 2.0).min(1.0 / spec0.q - 1.0 / spec1.q))
    }
}

/// `gamma* = s - s' + Theta (2 alpha* - s)` with `Theta = 1 - s' / (s - 2 (1/p - 1/2))`.
pub fn gamma_star(s: f64, s_prime: f64, p: f64, alpha_star: f64) -> Result<f64, ApproxError> {
    let d = 2.0 * (1.0 / p - 0.5);
    if s - s_prime < d - TOL {
        return Err(ApproxError::Precondition(format!("s - s' = {} below 2(1/p - 1/2) = {d}", s - s_prime)));
    }
    if !(0.0..1.5).contains(&s_prime) {
        return Err(ApproxError::Precondition(format!("s' = {s_prime} outside [0, 3/2)")));
    }
    let denom = s - d;
    let ratio = if denom.abs() <= TOL {
        if s_prime.abs() > TOL {
            return Err(ApproxError::Precondition("s' / 0 with s' > 0".into()));
        }
        0.0
    } else {
        s_prime / denom
    };
    let theta = 1.0 - ratio;
    let g = s - s_prime + theta * (2.0 * alpha_star - s);
    if g < -TOL {
        return Err(ApproxError::Precondition(format!("gamma* = {g} is negative; alpha* too small for s")));
    }
    Ok(g.max(0.0))
}

/// `alpha* = min{rho, k - rho, s - (1/p - 1/2)}`.
pub fn alpha_star(rho: f64, k: u32, s: f64, p: f64) -> Result<f64, ApproxError> {
    let kf = k as f64;
    if !(rho > 0.0 && rho < kf) {
        return Err(ApproxError::Precondition(format!("rho = {rho} outside (0, {k})")));
    }
    if !(s > 0.0) || !admissible(s, p, p) {
        return Err(ApproxError::Precondition(format!("({s}, {p}, {p}) is not admissible with s > 0")));
    }
    Ok(rho.min(kf - rho).min(s - (1.0 / p - 0.5)))
}

/// Which half of the index split a tail sum runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailClass {
    Interior,
    Boundary,
}

/// Per-level `sum |c_{j,xi}|^tau` over the chosen class, without range checks.
pub fn tail_sums(surface: &PolyhedralSurface, field: &CoefficientField, tau: f64, class: TailClass) -> Vec<f64> {
    let levels: Vec<u32> = field.level_range().collect();
    let comps = field.basis.components();
    levels
        .par_iter()
        .map(|&j| {
            let n = 1usize << j;
            let data = field.level(j);
            // class depends only on (patch, cell)
            let mut mask = vec![false; field.num_patches * n * n];
            for patch in 0..field.num_patches {
                for k1 in 0..n {
                    for k2 in 0..n {
                        let idx = WaveletIndex { level: j as i32, patch, etype: 1, comp: 0, k1: k1 as u32, k2: k2 as u32 };
                        let int = classify_index(surface, &idx).is_interior();
                        mask[(patch * n + k1) * n + k2] = int == (class == TailClass::Interior);
                    }
                }
            }
            let mut s = 0.0;
            for (off, &c) in data.iter().enumerate() {
                let pos = off % (n * n);
                let patch = off / (n * n) / (3 * comps);
                if mask[patch * n * n + pos] {
                    s += c.abs().powf(tau);
                }
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Per-level contributions to `lhs`, coarsest first.
    pub per_level: Vec<f64>,
}

impl TailReport {
    /// Running sums `sum_{j <= J}` of the per-level contributions.
    pub fn partial_sums(&self) -> Vec<f64> {
        self.per_level
            .iter()
            .scan(0.0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

fn report(per_level: Vec<f64>, rhs: f64) -> TailReport {
    let lhs: f64 = per_level.iter().sum();
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    TailReport { lhs, rhs, ratio, per_level }
}

/// Boundary tail `sum_{bnd} |c|^tau` against `||u | B^s_{Psi,p}||^tau`.
pub fn boundary_tail_check(
    surface: &PolyhedralSurface,
    field: &CoefficientField,
    s: f64,
    p: f64,
    tau: f64,
) -> Result<TailReport, ApproxError> {
    let spec = BesovSpec::new(s, p, p);
    if !spec.is_admissible() {
        return Err(ApproxError::Precondition(format!("{spec} is not admissible")));
    }
    let it = 1.0 / tau;
    let ip = 1.0 / p;
    let ok = (it >= 0.5 - TOL && it <= ip + TOL) || (it > ip && it < 1.0 - ip + s);
    if !ok || !tau.is_finite() {
        return Err(ApproxError::TauOutOfRange { tau });
    }
    let per_level = tail_sums(surface, field, tau, TailClass::Boundary);
    let rhs = besov_norm(surface, field, &spec)?.value.powf(tau);
    Ok(report(per_level, rhs))
}

/// Interior tail `sum_{int} |c|^tau` against `||u | X^k_rho||^tau`.
#[allow(clippy::too_many_arguments)]
pub fn interior_tail_check(
    surface: &PolyhedralSurface,
    field: &CoefficientField,
    handle: &dyn SmoothFunction,
    res: &ResolutionOfUnity,
    weighted: &WeightedSpec,
    tau: f64,
    opts: &GradedOptions,
) -> Result<TailReport, ApproxError> {
    let (k, rho) = (weighted.k, weighted.rho);
    let it = 1.0 / tau;
    let bound = 0.5 + rho.min(k as f64 - rho);
    if !(it >= 0.5 - TOL && it < bound) {
        return Err(ApproxError::TauOutOfRange { tau });
    }
    let have = field.basis.dual_moments();
    if have < k {
        return Err(ApproxError::TooFewMoments { have, need: k });
    }
    let per_level = tail_sums(surface, field, tau, TailClass::Interior);
    let rhs = weighted_sobolev_norm(handle, surface, res, weighted, opts)?.value.powf(tau);
    Ok(report(per_level, rhs))
}

/// Ratios of consecutive partial sums minus one.
fn increments(partial: &[f64]) -> Vec<f64> {
    partial
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] - 1.0 } else if w[1] > 0.0 { f64::INFINITY } else { 0.0 })
        .collect()
}

/// Relative growth per level allowed for a stable sequence.
pub const GROWTH_TOL: f64 = 0.05;
/// Levels inspected by the growth tests.
pub const GROWTH_WINDOW: usize = 3;

/// Growth above 5% on each of the last three levels.
pub fn is_growing(partial: &[f64]) -> bool {
    let inc = increments(partial);
    inc.len() >= GROWTH_WINDOW && inc[inc.len() - GROWTH_WINDOW..].iter().all(|&g| g > GROWTH_TOL)
}

/// Growth below 5% on each of the last three levels.
pub fn is_stable(partial: &[f64]) -> bool {
    let inc = increments(partial);
    inc.len() >= GROWTH_WINDOW && inc[inc.len() - GROWTH_WINDOW..].iter().all(|&g| g < GROWTH_TOL)
}

/// Axis-aligned square `[x0, x0 + h] x [y0, y0 + h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhitneyReport {
    /// `inf_{P of degree < k} ||f - P | L_2(Q)||`.
    pub numerator: f64,
    /// `|f|_{W^k(L_2(Q))}`.
    pub seminorm: f64,
    pub ratio: f64,
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return 1.0;
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `inf_P ||f - P|| / (|Q|^{k/2} |f|_{W^k})` for `k` in `{1, 2}`; `f` receives
/// coordinate jets so the seminorm uses exact derivatives.
pub fn whitney_check(f: &dyn Fn(Jet2, Jet2) -> Jet2, q: &Square, k: u32) -> Result<WhitneyReport, ApproxError> {
    if !(1..=2).contains(&k) {
        return Err(ApproxError::Precondition(format!("Whitney check supports k in {{1, 2}}, got {k}")));
    }
    if !(q.h > 0.0) {
        return Err(ApproxError::Precondition("square side must be positive".into()));
    }
    let rule = GaussRule::new(16);
    let ku = k as usize;
    // orthonormal Legendre products of total degree < k
    let degs: Vec<(usize, usize)> = (0..ku).flat_map(|a| (0..ku - a).map(move |b| (a, b))).collect();
    let mut pts = Vec::with_capacity(rule.len() * rule.len());
    for (tx, wx) in rule.nodes.iter().zip(&rule.weights) {
        for (ty, wy) in rule.nodes.iter().zip(&rule.weights) {
            let x = q.x0 + q.h * tx;
            let y = q.y0 + q.h * ty;
            let jet = f(Jet2::variable(x, 0), Jet2::variable(y, 1));
            if !jet.is_finite() {
                return Err(ApproxError::Precondition(format!("f is not finite at ({x}, {y})")));
            }
            let basis: Vec<f64> = degs
                .iter()
                .map(|&(a, b)| {
                    ((2 * a + 1) as f64 * (2 * b + 1) as f64).sqrt() * legendre(a, 2.0 * tx - 1.0) * legendre(b, 2.0 * ty - 1.0)
                        / q.h
                })
                .collect();
            pts.push((wx * wy * q.h * q.h, jet, basis));
        }
    }
    let coef: Vec<f64> =
        (0..degs.len()).map(|m| pts.iter().map(|(w, jet, b)| w * jet.v * b[m]).sum()).collect();
    let mut res2 = 0.0;
    let mut norm2 = 0.0;
    let mut semi2 = 0.0;
    for (w, jet, b) in &pts {
        let p: f64 = coef.iter().zip(b).map(|(c, v)| c * v).sum();
        res2 += w * (jet.v - p).powi(2);
        norm2 += w * jet.v * jet.v;
        semi2 += w * if k == 1 {
            jet.d[0].powi(2) + jet.d[1].powi(2)
        } else {
            jet.h[0][0].powi(2) + jet.h[0][1].powi(2) + jet.h[1][1].powi(2)
        };
    }
    let numerator = res2.sqrt();
    let seminorm = semi2.sqrt();
    if seminorm == 0.0 {
        // f is a polynomial of degree < k, so the infimum is exactly zero
        if numerator > 1e-10 * norm2.sqrt().max(f64::MIN_POSITIVE) {
            return Err(ApproxError::ZeroSeminorm(numerator));
        }
        return Ok(WhitneyReport { numerator: 0.0, seminorm, ratio: 0.0 });
    }
    let ratio = numerator / (q.h.powi(k as i32) * seminorm);
    Ok(WhitneyReport { numerator, seminorm, ratio })
}

/// Least-squares fit of `log error = intercept + slope log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub samples: Vec<(f64, f64)>,
    /// Half-open range of `samples` used by the fit.
    pub used: (usize, usize),
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Predicted decay exponent `e` in `error ~ n^{-e}`.
    pub predicted: Option<f64>,
    pub consistent: Option<bool>,
}

/// Relative tolerance on the fitted exponent.
pub const RATE_REL_TOL: f64 = 0.10;
/// Absolute tolerance on the slope when no decay is predicted.
pub const RATE_FLAT_TOL: f64 = 0.05;

/// Fits a rate; drops the two smallest and the largest `n` when at least four samples remain.
pub fn fit_rate(samples: &[(f64, f64)], predicted: Option<f64>) -> Result<RateReport, ApproxError> {
    if samples.len() < 4 {
        return Err(ApproxError::BadSamples);
    }
    if samples.iter().any(|&(n, e)| !(n > 0.0 && e > 0.0 && n.is_finite() && e.is_finite()))
        || samples.windows(2).any(|w| w[1].0 <= w[0].0)
    {
        return Err(ApproxError::BadSamples);
    }
    let used = if samples.len() >= 7 { (2, samples.len() - 1) } else { (0, samples.len()) };
    let pts: Vec<(f64, f64)> = samples[used.0..used.1].iter().map(|&(n, e)| (n.ln(), e.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let consistent = predicted.map(|e| {
        if e > 0.0 {
            (-slope - e).abs() <= RATE_REL_TOL * e
        } else {
            slope.abs() <= RATE_FLAT_TOL
        }
    });
    Ok(RateReport { samples: samples.to_vec(), used, slope, intercept, r2, predicted, consistent })
}

/// `sigma_n` at each `n` of a plan.
pub fn nterm_curve(plan: &NTermPlan, ns: &[usize]) -> Vec<(f64, f64)> {
    ns.iter().map(|&n| (n as f64, plan.error(n))).collect()
}

/// Deterministic synthetic coefficient sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SynthKind {
    /// Every wavelet on `level` equal to `2^{-level (1 + alpha + gamma/2)}`.
    ExtremalAStar { level: u32, alpha: f64, gamma: f64 },
    /// One coefficient `2^{-j (alpha + 1)}` per level.
    Lacunary { alpha: f64 },
    /// Every level filled with `2^{-j (alpha + 1)}`, sitting on the boundary of the
    /// `(alpha, 2, 2)` unit ball.
    Saturating { alpha: f64 },
    /// Uniform random signs and sizes, rescaled so level `j` contributes `2^{-j/2}` to the norm of `spec`.
    RandomBesov { spec: BesovSpec, seed: u64 },
}

pub fn synth_field(
    kind: &SynthKind,
    basis: BasisSpec,
    num_patches: usize,
    max_level: u32,
    surface_hash: &str,
) -> CoefficientField {
    let top = match kind {
        SynthKind::ExtremalAStar { level, .. } => max_level.max(*level),
        _ => max_level,
    }
    .max(basis.coarsest);
    let mut field = CoefficientField::zeros(basis, num_patches, top, surface_hash);
    match *kind {
        SynthKind::ExtremalAStar { level, alpha, gamma } => {
            if level >= basis.coarsest {
                let v = (-(level as f64) * (1.0 + alpha + gamma / 2.0)).exp2();
                field.level_mut(level).iter_mut().for_each(|c| *c = v);
            }
        }
        SynthKind::Lacunary { alpha } => {
            for j in field.level_range() {
                field.level_mut(j)[0] = (-(j as f64) * (alpha + 1.0)).exp2();
            }
        }
        SynthKind::Saturating { alpha } => {
            for j in field.level_range() {
                let v = (-(j as f64) * (alpha + 1.0)).exp2();
                field.level_mut(j).iter_mut().for_each(|c| *c = v);
            }
        }
        SynthKind::RandomBesov { spec, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            field.coarse.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));
            for j in field.level_range() {
                let lvl = field.level_mut(j);
                lvl.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));
                let norm = lp_sum(lvl, spec.p);
                if norm > 0.0 {
                    let scale = (-(j as f64) * 0.5).exp2() / (level_weight(j, spec.alpha, spec.p) * norm);
                    lvl.iter_mut().for_each(|c| *c *= scale);
                }
            }
        }
    }
    field
}

/// Worst-case `sigma_n` over the unit ball of `source` measured in `target`:
/// for each `n`, the extremal sequence on the first level with at least `2n`
/// indices, normalized to unit `source` norm, then thresholded.
pub fn extremal_rate_samples(
    basis: BasisSpec,
    num_patches: usize,
    source: &BesovSpec,
    target: &BesovSpec,
    ns: &[usize],
) -> Result<Vec<(f64, f64)>, ApproxError> {
    check_target(target)?;
    let gamma = source.alpha - target.alpha;
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut j = basis.coarsest;
        let per = num_patches * 3 * basis.components();
        while per << (2 * j) < 2 * n {
            j += 1;
        }
        let field = synth_field(&SynthKind::ExtremalAStar { level: j, alpha: target.alpha, gamma }, basis, num_patches, j, "");
        let snorm = crate::spaces::seq_norm([(j, field.level(j))], source.alpha, source.p, source.q);
        let plan = NTermPlan::new(&field, target)?;
        out.push((n as f64, plan.error(n) / snorm));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::Family;

    fn field_with(values: &[(u32, usize, f64)], max_level: u32) -> CoefficientField {
        let mut f = CoefficientField::zeros(BasisSpec::haar(), 1, max_level, "t");
        for &(j, off, v) in values {
            f.level_mut(j)[off] = v;
        }
        f
    }

    #[test]
    fn three_coefficients() {
        let f = field_with(&[(0, 0, 4.0), (0, 1, 2.0), (0, 2, 1.0)], 0);
        let (kept, err) = best_n_term(&f, &BesovSpec::new(0.0, 2.0, 2.0), 1).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(f.get(&kept[0]).unwrap(), 4.0);
        assert!((err - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn endpoints() {
        let f = field_with(&[(0, 0, 3.0), (1, 5, -4.0)], 1);
        let t = BesovSpec::new(0.0, 2.0, 2.0);
        let plan = NTermPlan::new(&f, &t).unwrap();
        assert!((plan.error(0) - 5.0).abs() < 1e-14);
        assert_eq!(plan.error(plan.len()), 0.0);
        assert_eq!(plan.error(plan.len() + 7), 0.0);
    }

    #[test]
    fn rejects_off_diagonal_target() {
        let f = field_with(&[], 0);
        assert!(matches!(
            best_n_term(&f, &BesovSpec::new(0.5, 2.0, 1.0), 1),
            Err(ApproxError::TargetNotDiagonal { .. })
        ));
    }

    #[test]
    fn plan_is_a_permutation() {
        let f = synth_field(&SynthKind::RandomBesov { spec: BesovSpec::sobolev(1.0), seed: 3 }, BasisSpec::linear(), 2, 3, "");
        let plan = NTermPlan::new(&f, &BesovSpec::sobolev(0.0)).unwrap();
        let mut idx: Vec<_> = plan.order.iter().map(|e| e.0).collect();
        idx.sort();
        let all: Vec<_> = f.wavelets().map(|e| e.0).collect();
        assert_eq!(idx, all);
        assert!(plan.order.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn ties_broken_by_index() {
        let f = field_with(&[(0, 2, 1.0), (0, 1, -1.0), (0, 0, 1.0)], 0);
        let plan = NTermPlan::new(&f, &BesovSpec::sobolev(0.0)).unwrap();
        let first: Vec<_> = plan.order.iter().take(3).map(|e| e.0).collect();
        assert!(first.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn extremal_closed_form() {
        let t = BesovSpec::new(0.5, 2.0, 2.0);
        let f = synth_field(&SynthKind::ExtremalAStar { level: 3, alpha: 0.5, gamma: 0.0 }, BasisSpec::haar(), 1, 3, "");
        let a = (-3.0f64 * 1.5).exp2();
        assert!(f.level(3).iter().all(|&c| c == a));
        let count = f.count_at_level(3);
        let plan = NTermPlan::new(&f, &t).unwrap();
        for n in [0, 1, 17, count - 1] {
            let want = ((count - n) as f64).sqrt() * level_weight(3, 0.5, 2.0) * a;
            assert!((plan.error(n) - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn uniform_cases() {
        let f = field_with(&[(2, 7, 1.0)], 3);
        let t = BesovSpec::sobolev(0.0);
        assert_eq!(uniform_approx(&f, &t, 3).unwrap().error, 0.0);
        assert_eq!(uniform_approx(&f, &t, 2).unwrap().error, 0.0);
        assert_eq!(uniform_approx(&f, &t, 1).unwrap().error, 1.0);
        let u = uniform_approx(&f, &t, -1).unwrap();
        assert_eq!(u.n_effective, 0);
        assert_eq!(uniform_approx(&f, &t, 1).unwrap().n_effective, 3 + 12);
    }

    #[test]
    fn adaptive_dominates_uniform() {
        let t = BesovSpec::new(0.25, 2.0, 2.0);
        for seed in 0..5 {
            let f = synth_field(&SynthKind::RandomBesov { spec: BesovSpec::sobolev(1.0), seed }, BasisSpec::haar(), 2, 4, "");
            let plan = NTermPlan::new(&f, &t).unwrap();
            let mut prev = f64::INFINITY;
            for n in 0..=plan.len() {
                let e = plan.error(n);
                assert!(e <= prev);
                prev = e;
            }
            for jk in -1..=4 {
                let u = uniform_approx(&f, &t, jk).unwrap();
                assert!(plan.error(u.n_effective) <= u.error);
            }
        }
    }

    #[test]
    fn predicted_rates() {
        let r = predicted_rate(&BesovSpec::new(1.5, 2.0, 2.0), &BesovSpec::new(0.5, 2.0, 2.0)).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let (t0, t1) = (adaptivity_pair(1.0), adaptivity_pair(0.0));
        let g = t0.alpha - t1.alpha;
        let r = predicted_rate(&t0, &t1).unwrap();
        assert!((r - g / 2.0).abs() < 1e-12);
        assert_eq!(predicted_rate(&BesovSpec::sobolev(0.5), &BesovSpec::sobolev(0.5)).unwrap(), 0.0);
        assert!(matches!(
            predicted_rate(&BesovSpec::sobolev(0.0), &BesovSpec::sobolev(0.5)),
            Err(ApproxError::NoEmbedding)
        ));
    }

    fn adaptivity_pair(alpha: f64) -> BesovSpec {
        BesovSpec::critical(alpha)
    }

    #[test]
    fn gamma_star_examples() {
        assert!((gamma_star(0.7, 0.0, 2.0, 0.7).unwrap() - 1.4).abs() < 1e-14);
        assert_eq!(gamma_star(0.8, 0.8, 2.0, 0.6).unwrap(), 0.0);
        assert!((gamma_star(1.0, 0.5, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        // 0/0 := 0
        assert!((gamma_star(0.0, 0.0, 2.0, 0.3).unwrap() - 0.6).abs() < 1e-14);
        assert!(gamma_star(0.3, 0.5, 2.0, 0.3).is_err());
        assert!(gamma_star(2.0, 1.6, 2.0, 1.0).is_err());
    }

    #[test]
    fn alpha_star_examples() {
        assert_eq!(alpha_star(0.5, 1, 1.0, 2.0).unwrap(), 0.5);
        assert!((alpha_star(1.2, 2, 0.6, 2.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((alpha_star(0.9, 2, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(alpha_star(1.0, 1, 1.0, 2.0).is_err());
    }

    #[test]
    fn fit_exact_power_law() {
        let s: Vec<(f64, f64)> = (2..12).map(|k| ((1u32 << k) as f64, 1.0 / (1u32 << k) as f64)).collect();
        let r = fit_rate(&s, Some(1.0)).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!((r.r2 - 1.0).abs() < 1e-12);
        assert_eq!(r.used, (2, s.len() - 1));
        assert_eq!(r.consistent, Some(true));
    }

    #[test]
    fn fit_flat_and_bad_input() {
        let s: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, 0.3)).collect();
        let r = fit_rate(&s, Some(0.0)).unwrap();
        assert!(r.slope.abs() < 1e-14);
        assert_eq!(r.used, (0, 5));
        assert!(fit_rate(&s[..3], None).is_err());
        let mut bad = s.clone();
        bad[2].1 = 0.0;
        assert!(matches!(fit_rate(&bad, None), Err(ApproxError::BadSamples)));
    }

    #[test]
    fn synthetic_upper_bound_regime_slope() {
        let ns: Vec<usize> = (4..=14).map(|k| 1 << k).collect();
        let f = synth_field(&SynthKind::Saturating { alpha: 1.0 }, BasisSpec::haar(), 1, 9, "");
        // source (1, 2, 2), target (0, 2, 2): gamma = 1
        let plan = NTermPlan::new(&f, &BesovSpec::sobolev(0.0)).unwrap();
        let r = fit_rate(&nterm_curve(&plan, &ns), Some(0.5)).unwrap();
        assert!((-0.55..=-0.45).contains(&r.slope), "slope {}", r.slope);
    }

    #[test]
    fn extremal_rate_law() {
        let ns: Vec<usize> = (4..=14).map(|k| 1 << k).collect();
        for g in [0.0, 0.5, 1.0, 2.0] {
            let src = BesovSpec::sobolev(g);
            let tgt = BesovSpec::sobolev(0.0);
            let pred = predicted_rate(&src, &tgt).unwrap();
            let r = fit_rate(&extremal_rate_samples(BasisSpec::haar(), 1, &src, &tgt, &ns).unwrap(), Some(pred)).unwrap();
            assert_eq!(r.consistent, Some(true), "gamma {g}: slope {}", r.slope);
        }
    }

    #[test]
    fn lacunary_and_random() {
        let f = synth_field(&SynthKind::Lacunary { alpha: 0.5 }, BasisSpec::haar(), 1, 6, "");
        for j in f.level_range() {
            assert_eq!(f.level(j).iter().filter(|&&c| c != 0.0).count(), 1);
        }
        let spec = BesovSpec::sobolev(1.0);
        let a = synth_field(&SynthKind::RandomBesov { spec, seed: 42 }, BasisSpec::linear(), 1, 5, "");
        let b = synth_field(&SynthKind::RandomBesov { spec, seed: 42 }, BasisSpec::linear(), 1, 5, "");
        assert_eq!(a, b);
        let terms: Vec<f64> =
            a.level_range().map(|j| level_weight(j, 1.0, 2.0) * lp_sum(a.level(j), 2.0)).collect();
        for (i, t) in terms.iter().enumerate() {
            assert!((t - (-(i as f64) * 0.5).exp2()).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_tests() {
        let stable = [1.0, 1.5, 1.7, 1.75, 1.76, 1.761];
        let growing = [1.0, 1.2, 1.4, 1.6, 1.8];
        assert!(is_stable(&stable) && !is_growing(&stable));
        assert!(is_growing(&growing) && !is_stable(&growing));
        assert!(!is_growing(&[1.0, 2.0]));
    }

    #[test]
    fn tails_split_the_field() {
        let s = PolyhedralSurface::unit_cube();
        let f = synth_field(&SynthKind::RandomBesov { spec: BesovSpec::sobolev(0.5), seed: 9 }, BasisSpec::haar(), 6, 4, "");
        let tau = 0.8;
        let b: f64 = tail_sums(&s, &f, tau, TailClass::Boundary).iter().sum();
        let i: f64 = tail_sums(&s, &f, tau, TailClass::Interior).iter().sum();
        let all: f64 = f.wavelets().map(|(_, c)| c.abs().powf(tau)).sum();
        assert!((b + i - all).abs() <= 1e-10 * all);
    }

    #[test]
    fn interior_only_field_has_no_boundary_tail() {
        let s = PolyhedralSurface::unit_cube();
        let mut f = CoefficientField::zeros(BasisSpec::haar(), 6, 3, "");
        let idx = WaveletIndex { level: 3, patch: 2, etype: 2, comp: 0, k1: 4, k2: 4 };
        assert!(classify_index(&s, &idx).is_interior());
        f.set(&idx, 1.0).unwrap();
        let r = boundary_tail_check(&s, &f, 0.5, 2.0, 1.25).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs > 0.0);
        assert!(matches!(boundary_tail_check(&s, &f, 0.5, 2.0, 0.4), Err(ApproxError::TauOutOfRange { .. })));
    }

    #[test]
    fn interior_check_guards() {
        let s = PolyhedralSurface::unit_cube();
        let res = ResolutionOfUnity::new(&s).unwrap();
        let f = CoefficientField::zeros(BasisSpec::haar(), 6, 2, "");
        let c = crate::models::Constant(1.0);
        let w2 = WeightedSpec::new(2, 1.0).unwrap();
        let opts = GradedOptions::default();
        assert!(matches!(
            interior_tail_check(&s, &f, &c, &res, &w2, 1.0, &opts),
            Err(ApproxError::TooFewMoments { have: 1, need: 2 })
        ));
        let w1 = WeightedSpec::new(1, 0.5).unwrap();
        assert!(matches!(interior_tail_check(&s, &f, &c, &res, &w1, 1.0, &opts), Err(ApproxError::TauOutOfRange { .. })));
        assert_eq!(BasisSpec { family: Family::Linear, ..BasisSpec::linear() }.dual_moments(), 2);
    }

    #[test]
    fn whitney_polynomials_vanish() {
        let q = Square { x0: 0.1, y0: -0.3, h: 0.25 };
        let lin = |x: Jet2, y: Jet2| x.scale(3.0) + y.scale(-2.0) + Jet2::constant(0.5);
        let r = whitney_check(&lin, &q, 2).unwrap();
        assert_eq!((r.numerator, r.ratio), (0.0, 0.0));
        let c = |_: Jet2, _: Jet2| Jet2::constant(2.0);
        assert_eq!(whitney_check(&c, &q, 1).unwrap().ratio, 0.0);
    }

    #[test]
    fn whitney_square_closed_form() {
        let f = |x: Jet2, _: Jet2| x * x;
        for h in [1.0, 0.25, 0.01] {
            let r = whitney_check(&f, &Square { x0: 0.3, y0: 0.0, h }, 2).unwrap();
            assert!((r.ratio - 1.0 / (12.0 * 5f64.sqrt())).abs() < 1e-9, "{}", r.ratio);
        }
    }

    #[test]
    fn whitney_plateau() {
        let f = |x: Jet2, y: Jet2| (x + y.scale(2.0)).sin();
        let ratios: Vec<f64> = (0..6)
            .map(|m| whitney_check(&f, &Square { x0: 0.2, y0: 0.1, h: 0.5 * 0.5f64.powi(m) }, 1).unwrap().ratio)
            .collect();
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.2, "{ratios:?}");
    }
}
