//! Patchwise orthonormal multiwavelet bases on the unit square, lifted to the
//! surface through the patch parametrizations. Since the bases are
//! orthonormal in the patch inner product the dual functions coincide with the
//! primal ones.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::WaveletError;
use crate::quadrature::GaussRule;
use crate::surface::{PolyhedralSurface, SurfacePoint, Vec3};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Scaling/wavelet family used on every patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Tensor Haar: piecewise constants, one vanishing moment.
    Haar,
    /// Tensor Legendre multiwavelets of order two: piecewise linears, two vanishing moments.
    Linear,
}

impl Family {
    /// Number of scaling functions per cell in one dimension.
    pub fn multiplicity(self) -> usize {
        match self {
            Family::Haar => 1,
            Family::Linear => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Some(Family::Haar),
            "linear" | "alpert2" | "l2" => Some(Family::Linear),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Haar => "haar",
            Family::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: Family,
    /// Coarsest wavelet level `j*`.
    pub coarsest: u32,
    /// Gauss points per direction on each fine cell.
    pub quad_order: usize,
}

impl BasisSpec {
    pub fn haar() -> Self {
        Self { family: Family::Haar, coarsest: 0, quad_order: 4 }
    }

    pub fn linear() -> Self {
        Self { family: Family::Linear, coarsest: 0, quad_order: 4 }
    }

    /// Primal polynomial order `d`.
    pub fn order(&self) -> u32 {
        self.family.multiplicity() as u32
    }

    /// Vanishing moments `d~` of the duals.
    pub fn dual_moments(&self) -> u32 {
        self.family.multiplicity() as u32
    }

    pub fn multiplicity(&self) -> usize {
        self.family.multiplicity()
    }

    /// Tensor components per position and type.
    pub fn components(&self) -> usize {
        self.multiplicity() * self.multiplicity()
    }

    fn filters(&self) -> Filters {
        Filters::new(self.family)
    }
}

/// Scaling function `a` on `[0, 1]`.
pub fn scaling_1d(family: Family, a: usize, t: f64) -> f64 {
    match (family, a) {
        (_, 0) => 1.0,
        (Family::Linear, 1) => SQRT3 * (2.0 * t - 1.0),
        _ => panic!("scaling function {a} not defined for {family}"),
    }
}

/// Wavelet `a` on `[0, 1]`.
pub fn wavelet_1d(family: Family, a: usize, t: f64) -> f64 {
    let s = 2.0 * t - 1.0;
    let sign = if t < 0.5 { -1.0 } else { 1.0 };
    match (family, a) {
        (Family::Haar, 0) => -sign,
        (Family::Linear, 0) => 2.0 * SQRT3 * (s.abs() - 0.5),
        (Family::Linear, 1) => 2.0 * (sign - 1.5 * s),
        _ => panic!("wavelet {a} not defined for {family}"),
    }
}

/// Two-scale coefficients `h[a][c][b] = <phi^a, sqrt2 phi^b(2x - c)>`, likewise `g` with `psi^a`.
#[derive(Debug, Clone)]
struct Filters {
    m: usize,
    h: Vec<[Vec<f64>; 2]>,
    g: Vec<[Vec<f64>; 2]>,
}

impl Filters {
    fn new(family: Family) -> Self {
        let m = family.multiplicity();
        let rule = GaussRule::new(4);
        let coef = |outer: &dyn Fn(f64) -> f64, c: usize, b: usize| {
            let lo = 0.5 * c as f64;
            rule.integrate(lo, lo + 0.5, |x| outer(x) * 2f64.sqrt() * scaling_1d(family, b, 2.0 * x - c as f64))
        };
        let mut h = Vec::new();
        let mut g = Vec::new();
        for a in 0..m {
            let phi = move |x: f64| scaling_1d(family, a, x);
            let psi = move |x: f64| wavelet_1d(family, a, x);
            h.push([0, 1].map(|c| (0..m).map(|b| coef(&phi, c, b)).collect()));
            g.push([0, 1].map(|c| (0..m).map(|b| coef(&psi, c, b)).collect()));
        }
        Self { m, h, g }
    }
}

/// Key of one basis function. Generators (`etype == 0`) sit at level `j* - 1`
/// and live on the cells of level `j*`; wavelets of type 1..3 at level `j`
/// live on the cells of level `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub level: i32,
    pub patch: usize,
    pub etype: u8,
    /// Tensor component `a + m * b` for the 1D factors `(a, b)`.
    pub comp: u8,
    pub k1: u32,
    pub k2: u32,
}

impl fmt::Display for WaveletIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(j={}, i={}, e={}, c={}, k=({}, {}))", self.level, self.patch, self.etype, self.comp, self.k1, self.k2)
    }
}

impl WaveletIndex {
    /// Level of the dyadic cells carrying the support.
    pub fn support_level(&self) -> u32 {
        if self.etype == 0 {
            (self.level + 1) as u32
        } else {
            self.level as u32
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in the parameter square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x0..=self.x1).contains(&p[0]) && (self.y0..=self.y1).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexClass {
    Interior { cube: Rect, center: Vec3, radius: f64 },
    Boundary,
}

impl IndexClass {
    pub fn is_interior(&self) -> bool {
        matches!(self, IndexClass::Interior { .. })
    }
}

/// Relative enlargement of the circumscribed ball.
pub const BALL_MARGIN: f64 = 0.01;

/// Wavelet coefficients of one function. Storage per level is dense and laid
/// out in the lexicographic index order `(patch, type, comp, k1, k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub basis: BasisSpec,
    pub num_patches: usize,
    pub max_level: u32,
    pub surface_hash: String,
    /// Generators, level `j* - 1`.
    pub coarse: Vec<f64>,
    /// Wavelet levels `j*..=max_level`.
    pub levels: Vec<Vec<f64>>,
}

impl CoefficientField {
    pub fn zeros(basis: BasisSpec, num_patches: usize, max_level: u32, surface_hash: impl Into<String>) -> Self {
        let c = basis.components();
        let n0 = 1usize << basis.coarsest;
        let coarse = vec![0.0; num_patches * c * n0 * n0];
        let levels = (basis.coarsest..=max_level)
            .map(|j| {
                let n = 1usize << j;
                vec![0.0; num_patches * 3 * c * n * n]
            })
            .collect();
        Self { basis, num_patches, max_level, surface_hash: surface_hash.into(), coarse, levels }
    }

    pub fn coarsest(&self) -> u32 {
        self.basis.coarsest
    }

    /// Wavelet levels stored.
    pub fn level_range(&self) -> std::ops::RangeInclusive<u32> {
        self.basis.coarsest..=self.max_level
    }

    pub fn level(&self, j: u32) -> &[f64] {
        &self.levels[(j - self.basis.coarsest) as usize]
    }

    pub fn level_mut(&mut self, j: u32) -> &mut [f64] {
        let j0 = self.basis.coarsest;
        &mut self.levels[(j - j0) as usize]
    }

    /// Number of wavelet indices on level `j` over all patches.
    pub fn count_at_level(&self, j: u32) -> usize {
        let n = 1usize << j;
        self.num_patches * 3 * self.basis.components() * n * n
    }

    pub fn num_wavelets(&self) -> usize {
        self.level_range().map(|j| self.count_at_level(j)).sum()
    }

    fn check(&self, idx: &WaveletIndex) -> Result<(), WaveletError> {
        let j0 = self.basis.coarsest as i32;
        let ok_level = if idx.etype == 0 {
            idx.level == j0 - 1
        } else {
            idx.etype <= 3 && idx.level >= j0 && idx.level <= self.max_level as i32
        };
        let n = 1u32 << idx.support_level().min(31);
        if !ok_level || idx.patch >= self.num_patches || idx.comp as usize >= self.basis.components() || idx.k1 >= n || idx.k2 >= n {
            return Err(WaveletError::BadIndex(idx.to_string()));
        }
        Ok(())
    }

    fn offset(&self, idx: &WaveletIndex) -> usize {
        let c = self.basis.components();
        let n = 1usize << idx.support_level();
        let pos = idx.k1 as usize * n + idx.k2 as usize;
        if idx.etype == 0 {
            (idx.patch * c + idx.comp as usize) * n * n + pos
        } else {
            ((idx.patch * 3 + (idx.etype as usize - 1)) * c + idx.comp as usize) * n * n + pos
        }
    }

    /// Inverse of the storage layout on wavelet level `j`.
    pub fn index_at(&self, j: u32, offset: usize) -> WaveletIndex {
        let c = self.basis.components();
        let n = 1usize << j;
        let pos = offset % (n * n);
        let rest = offset / (n * n);
        let comp = rest % c;
        let rest = rest / c;
        WaveletIndex {
            level: j as i32,
            patch: rest / 3,
            etype: (rest % 3 + 1) as u8,
            comp: comp as u8,
            k1: (pos / n) as u32,
            k2: (pos % n) as u32,
        }
    }

    pub fn coarse_index_at(&self, offset: usize) -> WaveletIndex {
        let c = self.basis.components();
        let n = 1usize << self.basis.coarsest;
        let pos = offset % (n * n);
        let rest = offset / (n * n);
        WaveletIndex {
            level: self.basis.coarsest as i32 - 1,
            patch: rest / c,
            etype: 0,
            comp: (rest % c) as u8,
            k1: (pos / n) as u32,
            k2: (pos % n) as u32,
        }
    }

    pub fn get(&self, idx: &WaveletIndex) -> Result<f64, WaveletError> {
        self.check(idx)?;
        let off = self.offset(idx);
        Ok(if idx.etype == 0 { self.coarse[off] } else { self.level(idx.level as u32)[off] })
    }

    pub fn set(&mut self, idx: &WaveletIndex, value: f64) -> Result<(), WaveletError> {
        self.check(idx)?;
        let off = self.offset(idx);
        if idx.etype == 0 {
            self.coarse[off] = value;
        } else {
            self.level_mut(idx.level as u32)[off] = value;
        }
        Ok(())
    }

    /// All wavelet (non-generator) coefficients in lexicographic index order.
    pub fn wavelets(&self) -> impl Iterator<Item = (WaveletIndex, f64)> + '_ {
        self.level_range()
            .flat_map(move |j| self.level(j).iter().enumerate().map(move |(o, &v)| (self.index_at(j, o), v)))
    }

    /// Generators followed by wavelets, in lexicographic index order.
    pub fn iter(&self) -> impl Iterator<Item = (WaveletIndex, f64)> + '_ {
        self.coarse.iter().enumerate().map(move |(o, &v)| (self.coarse_index_at(o), v)).chain(self.wavelets())
    }

    /// Copy truncated to wavelet levels `<= j_max`.
    pub fn truncated(&self, j_max: u32) -> Self {
        let mut out = self.clone();
        let keep = j_max.clamp(self.basis.coarsest, self.max_level);
        out.max_level = keep;
        out.levels.truncate((keep - self.basis.coarsest + 1) as usize);
        if j_max < self.basis.coarsest {
            out.levels[0].iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Coefficient-wise sum of two compatible fields.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.basis, other.basis);
        assert_eq!(self.num_patches, other.num_patches);
        let mut out = if self.max_level >= other.max_level { self.clone() } else { other.clone() };
        let small = if self.max_level >= other.max_level { other } else { self };
        for (a, b) in out.coarse.iter_mut().zip(&small.coarse) {
            *a += b;
        }
        for j in small.level_range() {
            for (a, b) in out.level_mut(j).iter_mut().zip(small.level(j)) {
                *a += b;
            }
        }
        out
    }

    /// Generator part `P_{j*-1} u` at a located surface point.
    pub fn coarse_value_at(&self, p: &SurfacePoint) -> f64 {
        let fam = self.basis.family;
        let m = self.basis.multiplicity();
        let n = 1u32 << self.basis.coarsest;
        let scale = n as f64;
        let cell = |t: f64| {
            let k = ((t * scale).floor().max(0.0) as u32).min(n - 1);
            (k, t * scale - k as f64)
        };
        let (k1, t1) = cell(p.uv[0]);
        let (k2, t2) = cell(p.uv[1]);
        let mut total = 0.0;
        for comp in 0..m * m {
            let idx = WaveletIndex { level: self.basis.coarsest as i32 - 1, patch: p.patch, etype: 0, comp: comp as u8, k1, k2 };
            let c = self.coarse[self.offset(&idx)];
            if c != 0.0 {
                total += c * scale * scaling_1d(fam, comp % m, t1) * scaling_1d(fam, comp / m, t2);
            }
        }
        total
    }

    /// Evaluates the expansion at a located surface point.
    pub fn synthesize_at(&self, p: &SurfacePoint) -> f64 {
        let fam = self.basis.family;
        let m = self.basis.multiplicity();
        let mut total = self.coarse_value_at(p);
        let eval_level = |res: u32| {
            let n = 1u32 << res;
            let scale = n as f64;
            let cell = |t: f64| {
                let k = ((t * scale).floor().max(0.0) as u32).min(n - 1);
                (k, t * scale - k as f64)
            };
            let (k1, t1) = cell(p.uv[0]);
            let (k2, t2) = cell(p.uv[1]);
            (k1, k2, t1, t2, scale)
        };
        for j in self.level_range() {
            let (k1, k2, t1, t2, scale) = eval_level(j);
            let data = self.level(j);
            for etype in 1..=3u8 {
                for comp in 0..m * m {
                    let idx = WaveletIndex { level: j as i32, patch: p.patch, etype, comp: comp as u8, k1, k2 };
                    let c = data[self.offset(&idx)];
                    if c != 0.0 {
                        total += c * scale * tensor_factor(fam, etype, comp % m, comp / m, t1, t2);
                    }
                }
            }
        }
        total
    }

    /// Evaluates the expansion at a surface point.
    pub fn synthesize(&self, surface: &PolyhedralSurface, x: &Vec3) -> Result<f64, WaveletError> {
        let p = surface.locate(x).ok_or_else(|| WaveletError::BadIndex("point is not on the surface".into()))?;
        Ok(self.synthesize_at(&p))
    }

    /// Binary dump: magic, JSON header, then little-endian `f64` arrays in index order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), WaveletError> {
        let header = FieldHeader {
            schema: FIELD_SCHEMA.to_string(),
            basis: self.basis,
            num_patches: self.num_patches,
            max_level: self.max_level,
            surface_hash: self.surface_hash.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| WaveletError::Format(e.to_string()))?;
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.coarse.iter().chain(self.levels.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, WaveletError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(WaveletError::Format("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(WaveletError::Format("header too long".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let h: FieldHeader = serde_json::from_slice(&json).map_err(|e| WaveletError::Format(e.to_string()))?;
        if h.schema != FIELD_SCHEMA {
            return Err(WaveletError::Format(format!("unsupported schema {}", h.schema)));
        }
        if h.max_level < h.basis.coarsest || h.max_level > 24 {
            return Err(WaveletError::Format("level range out of bounds".into()));
        }
        let mut field = Self::zeros(h.basis, h.num_patches, h.max_level, h.surface_hash);
        let mut buf = [0u8; 8];
        for v in field.coarse.iter_mut().chain(field.levels.iter_mut().flatten()) {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(WaveletError::Format("trailing bytes".into()));
        }
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<(), WaveletError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WaveletError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

const FIELD_MAGIC: &[u8; 8] = b"PBCFLD01";
const FIELD_SCHEMA: &str = "1.0.0";

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    schema: String,
    basis: BasisSpec,
    num_patches: usize,
    max_level: u32,
    surface_hash: String,
}

fn tensor_factor(fam: Family, etype: u8, a: usize, b: usize, t1: f64, t2: f64) -> f64 {
    match etype {
        0 => scaling_1d(fam, a, t1) * scaling_1d(fam, b, t2),
        1 => wavelet_1d(fam, a, t1) * scaling_1d(fam, b, t2),
        2 => scaling_1d(fam, a, t1) * wavelet_1d(fam, b, t2),
        _ => wavelet_1d(fam, a, t1) * wavelet_1d(fam, b, t2),
    }
}

/// Basis function `idx` evaluated at parameter point `uv` of its patch.
pub fn basis_function(basis: &BasisSpec, idx: &WaveletIndex, uv: [f64; 2]) -> f64 {
    let res = idx.support_level();
    let n = (1u64 << res) as f64;
    let r = support_rect(idx);
    if !r.contains(uv) {
        return 0.0;
    }
    // half-open cells, except at the far edge of the square
    let inside = |t: f64, k: u32| {
        let s = t * n - k as f64;
        if s >= 1.0 && (k as f64 + 1.0) < n {
            None
        } else {
            Some(s.min(1.0))
        }
    };
    let (Some(t1), Some(t2)) = (inside(uv[0], idx.k1), inside(uv[1], idx.k2)) else {
        return 0.0;
    };
    let m = basis.multiplicity();
    let comp = idx.comp as usize;
    n * tensor_factor(basis.family, idx.etype, comp % m, comp / m, t1, t2)
}

/// Dyadic support rectangle of an index.
pub fn support_rect(idx: &WaveletIndex) -> Rect {
    let h = 0.5f64.powi(idx.support_level() as i32);
    Rect {
        x0: idx.k1 as f64 * h,
        x1: (idx.k1 + 1) as f64 * h,
        y0: idx.k2 as f64 * h,
        y1: (idx.k2 + 1) as f64 * h,
    }
}

/// Support rectangle together with the surface measure of its image.
pub fn support_of(surface: &PolyhedralSurface, idx: &WaveletIndex) -> (Rect, f64) {
    let r = support_rect(idx);
    let patch = &surface.patches[idx.patch];
    // the area element is affine, so the midpoint rule is exact
    let measure = r.area() * patch.area_element(r.center());
    (r, measure)
}

/// Interior/boundary classification via the circumscribed ball of the support image.
pub fn classify_index(surface: &PolyhedralSurface, idx: &WaveletIndex) -> IndexClass {
    let cube = support_rect(idx);
    let patch = &surface.patches[idx.patch];
    let center = patch.param(cube.center());
    let radius = cube
        .corners()
        .iter()
        .map(|&c| (patch.param(c) - center).norm())
        .fold(0.0, f64::max)
        * (1.0 + BALL_MARGIN);
    let gap = 0.5f64.powi(idx.support_level() as i32);
    if patch.boundary_distance(&center) - radius > gap {
        IndexClass::Interior { cube, center, radius }
    } else {
        IndexClass::Boundary
    }
}

/// Counts `(interior, boundary)` wavelet indices on level `j` of the whole surface.
pub fn census(surface: &PolyhedralSurface, basis: &BasisSpec, j: u32) -> (usize, usize) {
    let n = 1u32 << j;
    let per_cell = 3 * basis.components();
    let mut int = 0;
    let mut bnd = 0;
    for patch in 0..surface.num_patches() {
        for k1 in 0..n {
            for k2 in 0..n {
                let idx = WaveletIndex { level: j as i32, patch, etype: 1, comp: 0, k1, k2 };
                if classify_index(surface, &idx).is_interior() {
                    int += per_cell;
                } else {
                    bnd += per_cell;
                }
            }
        }
    }
    (int, bnd)
}

/// Bivariate polynomial in the parameter coordinates, as `(i, j, coefficient)` terms of `u^i v^j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly2 {
    pub terms: Vec<(u32, u32, f64)>,
}

impl Poly2 {
    pub fn new(terms: Vec<(u32, u32, f64)>) -> Self {
        Self { terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().filter(|t| t.2 != 0.0).map(|t| t.0 + t.1).max().unwrap_or(0)
    }

    pub fn eval(&self, uv: [f64; 2]) -> f64 {
        self.terms.iter().map(|&(i, j, c)| c * uv[0].powi(i as i32) * uv[1].powi(j as i32)).sum()
    }
}

/// `|<P, psi~ o kappa_i>|` on the parameter square, by quadrature exact for the polynomial degrees involved.
pub fn moment_check(
    surface: &PolyhedralSurface,
    basis: &BasisSpec,
    idx: &WaveletIndex,
    poly: &Poly2,
) -> Result<f64, WaveletError> {
    if idx.patch >= surface.num_patches() {
        return Err(WaveletError::BadIndex(idx.to_string()));
    }
    if !classify_index(surface, idx).is_interior() {
        return Err(WaveletError::BoundaryIndex);
    }
    let rule = GaussRule::new(((poly.degree() as usize + basis.order() as usize) / 2 + 2).max(basis.quad_order));
    let r = support_rect(idx);
    let (mx, my) = (0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1));
    let mut total = 0.0;
    // basis functions are polynomial on each quarter of the support
    for (a0, a1) in [(r.x0, mx), (mx, r.x1)] {
        for (b0, b1) in [(r.y0, my), (my, r.y1)] {
            total += rule.integrate_rect((a0, a1), (b0, b1), |u, v| poly.eval([u, v]) * basis_function(basis, idx, [u, v]));
        }
    }
    Ok(total.abs())
}

/// Options for [`analyze`].
#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    /// Upper bound on the bytes of the finest scaling array.
    pub memory_budget: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { memory_budget: 1 << 31 }
    }
}

/// Coefficients `<u o kappa_i, psi~ o kappa_i>` for `j*-1 <= j <= J`.
pub fn analyze<F>(
    surface: &PolyhedralSurface,
    sampler: F,
    basis: &BasisSpec,
    max_level: u32,
    opts: &AnalyzeOptions,
) -> Result<CoefficientField, WaveletError>
where
    F: Fn(&SurfacePoint) -> f64 + Sync,
{
    if max_level < basis.coarsest {
        return Err(WaveletError::LevelTooSmall { max_level, coarsest: basis.coarsest });
    }
    let fine = max_level + 1;
    check_budget(surface.num_patches(), basis, fine, opts)?;
    let m = basis.multiplicity();
    let rule = GaussRule::new(basis.quad_order);
    let n = 1usize << fine;
    let h = 1.0 / n as f64;
    let per_patch: Vec<Result<Vec<f64>, WaveletError>> = (0..surface.num_patches())
        .into_par_iter()
        .map(|patch| {
            let mut s = vec![0.0; m * m * n * n];
            let phi: Vec<Vec<f64>> = (0..m).map(|a| rule.nodes.iter().map(|&t| scaling_1d(basis.family, a, t)).collect()).collect();
            for k1 in 0..n {
                for k2 in 0..n {
                    let mut acc = vec![0.0; m * m];
                    for (q1, (&t1, &w1)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                        for (q2, (&t2, &w2)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                            let uv = [(k1 as f64 + t1) * h, (k2 as f64 + t2) * h];
                            let val = sampler(&surface.point(patch, uv));
                            if !val.is_finite() {
                                return Err(WaveletError::Sampler { patch, u: uv[0], v: uv[1] });
                            }
                            let w = w1 * w2 * val;
                            for b in 0..m {
                                for a in 0..m {
                                    acc[a + m * b] += w * phi[a][q1] * phi[b][q2];
                                }
                            }
                        }
                    }
                    for comp in 0..m * m {
                        s[(comp * n + k1) * n + k2] = acc[comp] * h;
                    }
                }
            }
            Ok(s)
        })
        .collect();
    let mut fine_coeffs = Vec::with_capacity(per_patch.len());
    for r in per_patch {
        fine_coeffs.push(r?);
    }
    Ok(transform(surface.num_patches(), surface.hash(), basis, fine, max_level, fine_coeffs))
}

/// Exact coefficients of a function that is constant on the `2^L x 2^L` cells
/// of every patch; `values[patch][k1 * 2^L + k2]`.
pub fn from_cell_averages(
    surface: &PolyhedralSurface,
    values: &[Vec<f64>],
    cell_level: u32,
    basis: &BasisSpec,
    max_level: u32,
) -> Result<CoefficientField, WaveletError> {
    if max_level < basis.coarsest {
        return Err(WaveletError::LevelTooSmall { max_level, coarsest: basis.coarsest });
    }
    let n = 1usize << cell_level;
    if values.len() != surface.num_patches() || values.iter().any(|v| v.len() != n * n) {
        return Err(WaveletError::Format("cell values do not match the surface and level".into()));
    }
    let m = basis.multiplicity();
    let h = 1.0 / n as f64;
    let fine: Vec<Vec<f64>> = values
        .iter()
        .map(|vals| {
            let mut s = vec![0.0; m * m * n * n];
            for (pos, &v) in vals.iter().enumerate() {
                s[pos] = v * h;
            }
            s
        })
        .collect();
    if cell_level <= basis.coarsest {
        // pad by refining: constants on coarser cells are exact on finer ones
        let target = basis.coarsest + 1;
        let refined: Vec<Vec<f64>> = values
            .iter()
            .map(|vals| {
                let nf = 1usize << target;
                let ratio = nf / n;
                let hf = 1.0 / nf as f64;
                let mut s = vec![0.0; m * m * nf * nf];
                for k1 in 0..nf {
                    for k2 in 0..nf {
                        s[k1 * nf + k2] = vals[(k1 / ratio) * n + k2 / ratio] * hf;
                    }
                }
                s
            })
            .collect();
        return Ok(transform(surface.num_patches(), surface.hash(), basis, target, max_level, refined));
    }
    Ok(transform(surface.num_patches(), surface.hash(), basis, cell_level, max_level, fine))
}

fn check_budget(num_patches: usize, basis: &BasisSpec, fine: u32, opts: &AnalyzeOptions) -> Result<(), WaveletError> {
    let cells = 1u128 << (2 * fine as u128);
    let bytes = num_patches as u128 * basis.components() as u128 * cells * 8 * 2;
    if bytes > opts.memory_budget as u128 {
        return Err(WaveletError::MemoryBudget { bytes: bytes.min(u64::MAX as u128) as u64, budget: opts.memory_budget });
    }
    Ok(())
}

/// Fast wavelet transform from scaling coefficients on level `fine` down to `j*`.
/// Levels above `fine - 1` up to `max_level` are zero.
fn transform(
    num_patches: usize,
    hash: String,
    basis: &BasisSpec,
    fine: u32,
    max_level: u32,
    fine_coeffs: Vec<Vec<f64>>,
) -> CoefficientField {
    let filt = basis.filters();
    let m = filt.m;
    let c = m * m;
    let mut field = CoefficientField::zeros(*basis, num_patches, max_level, hash);
    let j0 = basis.coarsest;
    let results: Vec<(Vec<f64>, Vec<Vec<f64>>)> = fine_coeffs
        .into_par_iter()
        .map(|mut s| {
            let mut details: Vec<Vec<f64>> = Vec::new();
            let mut level = fine;
            while level > j0 {
                let (coarse, d) = step(&filt, &s, level);
                details.push(d);
                s = coarse;
                level -= 1;
            }
            details.reverse();
            (s, details)
        })
        .collect();
    for (patch, (s, details)) in results.into_iter().enumerate() {
        let n0 = 1usize << j0;
        field.coarse[patch * c * n0 * n0..(patch + 1) * c * n0 * n0].copy_from_slice(&s);
        for (dj, d) in details.into_iter().enumerate() {
            let j = j0 + dj as u32;
            if j > max_level {
                break;
            }
            let n = 1usize << j;
            let block = 3 * c * n * n;
            field.level_mut(j)[patch * block..(patch + 1) * block].copy_from_slice(&d);
        }
    }
    field
}

/// One analysis step on a single patch: scaling array on level `level`
/// (layout `[comp][k1][k2]`) to scaling and detail arrays on `level - 1`.
fn step(filt: &Filters, s: &[f64], level: u32) -> (Vec<f64>, Vec<f64>) {
    let m = filt.m;
    let nf = 1usize << level;
    let nc = nf / 2;
    let at = |comp: usize, k1: usize, k2: usize| s[(comp * nf + k1) * nf + k2];
    let mut coarse = vec![0.0; m * m * nc * nc];
    let mut detail = vec![0.0; 3 * m * m * nc * nc];
    for k1 in 0..nc {
        for k2 in 0..nc {
            for ay in 0..m {
                for ax in 0..m {
                    let mut acc = [0.0; 4];
                    for cx in 0..2 {
                        for cy in 0..2 {
                            for by in 0..m {
                                for bx in 0..m {
                                    let v = at(bx + m * by, 2 * k1 + cx, 2 * k2 + cy);
                                    let (hx, gx) = (filt.h[ax][cx][bx], filt.g[ax][cx][bx]);
                                    let (hy, gy) = (filt.h[ay][cy][by], filt.g[ay][cy][by]);
                                    acc[0] += hx * hy * v;
                                    acc[1] += gx * hy * v;
                                    acc[2] += hx * gy * v;
                                    acc[3] += gx * gy * v;
                                }
                            }
                        }
                    }
                    let comp = ax + m * ay;
                    coarse[(comp * nc + k1) * nc + k2] = acc[0];
                    for e in 0..3 {
                        detail[((e * m * m + comp) * nc + k1) * nc + k2] = acc[e + 1];
                    }
                }
            }
        }
    }
    (coarse, detail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube() -> PolyhedralSurface {
        PolyhedralSurface::unit_cube()
    }

    #[test]
    fn one_dimensional_functions_are_orthonormal_with_moments() {
        let rule = GaussRule::new(4);
        for fam in [Family::Haar, Family::Linear] {
            let m = fam.multiplicity();
            let int = |f: &dyn Fn(f64) -> f64| rule.integrate(0.0, 0.5, f) + rule.integrate(0.5, 1.0, f);
            for a in 0..m {
                for b in 0..m {
                    let pp = int(&|x| scaling_1d(fam, a, x) * scaling_1d(fam, b, x));
                    let ww = int(&|x| wavelet_1d(fam, a, x) * wavelet_1d(fam, b, x));
                    let pw = int(&|x| scaling_1d(fam, a, x) * wavelet_1d(fam, b, x));
                    let d = if a == b { 1.0 } else { 0.0 };
                    assert!((pp - d).abs() < 1e-14 && (ww - d).abs() < 1e-14 && pw.abs() < 1e-14);
                }
                for deg in 0..m as i32 {
                    assert!(int(&|x| x.powi(deg) * wavelet_1d(fam, a, x)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn haar_filters_are_the_classical_ones() {
        let f = Filters::new(Family::Haar);
        let r = 0.5f64.sqrt();
        assert!((f.h[0][0][0] - r).abs() < 1e-15 && (f.h[0][1][0] - r).abs() < 1e-15);
        assert!((f.g[0][0][0] - r).abs() < 1e-15 && (f.g[0][1][0] + r).abs() < 1e-15);
    }

    #[test]
    fn constants_have_no_wavelet_part() {
        let s = cube();
        for basis in [BasisSpec::haar(), BasisSpec::linear()] {
            let f = analyze(&s, |_| 3.5, &basis, 4, &AnalyzeOptions::default()).unwrap();
            assert!(f.wavelets().all(|(_, v)| v.abs() < 1e-13));
            for p in 0..s.num_patches() {
                let idx = WaveletIndex { level: -1, patch: p, etype: 0, comp: 0, k1: 0, k2: 0 };
                assert!((f.get(&idx).unwrap() - 3.5).abs() < 1e-13);
            }
            let x = Vec3::new(0.3, 0.0, 0.7);
            assert!((f.synthesize(&s, &x).unwrap() - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_indicator_stays_on_its_patch() {
        let s = cube();
        let f = analyze(&s, |p| if p.patch == 2 { 1.0 } else { 0.0 }, &BasisSpec::haar(), 3, &AnalyzeOptions::default()).unwrap();
        assert!(f.iter().filter(|(i, _)| i.patch != 2).all(|(_, v)| v == 0.0));
    }

    #[test]
    fn linear_functions_are_annihilated_by_linear_wavelets() {
        let s = cube();
        let dir = Vec3::new(0.3, -1.2, 0.8);
        let f = analyze(&s, |p| p.x.dot(&dir), &BasisSpec::linear(), 4, &AnalyzeOptions::default()).unwrap();
        let worst = f.wavelets().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
        let x = Vec3::new(0.25, 1.0, 0.6);
        assert!((f.synthesize(&s, &x).unwrap() - x.dot(&dir)).abs() < 1e-12);
    }

    #[test]
    fn single_coefficient_synthesizes_the_basis_function() {
        let s = cube();
        let basis = BasisSpec::linear();
        let mut f = CoefficientField::zeros(basis, s.num_patches(), 3, s.hash());
        let idx = WaveletIndex { level: 2, patch: 4, etype: 3, comp: 2, k1: 1, k2: 3 };
        f.set(&idx, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let uv = [rng.gen::<f64>(), rng.gen::<f64>()];
            let p = s.point(4, uv);
            assert_eq!(f.synthesize_at(&p), basis_function(&basis, &idx, uv));
        }
    }

    #[test]
    fn biorthogonality_on_random_pairs() {
        let s = cube();
        let basis = BasisSpec::linear();
        let f = CoefficientField::zeros(basis, 2, 3, s.hash());
        let all: Vec<WaveletIndex> = f.iter().map(|(i, _)| i).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rule = GaussRule::new(3);
        let fine = 5u32;
        let n = 1usize << fine;
        for t in 0..200 {
            let a = all[rng.gen_range(0..all.len())];
            let b = if t % 4 == 0 { a } else { all[rng.gen_range(0..all.len())] };
            if a.patch != b.patch {
                continue;
            }
            let mut ip = 0.0;
            for k1 in 0..n {
                for k2 in 0..n {
                    let h = 1.0 / n as f64;
                    let (x0, y0) = (k1 as f64 * h, k2 as f64 * h);
                    ip += rule.integrate_rect((x0, x0 + h), (y0, y0 + h), |u, v| {
                        basis_function(&basis, &a, [u, v]) * basis_function(&basis, &b, [u, v])
                    });
                }
            }
            let d = if a == b { 1.0 } else { 0.0 };
            assert!((ip - d).abs() < 1e-10, "{a} {b} {ip}");
        }
    }

    #[test]
    fn l2_norm_is_preserved_for_haar() {
        let s = cube();
        let u = |p: &SurfacePoint| (3.0 * p.x[0]).sin() + p.x[1] * p.x[2] + p.patch as f64;
        let f = analyze(&s, u, &BasisSpec::haar(), 5, &AnalyzeOptions::default()).unwrap();
        let seq: f64 = f.iter().map(|(_, v)| v * v).sum();
        // L2 norm of the level-6 projection equals the coefficient norm exactly
        let rule = GaussRule::new(4);
        let n = 64;
        let mut proj = 0.0;
        for p in 0..6 {
            for k1 in 0..n {
                for k2 in 0..n {
                    let h = 1.0 / n as f64;
                    let mean = rule.integrate_rect((k1 as f64 * h, (k1 + 1) as f64 * h), (k2 as f64 * h, (k2 + 1) as f64 * h), |a, b| u(&s.point(p, [a, b]))) / (h * h);
                    proj += mean * mean * h * h;
                }
            }
        }
        assert!((seq - proj).abs() < 1e-12 * proj, "{seq} {proj}");
    }

    #[test]
    fn reconstruction_error_decays_first_order_for_haar() {
        let s = cube();
        let u = |p: &SurfacePoint| (p.x[0] + 2.0 * p.x[1] - p.x[2]).sin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<SurfacePoint> =
            (0..1000).map(|_| s.point(rng.gen_range(0..6), [rng.gen(), rng.gen()])).collect();
        let mut errs = Vec::new();
        for j in 3..=6 {
            let f = analyze(&s, u, &BasisSpec::haar(), j, &AnalyzeOptions::default()).unwrap();
            let e = pts.iter().map(|p| (f.synthesize_at(p) - u(p)).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.7 && ratio < 2.3, "{errs:?}");
        }
        assert!(errs[3] <= 3.0 * 0.5f64.powi(6));
    }

    #[test]
    fn classification_examples() {
        let s = cube();
        let edge = WaveletIndex { level: 4, patch: 0, etype: 1, comp: 0, k1: 0, k2: 7 };
        assert_eq!(classify_index(&s, &edge), IndexClass::Boundary);
        let mid = WaveletIndex { level: 5, patch: 0, etype: 2, comp: 0, k1: 16, k2: 15 };
        match classify_index(&s, &mid) {
            IndexClass::Interior { radius, cube, .. } => {
                let r = 0.5f64.powi(5);
                assert!((radius - r * 2f64.sqrt() / 2.0 * (1.0 + BALL_MARGIN)).abs() < 1e-15);
                assert_eq!(cube.area(), r * r);
            }
            IndexClass::Boundary => panic!("centered index must be interior"),
        }
    }

    #[test]
    fn boundary_census_is_linear_in_two_to_the_j() {
        let s = cube();
        let basis = BasisSpec::haar();
        for j in 3..=7 {
            let (int, bnd) = census(&s, &basis, j);
            let n = 1usize << j;
            assert_eq!(int + bnd, 6 * 3 * n * n);
            assert_eq!(bnd, 6 * 3 * (8 * n - 16));
        }
    }

    #[test]
    fn support_examples() {
        let s = cube();
        let idx = WaveletIndex { level: 3, patch: 1, etype: 3, comp: 0, k1: 5, k2: 2 };
        let (r, meas) = support_of(&s, &idx);
        assert_eq!(r, Rect { x0: 0.625, x1: 0.75, y0: 0.25, y1: 0.375 });
        assert_eq!(meas, 1.0 / 64.0);
    }

    #[test]
    fn moments() {
        let s = cube();
        let idx = WaveletIndex { level: 4, patch: 2, etype: 1, comp: 0, k1: 6, k2: 9 };
        let one = Poly2::new(vec![(0, 0, 1.0)]);
        let x = Poly2::new(vec![(1, 0, 1.0)]);
        assert!(moment_check(&s, &BasisSpec::haar(), &idx, &one).unwrap() < 1e-15);
        assert!(moment_check(&s, &BasisSpec::haar(), &idx, &x).unwrap() > 1e-4);
        for comp in 0..4 {
            let idx = WaveletIndex { comp, ..idx };
            for p in [&one, &x, &Poly2::new(vec![(0, 1, 2.0), (0, 0, -1.0)])] {
                assert!(moment_check(&s, &BasisSpec::linear(), &idx, p).unwrap() < 1e-10);
            }
        }
        let bnd = WaveletIndex { level: 1, patch: 0, etype: 1, comp: 0, k1: 0, k2: 0 };
        assert!(matches!(moment_check(&s, &BasisSpec::haar(), &bnd, &one), Err(WaveletError::BoundaryIndex)));
    }

    #[test]
    fn non_finite_samples_are_reported() {
        let s = cube();
        let err = analyze(&s, |p| if p.patch == 3 { f64::NAN } else { 0.0 }, &BasisSpec::haar(), 1, &AnalyzeOptions::default())
            .unwrap_err();
        assert!(matches!(err, WaveletError::Sampler { patch: 3, .. }));
        let err = analyze(&s, |_| 0.0, &BasisSpec::haar(), 12, &AnalyzeOptions { memory_budget: 1 << 20 }).unwrap_err();
        assert!(matches!(err, WaveletError::MemoryBudget { .. }));
    }

    #[test]
    fn cell_averages_match_quadrature_analysis() {
        let s = cube();
        for basis in [BasisSpec::haar(), BasisSpec::linear()] {
            let l = 3;
            let n = 8usize;
            let vals: Vec<Vec<f64>> = (0..6).map(|p| (0..n * n).map(|k| ((k * 7 + p * 3) % 11) as f64 - 5.0).collect()).collect();
            let f = from_cell_averages(&s, &vals, l, &basis, 4).unwrap();
            let g = analyze(
                &s,
                |p| {
                    let k1 = ((p.uv[0] * 8.0) as usize).min(7);
                    let k2 = ((p.uv[1] * 8.0) as usize).min(7);
                    vals[p.patch][k1 * 8 + k2]
                },
                &basis,
                4,
                &AnalyzeOptions::default(),
            )
            .unwrap();
            for ((i, a), (_, b)) in f.iter().zip(g.iter()) {
                assert!((a - b).abs() < 1e-12, "{i}: {a} vs {b}");
            }
            assert!(f.level(3).iter().chain(f.level(4)).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn index_layout_round_trips() {
        let s = cube();
        let f = CoefficientField::zeros(BasisSpec::linear(), s.num_patches(), 2, s.hash());
        let idx: Vec<WaveletIndex> = f.iter().map(|(i, _)| i).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for i in &idx {
            f.get(i).unwrap();
        }
        assert_eq!(idx.len(), f.coarse.len() + f.num_wavelets());
        let bad = WaveletIndex { level: 0, patch: 0, etype: 0, comp: 0, k1: 0, k2: 0 };
        assert!(f.get(&bad).is_err());
    }

    #[test]
    fn binary_dump_round_trips() {
        let s = cube();
        let f = analyze(&s, |p| p.x.norm().exp(), &BasisSpec::linear(), 2, &AnalyzeOptions::default()).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = CoefficientField::read_from(&buf[..]).unwrap();
        assert_eq!(f, g);
        buf.push(0);
        assert!(CoefficientField::read_from(&buf[..]).is_err());
    }
}
