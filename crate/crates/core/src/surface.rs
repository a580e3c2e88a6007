//! Patchwise flat polyhedral surfaces: bilinear patch parametrizations, the
//! tangent-cone face atlas with facewise polar coordinates, and the vertex
//! resolution of unity.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SurfaceError;
use crate::jet::Jet2;

pub type Vec3 = Vector3<f64>;

const GEOM_TOL: f64 = 1e-9;

/// On-disk surface description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDescription {
    pub vertices: Vec<[f64; 3]>,
    /// Corner indices, counterclockwise seen from outside.
    pub patches: Vec<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<SurfaceConstantsSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConstantsSpec {
    #[serde(rename = "C1", default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(rename = "C2", default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

impl SurfaceDescription {
    pub fn from_json(text: &str) -> Result<Self, SurfaceError> {
        serde_json::from_str(text).map_err(|e| SurfaceError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surface description serializes")
    }
}

/// A point of the surface together with the patch and parameters it was located in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub patch: usize,
    pub uv: [f64; 2],
    pub x: Vec3,
}

/// Flat quadrilateral patch with bilinear parametrization over `[0,1]^2`.
#[derive(Debug, Clone)]
pub struct Patch {
    pub corners: [usize; 4],
    pub points: [Vec3; 4],
    /// Unit outward normal.
    pub normal: Vec3,
    /// Orthonormal in-plane frame anchored at `points[0]`.
    pub e1: Vec3,
    pub e2: Vec3,
    /// Corners in frame coordinates.
    pub local: [[f64; 2]; 4],
    pub area: f64,
}

impl Patch {
    pub fn param(&self, uv: [f64; 2]) -> Vec3 {
        let [u, v] = uv;
        let p = &self.points;
        p[0] * ((1.0 - u) * (1.0 - v)) + p[1] * (u * (1.0 - v)) + p[2] * (u * v) + p[3] * ((1.0 - u) * v)
    }

    /// Partial derivatives of the parametrization.
    pub fn jacobian(&self, uv: [f64; 2]) -> (Vec3, Vec3) {
        let [u, v] = uv;
        let p = &self.points;
        let du = (p[1] - p[0]) * (1.0 - v) + (p[2] - p[3]) * v;
        let dv = (p[3] - p[0]) * (1.0 - u) + (p[2] - p[1]) * u;
        (du, dv)
    }

    /// Signed Jacobian determinant in the oriented patch plane.
    pub fn det(&self, uv: [f64; 2]) -> f64 {
        let (du, dv) = self.jacobian(uv);
        du.cross(&dv).dot(&self.normal)
    }

    pub fn area_element(&self, uv: [f64; 2]) -> f64 {
        self.det(uv).abs()
    }

    pub fn to_local(&self, x: &Vec3) -> [f64; 2] {
        let d = x - self.points[0];
        [d.dot(&self.e1), d.dot(&self.e2)]
    }

    pub fn plane_offset(&self, x: &Vec3) -> f64 {
        (x - self.points[0]).dot(&self.normal)
    }

    fn local_param(&self, uv: [f64; 2]) -> [f64; 2] {
        let [u, v] = uv;
        let l = &self.local;
        let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v];
        let mut out = [0.0; 2];
        for k in 0..4 {
            out[0] += w[k] * l[k][0];
            out[1] += w[k] * l[k][1];
        }
        out
    }

    /// Inverse of the parametrization for a point in the patch plane.
    pub fn inverse(&self, x: &Vec3) -> Option<[f64; 2]> {
        let target = self.to_local(x);
        let mut uv = [0.5, 0.5];
        for _ in 0..60 {
            let cur = self.local_param(uv);
            let r = [cur[0] - target[0], cur[1] - target[1]];
            let (du, dv) = self.jacobian(uv);
            let a = [du.dot(&self.e1), du.dot(&self.e2)];
            let b = [dv.dot(&self.e1), dv.dot(&self.e2)];
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-300 {
                return None;
            }
            let su = (r[0] * b[1] - r[1] * b[0]) / det;
            let sv = (a[0] * r[1] - a[1] * r[0]) / det;
            uv = [uv[0] - su, uv[1] - sv];
            if su.abs() + sv.abs() < 1e-15 {
                break;
            }
        }
        uv.iter().all(|c| c.is_finite()).then_some(uv)
    }

    /// Euclidean distance from a point of the patch plane to the patch boundary polygon.
    pub fn boundary_distance(&self, x: &Vec3) -> f64 {
        let y = self.to_local(x);
        (0..4)
            .map(|k| segment_distance_2d(y, self.local[k], self.local[(k + 1) % 4]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Interior angle at local corner `c`.
    pub fn corner_angle(&self, c: usize) -> f64 {
        let p = self.points[c];
        let a = (self.points[(c + 1) % 4] - p).normalize();
        let b = (self.points[(c + 3) % 4] - p).normalize();
        let cross = a.cross(&b).dot(&self.normal);
        let ang = cross.atan2(a.dot(&b));
        if ang < 0.0 {
            ang + 2.0 * PI
        } else {
            ang
        }
    }

    pub fn centroid(&self) -> Vec3 {
        self.param([0.5, 0.5])
    }
}

fn segment_distance_2d(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

pub(crate) fn segment_distance_3d(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// One face `Γ^{n,t}` of the tangent cone at a vertex, with the rigid map
/// `y -> origin + y[0] e1 + y[1] e2` from the planar sector.
#[derive(Debug, Clone)]
pub struct ConeFace {
    pub vertex: usize,
    pub patch: usize,
    /// Local corner index of the vertex within the patch.
    pub corner: usize,
    pub origin: Vec3,
    /// Direction of the first bounding ray.
    pub e1: Vec3,
    pub e2: Vec3,
    /// Opening angle in radians.
    pub angle: f64,
}

impl ConeFace {
    pub fn to_planar(&self, x: &Vec3) -> [f64; 2] {
        let d = x - self.origin;
        [d.dot(&self.e1), d.dot(&self.e2)]
    }

    pub fn from_planar(&self, y: [f64; 2]) -> Vec3 {
        self.origin + self.e1 * y[0] + self.e2 * y[1]
    }

    pub fn from_polar(&self, r: f64, phi: f64) -> Vec3 {
        self.from_planar([r * phi.cos(), r * phi.sin()])
    }

    pub fn normal(&self) -> Vec3 {
        self.e1.cross(&self.e2)
    }

    /// Distance from the face plane.
    pub fn plane_offset(&self, x: &Vec3) -> f64 {
        (x - self.origin).dot(&self.normal())
    }

    /// Angular distance `q(phi)` to the nearer bounding ray.
    pub fn q(&self, phi: f64) -> f64 {
        phi.min(self.angle - phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceConstants {
    pub c1: f64,
    pub c2: f64,
}

/// Validated polyhedral surface.
#[derive(Debug, Clone)]
pub struct PolyhedralSurface {
    pub vertices: Vec<Vec3>,
    pub patches: Vec<Patch>,
    /// Per-vertex cone faces, ordered by patch index.
    pub cones: Vec<Vec<ConeFace>>,
    /// Undirected edge -> the two patches sharing it.
    pub edges: BTreeMap<(usize, usize), [usize; 2]>,
    pub description: SurfaceDescription,
    requested_constants: Option<SurfaceConstantsSpec>,
    scale: f64,
}

impl PolyhedralSurface {
    pub fn load(path: &Path) -> Result<Self, SurfaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| SurfaceError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SurfaceError> {
        Self::from_description(SurfaceDescription::from_json(text)?)
    }

    /// Validates a description and derives the tangent-cone atlas.
    pub fn from_description(desc: SurfaceDescription) -> Result<Self, SurfaceError> {
        let vertices: Vec<Vec3> = desc.vertices.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect();
        let nv = vertices.len();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let scale = if nv > 0 { (hi - lo).norm().max(f64::MIN_POSITIVE) } else { 1.0 };

        let mut patches = Vec::with_capacity(desc.patches.len());
        for (pi, corners) in desc.patches.iter().enumerate() {
            for &c in corners {
                if c >= nv {
                    return Err(SurfaceError::BadVertexIndex { patch: pi, vertex: c, count: nv });
                }
            }
            patches.push(build_patch(pi, *corners, &vertices, scale)?);
        }

        // edge table and orientation
        let mut directed: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (pi, p) in patches.iter().enumerate() {
            for k in 0..4 {
                let a = p.corners[k];
                let b = p.corners[(k + 1) % 4];
                directed.entry((a, b)).or_default().push(pi);
            }
        }
        let mut undirected: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (&(a, b), owners) in &directed {
            let key = (a.min(b), a.max(b));
            undirected.entry(key).or_default().extend(owners.iter().copied());
        }
        let mut edges = BTreeMap::new();
        for (&(a, b), owners) in &undirected {
            if owners.len() != 2 {
                return Err(SurfaceError::NonManifoldEdge { a, b, count: owners.len() });
            }
            let fwd = directed.get(&(a, b)).map_or(0, Vec::len);
            let bwd = directed.get(&(b, a)).map_or(0, Vec::len);
            if fwd != 1 || bwd != 1 {
                return Err(SurfaceError::InconsistentOrientation { first: owners[0], second: owners[1], a, b });
            }
            edges.insert((a, b), [owners[0].min(owners[1]), owners[0].max(owners[1])]);
        }
        let mut pair_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for owners in edges.values() {
            *pair_count.entry((owners[0], owners[1])).or_default() += 1;
        }
        for (&(first, second), &shared) in &pair_count {
            if shared > 1 {
                return Err(SurfaceError::MultipleSharedEdges { first, second, shared });
            }
        }

        let cones = build_cones(&vertices, &patches)?;

        Ok(Self {
            vertices,
            patches,
            cones,
            edges,
            requested_constants: desc.constants,
            description: desc,
            scale,
        })
    }

    /// Axis-aligned unit cube `[0,1]^3`.
    pub fn unit_cube() -> Self {
        let desc = unit_squares_description(&cube_squares([0.0; 3], 1.0));
        Self::from_description(desc).expect("unit cube is valid")
    }

    /// Fichera corner `[-1,1]^3 \\ [0,1]^3` split into unit squares.
    pub fn fichera() -> Self {
        let mut squares: Vec<UnitSquare> =
            cube_squares([-1.0; 3], 2.0).iter().flat_map(|sq| split_square(sq, 2)).collect();
        squares.retain(|sq| !square_center(sq).iter().all(|&x| x > 0.0));
        // faces of the removed octant; the outward normal points into it
        for axis in 0..3 {
            let mut du = [0.0; 3];
            let mut dv = [0.0; 3];
            du[(axis + 1) % 3] = 1.0;
            dv[(axis + 2) % 3] = 1.0;
            squares.push(UnitSquare { origin: [0.0; 3], du, dv });
        }
        Self::from_description(unit_squares_description(&squares)).expect("Fichera corner is valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    /// Bounding-box diagonal; used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn total_area(&self) -> f64 {
        self.patches.iter().map(|p| p.area).sum()
    }

    pub fn requested_constants(&self) -> Option<SurfaceConstantsSpec> {
        self.requested_constants
    }

    pub fn shortest_edge(&self) -> f64 {
        self.edges
            .keys()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Default `C1 = C2`: the separation left by the default resolution of unity.
    pub fn default_constants(&self) -> SurfaceConstants {
        let res = ResolutionOfUnity::new(self).expect("default resolution is valid for validated surfaces");
        SurfaceConstants { c1: res.c1, c2: res.c2 }
    }

    /// Hex SHA-256 of the canonical JSON description.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.description).expect("serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn point(&self, patch: usize, uv: [f64; 2]) -> SurfacePoint {
        SurfacePoint { patch, uv, x: self.patches[patch].param(uv) }
    }

    /// Finds a patch containing `x` (lowest index wins on shared edges).
    pub fn locate(&self, x: &Vec3) -> Option<SurfacePoint> {
        let tol = GEOM_TOL * self.scale;
        for (pi, p) in self.patches.iter().enumerate() {
            if p.plane_offset(x).abs() > tol {
                continue;
            }
            if let Some(uv) = p.inverse(x) {
                let eps = 1e-9;
                if uv.iter().all(|&c| (-eps..=1.0 + eps).contains(&c)) {
                    let uv = [uv[0].clamp(0.0, 1.0), uv[1].clamp(0.0, 1.0)];
                    return Some(SurfacePoint { patch: pi, uv, x: *x });
                }
            }
        }
        None
    }

    pub fn face(&self, n: usize, t: usize) -> Result<&ConeFace, SurfaceError> {
        self.cones.get(n).and_then(|c| c.get(t)).ok_or(SurfaceError::BadFace { vertex: n, face: t })
    }

    /// Polar coordinates `(r, phi)` of `x` on face `(n, t)`; `phi` is reported as 0 at the vertex.
    pub fn face_polar_coords(&self, n: usize, t: usize, x: &Vec3) -> Result<(f64, f64), SurfaceError> {
        let face = self.face(n, t)?;
        let tol = GEOM_TOL * self.scale;
        let off = face.plane_offset(x);
        if off.abs() > tol {
            return Err(SurfaceError::NotOnFace { vertex: n, face: t, offset: off.abs() });
        }
        let y = face.to_planar(x);
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        if r <= tol {
            return Ok((r, 0.0));
        }
        let mut phi = y[1].atan2(y[0]);
        let ang_tol = tol / r;
        if phi < -ang_tol {
            phi += 2.0 * PI;
        }
        if phi < 0.0 {
            phi = 0.0;
        }
        if phi > face.angle {
            if phi - face.angle <= ang_tol {
                phi = face.angle;
            } else {
                let offset = r * (phi - face.angle).min(2.0 * PI - phi).sin().abs();
                return Err(SurfaceError::NotOnFace { vertex: n, face: t, offset });
            }
        }
        Ok((r, phi))
    }

    /// `delta_{n,t}(y) = min{C2, dist(y, boundary of the planar sector)}`.
    pub fn delta_face(&self, n: usize, t: usize, y: [f64; 2], c2: f64) -> Result<f64, SurfaceError> {
        let face = self.face(n, t)?;
        Ok(sector_boundary_distance(face.angle, y).min(c2))
    }
}

/// Distance from `y` to the two bounding rays of the sector `0 <= phi <= angle`.
pub fn sector_boundary_distance(angle: f64, y: [f64; 2]) -> f64 {
    let ray = |dir: [f64; 2]| {
        let t = y[0] * dir[0] + y[1] * dir[1];
        if t <= 0.0 {
            (y[0] * y[0] + y[1] * y[1]).sqrt()
        } else {
            let px = y[0] - t * dir[0];
            let py = y[1] - t * dir[1];
            (px * px + py * py).sqrt()
        }
    };
    ray([1.0, 0.0]).min(ray([angle.cos(), angle.sin()]))
}

fn build_patch(pi: usize, corners: [usize; 4], vertices: &[Vec3], scale: f64) -> Result<Patch, SurfaceError> {
    let points = corners.map(|c| vertices[c]);
    // Newell normal is robust for non-convex and slightly warped quads.
    let mut nrm = Vec3::zeros();
    for k in 0..4 {
        let a = points[k];
        let b = points[(k + 1) % 4];
        nrm += a.cross(&b);
    }
    let twice_area = nrm.norm();
    if twice_area <= 1e-12 * scale * scale {
        return Err(SurfaceError::Degenerate { patch: pi, area: 0.5 * twice_area });
    }
    let normal = nrm / twice_area;
    let center = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / 4.0;
    let offset = points.iter().map(|p| (p - center).dot(&normal).abs()).fold(0.0, f64::max);
    if offset > GEOM_TOL * scale {
        return Err(SurfaceError::NonPlanar { patch: pi, offset });
    }
    let e1 = (points[1] - points[0]).normalize();
    let e2 = normal.cross(&e1);
    let local = points.map(|p| {
        let d = p - points[0];
        [d.dot(&e1), d.dot(&e2)]
    });
    let mut patch = Patch { corners, points, normal, e1, e2, local, area: 0.0 };
    // the planar bilinear Jacobian determinant is affine in (u, v)
    for uv in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
        if patch.det(uv) <= 1e-12 * scale * scale {
            return Err(SurfaceError::SingularParametrization { patch: pi });
        }
    }
    patch.area = patch.det([0.5, 0.5]);
    if patch.area <= 1e-12 * scale * scale {
        return Err(SurfaceError::Degenerate { patch: pi, area: patch.area });
    }
    Ok(patch)
}

fn build_cones(vertices: &[Vec3], patches: &[Patch]) -> Result<Vec<Vec<ConeFace>>, SurfaceError> {
    let mut cones: Vec<Vec<ConeFace>> = vec![Vec::new(); vertices.len()];
    for (pi, p) in patches.iter().enumerate() {
        for c in 0..4 {
            let n = p.corners[c];
            let origin = vertices[n];
            let e1 = (p.points[(c + 1) % 4] - origin).normalize();
            let e2 = p.normal.cross(&e1);
            cones[n].push(ConeFace { vertex: n, patch: pi, corner: c, origin, e1, e2, angle: p.corner_angle(c) });
        }
    }
    // incident patches must form a single closed fan around each vertex
    for (n, faces) in cones.iter().enumerate() {
        if faces.is_empty() {
            continue;
        }
        let mut next: BTreeMap<usize, usize> = BTreeMap::new();
        for f in faces {
            let p = &patches[f.patch];
            let to = p.corners[(f.corner + 1) % 4];
            if next.insert(to, f.patch).is_some() {
                return Err(SurfaceError::NonManifoldVertex { vertex: n });
            }
        }
        // walk the fan
        let mut count = 1;
        let start = &faces[0];
        let mut cur_patch = start.patch;
        let mut cur_corner = start.corner;
        loop {
            let p = &patches[cur_patch];
            let prev_vertex = p.corners[(cur_corner + 3) % 4];
            let Some(&np) = next.get(&prev_vertex) else {
                return Err(SurfaceError::NonManifoldVertex { vertex: n });
            };
            if np == start.patch {
                break;
            }
            let nc = faces.iter().find(|f| f.patch == np).map(|f| f.corner).expect("incident face");
            cur_patch = np;
            cur_corner = nc;
            count += 1;
            if count > faces.len() {
                return Err(SurfaceError::NonManifoldVertex { vertex: n });
            }
        }
        if count != faces.len() {
            return Err(SurfaceError::NonManifoldVertex { vertex: n });
        }
    }
    Ok(cones)
}

#[derive(Debug, Clone, Copy)]
struct UnitSquare {
    origin: [f64; 3],
    du: [f64; 3],
    dv: [f64; 3],
}

fn square_center(sq: &UnitSquare) -> [f64; 3] {
    [0, 1, 2].map(|k| sq.origin[k] + 0.5 * (sq.du[k] + sq.dv[k]))
}

fn split_square(sq: &UnitSquare, m: usize) -> Vec<UnitSquare> {
    let h = 1.0 / m as f64;
    let mut out = Vec::new();
    for a in 0..m {
        for b in 0..m {
            let origin = [0, 1, 2].map(|k| sq.origin[k] + sq.du[k] * a as f64 * h + sq.dv[k] * b as f64 * h);
            out.push(UnitSquare { origin, du: sq.du.map(|x| x * h), dv: sq.dv.map(|x| x * h) });
        }
    }
    out
}

/// Six faces of an axis-aligned cube with outward orientation (`du x dv` points outward).
fn cube_squares(lo: [f64; 3], side: f64) -> Vec<UnitSquare> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let a = (axis + 1) % 3;
        let b = (axis + 2) % 3;
        let mut du = [0.0; 3];
        let mut dv = [0.0; 3];
        du[b] = side;
        dv[a] = side;
        out.push(UnitSquare { origin: lo, du, dv });
        let mut o = lo;
        o[axis] += side;
        out.push(UnitSquare { origin: o, du: dv, dv: du });
    }
    out
}

fn unit_squares_description(squares: &[UnitSquare]) -> SurfaceDescription {
    let mut index: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut key_of = |p: [f64; 3]| -> usize {
        let key = p.map(|x| (x * 1e6).round() as i64);
        *index.entry(key).or_insert_with(|| {
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut patches = Vec::new();
    for sq in squares {
        let p0 = sq.origin;
        let p1 = [0, 1, 2].map(|k| sq.origin[k] + sq.du[k]);
        let p2 = [0, 1, 2].map(|k| sq.origin[k] + sq.du[k] + sq.dv[k]);
        let p3 = [0, 1, 2].map(|k| sq.origin[k] + sq.dv[k]);
        patches.push([key_of(p0), key_of(p1), key_of(p2), key_of(p3)]);
    }
    SurfaceDescription { vertices, patches, constants: None }
}

/// Smooth step `S(t)` going from 0 at `t <= 0` to 1 at `t >= 1`, built from `e^{-1/t}`,
/// returned with its first two derivatives.
pub fn smooth_step(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let f = |s: Jet2| -> Jet2 {
        let e = (-1.0 / s.v).exp();
        let inv = 1.0 / s.v;
        // d/ds e^{-1/s} = e/s^2, second = e (1/s^4 - 2/s^3)
        s.compose(e, e * inv * inv, e * (inv.powi(4) - 2.0 * inv.powi(3)))
    };
    let x = Jet2::variable(t, 0);
    let a = f(x);
    let b = f(Jet2::constant(1.0) - x);
    let s = a / (a + b);
    (s.v, s.d[0], s.h[0][0])
}

/// Special resolution of unity subordinate to the vertices: radial bumps
/// `b_n(|x - nu_n|)` on the patches incident to each vertex, normalized by
/// their sum over the corners of the patch containing `x`.
#[derive(Debug, Clone)]
pub struct ResolutionOfUnity {
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    /// Distance from each vertex to the far edges of its incident patches.
    pub reach: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

/// Default ratios of the inner and outer bump radii to the vertex reach.
pub const DEFAULT_INNER_RATIO: f64 = 0.125;
pub const DEFAULT_OUTER_RATIO: f64 = 0.85;

impl ResolutionOfUnity {
    /// Default construction, honoring `constants` from the surface file when present.
    pub fn new(surface: &PolyhedralSurface) -> Result<Self, SurfaceError> {
        let reach = vertex_reach(surface);
        let r0: Vec<f64> = reach.iter().map(|d| DEFAULT_INNER_RATIO * d).collect();
        let requested = surface.requested_constants();
        let r1: Vec<f64> = match requested.and_then(|c| c.c1) {
            Some(c1) => reach.iter().map(|d| d - c1).collect(),
            None => reach.iter().map(|d| DEFAULT_OUTER_RATIO * d).collect(),
        };
        let c2 = requested.and_then(|c| c.c2);
        Self::with_radii(surface, r0, r1, c2)
    }

    /// Construction with explicit radii; checks resolution, (U1) and (U2).
    pub fn with_radii(
        surface: &PolyhedralSurface,
        r0: Vec<f64>,
        r1: Vec<f64>,
        c2: Option<f64>,
    ) -> Result<Self, SurfaceError> {
        let nv = surface.num_vertices();
        if r0.len() != nv || r1.len() != nv {
            return Err(SurfaceError::Resolution("radius vectors must have one entry per vertex".into()));
        }
        let reach = vertex_reach(surface);
        let mut c1 = f64::INFINITY;
        for n in 0..nv {
            if surface.cones[n].is_empty() {
                continue;
            }
            if !(0.0 < r0[n] && r0[n] < r1[n]) {
                return Err(SurfaceError::Resolution(format!("vertex {n}: need 0 < r0 < r1")));
            }
            // (U1): U_{n,1} stays C1 away from every patch not incident to the vertex
            let sep = reach[n] - r1[n];
            if sep <= 0.0 {
                return Err(SurfaceError::Resolution(format!(
                    "vertex {n}: outer radius {} reaches a non-incident patch (reach {})",
                    r1[n], reach[n]
                )));
            }
            c1 = c1.min(sep);
        }
        // phi_n == 1 on U_{n,0}: neighbouring bumps must vanish there
        for p in &surface.patches {
            for &a in &p.corners {
                for &b in &p.corners {
                    if a == b {
                        continue;
                    }
                    let d = (surface.vertices[a] - surface.vertices[b]).norm();
                    if r0[a] + r1[b] > d * (1.0 + 1e-12) {
                        return Err(SurfaceError::Resolution(format!(
                            "inner disk of vertex {a} overlaps the bump of vertex {b}"
                        )));
                    }
                }
            }
        }
        let res = Self { r0, r1, reach, c1, c2: c2.unwrap_or(c1) };
        // (U2) holds trivially for the convex patches admitted by bilinear maps;
        // still check the coverage that sum_n phi_n = 1 needs.
        for (pi, p) in surface.patches.iter().enumerate() {
            let m = 40;
            for a in 0..=m {
                for b in 0..=m {
                    let uv = [a as f64 / m as f64, b as f64 / m as f64];
                    let x = p.param(uv);
                    let cover = p
                        .corners
                        .iter()
                        .map(|&c| 1.0 - (x - surface.vertices[c]).norm() / res.r1[c])
                        .fold(f64::NEG_INFINITY, f64::max);
                    if cover < 0.02 {
                        return Err(SurfaceError::Resolution(format!(
                            "patch {pi} is not covered by the vertex neighbourhoods near uv = ({:.3}, {:.3})",
                            uv[0], uv[1]
                        )));
                    }
                }
            }
        }
        if res.c2 <= 0.0 {
            return Err(SurfaceError::Resolution("C2 must be positive".into()));
        }
        Ok(res)
    }

    pub fn bump(&self, n: usize, r: f64) -> (f64, f64, f64) {
        let (r0, r1) = (self.r0[n], self.r1[n]);
        if r <= r0 {
            return (1.0, 0.0, 0.0);
        }
        if r >= r1 {
            return (0.0, 0.0, 0.0);
        }
        let w = r1 - r0;
        let (s, s1, s2) = smooth_step((r1 - r) / w);
        (s, -s1 / w, s2 / (w * w))
    }

    /// `phi_n` at a located surface point.
    pub fn eval_at(&self, surface: &PolyhedralSurface, n: usize, p: &SurfacePoint) -> f64 {
        let patch = &surface.patches[p.patch];
        if !patch.corners.contains(&n) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut own = 0.0;
        for &c in &patch.corners {
            let b = self.bump(c, (p.x - surface.vertices[c]).norm()).0;
            total += b;
            if c == n {
                own = b;
            }
        }
        own / total
    }

    /// `phi_n(x)` for an arbitrary surface point.
    pub fn partition_eval(&self, surface: &PolyhedralSurface, n: usize, x: &Vec3) -> Result<f64, SurfaceError> {
        let p = surface.locate(x).ok_or(SurfaceError::NotOnSurface)?;
        Ok(self.eval_at(surface, n, &p))
    }

    /// Jet of `phi_n` in the planar coordinates of cone face `face` (which must belong to vertex `n`).
    pub fn jet_on_face(&self, surface: &PolyhedralSurface, face: &ConeFace, y: [f64; 2]) -> Jet2 {
        let patch = &surface.patches[face.patch];
        let yj = [Jet2::variable(y[0], 0), Jet2::variable(y[1], 1)];
        let mut own = Jet2::constant(0.0);
        let mut total = Jet2::constant(0.0);
        for &c in &patch.corners {
            let yc = face.to_planar(&surface.vertices[c]);
            let dx = yj[0] - Jet2::constant(yc[0]);
            let dy = yj[1] - Jet2::constant(yc[1]);
            let r = (dx.v * dx.v + dy.v * dy.v).sqrt();
            let b = if r <= self.r0[c] {
                Jet2::constant(1.0)
            } else if r >= self.r1[c] {
                Jet2::constant(0.0)
            } else {
                let rj = (dx * dx + dy * dy).sqrt();
                let (f, f1, f2) = self.bump(c, r);
                rj.compose(f, f1, f2)
            };
            total = total + b;
            if c == face.vertex {
                own = b;
            }
        }
        own / total
    }
}

/// For each vertex, the smallest distance to an edge of an incident patch
/// that does not contain the vertex.
pub fn vertex_reach(surface: &PolyhedralSurface) -> Vec<f64> {
    let mut reach = vec![f64::INFINITY; surface.num_vertices()];
    for p in &surface.patches {
        for (c, &n) in p.corners.iter().enumerate() {
            let x = surface.vertices[n];
            for k in [(c + 1) % 4, (c + 2) % 4] {
                let a = p.points[k];
                let b = p.points[(k + 1) % 4];
                reach[n] = reach[n].min(segment_distance_3d(&x, &a, &b));
            }
        }
    }
    reach
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_has_eight_right_angle_cones() {
        let s = PolyhedralSurface::unit_cube();
        assert_eq!(s.num_vertices(), 8);
        assert_eq!(s.num_patches(), 6);
        for cone in &s.cones {
            assert_eq!(cone.len(), 3);
            for f in cone {
                assert!((f.angle - PI / 2.0).abs() < 1e-14);
            }
        }
        assert!((s.total_area() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn cube_normals_point_outward() {
        let s = PolyhedralSurface::unit_cube();
        let c = Vec3::new(0.5, 0.5, 0.5);
        for p in &s.patches {
            assert!((p.centroid() - c).dot(&p.normal) > 0.0);
        }
    }

    #[test]
    fn fichera_is_valid_with_flat_vertices() {
        let s = PolyhedralSurface::fichera();
        assert_eq!(s.num_patches(), 24);
        assert!((s.total_area() - 24.0).abs() < 1e-12);
        let flat = s.cones.iter().filter(|c| (c.iter().map(|f| f.angle).sum::<f64>() - 2.0 * PI).abs() < 1e-12).count();
        assert!(flat > 0);
        // reentrant corner at the origin: only the three notch faces touch it
        let origin = s.vertices.iter().position(|v| v.norm() < 1e-12).unwrap();
        let total: f64 = s.cones[origin].iter().map(|f| f.angle).sum();
        assert!((total - 1.5 * PI).abs() < 1e-12, "total {total}");
        ResolutionOfUnity::new(&s).unwrap();
    }

    #[test]
    fn pillow_of_two_patches_is_rejected() {
        let desc = SurfaceDescription {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            patches: vec![[0, 1, 2, 3], [3, 2, 1, 0]],
            constants: None,
        };
        let err = PolyhedralSurface::from_description(desc).unwrap_err();
        assert!(matches!(err, SurfaceError::MultipleSharedEdges { .. }), "{err}");
    }

    #[test]
    fn open_surface_has_non_manifold_edges() {
        let desc = SurfaceDescription {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            patches: vec![[0, 1, 2, 3]],
            constants: None,
        };
        assert!(matches!(
            PolyhedralSurface::from_description(desc),
            Err(SurfaceError::NonManifoldEdge { count: 1, .. })
        ));
    }

    #[test]
    fn flipped_patch_is_inconsistent() {
        let mut desc = PolyhedralSurface::unit_cube().description.clone();
        desc.patches[0].reverse();
        assert!(matches!(
            PolyhedralSurface::from_description(desc),
            Err(SurfaceError::InconsistentOrientation { .. })
        ));
    }

    #[test]
    fn warped_and_degenerate_patches_are_rejected() {
        let mut desc = PolyhedralSurface::unit_cube().description.clone();
        let v = desc.patches[0][2];
        desc.vertices[v][0] += 0.1;
        desc.vertices[v][1] += 0.07;
        desc.vertices[v][2] += 0.05;
        let err = PolyhedralSurface::from_description(desc).unwrap_err();
        assert!(matches!(err, SurfaceError::NonPlanar { .. }), "{err}");

        let desc = SurfaceDescription {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            patches: vec![[0, 1, 2, 3]],
            constants: None,
        };
        assert!(matches!(PolyhedralSurface::from_description(desc), Err(SurfaceError::Degenerate { .. })));
    }

    #[test]
    fn polar_coordinates_on_cube() {
        let s = PolyhedralSurface::unit_cube();
        let n = 0;
        let face = &s.cones[n][0];
        let (r, phi) = s.face_polar_coords(n, 0, &face.origin).unwrap();
        assert_eq!((r, phi), (0.0, 0.0));
        let x = face.origin + face.e1 * 2.0;
        let (r, phi) = s.face_polar_coords(n, 0, &x).unwrap();
        assert!((r - 2.0).abs() < 1e-15 && phi.abs() < 1e-15);
        // midpoint of the face diagonal of the incident unit patch
        let p = &s.patches[face.patch];
        let far = p.points[(face.corner + 2) % 4];
        let mid = (face.origin + far) / 2.0;
        let (r, phi) = s.face_polar_coords(n, 0, &mid).unwrap();
        assert!((r - 2f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((phi - PI / 4.0).abs() < 1e-14);
        let back = face.from_polar(r, phi);
        assert!((back - mid).norm() <= 1e-12 * mid.norm());
        // off the face plane
        let off = mid + face.normal() * 0.1;
        assert!(matches!(s.face_polar_coords(n, 0, &off), Err(SurfaceError::NotOnFace { .. })));
        // in the plane but outside the sector
        let outside = face.origin - face.e1 * 0.3 - face.e2 * 0.2;
        assert!(s.face_polar_coords(n, 0, &outside).is_err());
    }

    #[test]
    fn delta_face_examples() {
        let s = PolyhedralSurface::unit_cube();
        let c2 = 0.2;
        assert_eq!(s.delta_face(0, 0, [0.7, 0.0], c2).unwrap(), 0.0);
        let y = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let d = s.delta_face(0, 0, y, 10.0).unwrap();
        assert!((d - (PI / 4.0).sin()).abs() < 1e-15);
        assert_eq!(s.delta_face(0, 0, [1e3, 1e3], c2).unwrap(), c2);
    }

    #[test]
    fn reentrant_sector_distance_uses_rays() {
        // sector of 3pi/2; a point in the third quadrant is closest to the second ray
        let d = sector_boundary_distance(1.5 * PI, [-1.0, -0.5]);
        assert!((d - 1.0).abs() < 1e-15);
        // behind both rays -> distance to the origin
        let d = sector_boundary_distance(0.5 * PI, [-1.0, -1.0]);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn smooth_step_derivatives_match_differences() {
        for &t in &[0.2, 0.5, 0.77] {
            let (s, s1, s2) = smooth_step(t);
            let h = 1e-5;
            let fd1 = (smooth_step(t + h).0 - smooth_step(t - h).0) / (2.0 * h);
            let fd2 = (smooth_step(t + h).0 - 2.0 * s + smooth_step(t - h).0) / (h * h);
            assert!((s1 - fd1).abs() < 1e-7);
            assert!((s2 - fd2).abs() < 1e-3);
        }
        assert_eq!(smooth_step(0.5).0, 0.5);
    }

    #[test]
    fn partition_examples_on_cube() {
        let s = PolyhedralSurface::unit_cube();
        let res = ResolutionOfUnity::new(&s).unwrap();
        let v0 = s.vertices[0];
        assert_eq!(res.partition_eval(&s, 0, &v0).unwrap(), 1.0);
        // barycenter of a patch not touching vertex 0
        let far = s.patches.iter().find(|p| !p.corners.contains(&0)).unwrap();
        assert_eq!(res.partition_eval(&s, 0, &far.centroid()).unwrap(), 0.0);
        // edge midpoint between two vertices
        let (&(a, b), _) = s.edges.iter().next().unwrap();
        let mid = (s.vertices[a] + s.vertices[b]) / 2.0;
        assert!((res.partition_eval(&s, a, &mid).unwrap() - 0.5).abs() < 1e-15);
        assert!((res.partition_eval(&s, b, &mid).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_radii_match_documented_ratios_on_cube() {
        let s = PolyhedralSurface::unit_cube();
        let res = ResolutionOfUnity::new(&s).unwrap();
        assert!(res.reach.iter().all(|&d| (d - 1.0).abs() < 1e-15));
        assert!((res.c1 - 0.15).abs() < 1e-12);
        assert_eq!(res.c1, res.c2);
    }

    #[test]
    fn radii_too_small_to_cover_are_rejected() {
        let s = PolyhedralSurface::unit_cube();
        let n = s.num_vertices();
        let err = ResolutionOfUnity::with_radii(&s, vec![0.1; n], vec![0.5; n], None).unwrap_err();
        assert!(matches!(err, SurfaceError::Resolution(_)));
        let err = ResolutionOfUnity::with_radii(&s, vec![0.1; n], vec![1.2; n], None).unwrap_err();
        assert!(matches!(err, SurfaceError::Resolution(_)));
    }

    #[test]
    fn phi_jet_matches_point_evaluation() {
        let s = PolyhedralSurface::unit_cube();
        let res = ResolutionOfUnity::new(&s).unwrap();
        let face = &s.cones[0][1];
        for &(y0, y1) in &[(0.3, 0.4), (0.6, 0.1), (0.05, 0.02)] {
            let jet = res.jet_on_face(&s, face, [y0, y1]);
            let x = face.from_planar([y0, y1]);
            let p = SurfacePoint { patch: face.patch, uv: s.patches[face.patch].inverse(&x).unwrap(), x };
            assert!((jet.v - res.eval_at(&s, 0, &p)).abs() < 1e-14);
            let h = 1e-6;
            let at = |a: f64, b: f64| {
                let x = face.from_planar([a, b]);
                let p = SurfacePoint { patch: face.patch, uv: [0.0; 2], x };
                res.eval_at(&s, 0, &p)
            };
            let fd = (at(y0 + h, y1) - at(y0 - h, y1)) / (2.0 * h);
            assert!((jet.d[0] - fd).abs() < 1e-6, "{} vs {}", jet.d[0], fd);
        }
    }

    #[test]
    fn description_round_trips_exactly() {
        let s = PolyhedralSurface::fichera();
        let mut desc = s.description.clone();
        desc.vertices[0][0] = 0.1 + 0.2;
        desc.constants = Some(SurfaceConstantsSpec { c1: Some(0.15), c2: None });
        let json = desc.to_json();
        let back = SurfaceDescription::from_json(&json).unwrap();
        assert_eq!(back, desc);
    }
}
