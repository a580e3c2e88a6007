//! Facewise smooth test functions with analytic facewise jets: constants,
//! exponentials, and vertex and edge singularity models.

use crate::jet::Jet2;
use crate::surface::{smooth_step, ConeFace, PolyhedralSurface, SurfacePoint, Vec3};

/// A function on the surface with optional analytic derivatives in the planar
/// coordinates of cone faces.
pub trait SmoothFunction: Sync {
    fn value(&self, p: &SurfacePoint) -> f64;

    /// Value, gradient and Hessian at planar point `y` of `face`; `None` requests finite differences.
    fn face_jet(&self, _face: &ConeFace, _y: [f64; 2]) -> Option<Jet2> {
        None
    }
}

/// Planar coordinates of `face` as jets of the variables `y`.
fn ambient_jets(face: &ConeFace, y: [f64; 2]) -> [Jet2; 3] {
    let y0 = Jet2::variable(y[0], 0);
    let y1 = Jet2::variable(y[1], 1);
    [0, 1, 2].map(|k| Jet2::constant(face.origin[k]) + y0.scale(face.e1[k]) + y1.scale(face.e2[k]))
}

fn dot(x: &[Jet2; 3], v: &Vec3) -> Jet2 {
    x[0].scale(v[0]) + x[1].scale(v[1]) + x[2].scale(v[2])
}

/// Smooth cutoff in `r`: 1 below `inner`, 0 above `outer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Cutoff {
    pub fn eval(&self, r: f64) -> f64 {
        smooth_step((self.outer - r) / (self.outer - self.inner)).0
    }

    pub fn jet(&self, r: Jet2) -> Jet2 {
        let w = self.outer - self.inner;
        let (s, s1, s2) = smooth_step((self.outer - r.v) / w);
        r.compose(s, -s1 / w, s2 / (w * w))
    }
}

/// Smooth bump supported in `[a, d]`, equal to 1 on `[b, c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annulus {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Annulus {
    pub fn eval(&self, r: f64) -> f64 {
        smooth_step((r - self.a) / (self.b - self.a)).0 * smooth_step((self.d - r) / (self.d - self.c)).0
    }

    pub fn jet(&self, r: Jet2) -> Jet2 {
        let w1 = self.b - self.a;
        let w2 = self.d - self.c;
        let (s, s1, s2) = smooth_step((r.v - self.a) / w1);
        let up = r.compose(s, s1 / w1, s2 / (w1 * w1));
        let (s, s1, s2) = smooth_step((self.d - r.v) / w2);
        let down = r.compose(s, -s1 / w2, s2 / (w2 * w2));
        up * down
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl SmoothFunction for Constant {
    fn value(&self, _p: &SurfacePoint) -> f64 {
        self.0
    }

    fn face_jet(&self, _face: &ConeFace, _y: [f64; 2]) -> Option<Jet2> {
        Some(Jet2::constant(self.0))
    }
}

/// `exp(<x, v>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential(pub Vec3);

impl SmoothFunction for Exponential {
    fn value(&self, p: &SurfacePoint) -> f64 {
        p.x.dot(&self.0).exp()
    }

    fn face_jet(&self, face: &ConeFace, y: [f64; 2]) -> Option<Jet2> {
        Some(dot(&ambient_jets(face, y), &self.0).exp())
    }
}

/// Wraps a plain closure; derivatives come from finite differences.
pub struct FnHandle<F>(pub F);

impl<F: Fn(&SurfacePoint) -> f64 + Sync> SmoothFunction for FnHandle<F> {
    fn value(&self, p: &SurfacePoint) -> f64 {
        (self.0)(p)
    }
}

/// `r^beta chi(r)` around one vertex, `r` the distance to the vertex, on the
/// patches incident to it.
#[derive(Debug, Clone)]
pub struct VertexModel {
    pub vertex: usize,
    pub origin: Vec3,
    pub beta: f64,
    pub cutoff: Cutoff,
    incident: Vec<bool>,
}

impl VertexModel {
    pub fn new(surface: &PolyhedralSurface, vertex: usize, beta: f64, cutoff: Cutoff) -> Self {
        let incident = surface.patches.iter().map(|p| p.corners.contains(&vertex)).collect();
        Self { vertex, origin: surface.vertices[vertex], beta, cutoff, incident }
    }

    /// Default cutoff between 0.1 and 0.6 times the shortest edge.
    pub fn standard(surface: &PolyhedralSurface, vertex: usize, beta: f64) -> Self {
        let e = surface.shortest_edge();
        Self::new(surface, vertex, beta, Cutoff { inner: 0.1 * e, outer: 0.6 * e })
    }
}

impl SmoothFunction for VertexModel {
    fn value(&self, p: &SurfacePoint) -> f64 {
        if !self.incident[p.patch] {
            return 0.0;
        }
        let r = (p.x - self.origin).norm();
        if r >= self.cutoff.outer {
            return 0.0;
        }
        r.powf(self.beta) * self.cutoff.eval(r)
    }

    fn face_jet(&self, face: &ConeFace, y: [f64; 2]) -> Option<Jet2> {
        if !self.incident[face.patch] {
            return Some(Jet2::constant(0.0));
        }
        let x = ambient_jets(face, y);
        let d = [0, 1, 2].map(|k| x[k] - Jet2::constant(self.origin[k]));
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if r2.v.sqrt() >= self.cutoff.outer {
            return Some(Jet2::constant(0.0));
        }
        let r = r2.sqrt();
        Some(r2.powf(0.5 * self.beta) * self.cutoff.jet(r))
    }
}

/// `q(phi)^beta chi(r)` on the cone faces of one vertex, with `chi` an annular
/// bump away from the vertex, so that only the edge singularity is present.
#[derive(Debug, Clone)]
pub struct EdgeModel {
    pub vertex: usize,
    pub beta: f64,
    pub annulus: Annulus,
    /// Cone face of the vertex per patch, if incident.
    faces: Vec<Option<ConeFace>>,
}

impl EdgeModel {
    pub fn new(surface: &PolyhedralSurface, vertex: usize, beta: f64, annulus: Annulus) -> Self {
        let mut faces = vec![None; surface.num_patches()];
        for f in &surface.cones[vertex] {
            faces[f.patch] = Some(f.clone());
        }
        Self { vertex, beta, annulus, faces }
    }

    /// Annulus `[0.03, 0.12]` times the shortest edge, flat on `[0.05, 0.10]`.
    pub fn standard(surface: &PolyhedralSurface, vertex: usize, beta: f64) -> Self {
        let e = surface.shortest_edge();
        Self::new(surface, vertex, beta, Annulus { a: 0.03 * e, b: 0.05 * e, c: 0.10 * e, d: 0.12 * e })
    }

    fn on_own_face(&self, f: &ConeFace, y0: Jet2, y1: Jet2) -> Jet2 {
        let r = (y0 * y0 + y1 * y1).sqrt();
        if r.v <= self.annulus.a || r.v >= self.annulus.d {
            return Jet2::constant(0.0);
        }
        let phi = Jet2::atan2(y1, y0);
        let q = if phi.v <= 0.5 * f.angle { phi } else { Jet2::constant(f.angle) - phi };
        if q.v <= 0.0 {
            return Jet2::constant(0.0);
        }
        q.powf(self.beta) * self.annulus.jet(r)
    }
}

impl SmoothFunction for EdgeModel {
    fn value(&self, p: &SurfacePoint) -> f64 {
        let Some(f) = &self.faces[p.patch] else {
            return 0.0;
        };
        let y = f.to_planar(&p.x);
        self.on_own_face(f, Jet2::constant(y[0]), Jet2::constant(y[1])).v
    }

    fn face_jet(&self, face: &ConeFace, y: [f64; 2]) -> Option<Jet2> {
        let Some(f) = &self.faces[face.patch] else {
            return Some(Jet2::constant(0.0));
        };
        let x = ambient_jets(face, y);
        let d = [0, 1, 2].map(|k| x[k] - Jet2::constant(f.origin[k]));
        let y0 = dot(&d, &f.e1);
        let y1 = dot(&d, &f.e2);
        Some(self.on_own_face(f, y0, y1))
    }
}

/// `d^beta chi(d)` with `d` the distance to the line through `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDistance {
    pub a: Vec3,
    pub b: Vec3,
    pub beta: f64,
    pub cutoff: Cutoff,
}

impl EdgeDistance {
    pub fn distance(&self, x: &Vec3) -> f64 {
        let t = (self.b - self.a).normalize();
        let d = x - self.a;
        (d - t * d.dot(&t)).norm()
    }
}

impl SmoothFunction for EdgeDistance {
    fn value(&self, p: &SurfacePoint) -> f64 {
        let d = self.distance(&p.x);
        if d >= self.cutoff.outer {
            return 0.0;
        }
        d.powf(self.beta) * self.cutoff.eval(d)
    }

    fn face_jet(&self, face: &ConeFace, y: [f64; 2]) -> Option<Jet2> {
        let x = ambient_jets(face, y);
        let t = (self.b - self.a).normalize();
        let d = [0, 1, 2].map(|k| x[k] - Jet2::constant(self.a[k]));
        let along = dot(&d, &t);
        let perp = [0, 1, 2].map(|k| d[k] - along.scale(t[k]));
        let d2 = perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2];
        if d2.v.sqrt() >= self.cutoff.outer {
            return Some(Jet2::constant(0.0));
        }
        Some(d2.powf(0.5 * self.beta) * self.cutoff.jet(d2.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_jet(f: &dyn SmoothFunction, s: &PolyhedralSurface, face: &ConeFace, y: [f64; 2]) {
        let jet = f.face_jet(face, y).unwrap();
        let at = |a: f64, b: f64| {
            let x = face.from_planar([a, b]);
            let p = SurfacePoint { patch: face.patch, uv: [0.0; 2], x };
            f.value(&p)
        };
        assert!((jet.v - at(y[0], y[1])).abs() < 1e-13);
        let h = 1e-6;
        let fx = (at(y[0] + h, y[1]) - at(y[0] - h, y[1])) / (2.0 * h);
        let fy = (at(y[0], y[1] + h) - at(y[0], y[1] - h)) / (2.0 * h);
        let scale = 1.0 + jet.d[0].abs() + jet.d[1].abs();
        assert!((jet.d[0] - fx).abs() < 1e-6 * scale, "{} {}", jet.d[0], fx);
        assert!((jet.d[1] - fy).abs() < 1e-6 * scale, "{} {}", jet.d[1], fy);
        let _ = s;
    }

    #[test]
    fn model_jets_match_differences() {
        let s = PolyhedralSurface::unit_cube();
        let vm = VertexModel::standard(&s, 0, 0.6);
        let em = EdgeModel::standard(&s, 0, 0.6);
        let ex = Exponential(Vec3::new(0.4, -0.3, 1.1));
        let ed = EdgeDistance { a: Vec3::zeros(), b: Vec3::new(1.0, 0.0, 0.0), beta: 0.3, cutoff: Cutoff { inner: 0.2, outer: 0.5 } };
        for face in s.cones[0].iter().chain(&s.cones[1]) {
            for y in [[0.07, 0.02], [0.3, 0.2], [0.04, 0.05]] {
                check_jet(&vm, &s, face, y);
                check_jet(&em, &s, face, y);
                check_jet(&ex, &s, face, y);
                check_jet(&ed, &s, face, y);
            }
        }
    }

    #[test]
    fn edge_model_vanishes_on_rays_and_outside_annulus() {
        let s = PolyhedralSurface::unit_cube();
        let em = EdgeModel::standard(&s, 0, 0.6);
        let f = &s.cones[0][0];
        assert_eq!(em.face_jet(f, [0.08, 0.0]).unwrap().v, 0.0);
        assert_eq!(em.face_jet(f, [0.01, 0.01]).unwrap().v, 0.0);
        let mid = em.face_jet(f, [0.075 / 2f64.sqrt(), 0.075 / 2f64.sqrt()]).unwrap().v;
        assert!((mid - (std::f64::consts::PI / 4.0).powf(0.6)).abs() < 1e-12);
    }
}
