//! Second-order jets in two variables: value, gradient and Hessian carried
//! through arithmetic so facewise derivatives of products and quotients stay
//! analytic.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub d: [f64; 2],
    pub h: [[f64; 2]; 2],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self { v, ..Default::default() }
    }

    /// The coordinate function `y_axis`.
    pub fn variable(value: f64, axis: usize) -> Self {
        let mut j = Self::constant(value);
        j.d[axis] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    pub fn compose(self, f: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f);
        for a in 0..2 {
            out.d[a] = f1 * self.d[a];
            for b in 0..2 {
                out.h[a][b] = f2 * self.d[a] * self.d[b] + f1 * self.h[a][b];
            }
        }
        out
    }

    /// Applies `f(a, b)` given its value, gradient `[f_a, f_b]` and Hessian.
    pub fn compose2(a: Self, b: Self, f: f64, g: [f64; 2], h: [[f64; 2]; 2]) -> Self {
        let mut out = Self::constant(f);
        for i in 0..2 {
            out.d[i] = g[0] * a.d[i] + g[1] * b.d[i];
            for j in 0..2 {
                out.h[i][j] = h[0][0] * a.d[i] * a.d[j]
                    + h[0][1] * (a.d[i] * b.d[j] + b.d[i] * a.d[j])
                    + h[1][1] * b.d[i] * b.d[j]
                    + g[0] * a.h[i][j]
                    + g[1] * b.h[i][j];
            }
        }
        out
    }

    /// Polar angle `atan2(y, x)`.
    pub fn atan2(y: Self, x: Self) -> Self {
        let r2 = x.v * x.v + y.v * y.v;
        let r4 = r2 * r2;
        // derivatives with respect to (y, x)
        let g = [x.v / r2, -y.v / r2];
        let hyy = -2.0 * x.v * y.v / r4;
        let hxy = (y.v * y.v - x.v * x.v) / r4;
        Self::compose2(y, x, y.v.atan2(x.v), g, [[hyy, hxy], [hxy, -hyy]])
    }

    pub fn powf(self, e: f64) -> Self {
        let x = self.v;
        self.compose(x.powf(e), e * x.powf(e - 1.0), e * (e - 1.0) * x.powf(e - 2.0))
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn scale(self, k: f64) -> Self {
        let mut out = self;
        out.v *= k;
        for a in 0..2 {
            out.d[a] *= k;
            for b in 0..2 {
                out.h[a][b] *= k;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.d.iter().all(|x| x.is_finite())
            && self.h.iter().flatten().all(|x| x.is_finite())
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        let mut r = self;
        r.v += o.v;
        for a in 0..2 {
            r.d[a] += o.d[a];
            for b in 0..2 {
                r.h[a][b] += o.h[a][b];
            }
        }
        r
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        let mut r = Jet2::constant(self.v * o.v);
        for a in 0..2 {
            r.d[a] = self.d[a] * o.v + self.v * o.d[a];
            for b in 0..2 {
                r.h[a][b] = self.h[a][b] * o.v
                    + self.d[a] * o.d[b]
                    + self.d[b] * o.d[a]
                    + self.v * o.h[a][b];
            }
        }
        r
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, o: Jet2) -> Jet2 {
        let inv = o.compose(1.0 / o.v, -1.0 / (o.v * o.v), 2.0 / (o.v * o.v * o.v));
        self * inv
    }
}
