//! Second-order forward-mode automatic differentiation.
//!
//! A [`Jet`] carries a value together with its gradient and (packed, lower
//! triangular) Hessian with respect to a fixed set of active variables. An
//! empty gradient denotes a constant, so plain `f64` arithmetic runs through
//! the same code paths without allocating.

use nalgebra::{DMatrix, DVector};
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Debug, Default)]
pub struct Jet {
    pub v: f64,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    if i >= j {
        i * (i + 1) / 2 + j
    } else {
        j * (j + 1) / 2 + i
    }
}

impl Jet {
    pub fn cst(v: f64) -> Self {
        Self { v, g: Vec::new(), h: Vec::new() }
    }

    /// The `idx`-th of `n` active variables, evaluated at `v`.
    pub fn var(v: f64, idx: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[idx] = 1.0;
        Self { v, g, h: vec![0.0; n * (n + 1) / 2] }
    }

    /// Linear combination `c + Σ w_i x_i` of active variables.
    pub fn linear(c: f64, terms: &[(usize, f64)], values: &[f64], n: usize) -> Self {
        let mut v = c;
        let mut g = vec![0.0; n];
        for &(i, w) in terms {
            v += w * values[i];
            g[i] += w;
        }
        Self { v, g, h: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn nvar(&self) -> usize {
        self.g.len()
    }

    pub fn is_const(&self) -> bool {
        self.g.is_empty()
    }

    pub fn gradient(&self, n: usize) -> DVector<f64> {
        if self.is_const() {
            DVector::zeros(n)
        } else {
            DVector::from_column_slice(&self.g)
        }
    }

    pub fn hessian(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        if !self.is_const() {
            for i in 0..n {
                for j in 0..=i {
                    let x = self.h[packed(i, j)];
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
        }
        m
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    fn chain(&self, f: f64, d1: f64, d2: f64) -> Jet {
        if self.is_const() {
            return Jet::cst(f);
        }
        let n = self.nvar();
        let g: Vec<f64> = self.g.iter().map(|x| d1 * x).collect();
        let mut h: Vec<f64> = self.h.iter().map(|x| d1 * x).collect();
        if d2 != 0.0 {
            let mut k = 0;
            for i in 0..n {
                let gi = d2 * self.g[i];
                for j in 0..=i {
                    h[k] += gi * self.g[j];
                    k += 1;
                }
            }
        }
        Jet { v: f, g, h }
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        let x = self.v;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    pub fn recip(&self) -> Jet {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn sqr(&self) -> Jet {
        let x = self.v;
        self.chain(x * x, 2.0 * x, 2.0)
    }

    pub fn scale(&self, c: f64) -> Jet {
        self.chain(c * self.v, c, 0.0)
    }

    pub fn offset(&self, c: f64) -> Jet {
        let mut out = self.clone();
        out.v += c;
        out
    }

    fn combine(a: &Jet, b: &Jet, ca: f64, cb: f64) -> Jet {
        let v = ca * a.v + cb * b.v;
        match (a.is_const(), b.is_const()) {
            (true, true) => Jet::cst(v),
            (false, true) => {
                let mut out = a.chain(v, ca, 0.0);
                out.v = v;
                out
            }
            (true, false) => {
                let mut out = b.chain(v, cb, 0.0);
                out.v = v;
                out
            }
            (false, false) => Jet {
                v,
                g: a.g.iter().zip(&b.g).map(|(x, y)| ca * x + cb * y).collect(),
                h: a.h.iter().zip(&b.h).map(|(x, y)| ca * x + cb * y).collect(),
            },
        }
    }

    fn product(a: &Jet, b: &Jet) -> Jet {
        match (a.is_const(), b.is_const()) {
            (true, true) => Jet::cst(a.v * b.v),
            (false, true) => a.scale(b.v),
            (true, false) => b.scale(a.v),
            (false, false) => {
                let n = a.nvar();
                let g = (0..n).map(|i| a.v * b.g[i] + b.v * a.g[i]).collect();
                let mut h = Vec::with_capacity(a.h.len());
                for i in 0..n {
                    for j in 0..=i {
                        let k = packed(i, j);
                        h.push(
                            a.v * b.h[k] + b.v * a.h[k] + a.g[i] * b.g[j] + a.g[j] * b.g[i],
                        );
                    }
                }
                Jet { v: a.v * b.v, g, h }
            }
        }
    }
}

macro_rules! jet_binops {
    ($($l:ty, $r:ty);*) => {$(
        impl Add<$r> for $l {
            type Output = Jet;
            fn add(self, o: $r) -> Jet { Jet::combine(&self, &o, 1.0, 1.0) }
        }
        impl Sub<$r> for $l {
            type Output = Jet;
            fn sub(self, o: $r) -> Jet { Jet::combine(&self, &o, 1.0, -1.0) }
        }
        impl Mul<$r> for $l {
            type Output = Jet;
            fn mul(self, o: $r) -> Jet { Jet::product(&self, &o) }
        }
        impl Div<$r> for $l {
            type Output = Jet;
            fn div(self, o: $r) -> Jet { Jet::product(&self, &o.recip()) }
        }
    )*};
}

jet_binops!(Jet, Jet; &Jet, &Jet; Jet, &Jet; &Jet, Jet);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, c: f64) -> Jet {
        self.offset(c)
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, c: f64) -> Jet {
        self.offset(c)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}
