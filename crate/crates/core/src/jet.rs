//! Second-order forward-mode jets in up to two variables. Charts are written
//! once as scalar expressions over `Jet` and yield exact first and second
//! partial derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        Jet { v, g: [0.0; 2], h: [[0.0; 2]; 2] }
    }

    /// Independent variable number `i` with value `v`.
    pub fn var(v: f64, i: usize) -> Jet {
        let mut j = Jet::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.v`.
    #[inline]
    pub fn chain(self, f: f64, df: f64, ddf: f64) -> Jet {
        let mut out = Jet::constant(f);
        for a in 0..2 {
            out.g[a] = df * self.g[a];
            for b in 0..2 {
                out.h[a][b] = ddf * self.g[a] * self.g[b] + df * self.h[a][b];
            }
        }
        out
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(self) -> Jet {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn powi(self, n: i32) -> Jet {
        match n {
            0 => Jet::constant(1.0),
            1 => self,
            _ => {
                let x = self.v;
                let nf = n as f64;
                self.chain(x.powi(n), nf * x.powi(n - 1), nf * (nf - 1.0) * x.powi(n - 2))
            }
        }
    }

    pub fn square(self) -> Jet {
        self * self
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(self, o: Jet) -> Jet {
        let mut r = self;
        r.v += o.v;
        for a in 0..2 {
            r.g[a] += o.g[a];
            for b in 0..2 {
                r.h[a][b] += o.h[a][b];
            }
        }
        r
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, o: Jet) -> Jet {
        let mut r = Jet::constant(self.v * o.v);
        for a in 0..2 {
            r.g[a] = self.g[a] * o.v + self.v * o.g[a];
            for b in 0..2 {
                r.h[a][b] = self.h[a][b] * o.v
                    + self.g[a] * o.g[b]
                    + self.g[b] * o.g[a]
                    + self.v * o.h[a][b];
            }
        }
        r
    }
}

impl Div for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, o: Jet) -> Jet {
        let inv = o.chain(1.0 / o.v, -1.0 / (o.v * o.v), 2.0 / (o.v * o.v * o.v));
        self * inv
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn add(self, c: f64) -> Jet {
        let mut r = self;
        r.v += c;
        r
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn sub(self, c: f64) -> Jet {
        self + (-c)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, c: f64) -> Jet {
        let mut r = self;
        r.v *= c;
        for a in 0..2 {
            r.g[a] *= c;
            for b in 0..2 {
                r.h[a][b] *= c;
            }
        }
        r
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, c: f64) -> Jet {
        self * (1.0 / c)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, j: Jet) -> Jet {
        -j + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j * self
    }
}

/// C² quintic smoothstep on [0, 1], clamped outside.
pub fn smoothstep(t: Jet) -> Jet {
    if t.v <= 0.0 {
        Jet::constant(0.0)
    } else if t.v >= 1.0 {
        Jet::constant(1.0)
    } else {
        let x = t.v;
        let f = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let df = 30.0 * x * x * (1.0 - x) * (1.0 - x);
        let ddf = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        t.chain(f, df, ddf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd2<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64) -> (f64, f64, f64, f64, f64) {
        let h = 1e-4;
        let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
        let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
        let fxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h))
            / (4.0 * h * h);
        (fx, fy, fxx, fyy, fxy)
    }

    #[test]
    fn composite_expression_matches_finite_differences() {
        let expr = |u: Jet, v: Jet| (u.sin() * v.powi(3) + (u * v + 2.0).sqrt()) / (v.cos() + 3.0);
        let plain = |x: f64, y: f64| {
            (x.sin() * y.powi(3) + (x * y + 2.0).sqrt()) / (y.cos() + 3.0)
        };
        let (x, y) = (0.7, -0.4);
        let j = expr(Jet::var(x, 0), Jet::var(y, 1));
        let (fx, fy, fxx, fyy, fxy) = fd2(plain, x, y);
        assert!((j.v - plain(x, y)).abs() < 1e-14);
        assert!((j.g[0] - fx).abs() < 1e-7);
        assert!((j.g[1] - fy).abs() < 1e-7);
        assert!((j.h[0][0] - fxx).abs() < 1e-5);
        assert!((j.h[1][1] - fyy).abs() < 1e-5);
        assert!((j.h[0][1] - fxy).abs() < 1e-5);
        assert_eq!(j.h[0][1], j.h[1][0]);
    }

    #[test]
    fn smoothstep_is_c2_at_the_ends() {
        for x in [1e-9, 1.0 - 1e-9] {
            let s = smoothstep(Jet::var(x, 0));
            assert!(s.g[0].abs() < 1e-6 && s.h[0][0].abs() < 1e-6);
        }
        let mid = smoothstep(Jet::var(0.5, 0));
        assert!((mid.v - 0.5).abs() < 1e-15);
    }
}
