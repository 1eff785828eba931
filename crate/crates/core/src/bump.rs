//! The C^K bump: a tensor power of a centered, rescaled cardinal B-spline of
//! order p = K + 2. Nonnegative, supported in [-1,1]^dim, unit mass, with the
//! closed-form transform prod_i sinc(2 xi_i / p)^p and a certified constant
//! C1 with |phi_hat(xi)| <= C1 (1 + |xi|)^-K.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SalemError};

/// Cardinal B-spline of order p on [0, p] (p-fold convolution power of the
/// unit-interval indicator).
fn bspline(p: u32, t: f64) -> f64 {
    if t <= 0.0 || t >= p as f64 {
        return 0.0;
    }
    // (1/(p-1)!) sum_i (-1)^i C(p,i) (t-i)_+^{p-1}
    let mut sum = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=p {
        let u = t - i as f64;
        if u > 0.0 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * u.powi(p as i32 - 1);
        } else {
            break;
        }
        binom = binom * (p - i) as f64 / (i + 1) as f64;
    }
    let mut fact = 1.0f64;
    for k in 2..p {
        fact *= k as f64;
    }
    (sum / fact).max(0.0)
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        let u = std::f64::consts::PI * t;
        1.0 - u * u / 6.0
    } else {
        let u = std::f64::consts::PI * t;
        u.sin() / u
    }
}

#[derive(Debug, Clone)]
pub struct BumpSpec {
    /// Ambient dimension of the bump's domain.
    pub dim: usize,
    /// Smoothness class C^K.
    pub k: u32,
    /// Spline order p = K + 2.
    pub p: u32,
    c1: f64,
}

impl BumpSpec {
    pub fn new(dim: usize, k: u32) -> Result<Self> {
        if dim == 0 || k == 0 {
            return Err(SalemError::Input("bump needs dim >= 1 and K >= 1".into()));
        }
        let p = k + 2;
        let mut spec = BumpSpec { dim, k, p, c1: 0.0 };
        spec.c1 = spec.compute_decay_constant();
        spec.certify_decay_constant()?;
        Ok(spec)
    }

    /// 1-d factor (p/2) B_p(p (x + 1) / 2); supported on [-1, 1], integral 1.
    /// Evaluated through |x| so evenness is exact and the truncated-power sum
    /// stays short.
    pub fn factor(&self, x: f64) -> f64 {
        let p = self.p as f64;
        0.5 * p * bspline(self.p, 0.5 * p * (1.0 - x.abs()))
    }

    /// Transform of the 1-d factor: sinc(2 xi / p)^p. Real by symmetry.
    pub fn factor_hat(&self, xi: f64) -> f64 {
        sinc(2.0 * xi / self.p as f64).powi(self.p as i32)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        x.iter().map(|&c| self.factor(c)).product()
    }

    pub fn hat(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        xi.iter().map(|&c| self.factor_hat(c)).product()
    }

    /// Certified C1 with |phi_hat(xi)| <= C1 (1 + |xi|)^-K (max-norm).
    pub fn decay_constant(&self) -> f64 {
        self.c1
    }

    fn weighted_factor_hat(&self, t: f64) -> f64 {
        (1.0 + t).powi(self.k as i32) * self.factor_hat(t).abs()
    }

    fn compute_decay_constant(&self) -> f64 {
        // The tensor structure reduces the sup to one axis: the other factors
        // are <= 1 and maximized at 0.
        let cut = 10.0 * self.p as f64;
        let steps_per_unit = 1 << 16;
        let total = (cut * steps_per_unit as f64) as u64;
        let mut max = 0.0f64;
        for i in 0..=total {
            let t = i as f64 / steps_per_unit as f64;
            max = max.max(self.weighted_factor_hat(t));
        }
        // tail majorant (1+t)^K (p / 2 pi t)^p is decreasing past the cutoff
        // because p > K
        let p = self.p as f64;
        let tail = (1.0 + cut).powi(self.k as i32)
            * (p / (2.0 * std::f64::consts::PI * cut)).powi(self.p as i32);
        max.max(tail)
    }

    fn certify_decay_constant(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5a1e);
        for _ in 0..100_000 {
            let t: f64 = rng.gen_range(0.0..1.0e6);
            if self.weighted_factor_hat(t) > self.c1 * (1.0 + 1e-9) {
                return Err(SalemError::Domain(format!(
                    "decay constant certification failed at xi = {t}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluates the lattice periodization of the rescaled bump at x q - theta:
    /// sum_{k in Z^m} eps^-m phi(eps^-1 (x q - theta - k)), where x is read as
    /// the m x n matrix acting on q. Exact: only translates whose support can
    /// intersect contribute, so any eps > 0 is accepted.
    pub fn periodized_eval(&self, eps: f64, q: &[i64], theta: &[f64], x: &[f64]) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(SalemError::Domain(format!("eps = {eps} must be positive")));
        }
        let m = theta.len();
        let n = q.len();
        debug_assert_eq!(self.dim, m);
        debug_assert_eq!(x.len(), m * n);
        let mut value = 1.0;
        for i in 0..m {
            let y: f64 = (0..n).map(|j| x[i * n + j] * q[j] as f64).sum::<f64>() - theta[i];
            // translates with |y - k| < eps
            let lo = (y - eps).ceil() as i64;
            let hi = (y + eps).floor() as i64;
            let mut s = 0.0;
            for k in lo..=hi {
                s += self.factor((y - k as f64) / eps) / eps;
            }
            value *= s;
            if value == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(value)
    }
}
