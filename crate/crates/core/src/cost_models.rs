//! Convex cost curves for generation and energy transfer.
//!
//! Every model is positive, increasing, convex and twice differentiable on
//! `x >= 0`, and exposes its exact first derivative (the marginal cost) plus
//! the inverse of that derivative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost argument must be a finite non-negative energy, got {0}")]
    NegativeArgument(f64),
    #[error("marginal price must be finite, got {0}")]
    NonFinitePrice(f64),
    #[error("invalid cost parameters: {0}")]
    InvalidParameters(String),
}

/// Scalar cost evaluation shared by generation and transfer curves.
pub trait CostFunction {
    fn value(&self, x: f64) -> Result<f64, CostError>;

    fn marginal(&self, x: f64) -> Result<f64, CostError>;

    /// Returns `x >= 0` with `marginal(x) == y`. Prices at or below
    /// `marginal(0)` map to zero.
    fn inverse_marginal(&self, y: f64) -> Result<f64, CostError>;
}

fn check_arg(x: f64) -> Result<(), CostError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(CostError::NegativeArgument(x))
    }
}

/// Quadratic generator curve `a + b x + c x^2` multiplied by the soft cap
/// `1 + (cap_scale * x / e_max)^cap_exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftCappedQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e_max: f64,
    #[serde(default = "default_cap_scale")]
    pub cap_scale: f64,
    #[serde(default = "default_cap_exponent")]
    pub cap_exponent: u32,
}

fn default_cap_scale() -> f64 {
    0.9
}

fn default_cap_exponent() -> u32 {
    30
}

impl SoftCappedQuadratic {
    /// The U12 generator: a = 86.3852 $, b = 56.5640 $/MWh, c = 0.3284 $/MWh²,
    /// soft-capped at 10 MWh.
    pub const U12: SoftCappedQuadratic = SoftCappedQuadratic {
        a: 86.3852,
        b: 56.5640,
        c: 0.3284,
        e_max: 10.0,
        cap_scale: 0.9,
        cap_exponent: 30,
    };

    pub fn validate(&self) -> Result<(), CostError> {
        let fin = [self.a, self.b, self.c, self.e_max, self.cap_scale]
            .iter()
            .all(|v| v.is_finite());
        if !fin {
            return Err(CostError::InvalidParameters("coefficients must be finite".into()));
        }
        if self.a < 0.0 || self.b <= 0.0 || self.c < 0.0 || self.e_max <= 0.0 {
            return Err(CostError::InvalidParameters(format!(
                "need a >= 0, b > 0, c >= 0, e_max > 0 (got a={}, b={}, c={}, e_max={})",
                self.a, self.b, self.c, self.e_max
            )));
        }
        if self.cap_scale < 0.0 {
            return Err(CostError::InvalidParameters("cap_scale must be >= 0".into()));
        }
        let capped = self.cap_scale > 0.0 && self.cap_exponent >= 1;
        if self.c == 0.0 && !capped {
            return Err(CostError::InvalidParameters(
                "marginal cost must be strictly increasing: need c > 0 or an active soft cap".into(),
            ));
        }
        Ok(())
    }

    fn quad(&self, x: f64) -> f64 {
        self.a + self.b * x + self.c * x * x
    }

    fn quad_prime(&self, x: f64) -> f64 {
        self.b + 2.0 * self.c * x
    }

    // (t, dt/dx) for t = (k x)^n, k = cap_scale / e_max
    fn cap(&self, x: f64) -> (f64, f64) {
        let n = self.cap_exponent as i32;
        if n == 0 {
            return (1.0, 0.0);
        }
        let k = self.cap_scale / self.e_max;
        let base = k * x;
        let t = base.powi(n);
        let dt = n as f64 * k * base.powi(n - 1);
        (t, dt)
    }
}

impl CostFunction for SoftCappedQuadratic {
    fn value(&self, x: f64) -> Result<f64, CostError> {
        check_arg(x)?;
        let (t, _) = self.cap(x);
        Ok(self.quad(x) * (1.0 + t))
    }

    fn marginal(&self, x: f64) -> Result<f64, CostError> {
        check_arg(x)?;
        let (t, dt) = self.cap(x);
        Ok(self.quad_prime(x) * (1.0 + t) + self.quad(x) * dt)
    }

    fn inverse_marginal(&self, y: f64) -> Result<f64, CostError> {
        invert_by_bisection(|x| self.marginal(x), y)
    }
}

/// Transfer curve `lin * x + cub * x^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubicTransfer {
    pub lin: f64,
    pub cub: f64,
}

impl CubicTransfer {
    /// `x + x^3`.
    pub const UNIT: CubicTransfer = CubicTransfer { lin: 1.0, cub: 1.0 };

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.lin.is_finite() && self.cub.is_finite()) || self.lin < 0.0 || self.cub <= 0.0 {
            return Err(CostError::InvalidParameters(format!(
                "transfer cost needs lin >= 0 and cub > 0 (got lin={}, cub={})",
                self.lin, self.cub
            )));
        }
        Ok(())
    }
}

impl CostFunction for CubicTransfer {
    fn value(&self, x: f64) -> Result<f64, CostError> {
        check_arg(x)?;
        Ok(self.lin * x + self.cub * x * x * x)
    }

    fn marginal(&self, x: f64) -> Result<f64, CostError> {
        check_arg(x)?;
        Ok(self.lin + 3.0 * self.cub * x * x)
    }

    fn inverse_marginal(&self, y: f64) -> Result<f64, CostError> {
        if !y.is_finite() {
            return Err(CostError::NonFinitePrice(y));
        }
        if y <= self.lin {
            return Ok(0.0);
        }
        Ok(((y - self.lin) / (3.0 * self.cub)).sqrt())
    }
}

const MAX_BISECTIONS: usize = 120;

/// Bracketed bisection for a strictly increasing marginal. The upper end is
/// doubled until it brackets `y`.
fn invert_by_bisection<F>(marginal: F, y: f64) -> Result<f64, CostError>
where
    F: Fn(f64) -> Result<f64, CostError>,
{
    if !y.is_finite() {
        return Err(CostError::NonFinitePrice(y));
    }
    if y <= marginal(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while marginal(hi)? < y {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(CostError::NonFinitePrice(y));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-12 {
            break;
        }
        if marginal(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (mlo, mhi) = (marginal(lo)?, marginal(hi)?);
    Ok(if (y - mlo).abs() <= (mhi - y).abs() { lo } else { hi })
}

/// A configurable cost model. Generation curves and transfer curves share
/// this type so scenarios can swap either.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    SoftCappedQuadratic(SoftCappedQuadratic),
    Cubic(CubicTransfer),
}

impl CostModel {
    pub fn u12() -> Self {
        CostModel::SoftCappedQuadratic(SoftCappedQuadratic::U12)
    }

    pub fn unit_cubic() -> Self {
        CostModel::Cubic(CubicTransfer::UNIT)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        match self {
            CostModel::SoftCappedQuadratic(m) => m.validate(),
            CostModel::Cubic(m) => m.validate(),
        }
    }
}

impl CostFunction for CostModel {
    fn value(&self, x: f64) -> Result<f64, CostError> {
        match self {
            CostModel::SoftCappedQuadratic(m) => m.value(x),
            CostModel::Cubic(m) => m.value(x),
        }
    }

    fn marginal(&self, x: f64) -> Result<f64, CostError> {
        match self {
            CostModel::SoftCappedQuadratic(m) => m.marginal(x),
            CostModel::Cubic(m) => m.marginal(x),
        }
    }

    fn inverse_marginal(&self, y: f64) -> Result<f64, CostError> {
        match self {
            CostModel::SoftCappedQuadratic(m) => m.inverse_marginal(y),
            CostModel::Cubic(m) => m.inverse_marginal(y),
        }
    }
}
