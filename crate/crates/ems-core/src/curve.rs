//! Piecewise-linear curves and bilinear grid tables.
//!
//! These back every tabulated characteristic in the powertrain model: the
//! open-circuit-voltage curve, the engine and generator torque envelopes and
//! the fuel map.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x values must be strictly increasing (violated at index {0})")]
    NotIncreasing(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("query {query} outside domain [{lo}, {hi}]")]
    OutOfDomain { query: f64, lo: f64, hi: f64 },
    #[error("grid needs {expected} values ({nx} x {ny}), got {got}")]
    BadGridShape { expected: usize, got: usize, nx: usize, ny: usize },
}

/// Piecewise-linear function of one variable, defined on [x_min, x_max].
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Curve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, CurveError> {
        if points.len() < 2 {
            return Err(CurveError::TooFewPoints {
                needed: 2,
                got: points.len(),
            });
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(CurveError::NonFinite(i));
            }
            if i > 0 && x <= points[i - 1].0 {
                return Err(CurveError::NotIncreasing(i));
            }
        }
        Ok(Self {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
        })
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Interpolate at `x`; errors outside the domain.
    pub fn eval(&self, x: f64) -> Result<f64, CurveError> {
        if !x.is_finite() || x < self.x_min() || x > self.x_max() {
            return Err(CurveError::OutOfDomain {
                query: x,
                lo: self.x_min(),
                hi: self.x_max(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Interpolate at `x`, saturating at the endpoints.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.eval_unchecked(x.clamp(self.x_min(), self.x_max()))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        // partition_point: first index with xs[i] > x, so seg is in [1, len-1]
        let seg = self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1);
        let (x0, x1) = (self.xs[seg - 1], self.xs[seg]);
        let (y0, y1) = (self.ys[seg - 1], self.ys[seg]);
        let t = (x - x0) / (x1 - x0);
        y0 + t * (y1 - y0)
    }

    /// True if y never decreases as x increases.
    pub fn is_non_decreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }
}

/// Rectangular table with bilinear interpolation, `values` row-major over
/// (x index, y index).
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl BilinearGrid {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self, CurveError> {
        if xs.len() < 2 {
            return Err(CurveError::TooFewPoints { needed: 2, got: xs.len() });
        }
        if ys.len() < 2 {
            return Err(CurveError::TooFewPoints { needed: 2, got: ys.len() });
        }
        for (i, w) in xs.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CurveError::NotIncreasing(i + 1));
            }
        }
        for (i, w) in ys.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CurveError::NotIncreasing(i + 1));
            }
        }
        if values.len() != xs.len() * ys.len() {
            return Err(CurveError::BadGridShape {
                expected: xs.len() * ys.len(),
                got: values.len(),
                nx: xs.len(),
                ny: ys.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CurveError::NonFinite(i));
        }
        Ok(Self { xs, ys, values })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn node(&self, xi: usize, yi: usize) -> f64 {
        self.values[xi * self.ys.len() + yi]
    }

    /// Bilinear interpolation; errors when (x, y) falls outside the grid.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, CurveError> {
        if !x.is_finite() || x < self.xs[0] || x > *self.xs.last().unwrap() {
            return Err(CurveError::OutOfDomain {
                query: x,
                lo: self.xs[0],
                hi: *self.xs.last().unwrap(),
            });
        }
        if !y.is_finite() || y < self.ys[0] || y > *self.ys.last().unwrap() {
            return Err(CurveError::OutOfDomain {
                query: y,
                lo: self.ys[0],
                hi: *self.ys.last().unwrap(),
            });
        }
        let xi = self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1);
        let yi = self.ys.partition_point(|&v| v <= y).clamp(1, self.ys.len() - 1);
        let (x0, x1) = (self.xs[xi - 1], self.xs[xi]);
        let (y0, y1) = (self.ys[yi - 1], self.ys[yi]);
        let tx = (x - x0) / (x1 - x0);
        let ty = (y - y0) / (y1 - y0);
        let v00 = self.node(xi - 1, yi - 1);
        let v01 = self.node(xi - 1, yi);
        let v10 = self.node(xi, yi - 1);
        let v11 = self.node(xi, yi);
        Ok(v00 * (1.0 - tx) * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v10 * tx * (1.0 - ty)
            + v11 * tx * ty)
    }
}
