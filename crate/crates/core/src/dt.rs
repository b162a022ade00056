//! Differential-transformation coefficient algebra.
//!
//! A smooth function `x(t)` is represented by its Taylor coefficients
//! `X(0..=K)` around the start of a window. Sums and scalar multiples act
//! coefficient-wise, products become discrete convolutions, and a
//! derivative shifts the coefficients down by one order.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtError {
    #[error("order {k} out of range for series of order {order}")]
    OrderOutOfRange { k: usize, order: usize },
    #[error("order-0 convolution has no lower-order split")]
    ZeroOrder,
}

/// Power-series coefficients `X(0), X(1), ..., X(K)` of one scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DtSeries {
    coeffs: Vec<f64>,
}

impl DtSeries {
    /// Wraps a coefficient vector. An empty vector is promoted to the
    /// order-0 zero series.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
        }
    }

    /// Series of the constant function `c`: `c·δ(k)`.
    pub fn constant(c: f64, order: usize) -> Self {
        let mut s = Self::zeros(order);
        s.coeffs[0] = c;
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    pub fn set(&mut self, k: usize, value: f64) {
        self.coeffs[k] = value;
    }

    /// Value of the truncated series at time offset `t`.
    pub fn eval(&self, t: f64) -> f64 {
        eval_series(self, t)
    }

    /// Series of `dx/dt`, one order shorter: `(k+1)·X(k+1)`.
    pub fn derivative(&self) -> DtSeries {
        DtSeries::new(derivative_coeffs(&self.coeffs))
    }

    /// Linear combination `alpha·self + beta·other` over the common orders.
    pub fn axpby(&self, alpha: f64, other: &DtSeries, beta: f64) -> DtSeries {
        let n = self.coeffs.len().min(other.coeffs.len());
        DtSeries::new(
            (0..n)
                .map(|k| alpha * self.coeffs[k] + beta * other.coeffs[k])
                .collect(),
        )
    }
}

/// Formally linear split of an order-k convolution:
/// `X(k)⊗Y(k) = a·X(k) + b·Y(k) + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLinearization {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ConvLinearization {
    /// Evaluates the split at candidate order-k values.
    pub fn apply(&self, xk: f64, yk: f64) -> f64 {
        self.a * xk + self.b * yk + self.c
    }

    /// Self-product form `2a·X(k) + c`, valid when `X = Y`.
    pub fn apply_square(&self, xk: f64) -> f64 {
        2.0 * self.a * xk + self.c
    }
}

/// Order-k coefficient of the product `x(t)·y(t)`.
pub fn conv(x: &DtSeries, y: &DtSeries, k: usize) -> Result<f64, DtError> {
    let order = x.order().min(y.order());
    if k > order {
        return Err(DtError::OrderOutOfRange { k, order });
    }
    Ok(conv_slices(&x.coeffs, &y.coeffs, k))
}

/// Lower-order split of the order-k convolution.
///
/// Only `X(0..k)` and `Y(0..k)` are read, so the order-k entries may still
/// be unknown.
pub fn linearize_conv(x: &DtSeries, y: &DtSeries, k: usize) -> Result<ConvLinearization, DtError> {
    if k == 0 {
        return Err(DtError::ZeroOrder);
    }
    let order = x.order().min(y.order()) + 1;
    if k > order {
        return Err(DtError::OrderOutOfRange { k, order });
    }
    Ok(ConvLinearization {
        a: y.coeffs[0],
        b: x.coeffs[0],
        c: middle_conv(&x.coeffs, &y.coeffs, k),
    })
}

/// Horner evaluation of `X(0) + X(1)t + ... + X(K)t^K`.
pub fn eval_series(x: &DtSeries, t: f64) -> f64 {
    horner(&x.coeffs, t)
}

/// `Σ_{m=0}^{k} x[m]·y[k-m]` on raw coefficient slices.
#[inline]
pub fn conv_slices(x: &[f64], y: &[f64], k: usize) -> f64 {
    (0..=k).map(|m| x[m] * y[k - m]).sum()
}

/// `Σ_{m=1}^{k-1} x[m]·y[k-m]`, i.e. the convolution without the two
/// terms that touch an order-k coefficient. Zero for `k <= 1`.
#[inline]
pub fn middle_conv(x: &[f64], y: &[f64], k: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    (1..k).map(|m| x[m] * y[k - m]).sum()
}

#[inline]
pub fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

pub fn derivative_coeffs(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Kronecker delta.
#[inline]
pub fn delta(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        0.0
    }
}
