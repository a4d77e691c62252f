//! Savitzky–Golay smoothing: least-squares polynomial fits over a sliding window.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Precomputed filter weights for every evaluation offset within one window.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    poly_order: usize,
    /// `weights[k]` evaluates the window's fit at offset `k − half` from its center.
    weights: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, poly_order: usize) -> Result<Self> {
        if window < 3 || window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "savgol window must be odd and >= 3, got {window}"
            )));
        }
        if poly_order >= window {
            return Err(Error::InvalidParameter(format!(
                "savgol poly_order {poly_order} must be < window {window}"
            )));
        }
        let half = window / 2;
        let cols = poly_order + 1;
        // abscissae scaled to [-1, 1] keep the Vandermonde matrix well conditioned
        let scale = half as f64;
        let vander = DMatrix::from_fn(window, cols, |i, k| {
            ((i as f64 - half as f64) / scale).powi(k as i32)
        });
        let qr = vander.qr();
        let r = qr.r();
        let qt = qr.q().transpose();
        // fit = R⁻¹ Qᵀ y
        let projector = r
            .solve_upper_triangular(&qt)
            .ok_or_else(|| Error::InvalidParameter("singular savgol design".into()))?;

        let weights = (0..window)
            .map(|k| {
                let t = (k as f64 - half as f64) / scale;
                let basis = DVector::from_fn(cols, |j, _| t.powi(j as i32));
                (projector.transpose() * basis).iter().copied().collect()
            })
            .collect();
        Ok(Self {
            window,
            poly_order,
            weights,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }

    pub fn apply(&self, series: &[f64]) -> Result<Vec<f64>> {
        let n = series.len();
        if self.window > n {
            return Err(Error::InvalidParameter(format!(
                "savgol window {} exceeds series length {n}",
                self.window
            )));
        }
        let half = self.window / 2;
        let out = (0..n)
            .map(|j| {
                // samples near the edges reuse the nearest full window
                let center = j.clamp(half, n - 1 - half);
                let offset = j + half - center;
                let start = center - half;
                self.weights[offset]
                    .iter()
                    .zip(&series[start..start + self.window])
                    .map(|(w, y)| w * y)
                    .sum()
            })
            .collect();
        Ok(out)
    }
}

pub fn savgol_smooth(series: &[f64], window: usize, poly_order: usize) -> Result<Vec<f64>> {
    SavitzkyGolay::new(window, poly_order)?.apply(series)
}
