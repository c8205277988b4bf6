use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    /// Ordinary least squares.
    #[default]
    Ols,
    /// Median of pairwise slopes; robust to outlying runs.
    TheilSen,
}

/// `y = a x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
    pub n: usize,
    pub method: FitMethod,
    pub residuals: Vec<f64>,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    pub fn sse(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    fit_linear_with(points, FitMethod::Ols)
}

pub fn fit_linear_with(points: &[(f64, f64)], method: FitMethod) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            what: "linear fit",
            needed: 2,
            got: points.len(),
        });
    }
    if points
        .iter()
        .any(|(x, y)| !(x.is_finite() && y.is_finite()))
    {
        return Err(Error::InvalidInput("non-finite point in linear fit".into()));
    }
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let (a, b) = match method {
        FitMethod::Ols => {
            let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
            let a = sxy / sxx;
            (a, ym - a * xm)
        }
        FitMethod::TheilSen => {
            let mut slopes = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
            for (i, p) in points.iter().enumerate() {
                for q in &points[i + 1..] {
                    if q.0 != p.0 {
                        slopes.push((q.1 - p.1) / (q.0 - p.0));
                    }
                }
            }
            let a = stats::median(&slopes).unwrap_or_default();
            let offsets: Vec<f64> = points.iter().map(|p| p.1 - a * p.0).collect();
            (a, stats::median(&offsets).unwrap_or_default())
        }
    };
    let residuals: Vec<f64> = points.iter().map(|p| p.1 - (a * p.0 + b)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res <= f64::EPSILON * ym.abs().max(1.0) {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        a,
        b,
        r2,
        n: points.len(),
        method,
        residuals,
    })
}
