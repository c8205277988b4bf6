//! Exhaustive single-changepoint search for the flat-then-drop compute curve.

use serde::{Deserialize, Serialize};

use super::linear::{fit_linear, LinearFit};
use crate::clamp::{effective_pixels, ClampSpec};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KneeConfidence {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeFit {
    /// Smallest pixel count of the flat segment.
    pub knee_pixels: f64,
    /// Index of the knee on the sorted, de-duplicated pixel grid.
    pub knee_grid_index: usize,
    /// Mean AUC of the flat segment.
    pub c_flat: f64,
    /// Affine fit of the segment below the knee.
    pub below_fit: LinearFit,
    pub sse: f64,
    pub flat_points: usize,
    /// Coefficient of variation of the flat segment (sample std / mean).
    pub flat_cv: Option<f64>,
    pub confidence: KneeConfidence,
    pub low_confidence_reason: Option<String>,
    pub hint_pixels: Option<u64>,
    /// Distance between the knee and the hint, in grid steps.
    pub hint_discrepancy_steps: Option<f64>,
}

fn sse_constant(ys: &[f64]) -> f64 {
    let m = stats::mean(ys).unwrap_or_default();
    ys.iter().map(|y| (y - m).powi(2)).sum()
}

/// Fractional index of `x` on an ascending grid, clamped to the grid ends.
pub fn grid_position(grid: &[f64], x: f64) -> f64 {
    match grid {
        [] => 0.0,
        [_] => 0.0,
        _ if x <= grid[0] => 0.0,
        _ if x >= grid[grid.len() - 1] => (grid.len() - 1) as f64,
        _ => {
            let i = grid.partition_point(|&g| g <= x) - 1;
            i as f64 + (x - grid[i]) / (grid[i + 1] - grid[i])
        }
    }
}

/// Locate the knee in `(pixels, AUC)` data.
///
/// Every split between distinct pixel values is scored by the SSE of an
/// affine fit below plus a constant fit at and above; the minimum wins, ties
/// going to the longer flat segment. Data without a usable flat segment or
/// without a drop below it yields a low-confidence fit rather than an error.
pub fn detect_knee(points: &[(f64, f64)], hint: Option<ClampSpec>) -> Result<KneeFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData {
            what: "knee detection",
            needed: 4,
            got: points.len(),
        });
    }
    if points
        .iter()
        .any(|(x, y)| !(x.is_finite() && y.is_finite()))
    {
        return Err(Error::InvalidInput(
            "non-finite point in knee detection".into(),
        ));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let scale = ys.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut best: Option<(usize, f64, LinearFit)> = None;
    for k in 2..pts.len() {
        if pts[k].0 == pts[k - 1].0 {
            continue;
        }
        let Ok(below) = fit_linear(&pts[..k]) else {
            continue;
        };
        let sse = below.sse() + sse_constant(&ys[k..]);
        let better = match &best {
            None => true,
            Some((_, b, _)) => sse < b - 1e-12 * scale,
        };
        if better {
            best = Some((k, sse, below));
        }
    }
    let (k, sse, below_fit) = best.ok_or_else(|| {
        Error::Degenerate("no split leaves two distinct pixel values below the knee".into())
    })?;

    let flat = &ys[k..];
    let c_flat = stats::mean(flat).unwrap_or_default();
    let knee_pixels = pts[k].0;
    let mut grid: Vec<f64> = pts.iter().map(|p| p.0).collect();
    grid.dedup();
    let knee_grid_index = grid.partition_point(|&g| g < knee_pixels);

    let x_min = pts[0].0;
    let drop = c_flat - below_fit.predict(x_min);
    let reason = if flat.len() < 2 {
        Some("no flat segment; knee placed at the largest input".to_string())
    } else if below_fit.a <= 0.0 || drop < 0.05 * c_flat.abs() {
        Some("no drop below the flat segment".to_string())
    } else if below_fit.predict(knee_pixels) > 1.10 * c_flat {
        Some("below-knee trend overshoots the flat level by more than 10%".to_string())
    } else {
        None
    };

    let hint_pixels = hint.map(|c| effective_pixels(c.bound()));
    let hint_discrepancy_steps =
        hint_pixels.map(|h| (knee_grid_index as f64 - grid_position(&grid, h as f64)).abs());

    Ok(KneeFit {
        knee_pixels,
        knee_grid_index,
        c_flat,
        below_fit,
        sse,
        flat_points: flat.len(),
        flat_cv: stats::coefficient_of_variation(flat),
        confidence: if reason.is_some() {
            KneeConfidence::Low
        } else {
            KneeConfidence::High
        },
        low_confidence_reason: reason,
        hint_pixels,
        hint_discrepancy_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 20-point grid with AUC flat at 1000 from `knee` upward and linear below.
    fn synthetic(knee: f64) -> Vec<(f64, f64)> {
        (0..20)
            .map(|i| {
                let x = 60_000.0 + i as f64 * 80_000.0;
                let y = if x >= knee {
                    1000.0
                } else {
                    1000.0 - 1e-3 * (knee - x)
                };
                (x, y)
            })
            .collect()
    }

    #[test]
    fn knee_at_default_clamp() {
        let fit = detect_knee(&synthetic(737_280.0), Some(crate::clamp::DEFAULT_CLAMP)).unwrap();
        assert_eq!(fit.confidence, KneeConfidence::High);
        assert!((fit.knee_pixels - 737_280.0).abs() <= 80_000.0);
        assert!(fit.hint_discrepancy_steps.unwrap() <= 1.0);
        assert!(fit.flat_cv.unwrap() < 1e-12);
        assert!((fit.c_flat - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn knee_moves_with_clamp() {
        let hint = ClampSpec::new(854, 594).unwrap();
        let fit = detect_knee(&synthetic(507_276.0), Some(hint)).unwrap();
        assert!((fit.knee_pixels - 507_276.0).abs() <= 80_000.0);
        assert!(fit.hint_discrepancy_steps.unwrap() <= 1.0);
    }

    #[test]
    fn monotone_data_is_low_confidence_at_max() {
        let pts: Vec<_> = (0..10)
            .map(|i| (i as f64 * 100.0, 5.0 + i as f64))
            .collect();
        let fit = detect_knee(&pts, None).unwrap();
        assert_eq!(fit.knee_pixels, 900.0);
        assert_eq!(fit.confidence, KneeConfidence::Low);
        assert_eq!(fit.flat_points, 1);
    }

    #[test]
    fn all_flat_is_low_confidence() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64 * 100.0, 42.0)).collect();
        let fit = detect_knee(&pts, None).unwrap();
        assert_eq!(fit.confidence, KneeConfidence::Low);
    }

    #[test]
    fn too_few_points() {
        let pts = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert!(matches!(
            detect_knee(&pts, None),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn grid_position_interpolates() {
        let g = [0.0, 10.0, 30.0];
        assert_eq!(grid_position(&g, 5.0), 0.5);
        assert_eq!(grid_position(&g, 20.0), 1.5);
        assert_eq!(grid_position(&g, 99.0), 2.0);
        assert_eq!(grid_position(&g, -1.0), 0.0);
    }
}
