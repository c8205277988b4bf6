//! Resize-and-clamp preprocessing and the effective-pixel compute model.
//!
//! Vision front-ends downscale any image exceeding a `max_w x max_h` bound
//! before encoding it, so every input at or above the bound reaches the
//! model at the same effective size. Compute and throughput therefore follow
//! effective pixels, not nominal ones: flat above the clamp, falling below it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::fit_linear;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "resolution {width}x{height} must be at least 1x1"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    /// Componentwise `<=`.
    pub fn fits_within(&self, other: &Resolution) -> bool {
        self.width <= other.width && self.height <= other.height
    }
}

/// Upper width x height bound of the preprocessing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClampSpec {
    pub max_w: u32,
    pub max_h: u32,
}

impl ClampSpec {
    pub fn new(max_w: u32, max_h: u32) -> Result<Self> {
        Resolution::new(max_w, max_h)?;
        Ok(Self { max_w, max_h })
    }

    pub fn bound(&self) -> Resolution {
        Resolution {
            width: self.max_w,
            height: self.max_h,
        }
    }

    /// Whether `r` touches or exceeds the bound in some dimension.
    pub fn saturates(&self, r: Resolution) -> bool {
        r.width >= self.max_w || r.height >= self.max_h
    }

    /// Componentwise `<=` against another clamp.
    pub fn within(&self, other: &ClampSpec) -> bool {
        self.max_w <= other.max_w && self.max_h <= other.max_h
    }
}

/// The default vision clamp of the llama.cpp VLM front-end.
pub const DEFAULT_CLAMP: ClampSpec = ClampSpec {
    max_w: 1024,
    max_h: 720,
};

/// Aspect-preserving downscale into `clamp`, floor-rounded; identity when `r` already fits.
///
/// The scale factor is `min(1, max_w / width, max_h / height)`. The
/// comparison and rounding are done in integer arithmetic so the binding
/// dimension lands exactly on the bound.
pub fn apply_clamp(r: Resolution, clamp: ClampSpec) -> Resolution {
    if r.fits_within(&clamp.bound()) {
        return r;
    }
    let (w, h) = (u64::from(r.width), u64::from(r.height));
    let (mw, mh) = (u64::from(clamp.max_w), u64::from(clamp.max_h));
    if mw * h <= mh * w {
        Resolution {
            width: clamp.max_w,
            height: ((h * mw) / w).max(1) as u32,
        }
    } else {
        Resolution {
            width: ((w * mh) / h).max(1) as u32,
            height: clamp.max_h,
        }
    }
}

pub fn effective_pixels(u: Resolution) -> u64 {
    u.pixels()
}

/// `intercept + slope * pixels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCurve {
    pub intercept: f64,
    pub slope: f64,
}

impl AffineCurve {
    pub fn at(&self, pixels: f64) -> f64 {
        self.intercept + self.slope * pixels
    }
}

/// Piecewise compute/throughput model over effective pixels.
///
/// Compute is affine and nondecreasing in effective pixels; since every
/// input above the clamp shares one effective size, the prediction is flat
/// there (`c_flat`) and falls linearly below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampComputeModel {
    compute: Option<AffineCurve>,
    c_flat: Option<f64>,
    throughput: Option<AffineCurve>,
}

impl ClampComputeModel {
    pub fn unfitted() -> Self {
        Self::default()
    }

    /// Model with known coefficients `C(u) = k0 + k1 * pixels(u)`.
    pub fn from_coefficients(k0: f64, k1: f64, c_flat: Option<f64>) -> Result<Self> {
        if !(k0.is_finite() && k1.is_finite()) || k1 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "compute slope must be finite and nonnegative, got {k1}"
            )));
        }
        Ok(Self {
            compute: Some(AffineCurve {
                intercept: k0,
                slope: k1,
            }),
            c_flat,
            throughput: None,
        })
    }

    /// Fit from `(nominal resolution, AUC)` observations taken under `clamp`.
    ///
    /// Regresses AUC on effective pixels over all points; a negative slope is
    /// replaced by a flat fit so the model stays nondecreasing. `c_flat` is
    /// the mean AUC of the saturated points, when any were observed.
    pub fn fit(points: &[(Resolution, f64)], clamp: ClampSpec) -> Result<Self> {
        let xy: Vec<(f64, f64)> = points
            .iter()
            .map(|(r, y)| (effective_pixels(apply_clamp(*r, clamp)) as f64, *y))
            .collect();
        let lin = fit_linear(&xy)?;
        let compute = if lin.a >= 0.0 {
            AffineCurve {
                intercept: lin.b,
                slope: lin.a,
            }
        } else {
            let mean = xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64;
            AffineCurve {
                intercept: mean,
                slope: 0.0,
            }
        };
        let flat: Vec<f64> = points
            .iter()
            .filter(|(r, _)| clamp.saturates(*r))
            .map(|(_, y)| *y)
            .collect();
        let c_flat = (!flat.is_empty()).then(|| flat.iter().sum::<f64>() / flat.len() as f64);
        Ok(Self {
            compute: Some(compute),
            c_flat,
            throughput: None,
        })
    }

    /// Add a throughput curve fitted from `(nominal resolution, tokens/s)`.
    pub fn with_throughput(
        mut self,
        points: &[(Resolution, f64)],
        clamp: ClampSpec,
    ) -> Result<Self> {
        let xy: Vec<(f64, f64)> = points
            .iter()
            .map(|(r, y)| (effective_pixels(apply_clamp(*r, clamp)) as f64, *y))
            .collect();
        let lin = fit_linear(&xy)?;
        self.throughput = Some(AffineCurve {
            intercept: lin.b,
            slope: lin.a,
        });
        Ok(self)
    }

    pub fn compute_curve(&self) -> Option<AffineCurve> {
        self.compute
    }

    pub fn throughput_curve(&self) -> Option<AffineCurve> {
        self.throughput
    }

    /// Observed mean AUC above the clamp.
    pub fn c_flat(&self) -> Option<f64> {
        self.c_flat
    }

    /// Compute as a function of effective pixels.
    pub fn compute_at(&self, pixels: u64) -> Result<f64> {
        Ok(self.compute.ok_or(Error::NotFitted)?.at(pixels as f64))
    }
}

/// Predicted AUC for nominal resolution `r` under `clamp`.
pub fn predict_compute(r: Resolution, clamp: ClampSpec, model: &ClampComputeModel) -> Result<f64> {
    model.compute_at(effective_pixels(apply_clamp(r, clamp)))
}

/// Predicted tokens/s for nominal resolution `r` under `clamp`.
pub fn predict_throughput(
    r: Resolution,
    clamp: ClampSpec,
    model: &ClampComputeModel,
) -> Result<f64> {
    let curve = model.throughput.ok_or(Error::NotFitted)?;
    Ok(curve.at(effective_pixels(apply_clamp(r, clamp)) as f64))
}

fn parse_pair(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidInput(format!("expected WIDTHxHEIGHT, got {s:?}"));
    let (w, h) = s.trim().split_once(['x', 'X', '×']).ok_or_else(bad)?;
    Ok((
        w.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    ))
}

impl FromStr for Resolution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = parse_pair(s)?;
        Resolution::new(w, h)
    }
}

impl FromStr for ClampSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = parse_pair(s)?;
        ClampSpec::new(w, h)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl fmt::Display for ClampSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.max_w, self.max_h)
    }
}

impl TryFrom<String> for Resolution {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Resolution> for String {
    fn from(r: Resolution) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for ClampSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClampSpec> for String {
    fn from(c: ClampSpec) -> String {
        c.to_string()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn res(w: u32, h: u32) -> Resolution {
        Resolution::new(w, h).unwrap()
    }

    fn clamp(w: u32, h: u32) -> ClampSpec {
        ClampSpec::new(w, h).unwrap()
    }

    #[test]
    fn below_clamp_is_identity() {
        assert_eq!(apply_clamp(res(640, 480), clamp(1024, 720)), res(640, 480));
    }

    #[test]
    fn width_limited_downscale() {
        assert_eq!(
            apply_clamp(res(1920, 1080), clamp(1024, 720)),
            res(1024, 576)
        );
    }

    #[test]
    fn height_limited_downscale() {
        // s = 496 / 720, width floor(1024 * 496 / 720) = 705
        assert_eq!(apply_clamp(res(1024, 720), clamp(714, 496)), res(705, 496));
    }

    #[test]
    fn clamp_pixel_counts() {
        assert_eq!(effective_pixels(res(1024, 720)), 737_280);
        assert_eq!(effective_pixels(res(854, 594)), 507_276);
        assert_eq!(effective_pixels(res(1, 1)), 1);
    }

    #[test]
    fn extreme_aspect_keeps_one_pixel() {
        assert_eq!(apply_clamp(res(100_000, 1), clamp(10, 10)), res(10, 1));
    }

    #[test]
    fn componentwise_order_does_not_imply_pixel_order() {
        // A wide image is squeezed harder than a narrower, equally tall one.
        let c = clamp(1000, 1000);
        let narrow = effective_pixels(apply_clamp(res(1000, 100), c));
        let wide = effective_pixels(apply_clamp(res(2000, 100), c));
        assert!(narrow > wide);
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("1024x720".parse::<ClampSpec>().unwrap(), DEFAULT_CLAMP);
        assert_eq!("854×594".parse::<Resolution>().unwrap(), res(854, 594));
        assert!("0x5".parse::<Resolution>().is_err());
        assert!("1024".parse::<ClampSpec>().is_err());
        assert_eq!(DEFAULT_CLAMP.to_string(), "1024x720");
        let json = serde_json::to_string(&res(3, 4)).unwrap();
        assert_eq!(json, "\"3x4\"");
    }

    #[test]
    fn unfitted_model_is_state_error() {
        let m = ClampComputeModel::unfitted();
        assert!(matches!(
            predict_compute(res(10, 10), DEFAULT_CLAMP, &m),
            Err(Error::NotFitted)
        ));
    }

    #[test]
    fn linear_form_below_clamp() {
        let m = ClampComputeModel::from_coefficients(100.0, 1e-3, None).unwrap();
        let p = predict_compute(res(100, 100), DEFAULT_CLAMP, &m).unwrap();
        assert!((p - 110.0).abs() < 1e-9);
    }

    #[test]
    fn saturated_inputs_predict_equal() {
        let m = ClampComputeModel::from_coefficients(100.0, 1e-3, None).unwrap();
        let at = predict_compute(res(1024, 720), DEFAULT_CLAMP, &m).unwrap();
        let far = predict_compute(res(4096, 2880), DEFAULT_CLAMP, &m).unwrap();
        let other = predict_compute(res(2048, 1440), DEFAULT_CLAMP, &m).unwrap();
        assert_eq!(at, far);
        assert_eq!(at, other);
    }

    #[test]
    fn fit_recovers_flat_level_and_slope() {
        let c = DEFAULT_CLAMP;
        let points: Vec<(Resolution, f64)> = (1..=20)
            .map(|k| {
                let r = res(128 * k, 90 * k);
                let px = effective_pixels(apply_clamp(r, c)) as f64;
                (r, 50.0 + 2e-3 * px)
            })
            .collect();
        let m = ClampComputeModel::fit(&points, c).unwrap();
        let curve = m.compute_curve().unwrap();
        assert!((curve.slope - 2e-3).abs() < 1e-12);
        assert!((curve.intercept - 50.0).abs() < 1e-6);
        let expected_flat = 50.0 + 2e-3 * 737_280.0;
        assert!((m.c_flat().unwrap() - expected_flat).abs() < 1e-6);
        assert!((m.compute_at(737_280).unwrap() - expected_flat).abs() < 1e-6);
    }

    #[test]
    fn throughput_curve_fit() {
        let c = DEFAULT_CLAMP;
        let points: Vec<(Resolution, f64)> = (1..=10)
            .map(|k| (res(100 * k, 70 * k), 20.0 - 1e-5 * (7000 * k * k) as f64))
            .collect();
        let m = ClampComputeModel::from_coefficients(0.0, 1.0, None)
            .unwrap()
            .with_throughput(&points, c)
            .unwrap();
        let t = predict_throughput(res(300, 210), c, &m).unwrap();
        assert!((t - (20.0 - 1e-5 * 63_000.0)).abs() < 1e-9);
    }

    fn arb_res() -> impl Strategy<Value = Resolution> {
        (1u32..5000, 1u32..5000).prop_map(|(w, h)| Resolution {
            width: w,
            height: h,
        })
    }

    fn arb_clamp() -> impl Strategy<Value = ClampSpec> {
        (1u32..3000, 1u32..3000).prop_map(|(w, h)| ClampSpec { max_w: w, max_h: h })
    }

    proptest! {
        #[test]
        fn idempotent(r in arb_res(), c in arb_clamp()) {
            let u = apply_clamp(r, c);
            prop_assert_eq!(apply_clamp(u, c), u);
            prop_assert!(u.fits_within(&c.bound()));
        }

        #[test]
        fn knee_shift_with_smaller_clamp(r in arb_res(), a in arb_clamp(), b in arb_clamp()) {
            let small = ClampSpec { max_w: a.max_w.min(b.max_w), max_h: a.max_h.min(b.max_h) };
            let big = ClampSpec { max_w: a.max_w.max(b.max_w), max_h: a.max_h.max(b.max_h) };
            let m = ClampComputeModel::from_coefficients(10.0, 1e-3, None).unwrap();
            let ps = predict_compute(r, small, &m).unwrap();
            let pb = predict_compute(r, big, &m).unwrap();
            prop_assert!(ps <= pb);
            if r.fits_within(&small.bound()) {
                prop_assert_eq!(ps, pb);
            }
        }

        #[test]
        fn flat_along_a_ray_above_clamp(aw in 1u32..40, ah in 1u32..40, j in 1u32..200, k in 1u32..200, c in arb_clamp()) {
            let (lo, hi) = (j.min(k), j.max(k));
            let r_lo = Resolution { width: aw * lo, height: ah * lo };
            let r_hi = Resolution { width: aw * hi, height: ah * hi };
            if c.saturates(r_lo) {
                prop_assert_eq!(apply_clamp(r_lo, c), apply_clamp(r_hi, c));
            }
        }
    }
}
