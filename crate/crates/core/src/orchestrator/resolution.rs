use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::clamp::{ClampSpec, Resolution};
use crate::error::{Error, Result};

/// A source image downsampled to a ladder of resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSweep {
    pub source_image: PathBuf,
    pub source: Resolution,
    /// Strictly decreasing in pixel count.
    pub steps: Vec<Resolution>,
    /// One materialised frame per step.
    pub frames: Vec<PathBuf>,
    pub prompt_template: String,
    pub clamp: ClampSpec,
    pub spacing: String,
}

impl ResolutionSweep {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn prompt_id(i: usize, r: Resolution) -> String {
        format!("R{:02}_{r}", i + 1)
    }
}

/// `n` widths linearly spaced from the source width down to `min_width`,
/// heights following the source aspect ratio.
pub fn sweep_resolutions(source: Resolution, n: usize, min_width: u32) -> Result<Vec<Resolution>> {
    if n == 0 {
        return Err(Error::InvalidInput("sweep needs at least one step".into()));
    }
    if min_width == 0 || min_width > source.width {
        return Err(Error::InvalidInput(format!(
            "min width {min_width} must be in [1, {}]",
            source.width
        )));
    }
    if n == 1 {
        return Ok(vec![source]);
    }
    let (w0, h0) = (f64::from(source.width), f64::from(source.height));
    let step = (w0 - f64::from(min_width)) / (n - 1) as f64;
    let steps: Vec<Resolution> = (0..n)
        .map(|i| {
            let w = (w0 - step * i as f64).round().max(1.0);
            let h = (w * h0 / w0).round().max(1.0);
            Resolution {
                width: w as u32,
                height: h as u32,
            }
        })
        .collect();
    if let Some(pair) = steps.windows(2).find(|p| p[1].pixels() >= p[0].pixels()) {
        return Err(Error::InvalidInput(format!(
            "sweep steps must strictly decrease in pixel count ({} then {})",
            pair[0], pair[1]
        )));
    }
    Ok(steps)
}

/// Plan the sweep and write every frame as PNG under `out_dir/frames`.
pub fn build_resolution_sweep(
    image_path: &Path,
    n: usize,
    min_width: u32,
    out_dir: &Path,
    prompt_template: &str,
    clamp: ClampSpec,
) -> Result<ResolutionSweep> {
    let img = image::open(image_path).map_err(|e| {
        Error::InvalidInput(format!("cannot read image {}: {e}", image_path.display()))
    })?;
    let source = Resolution::new(img.width(), img.height())?;
    let steps = sweep_resolutions(source, n, min_width)?;
    let frame_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frame_dir)?;
    let mut frames = Vec::with_capacity(steps.len());
    for (i, r) in steps.iter().enumerate() {
        let path = frame_dir.join(format!("step_{:02}_{r}.png", i + 1));
        let frame = if *r == source {
            img.clone()
        } else {
            img.resize_exact(r.width, r.height, FilterType::Triangle)
        };
        frame.save(&path)?;
        frames.push(path);
    }
    Ok(ResolutionSweep {
        source_image: image_path.to_path_buf(),
        source,
        steps,
        frames,
        prompt_template: prompt_template.to_string(),
        clamp,
        spacing: "linear-width".into(),
    })
}

/// Pixel size of an image file, without decoding it.
pub fn source_resolution(path: &Path) -> Result<Resolution> {
    let (w, h) = image::image_dimensions(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read image {}: {e}", path.display())))?;
    Resolution::new(w, h)
}

/// Write a deterministic, detail-rich stand-in source image.
pub fn write_synthetic_source(path: &Path, size: Resolution) -> Result<()> {
    let img = image::RgbImage::from_fn(size.width, size.height, |x, y| {
        let checker = ((x / 32 + y / 32) % 2) as u8 * 60;
        image::Rgb([
            (x * 255 / size.width.max(1)) as u8 ^ checker,
            (y * 255 / size.height.max(1)) as u8,
            ((x ^ y) & 0xff) as u8,
        ])
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}
