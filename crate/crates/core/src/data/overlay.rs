//! True/false positive overlays, one panel per foreground class.

use std::path::Path;

use super::pnm::{save_ppm, RgbImage};
use crate::error::{Error, Result};

pub const TP_RGB: [u8; 3] = [255, 255, 0];
pub const FP_RGB: [u8; 3] = [255, 0, 0];
pub const FN_RGB: [u8; 3] = [0, 255, 0];

/// Per-class TP/FP/FN pixel counts read back from an overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlayCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Render panels for classes `1..num_classes`, tiled left to right. True
/// negatives show the source image in grey (black without one).
pub fn render_overlay(
    pred: &[u8],
    truth: &[u8],
    image: Option<&[f32]>,
    width: usize,
    height: usize,
    num_classes: usize,
) -> Result<RgbImage> {
    let n = width * height;
    if pred.len() != n || truth.len() != n || image.is_some_and(|i| i.len() != n) {
        return Err(Error::dim(format!(
            "overlay of {width}x{height} needs {n} pixels per input (pred {}, truth {})",
            pred.len(),
            truth.len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::config("overlay needs at least one foreground class"));
    }
    let panels = num_classes - 1;
    let mut out = RgbImage::new(width * panels, height);
    for c in 1..num_classes as u8 {
        let x0 = (c as usize - 1) * width;
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let rgb = match (pred[i] == c, truth[i] == c) {
                    (true, true) => TP_RGB,
                    (true, false) => FP_RGB,
                    (false, true) => FN_RGB,
                    (false, false) => {
                        let g =
                            image.map_or(0, |img| (img[i].clamp(0.0, 1.0) * 255.0).round() as u8);
                        [g, g, g]
                    }
                };
                out.set(x0 + x, y, rgb);
            }
        }
    }
    Ok(out)
}

/// Count overlay colours per panel (index 0 is class 1).
pub fn overlay_counts(img: &RgbImage, panels: usize) -> Result<Vec<OverlayCounts>> {
    if panels == 0 || img.width % panels != 0 {
        return Err(Error::dim(format!(
            "{} px wide overlay is not {panels} panels",
            img.width
        )));
    }
    let pw = img.width / panels;
    let mut out = vec![OverlayCounts::default(); panels];
    for y in 0..img.height {
        for x in 0..img.width {
            let c = &mut out[x / pw];
            match img.pixels[y * img.width + x] {
                TP_RGB => c.tp += 1,
                FP_RGB => c.fp += 1,
                FN_RGB => c.fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(out)
}

pub fn write_overlay(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    save_ppm(img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_masks_have_no_errors() {
        let m = [0u8, 1, 2, 3, 1, 1];
        let img = render_overlay(&m, &m, None, 3, 2, 4).unwrap();
        assert_eq!((img.width, img.height), (9, 2));
        assert_eq!(img.count(FP_RGB) + img.count(FN_RGB), 0);
        assert_eq!(img.count(TP_RGB), 5);
    }

    #[test]
    fn missed_foreground_is_green() {
        let truth = [0u8, 1, 1, 0];
        let pred = [0u8; 4];
        let img = render_overlay(&pred, &truth, Some(&[0.5; 4]), 2, 2, 2).unwrap();
        assert_eq!(img.pixels, vec![[128; 3], FN_RGB, FN_RGB, [128; 3]]);
    }

    #[test]
    fn extent_mismatch() {
        assert!(matches!(
            render_overlay(&[0; 3], &[0; 4], None, 2, 2, 4),
            Err(Error::Dimension(_))
        ));
    }
}
