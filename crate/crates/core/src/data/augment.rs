use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random flip, integer translation and zoom applied per image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub horizontal_flip: bool,
    /// Shifts are drawn uniformly from `-max..=max` on each axis; 0 disables.
    pub max_translate_px: usize,
    /// Zoom factor drawn uniformly from `[lo, hi]`; `None` disables.
    pub zoom_range: Option<(f64, f64)>,
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            horizontal_flip: false,
            max_translate_px: 0,
            zoom_range: None,
        }
    }

    /// Flip, up to 4 px translation and zoom in `[0.9, 1.1]`.
    pub fn basic() -> Self {
        AugmentSpec {
            horizontal_flip: true,
            max_translate_px: 4,
            zoom_range: Some((0.9, 1.1)),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.horizontal_flip && self.max_translate_px == 0 && self.zoom_range.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.zoom_range {
            if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "zoom range must satisfy 0 < lo <= 1 <= hi; got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self::none()
    }
}

/// Mirrors one `[H, W, C]` image left to right.
pub fn flip_horizontal(image: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * c;
            let dst = (y * w + (w - 1 - x)) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    out
}

/// Shifts one `[H, W, C]` image by `(dy, dx)` pixels, filling with zeros.
pub fn translate(image: &[f32], h: usize, w: usize, c: usize, dy: isize, dx: isize) -> Vec<f32> {
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        let sy = y as isize - dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = x as isize - dx;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let src = (sy as usize * w + sx as usize) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    out
}

/// Scales one `[H, W, C]` image about its centre by `factor` with bilinear
/// sampling, keeping the size (crop when enlarging, zero pad when shrinking).
pub fn zoom(image: &[f32], h: usize, w: usize, c: usize, factor: f64) -> Vec<f32> {
    let mut out = vec![0.0; image.len()];
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let at = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            image[(y as usize * w + x as usize) * c + ch] as f64
        }
    };
    for y in 0..h {
        let sy = (y as f64 - cy) / factor + cy;
        let y0 = sy.floor();
        let fy = sy - y0;
        for x in 0..w {
            let sx = (x as f64 - cx) / factor + cx;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0, ch) + fx * at(y0, x0 + 1, ch))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0, ch) + fx * at(y0 + 1, x0 + 1, ch));
                out[(y * w + x) * c + ch] = v as f32;
            }
        }
    }
    out
}

/// Applies `spec` independently to every image of a `[N, H, W, C]` batch.
pub fn augment(images: &Tensor<f32>, spec: &AugmentSpec, rng: &mut Rng) -> Result<Tensor<f32>> {
    spec.validate()?;
    images.expect_ndim(4, "augment")?;
    if spec.is_identity() {
        return Ok(images.clone());
    }
    let (n, h, w, c) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let len = h * w * c;
    let mut data = Vec::with_capacity(images.len());
    for i in 0..n {
        let mut img = images.data()[i * len..(i + 1) * len].to_vec();
        if spec.horizontal_flip && rng.random_bool(0.5) {
            img = flip_horizontal(&img, h, w, c);
        }
        if spec.max_translate_px > 0 {
            let m = spec.max_translate_px as i64;
            let dy = rng.random_range(-m..=m) as isize;
            let dx = rng.random_range(-m..=m) as isize;
            img = translate(&img, h, w, c, dy, dx);
        }
        if let Some((lo, hi)) = spec.zoom_range {
            let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            img = zoom(&img, h, w, c, factor);
        }
        data.extend_from_slice(&img);
    }
    Tensor::new(images.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rng: &mut Rng) -> Tensor<f32> {
        Tensor::uniform(vec![3, 6, 5, 2], 0.0, 1.0, rng).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let mut rng = Rng::new(1);
        let x = batch(&mut rng);
        assert_eq!(augment(&x, &AugmentSpec::none(), &mut rng).unwrap(), x);
    }

    #[test]
    fn flip_is_involution() {
        let mut rng = Rng::new(2);
        let x = batch(&mut rng);
        let img = &x.data()[..60];
        assert_eq!(flip_horizontal(&flip_horizontal(img, 6, 5, 2), 6, 5, 2), img);
        assert_ne!(flip_horizontal(img, 6, 5, 2), img);
    }

    #[test]
    fn translation_keeps_interior_pixels() {
        // 8x8 image with content only in the central 4x4; shifts up to 2 px
        // keep every content pixel inside the frame.
        let mut img = vec![0.0f32; 64];
        for y in 2..6 {
            for x in 2..6 {
                img[y * 8 + x] = (y * 8 + x) as f32;
            }
        }
        let mut expected: Vec<f32> = img.iter().copied().filter(|&v| v != 0.0).collect();
        expected.sort_by(f32::total_cmp);
        for (dy, dx) in [(2, -2), (-1, 0), (0, 2), (-2, -2)] {
            let out = translate(&img, 8, 8, 1, dy, dx);
            let mut got: Vec<f32> = out.iter().copied().filter(|&v| v != 0.0).collect();
            got.sort_by(f32::total_cmp);
            assert_eq!(got, expected);
            assert_eq!(out[(2 + dy) as usize * 8 + (2 + dx) as usize], img[2 * 8 + 2]);
        }
    }

    #[test]
    fn zoom_of_one_is_identity() {
        let mut rng = Rng::new(3);
        let x = batch(&mut rng);
        let img = &x.data()[..60];
        let out = zoom(img, 6, 5, 2, 1.0);
        for (a, b) in out.iter().zip(img) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zoom_keeps_constant_interior() {
        let img = vec![0.5f32; 100];
        let out = zoom(&img, 10, 10, 1, 1.1);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn seeded_augmentation_is_reproducible() {
        let x = batch(&mut Rng::new(4));
        let spec = AugmentSpec::basic();
        let a = augment(&x, &spec, &mut Rng::new(7)).unwrap();
        let b = augment(&x, &spec, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_zoom_range() {
        let spec = AugmentSpec {
            zoom_range: Some((1.2, 1.5)),
            ..AugmentSpec::none()
        };
        assert!(spec.validate().is_err());
    }
}
