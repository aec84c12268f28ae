//! Random flips plus a composed rotation/shear/zoom warp for training images.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub shear_max_deg: f64,
    pub zoom_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_max_deg: 25.0,
            hflip: true,
            vflip: true,
            shear_max_deg: 10.0,
            zoom_range: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation_max_deg: 0.0,
            hflip: false,
            vflip: false,
            shear_max_deg: 0.0,
            zoom_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "zoom range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        if !(self.rotation_max_deg >= 0.0 && self.shear_max_deg >= 0.0) {
            return Err(Error::invalid("rotation and shear magnitudes must be >= 0"));
        }
        if self.shear_max_deg >= 90.0 {
            return Err(Error::invalid("shear magnitude must be below 90 degrees"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentConfig::disabled()
    }
}

/// 2×2 linear map acting on pixel offsets from the image centre (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    /// Rotates image content counter-clockwise as displayed.
    pub fn rotation(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Affine {
            m: [[c, s], [-s, c]],
        }
    }

    /// Horizontal shear: `x' = x + tan(angle)·y`.
    pub fn shear(deg: f64) -> Self {
        Affine {
            m: [[1.0, deg.to_radians().tan()], [0.0, 1.0]],
        }
    }

    /// Magnifies content by `factor` about the centre.
    pub fn zoom(factor: f64) -> Self {
        Affine {
            m: [[factor, 0.0], [0.0, factor]],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Affine) -> Affine {
        let (a, b) = (&self.m, &other.m);
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Affine { m }
    }

    pub fn inverse(&self) -> Option<Affine> {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        if det.abs() < 1e-12 {
            return None;
        }
        Some(Affine {
            m: [[d / det, -b / det], [-c / det, a / det]],
        })
    }
}

fn check_image(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected an [h, w, c] image".into(),
        }),
    }
}

pub fn hflip(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_image(img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor::from_vec([h, w, c], out)
}

pub fn vflip(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_image(img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in (0..h).rev() {
        out.extend_from_slice(&src[y * w * c..(y + 1) * w * c]);
    }
    Tensor::from_vec([h, w, c], out)
}

/// Resamples `img` so that content moves by `transform` about the image centre.
/// Coordinates falling outside the source replicate the nearest edge pixel; output
/// values are clamped to `[0, 1]`.
pub fn warp_affine(img: &Tensor, transform: &Affine) -> Result<Tensor> {
    let (h, w, c) = check_image(img)?;
    let inv = transform
        .inverse()
        .ok_or_else(|| Error::invalid("affine transform is singular"))?;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (inv.m[0][0] * dx + inv.m[0][1] * dy + cx).clamp(0.0, max_x);
            let sy = (inv.m[1][0] * dx + inv.m[1][1] * dy + cy).clamp(0.0, max_y);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::from_vec([h, w, c], out)
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Applies, in order: horizontal flip (p = 0.5), vertical flip (p = 0.5), then one
/// resampling pass for rotation, shear and zoom drawn uniformly from the configured
/// ranges.
pub fn augment<R: Rng + ?Sized>(img: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    check_image(img)?;
    cfg.validate()?;
    let mut out = img.clone();
    if cfg.hflip && rng.random_bool(0.5) {
        out = hflip(&out)?;
    }
    if cfg.vflip && rng.random_bool(0.5) {
        out = vflip(&out)?;
    }
    let rotation = symmetric(rng, cfg.rotation_max_deg);
    let shear = symmetric(rng, cfg.shear_max_deg);
    let (lo, hi) = cfg.zoom_range;
    let zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let transform = Affine::zoom(zoom)
        .then_after(&Affine::shear(shear))
        .then_after(&Affine::rotation(rotation));
    if transform == Affine::IDENTITY {
        return Ok(out);
    }
    warp_affine(&out, &transform)
}
