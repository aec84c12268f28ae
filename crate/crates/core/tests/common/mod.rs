//! Reference implementations and fixtures shared by the integration tests. Everything
//! here is written with plain loops, independently of the library kernels.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output extent and leading pad of a convolution, computed from first principles.
pub fn oracle_extent(input: usize, kernel: usize, stride: usize, same: bool) -> Option<(usize, usize)> {
    if same {
        let out = input.div_ceil(stride);
        let needed = (out - 1) * stride + kernel;
        let total = needed.saturating_sub(input);
        Some((out, total / 2))
    } else if kernel <= input {
        Some(((input - kernel) / stride + 1, 0))
    } else {
        None
    }
}

pub struct ConvCase {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub same: bool,
}

impl ConvCase {
    pub fn out(&self) -> Option<(usize, usize, usize, usize)> {
        let (oh, pt) = oracle_extent(self.h, self.kh, self.stride, self.same)?;
        let (ow, pl) = oracle_extent(self.w, self.kw, self.stride, self.same)?;
        Some((oh, ow, pt, pl))
    }
}

/// Direct NHWC convolution with `[kh, kw, c, f]` weights and zero padding.
pub fn naive_conv(case: &ConvCase, x: &[f64], wts: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow, pt, pl) = case.out().expect("valid case");
    let ConvCase { n, h, w, c, f, kh, kw, stride, .. } = *case;
    let mut y = vec![0.0; n * oh * ow * f];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for k in 0..f {
                    let mut acc = bias[k];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                let xv = x[((b * h + iy as usize) * w + ix as usize) * c + ci];
                                acc += xv * wts[((ky * kw + kx) * c + ci) * f + k];
                            }
                        }
                    }
                    y[((b * oh + oy) * ow + ox) * f + k] = acc;
                }
            }
        }
    }
    y
}

/// Loop-based gradients of `Σ dy ⊙ conv(x)`: `(dx, dw, db)`.
pub fn naive_conv_backward(case: &ConvCase, x: &[f64], wts: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow, pt, pl) = case.out().expect("valid case");
    let ConvCase { n, h, w, c, f, kh, kw, stride, .. } = *case;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wts.len()];
    let mut db = vec![0.0; f];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for k in 0..f {
                    let g = dy[((b * oh + oy) * ow + ox) * f + k];
                    db[k] += g;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                let xi = ((b * h + iy as usize) * w + ix as usize) * c + ci;
                                let wi = ((ky * kw + kx) * c + ci) * f + k;
                                dx[xi] += g * wts[wi];
                                dw[wi] += g * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Valid max pooling; returns the outputs and, for each, the flat input index of the
/// first maximum in row-major window order.
pub fn naive_maxpool(
    x: &[f64],
    (n, h, w, c): (usize, usize, usize, usize),
    (ph, pw): (usize, usize),
    stride: usize,
) -> Option<(Vec<f64>, Vec<usize>, usize, usize)> {
    if ph > h || pw > w {
        return None;
    }
    let oh = (h - ph) / stride + 1;
    let ow = (w - pw) / stride + 1;
    let mut y = Vec::new();
    let mut arg = Vec::new();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best: Option<(f64, usize)> = None;
                    for ky in 0..ph {
                        for kx in 0..pw {
                            let i = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if best.is_none_or(|(v, _)| x[i] > v) {
                                best = Some((x[i], i));
                            }
                        }
                    }
                    let (v, i) = best.expect("non-empty window");
                    y.push(v);
                    arg.push(i);
                }
            }
        }
    }
    Some((y, arg, oh, ow))
}

/// Central difference `(f(x + h) − f(x − h)) / 2h` along coordinate `i`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`. The floor keeps gradients that are zero up to
/// finite-difference noise (about 1e-10 at h = 1e-5) from dominating.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Distinct values at least `gap` apart, shuffled.
pub fn distinct(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * gap).collect();
    v.shuffle(rng);
    v
}

/// Values with magnitude in `[min_abs, 1]` and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(min_abs..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn blend(img: &mut RgbImage, x: i64, y: i64, color: [f64; 3], alpha: f64) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for (channel, target) in p.0.iter_mut().zip(color) {
        let v = *channel as f64 * (1.0 - alpha) + target * alpha;
        *channel = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// A stained-tissue-like tile: pink stroma with purple nuclei. Class 0 has many small
/// round nuclei; class 1 has fewer, larger, elongated and darker nuclei. Stain hue and
/// intensity vary per image and overlap between classes.
pub fn tissue_image(class: usize, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let tone = rng.random_range(-18.0..18.0);
    let background = [232.0 + tone * 0.5, 170.0 + tone, 205.0 + tone * 0.3];
    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let wave = ((x as f64 * 0.07).sin() + (y as f64 * 0.05).cos()) * 6.0;
        let mut px = [0u8; 3];
        for k in 0..3 {
            let v = background[k] + wave + rng.random_range(-8.0..8.0);
            px[k] = v.clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    });
    let scale = size as f64 / 150.0;
    let (count, r_lo, r_hi, elong, darkness) = if class == 0 {
        (rng.random_range(45..70), 2.5, 4.5, 1.25, 0.75)
    } else {
        (rng.random_range(18..30), 5.0, 9.0, 2.0, 0.88)
    };
    let nucleus = [
        95.0 + rng.random_range(-15.0..15.0),
        45.0 + rng.random_range(-10.0..10.0),
        130.0 + rng.random_range(-15.0..15.0),
    ];
    for _ in 0..count {
        let cx = rng.random_range(0.0..size as f64);
        let cy = rng.random_range(0.0..size as f64);
        let r = rng.random_range(r_lo..r_hi) * scale;
        let e = rng.random_range(1.0..elong);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let reach = (r * e).ceil() as i64 + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (u, v) = (dx as f64 * c + dy as f64 * s, -dx as f64 * s + dy as f64 * c);
                let d = (u / (r * e)).powi(2) + (v / r).powi(2);
                if d <= 1.0 {
                    blend(&mut img, cx as i64 + dx, cy as i64 + dy, nucleus, darkness * (1.0 - 0.3 * d));
                }
            }
        }
    }
    img
}

/// Writes `per_class` tiles for each class into `root/<class>/` and returns the class
/// names.
pub fn write_tissue_dataset(root: &Path, classes: usize, per_class: usize, size: u32, seed: u64) -> Vec<String> {
    let names: Vec<String> = (0..classes).map(|k| format!("class_{k}")).collect();
    let mut r = rng(seed);
    for (k, name) in names.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            tissue_image(k, size, &mut r)
                .save(dir.join(format!("{name}_{i:04}.png")))
                .unwrap();
        }
    }
    names
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}
