//! Learning-curve rendering straight to PNG.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::font::{glyph, text_width, GLYPH_H, GLYPH_W};
use super::metrics::read_metrics_csv;
use crate::error::{Error, Result};

pub const WIDTH: u32 = 800;
pub const HEIGHT: u32 = 500;
const LEFT: i64 = 90;
const RIGHT: i64 = 24;
const TOP: i64 = 48;
const BOTTOM: i64 = 64;
const TEXT_SCALE: usize = 2;

pub const TRAIN_COLOR: [u8; 3] = [31, 119, 180];
pub const VAL_COLOR: [u8; 3] = [255, 127, 14];
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BLANK: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    /// One value per epoch, epoch 1 first.
    pub values: &'a [f64],
    pub color: [u8; 3],
}

struct Canvas(RgbImage);

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.0.width() && (y as u32) < self.0.height() {
            self.0.put_pixel(x as u32, y as u32, c);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.put(x, y, c);
            }
        }
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, c: Rgb<u8>) {
        self.rect(x0.min(x1), y, x0.max(x1), y, c);
    }

    fn vline(&mut self, x: i64, y0: i64, y1: i64, c: Rgb<u8>) {
        self.rect(x, y0.min(y1), x, y0.max(y1), c);
    }

    /// Two-pixel-wide segment.
    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as i64;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = (x0 + (x1 - x0) * t).round() as i64;
            let y = (y0 + (y1 - y0) * t).round() as i64;
            self.rect(x, y, x + 1, y + 1, c);
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb<u8>) {
        let scale = TEXT_SCALE as i64;
        for (i, ch) in s.chars().enumerate() {
            let gx = x + i as i64 * (GLYPH_W as i64 + 1) * scale;
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                        let px = gx + col as i64 * scale;
                        let py = y + row as i64 * scale;
                        self.rect(px, py, px + scale - 1, py + scale - 1, c);
                    }
                }
            }
        }
    }
}

/// Evenly spaced round tick values covering `[lo, hi]`, at most about `max_ticks`.
pub fn nice_ticks(lo: f64, hi: f64, max_ticks: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / max_ticks.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).floor() as i64;
    let last = (hi / step).ceil() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Epoch tick positions: always 1 and `n`, plus round multiples in between.
pub fn x_ticks(n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![1];
    }
    let step = nice_ticks(0.0, n as f64, 8)
        .windows(2)
        .map(|w| (w[1] - w[0]).round() as usize)
        .next()
        .unwrap_or(1)
        .max(1);
    let mut ticks = vec![1];
    ticks.extend((step..n).step_by(step).filter(|&t| t > 1 && n - t >= step / 2));
    ticks.push(n);
    ticks
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

/// Renders one chart with a shared epoch axis.
pub fn render_curve(title: &str, y_label: &str, series: &[Series]) -> Result<RgbImage> {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("nothing to plot"));
    }
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = (lo.abs() * 0.1).max(0.05);
        (lo, hi) = (lo - pad, hi + pad);
    }
    let ticks = nice_ticks(lo, hi, 6);
    let step = ticks[1] - ticks[0];
    let (lo, hi) = (ticks[0], ticks[ticks.len() - 1]);

    let mut c = Canvas(RgbImage::from_pixel(WIDTH, HEIGHT, BLANK));
    let (w, h) = (WIDTH as i64, HEIGHT as i64);
    let (px0, px1, py0, py1) = (LEFT, w - RIGHT, TOP, h - BOTTOM);
    let to_x = |epoch: usize| -> f64 {
        if n == 1 {
            (px0 + px1) as f64 / 2.0
        } else {
            px0 as f64 + (epoch - 1) as f64 / (n - 1) as f64 * (px1 - px0) as f64
        }
    };
    let to_y = |v: f64| -> f64 { py1 as f64 - (v - lo) / (hi - lo) * (py1 - py0) as f64 };
    let th = (GLYPH_H * TEXT_SCALE) as i64;

    for &t in &ticks {
        let y = to_y(t).round() as i64;
        c.hline(px0, px1, y, GRID);
        c.hline(px0 - 6, px0, y, INK);
        let label = tick_label(t, step);
        c.text(px0 - 10 - text_width(&label, TEXT_SCALE) as i64, y - th / 2, &label, INK);
    }
    for e in x_ticks(n) {
        let x = to_x(e).round() as i64;
        c.vline(x, py0, py1, GRID);
        c.vline(x, py1, py1 + 6, INK);
        let label = e.to_string();
        c.text(x - text_width(&label, TEXT_SCALE) as i64 / 2, py1 + 12, &label, INK);
    }
    c.hline(px0, px1, py0, INK);
    c.hline(px0, px1, py1, INK);
    c.vline(px0, py0, py1, INK);
    c.vline(px1, py0, py1, INK);

    c.text((w - text_width(title, TEXT_SCALE) as i64) / 2, 12, title, INK);
    c.text(
        (px0 + px1 - text_width("epoch", TEXT_SCALE) as i64) / 2,
        h - th - 10,
        "epoch",
        INK,
    );
    c.text(8, 12, y_label, INK);

    for s in series {
        let color = Rgb(s.color);
        let pts: Vec<(f64, f64)> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (to_x(i + 1), to_y(v)))
            .collect();
        for pair in pts.windows(2) {
            c.line(pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            let (x, y) = (x.round() as i64, y.round() as i64);
            c.rect(x - 2, y - 2, x + 2, y + 2, color);
        }
    }

    // legend, top right inside the plot area
    let label_w = series
        .iter()
        .map(|s| text_width(s.label, TEXT_SCALE))
        .max()
        .unwrap_or(0) as i64;
    let box_w = 36 + label_w + 16;
    let box_h = series.len() as i64 * (th + 8) + 8;
    let (bx, by) = (px1 - box_w - 10, py0 + 10);
    c.rect(bx, by, bx + box_w, by + box_h, BLANK);
    c.hline(bx, bx + box_w, by, INK);
    c.hline(bx, bx + box_w, by + box_h, INK);
    c.vline(bx, by, by + box_h, INK);
    c.vline(bx + box_w, by, by + box_h, INK);
    for (i, s) in series.iter().enumerate() {
        let y = by + 8 + i as i64 * (th + 8);
        c.rect(bx + 8, y + th / 2 - 1, bx + 32, y + th / 2 + 1, Rgb(s.color));
        c.text(bx + 40, y, s.label, INK);
    }
    Ok(c.0)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `loss.png` and `accuracy.png` for the metrics in `metrics_csv`.
pub fn plot_curves(metrics_csv: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let rows = read_metrics_csv(metrics_csv)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let col = |f: fn(&crate::loss::EpochMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let (tl, vl, ta, va) = (
        col(|m| m.train_loss),
        col(|m| m.val_loss),
        col(|m| m.train_acc),
        col(|m| m.val_acc),
    );
    let loss = render_curve(
        "loss",
        "loss",
        &[
            Series { label: "train", values: &tl, color: TRAIN_COLOR },
            Series { label: "val", values: &vl, color: VAL_COLOR },
        ],
    )?;
    let acc = render_curve(
        "accuracy",
        "accuracy",
        &[
            Series { label: "train", values: &ta, color: TRAIN_COLOR },
            Series { label: "val", values: &va, color: VAL_COLOR },
        ],
    )?;
    let (lp, ap) = (out_dir.join("loss.png"), out_dir.join("accuracy.png"));
    save_png(&loss, &lp)?;
    save_png(&acc, &ap)?;
    Ok((lp, ap))
}
