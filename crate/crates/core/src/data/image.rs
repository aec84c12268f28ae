use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a JPEG or PNG into `[h, w, 3]` with channels scaled by `1/255`. Grayscale is
/// replicated across channels and alpha is discarded.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::from_vec([h as usize, w as usize, 3], data)
}

/// Bilinear resize of an `[h, w, c]` image with half-pixel centres: output pixel `i`
/// samples source coordinate `(i + 0.5)·(in/out) − 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[in_h, in_w, c] = img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "resize expects [h, w, c]".into(),
        });
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target extents must be at least 1"));
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = taps(out_h, in_h);
    let cols = taps(out_w, in_w);
    let src = img.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * in_w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec([out_h, out_w, c], out)
}
