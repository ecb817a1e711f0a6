use super::image::{ImageBuffer, CHANNELS};
use crate::error::{Error, Result};

/// Keys cubic convolution parameter (Catmull-Rom).
pub const BICUBIC_A: f64 = -0.5;

/// Keys cubic kernel with parameter `a`; support `[-2, 2]`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Taps contributing to one output coordinate: `(source index, weight)`.
type Taps = Vec<(usize, f64)>;

/// Per-output-coordinate taps for mapping `in_len` samples onto `out_len`.
///
/// Pixel centres are aligned (`src = (dst + 0.5) * in/out - 0.5`). When
/// shrinking, the kernel is stretched by the scale factor so every source
/// pixel contributes (area-aware bicubic). Source indices are clamped to the
/// edge and weights renormalized to sum to one.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut taps: Taps = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for i in lo..=hi {
                let w = cubic_kernel((i as f64 - center) / support, BICUBIC_A);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, in_len as isize - 1) as usize;
                total += w;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable bicubic resize; output clamped to `[0,1]`.
pub fn resample_bicubic(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("target size {out_w}x{out_h}")));
    }
    let (w, h) = (img.width(), img.height());
    let src = img.data();

    let xt = axis_taps(w, out_w);
    let mut horiz = vec![0.0; out_w * h * CHANNELS];
    for y in 0..h {
        let row = &src[y * w * CHANNELS..(y + 1) * w * CHANNELS];
        let dst = &mut horiz[y * out_w * CHANNELS..(y + 1) * out_w * CHANNELS];
        for (ox, taps) in xt.iter().enumerate() {
            for c in 0..CHANNELS {
                dst[ox * CHANNELS + c] = taps.iter().map(|&(i, wt)| wt * row[i * CHANNELS + c]).sum();
            }
        }
    }

    let yt = axis_taps(h, out_h);
    let stride = out_w * CHANNELS;
    let mut out = vec![0.0; out_w * out_h * CHANNELS];
    for (oy, taps) in yt.iter().enumerate() {
        let dst = &mut out[oy * stride..(oy + 1) * stride];
        for &(i, wt) in taps {
            let line = &horiz[i * stride..(i + 1) * stride];
            for (d, s) in dst.iter_mut().zip(line) {
                *d += wt * s;
            }
        }
    }
    let mut img_out = ImageBuffer::new(out_w, out_h, out)?;
    img_out.clamp_unit();
    img_out.resolution = img.resolution.min(out_w.min(out_h));
    Ok(img_out)
}

/// Bicubic downsample to `r×r` followed by bicubic upsample back to the
/// original size.
pub fn degrade(img: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    let size = img.width();
    if img.height() != size {
        return Err(Error::invalid(format!(
            "degrade expects a square image, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    if r == 0 || r > size {
        return Err(Error::invalid(format!(
            "degradation resolution {r} outside 1..={size}"
        )));
    }
    let small = resample_bicubic(img, r, r)?;
    let mut out = resample_bicubic(&small, size, size)?;
    out.resolution = r.min(img.resolution);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic_kernel(0.0, BICUBIC_A), 1.0);
        assert_eq!(cubic_kernel(1.0, BICUBIC_A), 0.0);
        assert_eq!(cubic_kernel(2.0, BICUBIC_A), 0.0);
        assert!((cubic_kernel(0.5, BICUBIC_A) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5, BICUBIC_A) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn taps_sum_to_one() {
        for &(i, o) in &[(112, 7), (7, 112), (16, 8), (10, 10), (5, 13)] {
            for taps in axis_taps(i, o) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degrade_rejects_bad_resolution() {
        let img = ImageBuffer::constant(8, 8, 0.5);
        assert!(degrade(&img, 9).is_err());
        assert!(degrade(&img, 0).is_err());
        assert!(resample_bicubic(&img, 0, 3).is_err());
        let rect = ImageBuffer::constant(8, 6, 0.5);
        assert!(degrade(&rect, 4).is_err());
    }

    #[test]
    fn degrade_tags_resolution() {
        let img = ImageBuffer::constant(16, 16, 0.3);
        assert_eq!(degrade(&img, 7).unwrap().resolution, 7);
        assert_eq!(degrade(&img, 16).unwrap().resolution, 16);
    }
}
