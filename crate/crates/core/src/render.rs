//! 8-bit renderings of signed maps and filter grids.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MID: f64 = 128.0;

/// Symmetric diverging color: zero is mid-gray, `+max_abs` pure red, `-max_abs` pure
/// blue. A zero `max_abs` maps everything to mid-gray.
pub fn diverging(v: f64, max_abs: f64) -> [u8; 3] {
    if !(max_abs > 0.0) || !v.is_finite() {
        return [MID as u8; 3];
    }
    let t = (v / max_abs).clamp(-1.0, 1.0);
    let hot = MID + (255.0 - MID) * t.abs();
    let cold = MID * (1.0 - t.abs());
    let (r, g, b) = if t >= 0.0 { (hot, cold, cold) } else { (cold, cold, hot) };
    [r.round() as u8, g.round() as u8, b.round() as u8]
}

/// Renders a `[H, W]` map, normalized by its own max-abs value, each pixel scaled up
/// `scale` times.
pub fn render_signed<T: Real>(map: &Tensor<T>, scale: usize) -> Result<RgbImage> {
    map.expect_ndim(2, "signed map")?;
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let m = map.max_abs().to_f64();
    let s = scale.max(1);
    Ok(RgbImage::from_fn((w * s) as u32, (h * s) as u32, |x, y| {
        Rgb(diverging(map.get(&[y as usize / s, x as usize / s]).to_f64(), m))
    }))
}

/// Tiles square kernels row-major into a `rows x cols` grid separated by one-pixel
/// gray borders, normalized by the max-abs value over all kernels.
pub fn tile_grid<T: Real>(kernels: &[Tensor<T>], rows: usize, cols: usize, scale: usize) -> Result<RgbImage> {
    let first = kernels.first().ok_or_else(|| Error::shape("no kernels to tile"))?;
    first.expect_ndim(2, "kernel")?;
    if rows * cols < kernels.len() {
        return Err(Error::shape(format!(
            "{} kernels do not fit a {rows}x{cols} grid",
            kernels.len()
        )));
    }
    let k = first.shape()[0];
    for kern in kernels {
        kern.expect_shape(first.shape(), "kernel")?;
    }
    let m = kernels.iter().map(|t| t.max_abs().to_f64()).fold(0.0, f64::max);
    let s = scale.max(1);
    let cell = k * s + 1;
    let mut img = RgbImage::from_pixel((cols * cell + 1) as u32, (rows * cell + 1) as u32, Rgb([64, 64, 64]));
    for (i, kern) in kernels.iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        for y in 0..k * s {
            for x in 0..k * s {
                let px = diverging(kern.get(&[y / s, x / s]).to_f64(), m);
                img.put_pixel((gc * cell + 1 + x) as u32, (gr * cell + 1 + y) as u32, Rgb(px));
            }
        }
    }
    Ok(img)
}

/// Grid dimensions used for a bank: one row per frequency, one column per orientation.
pub fn grid_dims(count: usize, orientations: usize) -> (usize, usize) {
    let cols = orientations.max(1);
    (count.div_ceil(cols), cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_contract() {
        assert_eq!(diverging(0.0, 1.0), [128, 128, 128]);
        assert_eq!(diverging(3.0, 0.0), [128, 128, 128]);
        assert_eq!(diverging(2.0, 2.0), [255, 0, 0]);
        assert_eq!(diverging(-2.0, 2.0), [0, 0, 255]);
    }

    #[test]
    fn zero_map_is_gray() {
        let img = render_signed(&Tensor::<f64>::zeros(&[3, 4]), 2).unwrap();
        assert_eq!(img.dimensions(), (8, 6));
        assert!(img.pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn grid_shape() {
        let kernels: Vec<Tensor<f64>> = (0..96).map(|i| Tensor::full(&[5, 5], i as f64)).collect();
        assert_eq!(grid_dims(96, 8), (12, 8));
        let img = tile_grid(&kernels, 12, 8, 1).unwrap();
        assert_eq!(img.dimensions(), ((8 * 6 + 1) as u32, (12 * 6 + 1) as u32));
        assert!(tile_grid(&kernels, 2, 2, 1).is_err());
    }
}
