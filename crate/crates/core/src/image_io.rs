use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Decode an image file to a `1 x h x w x 3` tensor in `[0, 1]`. Grey and
/// alpha images are converted to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, h as usize, w as usize, 3), data).expect("rgb8 layout")
}

/// Quantise sample `n` of `t` to 8 bits, clamping to `[0, 1]`.
pub fn to_rgb8(t: &Tensor<f32>, n: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {s}")));
    }
    let raw = t
        .sample(n)
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(ImageBuffer::<Rgb<u8>, _>::from_raw(s.w as u32, s.h as u32, raw).expect("sized buffer"))
}

/// Write sample `n` of `t`; the format follows the file extension.
pub fn save_image(t: &Tensor<f32>, n: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(t, n)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let s = t.shape();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(s.h, out_h);
    let xs = axis(s.w, out_w);
    Tensor::from_fn(Shape::new(s.n, out_h, out_w, s.c), |n, y, x, c| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = t.at(n, y0, x0, c) * (1.0 - fx) + t.at(n, y0, x1, c) * fx;
        let bottom = t.at(n, y1, x0, c) * (1.0 - fx) + t.at(n, y1, x1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Load an image and resize it to `size x size`.
pub fn load_and_resize(path: impl AsRef<Path>, size: usize) -> Result<Tensor<f32>> {
    let img = load_image(path)?;
    let s = img.shape();
    if s.h == size && s.w == size {
        return Ok(img);
    }
    Ok(resize_bilinear(&img, size, size))
}

/// Replicate edge pixels so that both sides become multiples of `m`.
pub fn pad_to_multiple(t: &Tensor<f32>, m: usize) -> Tensor<f32> {
    let s = t.shape();
    let h = s.h.div_ceil(m) * m;
    let w = s.w.div_ceil(m) * m;
    if h == s.h && w == s.w {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.n, h, w, s.c), |n, y, x, c| {
        t.at(n, y.min(s.h - 1), x.min(s.w - 1), c)
    })
}

/// Top-left `h x w` window.
pub fn crop(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, h, w, s.c), |n, y, x, c| t.at(n, y, x, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_average() {
        let t = Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&t, 1, 1).data(), &[0.5]);
    }

    #[test]
    fn identity_resize() {
        let t = Tensor::from_fn(Shape::new(1, 3, 5, 3), |_, y, x, c| (y * 15 + x * 3 + c) as f32);
        assert_eq!(resize_bilinear(&t, 3, 5), t);
    }

    #[test]
    fn png_round_trip_and_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut img = RgbImage::new(512, 512);
        img.put_pixel(0, 0, Rgb([255, 0, 128]));
        img.save(&p).unwrap();
        let t = load_image(&p).unwrap();
        assert_eq!(&t.data()[..3], &[1.0, 0.0, 128.0 / 255.0]);
        let r = load_and_resize(&p, 256).unwrap();
        assert_eq!(r.shape(), Shape::new(1, 256, 256, 3));
        let (lo, hi) = r.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        save_image(&t, 0, dir.path().join("b.png")).unwrap();
        assert_eq!(load_image(dir.path().join("b.png")).unwrap(), t);
    }

    #[test]
    fn pad_and_crop() {
        let t = Tensor::from_fn(Shape::new(1, 5, 7, 3), |_, y, x, _| (y * 7 + x) as f32);
        let p = pad_to_multiple(&t, 4);
        assert_eq!(p.shape(), Shape::new(1, 8, 8, 3));
        assert_eq!(p.at(0, 7, 7, 0), t.at(0, 4, 6, 0));
        assert_eq!(crop(&p, 5, 7), t);
    }

    #[test]
    fn corrupt_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(load_image(&p).is_err());
    }
}
