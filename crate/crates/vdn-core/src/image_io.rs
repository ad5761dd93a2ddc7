//! PNG input/output.
//!
//! PNG is the only supported codec: lossless and ubiquitous. 8- and 16-bit,
//! grayscale and RGB inputs are accepted; alpha channels are dropped. Values
//! are scaled into `[0, 1]` on load and quantized back to 8 bits on save.

use std::path::Path;

use image::DynamicImage;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Load an 8- or 16-bit PNG as a `[0, 1]`-scaled tensor with 1 or 3 channels.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;

    let t = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(1, h, w, |_, y, x| buf.get_pixel(x, y).0[0] as f32 / 255.0)
        }
        DynamicImage::ImageLumaA8(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(1, h, w, |_, y, x| buf.get_pixel(x, y).0[0] as f32 / 255.0)
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(3, h, w, |c, y, x| buf.get_pixel(x, y).0[c] as f32 / 255.0)
        }
        DynamicImage::ImageRgba8(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(3, h, w, |c, y, x| buf.get_pixel(x, y).0[c] as f32 / 255.0)
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(1, h, w, |_, y, x| buf.get_pixel(x, y).0[0] as f32 / 65535.0)
        }
        DynamicImage::ImageLumaA16(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(1, h, w, |_, y, x| buf.get_pixel(x, y).0[0] as f32 / 65535.0)
        }
        DynamicImage::ImageRgb16(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(3, h, w, |c, y, x| buf.get_pixel(x, y).0[c] as f32 / 65535.0)
        }
        DynamicImage::ImageRgba16(buf) => {
            let (w, h) = buf.dimensions();
            from_plane(3, h, w, |c, y, x| buf.get_pixel(x, y).0[c] as f32 / 65535.0)
        }
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                msg: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    Ok(t)
}

fn from_plane(
    channels: usize,
    height: u32,
    width: u32,
    get: impl Fn(usize, u32, u32) -> f32,
) -> ImageTensor {
    let data = Array3::from_shape_fn((channels, height as usize, width as usize), |(c, y, x)| {
        get(c, y as u32, x as u32)
    });
    ImageTensor { data }
}

/// Save a 1- or 3-channel tensor as an 8-bit PNG. Values are clamped to
/// `[0, 1]` and rounded to the nearest byte.
pub fn save_image(t: &ImageTensor, path: &Path) -> Result<()> {
    let (c, h, w) = t.shape();
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    match c {
        1 => {
            let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([quant(t[(0, y as usize, x as usize)])])
            });
            buf.save(path).map_err(err)
        }
        3 => {
            let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb([
                    quant(t[(0, y as usize, x as usize)]),
                    quant(t[(1, y as usize, x as usize)]),
                    quant(t[(2, y as usize, x as usize)]),
                ])
            });
            buf.save(path).map_err(err)
        }
        _ => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            msg: format!("can only save 1- or 3-channel tensors, got {c}"),
        }),
    }
}

// Compact viridis ramp, linearly interpolated.
const VIRIDIS: [[f32; 3]; 9] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.267, 0.749, 0.441],
    [0.993, 0.906, 0.144],
];

fn viridis(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f32;
    let i = (v.floor() as usize).min(VIRIDIS.len() - 2);
    let t = v - i as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

/// Render a scalar field as a color-mapped PNG. Multi-channel inputs are
/// averaged over channels; `vmax` fixes the color scale so related maps stay
/// comparable (pass the shared maximum), `None` auto-scales.
pub fn save_heatmap(field: &ImageTensor, vmax: Option<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = field.shape();
    let mean_c = |y: usize, x: usize| -> f32 {
        (0..c).map(|ch| field[(ch, y, x)]).sum::<f32>() / c as f32
    };
    let top = match vmax {
        Some(v) if v > 0.0 => v,
        _ => {
            let mut m = 0.0f32;
            for y in 0..h {
                for x in 0..w {
                    m = m.max(mean_c(y, x));
                }
            }
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let mut colored = ImageTensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let rgb = viridis(mean_c(y, x) / top);
            for ch in 0..3 {
                colored[(ch, y, x)] = rgb[ch];
            }
        }
    }
    save_image(&colored, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("vdn-image-io");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn all_black_png_loads_as_zeros() {
        let path = tmp("black.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([0]))
            .save(&path)
            .unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape(), (1, 2, 2));
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eight_bit_scaling() {
        let path = tmp("scale.png");
        let mut img = image::GrayImage::new(2, 1);
        img.put_pixel(0, 0, image::Luma([255]));
        img.put_pixel(1, 0, image::Luma([128]));
        img.save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t[(0, 0, 0)], 1.0);
        assert_abs_diff_eq!(t[(0, 0, 1)], 128.0 / 255.0, epsilon = 1e-7);
    }

    #[test]
    fn sixteen_bit_scaling() {
        let path = tmp("u16.png");
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(1, 1);
        img.put_pixel(0, 0, image::Luma([65535]));
        image::DynamicImage::ImageLuma16(img).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t[(0, 0, 0)], 1.0);
    }

    #[test]
    fn corrupt_stream_is_an_error() {
        let path = tmp("corrupt.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really a png").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Image { .. })));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_image(Path::new("/no/such/file.png")).is_err());
    }

    #[test]
    fn rgb_round_trip_preserves_quantized_values() {
        let path = tmp("rgb.png");
        let t = ImageTensor::from_fn(3, 4, 5, |c, y, x| {
            ((c * 37 + y * 11 + x * 3) % 256) as f32 / 255.0
        });
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn heatmap_writes_rgb_png() {
        let path = tmp("heat.png");
        let t = ImageTensor::from_fn(1, 8, 8, |_, y, x| (y + x) as f32 / 14.0);
        save_heatmap(&t, None, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), (3, 8, 8));
    }
}
