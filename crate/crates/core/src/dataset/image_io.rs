use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads PPM, PNG or JPEG as `H×W×3` in `[0,1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    rgb_to_tensor(&img)
}

/// `(width, height)` from the file header.
pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| image_error(path, e))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

pub fn tensor_to_rgb(image: &Tensor) -> Result<RgbImage> {
    let (h, w) = check_hwc(image)?;
    let bytes = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized from the tensor"))
}

/// Binary PPM.
pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    write_image(image, path, ImageFormat::Pnm)
}

pub fn write_png(image: &Tensor, path: &Path) -> Result<()> {
    write_image(image, path, ImageFormat::Png)
}

fn write_image(image: &Tensor, path: &Path, format: ImageFormat) -> Result<()> {
    let rgb = tensor_to_rgb(image)?;
    rgb.save_with_format(path, format).map_err(|e| image_error(path, e))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Parse {
            context: path.display().to_string(),
            message: other.to_string(),
        },
    }
}

/// PNG bytes of any readable image file.
pub fn encode_png(path: &Path) -> Result<Vec<u8>> {
    let rgb = tensor_to_rgb(&read_image(path)?)?;
    let mut out = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(out.into_inner())
}

pub(crate) fn check_hwc(image: &Tensor) -> Result<(usize, usize)> {
    match image.shape() {
        &[h, w, 3] => Ok((h, w)),
        s => Err(Error::dim("image", format!("expected H×W×3, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_png_round_trip_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(&[5, 7, 3], |i| (i % 256) as f64 / 255.0);
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            if name.ends_with("ppm") {
                write_ppm(&t, &p).unwrap();
            } else {
                write_png(&t, &p).unwrap();
            }
            let back = read_image(&p).unwrap();
            assert_eq!(back.shape(), &[5, 7, 3]);
            assert!(back.data().iter().zip(t.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(encode_png(&dir.path().join("a.ppm")).unwrap().starts_with(b"\x89PNG"));
        assert_eq!(image_dimensions(&dir.path().join("a.png")).unwrap(), (7, 5));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_image(Path::new("/nonexistent/x.png")), Err(Error::Io { .. })));
    }
}
