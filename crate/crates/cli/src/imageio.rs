//! Image file IO: 8-bit grayscale or RGB PNG/PGM in, rasters and value
//! tensors out. Pixel bytes map to reals as v/255 in channel-major [C,H,W].

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use polarlrp_core::render::Raster;
use polarlrp_core::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("cannot open image {path}: {source}")]
    Open {
        path: String,
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    Save {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: unsupported pixel format {format}; expected 8-bit grayscale or RGB")]
    Unsupported { path: String, format: String },
    #[error("tensor of shape {shape:?} is not a 1- or 3-channel image")]
    NotImageShaped { shape: Vec<usize> },
    #[error("PGM output supports grayscale only, raster has {channels} channels")]
    PgmNeedsGray { channels: usize },
}

/// Loads an 8-bit grayscale or RGB image as a [C,H,W] tensor in [0,1].
pub fn load_image(path: &Path) -> Result<Tensor, ImageIoError> {
    let img = image::open(path).map_err(|source| ImageIoError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let (channels, w, h, bytes) = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            (1usize, w, h, g.into_raw())
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            (3usize, w, h, rgb.into_raw())
        }
        other => {
            return Err(ImageIoError::Unsupported {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    // interleaved bytes -> channel-major planes
    let mut data = vec![0.0f64; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = bytes[(y * w + x) * channels + c] as f64 / 255.0;
            }
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data).expect("u8-derived values are finite"))
}

/// Quantizes a [C,H,W] tensor in [0,1] to an 8-bit raster (C must be 1 or 3).
pub fn tensor_to_raster(t: &Tensor) -> Result<Raster, ImageIoError> {
    let (channels, h, w) = match t.shape() {
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        _ => {
            return Err(ImageIoError::NotImageShaped {
                shape: t.shape().to_vec(),
            })
        }
    };
    let mut pixels = vec![0u8; w * h * channels];
    let data = t.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = if t.rank() == 2 {
                    data[y * w + x]
                } else {
                    data[(c * h + y) * w + x]
                };
                pixels[(y * w + x) * channels + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        channels,
        pixels,
    })
}

/// Writes a raster as PNG, or binary PGM when the path ends in `.pgm`
/// (grayscale only). PNGs are 8-bit, non-interlaced.
pub fn save_raster(path: &Path, raster: &Raster) -> Result<(), ImageIoError> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let (color, pixels): (ColorType, &[u8]) = match raster.channels {
        1 => (ColorType::L8, &raster.pixels),
        _ => (ColorType::Rgb8, &raster.pixels),
    };
    if is_pgm && raster.channels != 1 {
        return Err(ImageIoError::PgmNeedsGray {
            channels: raster.channels,
        });
    }
    let format = if is_pgm { ImageFormat::Pnm } else { ImageFormat::Png };
    image::save_buffer_with_format(
        path,
        pixels,
        raster.width as u32,
        raster.height as u32,
        color,
        format,
    )
    .map_err(|source| ImageIoError::Save {
        path: path.display().to_string(),
        source,
    })
}
