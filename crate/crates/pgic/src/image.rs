//! 8-bit RGB image I/O. PPM (P6) is the built-in, dependency-free format;
//! PNG is available behind the `png` feature.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::tensor::Tensor;

pub type ImageResult<T> = Result<T, ImageError>;

#[derive(Debug)]
pub enum ImageError {
    Io(std::io::Error),
    Parse(String),
    Unsupported(String),
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::Io(e) => write!(f, "image I/O error: {e}"),
            ImageError::Parse(why) => write!(f, "image parse error: {why}"),
            ImageError::Unsupported(what) => write!(f, "unsupported image: {what}"),
        }
    }
}

impl std::error::Error for ImageError {}

impl From<std::io::Error> for ImageError {
    fn from(e: std::io::Error) -> Self {
        ImageError::Io(e)
    }
}

/// 8-bit RGB raster, row-major, three samples per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFile {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl ImageFile {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> ImageResult<Self> {
        if samples.len() != width * height * 3 {
            return Err(ImageError::Parse(format!(
                "sample count {} != {}x{}x3",
                samples.len(),
                width,
                height
            )));
        }
        Ok(ImageFile {
            width,
            height,
            samples,
        })
    }

    /// Normalize to a 3xHxW tensor of [0, 1] floats.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) * 3;
                for c in 0..3 {
                    data[c * h * w + y * w + x] = self.samples[p + c] as f32 / 255.0;
                }
            }
        }
        Tensor::new(vec![3, h, w], data).expect("shape by construction")
    }

    /// Quantize a 3xHxW [0, 1] tensor to 8-bit samples.
    pub fn from_tensor(t: &Tensor) -> ImageResult<Self> {
        let (c, h, w) = t
            .dims3("image from tensor")
            .map_err(|e| ImageError::Unsupported(e.to_string()))?;
        if c != 3 {
            return Err(ImageError::Unsupported(format!("{c} channels, need 3")));
        }
        let data = t.data();
        let mut samples = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) * 3;
                for ch in 0..3 {
                    let v = data[ch * h * w + y * w + x].clamp(0.0, 1.0);
                    samples[p + ch] = (v * 255.0).round() as u8;
                }
            }
        }
        ImageFile::new(w, h, samples)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> ImageResult<()> {
        let mut out = Vec::with_capacity(self.samples.len() + 32);
        out.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.samples);
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> ImageResult<Self> {
        let bytes = fs::read(path)?;
        parse_ppm(&bytes)
    }

    /// Load by extension: `.ppm` always, `.png` when the feature is enabled.
    pub fn load(path: impl AsRef<Path>) -> ImageResult<Self> {
        let path = path.as_ref();
        match extension_of(path).as_deref() {
            Some("ppm") => ImageFile::read_ppm(path),
            #[cfg(feature = "png")]
            Some("png") => png::read_png(path),
            Some(other) => Err(ImageError::Unsupported(format!(
                "extension .{other} (build with --features png for PNG support)"
            ))),
            None => ImageFile::read_ppm(path),
        }
    }

    /// Save by extension, mirroring `load`.
    pub fn save(&self, path: impl AsRef<Path>) -> ImageResult<()> {
        let path = path.as_ref();
        match extension_of(path).as_deref() {
            Some("ppm") | None => self.write_ppm(path),
            #[cfg(feature = "png")]
            Some("png") => png::write_png(self, path),
            Some(other) => Err(ImageError::Unsupported(format!(
                "extension .{other} (build with --features png for PNG support)"
            ))),
        }
    }
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|s| s.to_ascii_lowercase())
}

fn parse_ppm(bytes: &[u8]) -> ImageResult<ImageFile> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> ImageResult<String> {
        // Skip whitespace and `#` comments between header tokens.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(ImageError::Parse("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if token(&mut pos)? != "P6" {
        return Err(ImageError::Parse("not a binary PPM (P6)".into()));
    }
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::Parse("bad width".into()))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::Parse("bad height".into()))?;
    let maxval: usize = token(&mut pos)?
        .parse()
        .map_err(|_| ImageError::Parse("bad maxval".into()))?;
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!("maxval {maxval}, need 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(ImageError::Parse(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    ImageFile::new(width, height, bytes[pos..pos + need].to_vec())
}

#[cfg(feature = "png")]
mod png {
    use super::{ImageError, ImageFile, ImageResult};
    use std::path::Path;

    pub fn read_png(path: &Path) -> ImageResult<ImageFile> {
        let img = image::open(path)
            .map_err(|e| ImageError::Parse(e.to_string()))?
            .to_rgb8();
        ImageFile::new(
            img.width() as usize,
            img.height() as usize,
            img.into_raw(),
        )
    }

    pub fn write_png(img: &ImageFile, path: &Path) -> ImageResult<()> {
        let buf: image::RgbImage = image::ImageBuffer::from_raw(
            img.width as u32,
            img.height as u32,
            img.samples.clone(),
        )
        .ok_or_else(|| ImageError::Parse("buffer size mismatch".into()))?;
        buf.save(path).map_err(|e| ImageError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = ImageFile::new(3, 2, (0..18).map(|v| (v * 13) as u8).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        img.write_ppm(&path).unwrap();
        let back = ImageFile::read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let mut bytes = b"P6\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.samples, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn tensor_roundtrip_is_exact_for_8bit_values() {
        let img = ImageFile::new(4, 3, (0..36).map(|v| (v * 7 % 256) as u8).collect()).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 3, 4]);
        let back = ImageFile::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn truncated_raster_is_parse_error() {
        let bytes = b"P6\n4 4\n255\n\x00\x01".to_vec();
        assert!(matches!(parse_ppm(&bytes), Err(ImageError::Parse(_))));
    }
}
