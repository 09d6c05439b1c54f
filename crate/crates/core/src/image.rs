//! Grayscale image container, patch grid extraction, and raster file I/O.
//!
//! Everything downstream (dictionary learning, atom analysis, segmentation,
//! minutiae extraction) works on `GrayImage` pixels or on `PatchVector`s cut
//! from a `PatchGrid`. Patch vectorization is the row-major raster of the
//! block; `crate::atoms::atom_to_patch` is its inverse.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 2-D 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// All-zero (black) image.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height]).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel intensities as f64, same row-major layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// Top-left origins of all w-by-w blocks at a fixed stride, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    patch_size: usize,
    stride: usize,
    origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    /// Enumerate all fully-inside blocks of `img`, row-major.
    pub fn build(img: &GrayImage, patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "patch size and stride must be positive".into(),
            ));
        }
        if patch_size > img.width() || patch_size > img.height() {
            return Err(Error::InvalidArgument(format!(
                "patch size {} exceeds image dimensions {}x{}",
                patch_size,
                img.width(),
                img.height()
            )));
        }
        let mut origins = Vec::new();
        let mut y = 0;
        while y + patch_size <= img.height() {
            let mut x = 0;
            while x + patch_size <= img.width() {
                origins.push((x, y));
                x += stride;
            }
            y += stride;
        }
        Ok(Self {
            patch_size,
            stride,
            origins,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// One vectorized image block: the row-major raster of a w-by-w window.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchVector {
    pub values: Vec<f64>,
    pub origin: (usize, usize),
}

impl PatchVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cut every grid block out of `img` as a raw (unnormalized) patch vector.
pub fn extract_patches(img: &GrayImage, patch_size: usize, stride: usize) -> Result<Vec<PatchVector>> {
    let grid = PatchGrid::build(img, patch_size, stride)?;
    Ok(patches_at(img, &grid))
}

/// Cut the blocks named by an existing grid.
pub fn patches_at(img: &GrayImage, grid: &PatchGrid) -> Vec<PatchVector> {
    let w = grid.patch_size();
    grid.origins()
        .iter()
        .map(|&(ox, oy)| {
            let mut values = Vec::with_capacity(w * w);
            for dy in 0..w {
                let row = (oy + dy) * img.width() + ox;
                for dx in 0..w {
                    values.push(img.pixels[row + dx] as f64);
                }
            }
            PatchVector {
                values,
                origin: (ox, oy),
            }
        })
        .collect()
}

/// Zero-mean, unit-norm standardization; constant patches map to zero.
pub fn normalize_patch(p: &PatchVector) -> PatchVector {
    let n = p.values.len() as f64;
    let mean = p.values.iter().sum::<f64>() / n;
    let mut values: Vec<f64> = p.values.iter().map(|v| v - mean).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut values {
            *v /= norm;
        }
    } else {
        for v in &mut values {
            *v = 0.0;
        }
    }
    PatchVector {
        values,
        origin: p.origin,
    }
}

/// Load a grayscale raster. Dispatches on extension: `.pgm` (P2/P5) or `.png`.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") | Some("PNG") => load_png(path),
        _ => load_pgm(path),
    }
}

/// Parse a binary (P5) or ASCII (P2) PGM file with maxval <= 255.
pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&data, path)
}

fn parse_pgm(data: &[u8], path: &Path) -> Result<GrayImage> {
    let mut cursor = 0usize;
    let magic = next_header_token(data, &mut cursor)
        .ok_or_else(|| Error::format("pgm", path, "missing magic number"))?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => {
            return Err(Error::format(
                "pgm",
                path,
                format!("unsupported magic {other:?}"),
            ))
        }
    };
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        let tok = next_header_token(data, &mut cursor)
            .ok_or_else(|| Error::format("pgm", path, "truncated header"))?;
        *field = tok
            .parse()
            .map_err(|_| Error::format("pgm", path, format!("bad header token {tok:?}")))?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval > 255 {
        return Err(Error::UnsupportedDepth {
            path: path.to_path_buf(),
            maxval: maxval as u32,
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::format("pgm", path, "zero image dimension"));
    }
    let count = width * height;
    let pixels = if binary {
        // In P5 exactly one whitespace byte separates the header from the raster.
        let raster = &data[cursor..];
        if raster.len() < count {
            return Err(Error::format(
                "pgm",
                path,
                format!("raster holds {} bytes, expected {count}", raster.len()),
            ));
        }
        raster[..count].to_vec()
    } else {
        let mut pixels = Vec::with_capacity(count);
        while pixels.len() < count {
            let tok = next_header_token(data, &mut cursor)
                .ok_or_else(|| Error::format("pgm", path, "truncated P2 sample data"))?;
            let v: usize = tok
                .parse()
                .map_err(|_| Error::format("pgm", path, format!("bad P2 sample {tok:?}")))?;
            if v > maxval {
                return Err(Error::format(
                    "pgm",
                    path,
                    format!("sample {v} exceeds maxval {maxval}"),
                ));
            }
            pixels.push(v as u8);
        }
        pixels
    };
    GrayImage::new(width, height, pixels)
}

/// Read one whitespace-delimited header token, skipping `#` comments.
/// Leaves the cursor one byte past the token's terminating whitespace.
fn next_header_token(data: &[u8], cursor: &mut usize) -> Option<String> {
    loop {
        while *cursor < data.len() && data[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < data.len() && data[*cursor] == b'#' {
            while *cursor < data.len() && data[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    if *cursor >= data.len() {
        return None;
    }
    let start = *cursor;
    while *cursor < data.len() && !data[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    let tok = String::from_utf8_lossy(&data[start..*cursor]).into_owned();
    if *cursor < data.len() {
        *cursor += 1; // consume the single terminating whitespace byte
    }
    Some(tok)
}

/// Write a binary (P5) PGM file.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes = encode_pgm(img);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encode as P5 bytes. The header layout is fixed so identical images
/// serialize to identical bytes.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path)
        .map_err(|e| Error::format("png", path, e.to_string()))?;
    let gray = dynimg.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    GrayImage::new(w, h, gray.into_raw())
}
