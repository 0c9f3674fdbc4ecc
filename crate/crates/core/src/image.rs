//! RGB images with channel values in `[0, 1]`, plus the two on-disk formats
//! accepted by dataset manifests.
//!
//! * Binary PPM (`P6`), 8- or 16-bit samples.
//! * Raw float32 tensors: one ASCII header line `f32 <height> <width> <channels>`
//!   followed by `height * width * channels` little-endian `f32` values in
//!   row-major HWC order. Only `channels = 3` is accepted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Height x width x 3 image stored row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Loads a PPM or float32 tensor, dispatching on the file's magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let parsed = if bytes.starts_with(b"P6") {
            parse_ppm(&bytes)
        } else if bytes.starts_with(b"f32") {
            parse_f32(&bytes)
        } else {
            Err(Error::Parse("unrecognized image format".into()))
        };
        parsed.map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save_f32(&self, path: &Path) -> Result<()> {
        let mut out = format!("f32 {} {} 3\n", self.height, self.width).into_bytes();
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Writes an 8-bit binary PPM; values are clamped to `[0, 1]` and rounded.
    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Splits off `count` whitespace-separated header tokens, skipping `#` comments.
/// Returns the tokens and the offset of the first byte after the single
/// whitespace character that terminates the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Parse("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::Parse("missing pixel data".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(token: &str, what: &str) -> Result<usize> {
    token.parse::<usize>().map_err(|_| Error::Parse(format!("bad {what} `{token}`")))
}

fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let width = parse_dim(&tokens[1], "width")?;
    let height = parse_dim(&tokens[2], "height")?;
    let maxval = parse_dim(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("maxval {maxval} out of range")));
    }
    let samples = width * height * 3;
    let body = &bytes[offset..];
    let scale = maxval as f64;
    let data: Vec<f64> = if maxval < 256 {
        if body.len() < samples {
            return Err(Error::Parse("truncated pixel data".into()));
        }
        body[..samples].iter().map(|&b| b as f64 / scale).collect()
    } else {
        if body.len() < 2 * samples {
            return Err(Error::Parse("truncated pixel data".into()));
        }
        body.chunks_exact(2).take(samples).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
    };
    Image::new(height, width, data)
}

fn parse_f32(bytes: &[u8]) -> Result<Image> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let height = parse_dim(&tokens[1], "height")?;
    let width = parse_dim(&tokens[2], "width")?;
    let channels = parse_dim(&tokens[3], "channels")?;
    if channels != 3 {
        return Err(Error::Parse(format!("expected 3 channels, got {channels}")));
    }
    let samples = height * width * 3;
    let body = &bytes[offset..];
    if body.len() < 4 * samples {
        return Err(Error::Parse("truncated tensor data".into()));
    }
    let data =
        body.chunks_exact(4).take(samples).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Image::new(height, width, data)
}
