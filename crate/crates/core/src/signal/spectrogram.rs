use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rustfft::FftPlanner;

use super::iq::{Complex, IqBuffer};
use super::Class;
use crate::error::{Error, Result};

/// Image height and width produced by [`spectrogram`].
pub const IMAGE_SIZE: usize = 128;
/// Grayscale intensity is replicated into this many channels.
pub const IMAGE_CHANNELS: usize = 3;

const SGRM_MAGIC: &[u8; 4] = b"SGRM";

/// Short-time Fourier transform and rendering settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub floor_db: f64,
    pub out_height: usize,
    pub out_width: usize,
    pub channels: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 128,
            floor_db: -80.0,
            out_height: IMAGE_SIZE,
            out_width: IMAGE_SIZE,
            channels: IMAGE_CHANNELS,
        }
    }
}

/// Read access shared by plaintext and encrypted images.
pub trait ImageData {
    /// (height, width, channels)
    fn dims(&self) -> (usize, usize, usize);
    /// Row-major (row, column, channel) intensities.
    fn pixels(&self) -> &[f32];
}

impl ImageData for Spectrogram {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// An H×W×C image with intensities in `[0, 1]`, stored row-major as
/// (row, column, channel). Rows index frequency (ascending from −fs/2),
/// columns index time.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    pub label: Option<Class>,
}

impl Spectrogram {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixels do not fill {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {p} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Class) -> Self {
        self.label = Some(label);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Encodes the image in the `SGRM` layout: magic, little-endian `u32`
    /// H, W, C, then H·W·C little-endian `f32` values.
    pub fn to_sgrm_bytes(&self) -> Vec<u8> {
        encode_sgrm(self.height, self.width, self.channels, &self.pixels)
    }

    pub fn from_sgrm_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, c, pixels) = decode_sgrm(bytes)?;
        Self::new(h, w, c, pixels)
    }

    pub fn write_sgrm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_sgrm_bytes())?;
        Ok(())
    }

    pub fn read_sgrm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_sgrm_bytes(&fs::read(path)?)
    }
}

pub(crate) fn encode_sgrm(h: usize, w: usize, c: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * 4);
    out.extend_from_slice(SGRM_MAGIC);
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub(crate) fn decode_sgrm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != SGRM_MAGIC {
        return Err(Error::format("SGRM", "missing magic or header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("SGRM", "dimension overflow"))?;
    let body = &bytes[16..];
    if body.len() != count * 4 {
        return Err(Error::format(
            "SGRM",
            format!("expected {} payload bytes, found {}", count * 4, body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((h, w, c, pixels))
}

/// Center frequency represented by an output row of [`spectrogram`].
pub fn row_center_frequency_hz(row: usize, stft: &StftConfig, sample_rate_hz: f64) -> f64 {
    let scale = stft.window_len as f64 / stft.out_height as f64;
    let src_bin = (row as f64 + 0.5) * scale - 0.5;
    (src_bin - (stft.window_len / 2) as f64) * sample_rate_hz / stft.window_len as f64
}

/// Magnitude-squared STFT rendered as a normalized image.
///
/// Power is expressed in dB relative to the frame maximum, clipped to
/// `[floor_db, 0]`, mapped affinely onto `[0, 1]`, bilinearly resampled to
/// the output grid and replicated across channels. An all-zero capture
/// renders as an all-zero image.
pub fn spectrogram(iq: &IqBuffer, stft: &StftConfig) -> Result<Spectrogram> {
    let n = stft.window_len;
    if n == 0 || stft.hop == 0 || stft.out_height == 0 || stft.out_width == 0 || stft.channels == 0
    {
        return Err(Error::InvalidArgument("degenerate STFT configuration".into()));
    }
    if !(stft.floor_db < 0.0) {
        return Err(Error::InvalidArgument("floor_db must be negative".into()));
    }
    if iq.len() < n {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill one {n}-sample STFT window",
            iq.len()
        )));
    }
    let columns = (iq.len() - n) / stft.hop + 1;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(n);

    // power[bin][column], bins fft-shifted so bin 0 is −fs/2.
    let mut power = vec![0.0f64; n * columns];
    let mut frame = vec![Complex::new(0.0, 0.0); n];
    for col in 0..columns {
        let start = col * stft.hop;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = iq.samples()[start + i] * window[i];
        }
        fft.process(&mut frame);
        for (k, v) in frame.iter().enumerate() {
            let bin = (k + n / 2) % n;
            power[bin * columns + col] = v.norm_sqr();
        }
    }

    let peak = power.iter().cloned().fold(0.0f64, f64::max);
    let levels: Vec<f64> = if peak > 0.0 {
        power
            .iter()
            .map(|&p| {
                let db = if p > 0.0 {
                    (10.0 * (p / peak).log10()).clamp(stft.floor_db, 0.0)
                } else {
                    stft.floor_db
                };
                (db - stft.floor_db) / -stft.floor_db
            })
            .collect()
    } else {
        vec![0.0; power.len()]
    };

    let resampled = bilinear(&levels, n, columns, stft.out_height, stft.out_width);
    let mut pixels = Vec::with_capacity(resampled.len() * stft.channels);
    for v in resampled {
        let v = (v as f32).clamp(0.0, 1.0);
        pixels.extend(std::iter::repeat(v).take(stft.channels));
    }
    Spectrogram::new(stft.out_height, stft.out_width, stft.channels, pixels)
}

/// Half-pixel-centered bilinear resampling of a row-major grid.
fn bilinear(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, x - lo as f64)
            })
            .collect()
    };
    let ry = axis(out_rows, rows);
    let rx = axis(out_cols, cols);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ry {
        for &(x0, x1, fx) in &rx {
            let top = src[y0 * cols + x0] * (1.0 - fx) + src[y0 * cols + x1] * fx;
            let bottom = src[y1 * cols + x0] * (1.0 - fx) + src[y1 * cols + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
