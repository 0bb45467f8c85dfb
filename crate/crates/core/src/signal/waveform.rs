use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use super::iq::{Complex, IqBuffer};
use super::Class;
use crate::error::{Error, Result};

/// Parameters of one synthesized capture.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: f64,
    pub fft_size: usize,
    pub occupied_subcarriers: usize,
    pub cyclic_prefix: usize,
    pub capture_duration_s: f64,
    /// Jammer transmit gain in dB.
    pub interferer_gain_db: f64,
    /// Attenuation between jammer and receiver; the received jammer power
    /// relative to the unit-power SOI is `interferer_gain_db - coupling_loss_db`.
    pub coupling_loss_db: f64,
    /// Complex white noise power relative to the unit-power SOI.
    pub noise_power_db: f64,
    pub class: Class,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 7.68e6,
            fft_size: 512,
            occupied_subcarriers: 300,
            cyclic_prefix: 36,
            capture_duration_s: 0.02,
            interferer_gain_db: 35.0,
            coupling_loss_db: 40.0,
            noise_power_db: -20.0,
            class: Class::Soi,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_samples(&self) -> usize {
        (self.capture_duration_s * self.sample_rate_hz).round() as usize
    }

    /// Highest frequency offset a jammer is placed at.
    pub fn max_interferer_offset_hz(&self) -> f64 {
        0.4 * self.sample_rate_hz
    }
}

fn check_frequency(freq_hz: f64, sample_rate_hz: f64) -> Result<()> {
    if !(freq_hz.abs() < sample_rate_hz / 2.0) {
        return Err(Error::Aliasing {
            freq_hz,
            sample_rate_hz,
        });
    }
    Ok(())
}

fn check_rate_and_len(num_samples: usize, sample_rate_hz: f64) -> Result<()> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be positive".into()));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    Ok(())
}

fn amplitude(gain_db: f64) -> f64 {
    10f64.powf(gain_db / 20.0)
}

/// Continuous-wave tone `A·exp(j·2π·f·t/fs)` with `A = 10^(gain_db/20)`.
pub fn synth_cw(
    freq_offset_hz: f64,
    gain_db: f64,
    num_samples: usize,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    check_rate_and_len(num_samples, sample_rate_hz)?;
    check_frequency(freq_offset_hz, sample_rate_hz)?;
    let a = amplitude(gain_db);
    let step = 2.0 * PI * freq_offset_hz / sample_rate_hz;
    let samples = (0..num_samples)
        .map(|t| Complex::from_polar(a, step * t as f64))
        .collect();
    IqBuffer::new(samples, sample_rate_hz)
}

/// Linear FM sweep from `f0_hz` to `f1_hz` across the buffer.
pub fn synth_chirp(
    f0_hz: f64,
    f1_hz: f64,
    gain_db: f64,
    num_samples: usize,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    check_rate_and_len(num_samples, sample_rate_hz)?;
    check_frequency(f0_hz, sample_rate_hz)?;
    check_frequency(f1_hz, sample_rate_hz)?;
    let a = amplitude(gain_db);
    let duration = num_samples as f64 / sample_rate_hz;
    let rate = (f1_hz - f0_hz) / (2.0 * duration);
    let samples = (0..num_samples)
        .map(|n| {
            let t = n as f64 / sample_rate_hz;
            Complex::from_polar(a, 2.0 * PI * (f0_hz * t + rate * t * t))
        })
        .collect();
    IqBuffer::new(samples, sample_rate_hz)
}

/// Noiseless QPSK-OFDM uplink component of the SOI, unit average power.
pub fn synth_ofdm_clean(config: &SynthConfig) -> Result<IqBuffer> {
    let n_fft = config.fft_size;
    if config.occupied_subcarriers > n_fft {
        return Err(Error::InvalidArgument(format!(
            "{} occupied subcarriers exceed FFT size {}",
            config.occupied_subcarriers, n_fft
        )));
    }
    let symbol_len = n_fft + config.cyclic_prefix;
    let total = config.num_samples();
    if total < symbol_len {
        return Err(Error::InvalidArgument(format!(
            "{total} samples cannot hold one {symbol_len}-sample OFDM symbol"
        )));
    }

    let occupied = config.occupied_subcarriers;
    let below = occupied / 2;
    let above = occupied - below;
    // DC stays empty; negative subcarriers wrap to the top of the FFT grid.
    let bins: Vec<usize> = (1..=below)
        .map(|k| n_fft - k)
        .chain(1..=above)
        .collect();
    let scale = if occupied == 0 {
        0.0
    } else {
        1.0 / (occupied as f64).sqrt()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let qpsk = std::f64::consts::FRAC_1_SQRT_2;
    let mut samples = Vec::with_capacity(total + symbol_len);
    let mut grid = vec![Complex::new(0.0, 0.0); n_fft];
    while samples.len() < total {
        grid.iter_mut().for_each(|g| *g = Complex::new(0.0, 0.0));
        for &b in &bins {
            let bits: u8 = rng.gen_range(0..4);
            let re = if bits & 1 == 0 { qpsk } else { -qpsk };
            let im = if bits & 2 == 0 { qpsk } else { -qpsk };
            grid[b] = Complex::new(re, im);
        }
        ifft.process(&mut grid);
        samples.extend(grid[n_fft - config.cyclic_prefix..].iter().map(|s| s * scale));
        samples.extend(grid.iter().map(|s| s * scale));
    }
    samples.truncate(total);
    IqBuffer::new(samples, config.sample_rate_hz)
}

fn awgn(num_samples: usize, power_db: f64, seed: u64) -> Vec<Complex<f64>> {
    let sigma = (10f64.powf(power_db / 10.0) / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..num_samples)
        .map(|_| Complex::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect()
}

/// SOI: OFDM uplink plus complex white Gaussian noise at `noise_power_db`.
pub fn synth_soi(config: &SynthConfig) -> Result<IqBuffer> {
    let clean = synth_ofdm_clean(config)?;
    let noise = awgn(clean.len(), config.noise_power_db, config.rng_seed);
    let samples = clean
        .into_samples()
        .into_iter()
        .zip(noise)
        .map(|(s, n)| s + n)
        .collect();
    IqBuffer::new(samples, config.sample_rate_hz)
}

/// Element-wise superposition of two captures.
pub fn mix(soi: &IqBuffer, interferer: &IqBuffer) -> Result<IqBuffer> {
    if soi.len() != interferer.len() {
        return Err(Error::Shape(format!(
            "cannot mix buffers of {} and {} samples",
            soi.len(),
            interferer.len()
        )));
    }
    if soi.sample_rate_hz() != interferer.sample_rate_hz() {
        return Err(Error::Shape(format!(
            "cannot mix sample rates {} and {}",
            soi.sample_rate_hz(),
            interferer.sample_rate_hz()
        )));
    }
    let samples = soi
        .samples()
        .iter()
        .zip(interferer.samples())
        .map(|(a, b)| a + b)
        .collect();
    IqBuffer::new(samples, soi.sample_rate_hz())
}

/// Full capture for `config.class`: SOI, optionally with a jammer whose
/// frequency plan is drawn from `config.rng_seed`.
pub fn synth_sample(config: &SynthConfig) -> Result<IqBuffer> {
    let soi = synth_soi(config)?;
    let n = soi.len();
    let fs = config.sample_rate_hz;
    let received_db = config.interferer_gain_db - config.coupling_loss_db;
    let span = config.max_interferer_offset_hz();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(2);
    let jammer = match config.class {
        Class::Soi => return Ok(soi),
        Class::Cwi => synth_cw(rng.gen_range(-span..span), received_db, n, fs)?,
        Class::Ci => {
            // Sweep at least a quarter of the band so the ridge visibly moves.
            let (f0, f1) = loop {
                let f0 = rng.gen_range(-span..span);
                let f1 = rng.gen_range(-span..span);
                if (f1 - f0).abs() >= 0.25 * fs {
                    break (f0, f1);
                }
            };
            synth_chirp(f0, f1, received_db, n, fs)?
        }
    };
    mix(&soi, &jammer)
}
