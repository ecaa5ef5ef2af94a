//! Offline spectral analysis for the white-noise actuator.
//!
//! Computes one-sided power spectra, band spectral flatness (geometric over
//! arithmetic mean of band power) and the masking gain obtained by adding a
//! white-noise buffer to a disturbing noise. Also hosts the reproducible
//! white-noise generator used by the simulator.

use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Execution};

/// Lowest sample rate that still resolves the default analysis band.
pub const MIN_RATE_HZ: u32 = 11_000;

/// Adjacent bins averaged before the flatness ratio is taken.
pub const DEFAULT_SMOOTHING_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcousticsError {
    #[error("empty sample buffer")]
    EmptyBuffer,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate {0} Hz is below the {MIN_RATE_HZ} Hz minimum")]
    RateTooLow(u32),
    #[error("band {0} holds fewer than two spectrum bins")]
    EmptyBand(Band),
    #[error("buffer lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample rates differ ({0} Hz vs {1} Hz)")]
    RateMismatch(u32, u32),
    #[error("duration must be positive and finite")]
    InvalidDuration,
    #[error("invalid band `{0}`")]
    InvalidBand(String),
    #[error("sample file: {0}")]
    SampleFile(String),
}

/// A validated mono sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    rate_hz: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, rate_hz: u32) -> Result<Self, AcousticsError> {
        if samples.is_empty() {
            return Err(AcousticsError::EmptyBuffer);
        }
        if rate_hz < MIN_RATE_HZ {
            return Err(AcousticsError::RateTooLow(rate_hz));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(AcousticsError::NonFinite(i));
        }
        Ok(SampleBuffer { samples, rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// Returns a copy rescaled to the given RMS. A silent buffer stays silent.
    pub fn scaled_to_rms(&self, target: f64) -> SampleBuffer {
        let rms = self.rms();
        let k = if rms > 0.0 { target / rms } else { 0.0 };
        SampleBuffer {
            samples: self.samples.iter().map(|x| x * k).collect(),
            rate_hz: self.rate_hz,
        }
    }

    /// Sample-wise sum.
    pub fn mix(&self, other: &SampleBuffer) -> Result<SampleBuffer, AcousticsError> {
        if self.rate_hz != other.rate_hz {
            return Err(AcousticsError::RateMismatch(self.rate_hz, other.rate_hz));
        }
        if self.len() != other.len() {
            return Err(AcousticsError::LengthMismatch(self.len(), other.len()));
        }
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Ok(SampleBuffer {
            samples,
            rate_hz: self.rate_hz,
        })
    }
}

/// Inclusive frequency range in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub const WHITE_NOISE: Band = Band {
        lo_hz: 250.0,
        hi_hz: 5500.0,
    };

    pub fn new(lo_hz: f64, hi_hz: f64) -> Result<Self, AcousticsError> {
        if !(lo_hz.is_finite() && hi_hz.is_finite() && lo_hz >= 0.0 && hi_hz > lo_hz) {
            return Err(AcousticsError::InvalidBand(format!("{lo_hz}:{hi_hz}")));
        }
        Ok(Band { lo_hz, hi_hz })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz && f <= self.hi_hz
    }
}

impl Default for Band {
    fn default() -> Self {
        Band::WHITE_NOISE
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo_hz, self.hi_hz)
    }
}

impl FromStr for Band {
    type Err = AcousticsError;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AcousticsError::InvalidBand(s.to_string());
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        Band::new(lo, hi)
    }
}

/// One-sided power spectrum, bins `k = 0..=N/2` at `k * rate / N` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    powers: Vec<f64>,
    bin_hz: f64,
    len: usize,
}

impl PowerSpectrum {
    /// Wraps precomputed one-sided powers of a length-`source_len` transform.
    pub fn from_powers(powers: Vec<f64>, rate_hz: u32, source_len: usize) -> Self {
        PowerSpectrum {
            powers,
            bin_hz: rate_hz as f64 / source_len as f64,
            len: source_len,
        }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }

    /// Length of the transformed buffer.
    pub fn source_len(&self) -> usize {
        self.len
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.powers.iter().enumerate().map(|(k, &p)| (self.freq(k), p))
    }

    /// Total power with every bin that has a mirror image counted twice.
    pub fn one_sided_total(&self) -> f64 {
        let n = self.len;
        self.powers
            .iter()
            .enumerate()
            .map(|(k, &p)| if k == 0 || (n % 2 == 0 && k == n / 2) { p } else { 2.0 * p })
            .sum()
    }

    /// Frequency of the strongest non-DC bin (DC when it is the only bin).
    pub fn peak_hz(&self) -> f64 {
        let start = usize::from(self.powers.len() > 1);
        let k = (start..self.powers.len())
            .max_by(|&a, &b| self.powers[a].total_cmp(&self.powers[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        self.freq(k)
    }

    fn band_powers(&self, band: Band) -> Vec<f64> {
        self.bins().filter(|(f, _)| band.contains(*f)).map(|(_, p)| p).collect()
    }
}

/// `|X_k|^2 / N^2` for `k = 0..=N/2`, rectangular window.
pub fn power_spectrum(buf: &SampleBuffer) -> PowerSpectrum {
    let n = buf.len();
    let mut data: Vec<Complex<f64>> = buf.samples().iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut data);
    let norm = (n as f64) * (n as f64);
    let powers = data[..=n / 2].iter().map(|c| c.norm_sqr() / norm).collect();
    PowerSpectrum {
        powers,
        bin_hz: buf.rate_hz() as f64 / n as f64,
        len: n,
    }
}

/// Spectral flatness of `band`, after averaging groups of
/// [`DEFAULT_SMOOTHING_BINS`] adjacent bins.
pub fn band_flatness(spec: &PowerSpectrum, band: Band) -> Result<f64, AcousticsError> {
    band_flatness_smoothed(spec, band, DEFAULT_SMOOTHING_BINS)
}

/// Geometric mean over arithmetic mean of the band powers, in `[0, 1]`.
///
/// Band bins are first averaged in consecutive groups of `smoothing_bins`
/// (capped so that at least two groups remain; `1` disables smoothing).
/// Zero groups are floored at `EPSILON * max` before the geometric mean. A
/// band that is entirely silent counts as flat.
pub fn band_flatness_smoothed(spec: &PowerSpectrum, band: Band, smoothing_bins: usize) -> Result<f64, AcousticsError> {
    let powers = spec.band_powers(band);
    if powers.len() < 2 {
        return Err(AcousticsError::EmptyBand(band));
    }
    let width = smoothing_bins.clamp(1, powers.len() / 2);
    let groups: Vec<f64> = powers
        .chunks(width)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    Ok(flatness_of(&groups))
}

fn flatness_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let am = values.iter().sum::<f64>() / n;
    if am <= 0.0 {
        return 1.0;
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let floor = (max * f64::EPSILON).max(f64::MIN_POSITIVE);
    let log_mean = values.iter().map(|&p| p.max(floor).ln()).sum::<f64>() / n;
    (log_mean.exp() / am).clamp(0.0, 1.0)
}

/// Flatness of `noise + white` relative to the flatness of `noise` alone.
pub fn masking_gain(noise: &SampleBuffer, white: &SampleBuffer, band: Band) -> Result<f64, AcousticsError> {
    let mixed = noise.mix(white)?;
    let before = band_flatness(&power_spectrum(noise), band)?;
    let after = band_flatness(&power_spectrum(&mixed), band)?;
    Ok(after / before)
}

/// Marsaglia xorshift64* generator.
#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub const MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;

    /// A zero seed (which would lock the generator at zero) is replaced by a
    /// fixed odd constant.
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        XorShift64Star { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(Self::MULTIPLIER)
    }

    /// Uniform in `[-1, 1)` from the top 53 bits.
    pub fn next_symmetric(&mut self) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * unit - 1.0
    }
}

/// `round(duration_s * rate_hz)` uniform samples from a seeded xorshift64*.
pub fn generate_white(duration_s: f64, rate_hz: u32, seed: u64) -> Result<SampleBuffer, AcousticsError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(AcousticsError::InvalidDuration);
    }
    let n = (duration_s * rate_hz as f64).round() as usize;
    white_samples(n, rate_hz, seed)
}

/// `n` generated white-noise samples.
pub fn white_samples(n: usize, rate_hz: u32, seed: u64) -> Result<SampleBuffer, AcousticsError> {
    let mut rng = XorShift64Star::new(seed);
    SampleBuffer::new((0..n).map(|_| rng.next_symmetric()).collect(), rate_hz)
}

/// Sum of sinusoids `(freq_hz, amplitude, phase_rad)`.
pub fn tones(components: &[(f64, f64, f64)], n: usize, rate_hz: u32) -> Result<SampleBuffer, AcousticsError> {
    let rate = rate_hz as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            components
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum()
        })
        .collect();
    SampleBuffer::new(samples, rate_hz)
}

/// Three-tone stand-in for a construction drill.
pub fn drill_noise(n: usize, rate_hz: u32) -> Result<SampleBuffer, AcousticsError> {
    tones(&[(480.0, 1.0, 0.0), (1250.0, 0.6, 0.7), (2900.0, 0.35, 1.9)], n, rate_hz)
}

/// Reads one amplitude per line. A leading non-numeric header is skipped.
pub fn read_samples_csv<R: Read>(reader: R, rate_hz: u32) -> Result<SampleBuffer, AcousticsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| AcousticsError::SampleFile(e.to_string()))?;
        let field = record.get(0).unwrap_or("");
        match field.parse::<f64>() {
            Ok(x) => samples.push(x),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(AcousticsError::SampleFile(format!("line {}: {e}", i + 1))),
        }
    }
    SampleBuffer::new(samples, rate_hz)
}

/// Summary printed by the `analyze spectrum` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub flatness: f64,
    pub peak_hz: f64,
    pub band: [f64; 2],
}

pub fn analyze(buf: &SampleBuffer, band: Band) -> Result<SpectrumReport, AcousticsError> {
    let spec = power_spectrum(buf);
    Ok(SpectrumReport {
        flatness: band_flatness(&spec, band)?,
        peak_hz: spec.peak_hz(),
        band: [band.lo_hz, band.hi_hz],
    })
}

pub fn spectra(bufs: &[SampleBuffer], exec: Execution) -> Vec<PowerSpectrum> {
    exec::map(exec, bufs, power_spectrum)
}

pub fn flatness_batch(bufs: &[SampleBuffer], band: Band, exec: Execution) -> Vec<Result<f64, AcousticsError>> {
    exec::map(exec, bufs, |b| band_flatness(&power_spectrum(b), band))
}

/// Masking gain for each `(noise, white)` pair.
pub fn masking_gains(
    pairs: &[(SampleBuffer, SampleBuffer)],
    band: Band,
    exec: Execution,
) -> Vec<Result<f64, AcousticsError>> {
    exec::map(exec, pairs, |(noise, white)| masking_gain(noise, white, band))
}
