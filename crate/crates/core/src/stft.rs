//! Short-time Fourier transform with a periodic Hamming window.
//!
//! Frame `t` covers samples `[t·hop, t·hop + window)`; the signal is
//! zero-padded at the end so that `frames = 1 + ⌈(len − window) / hop⌉`
//! (one frame for signals no longer than the window). Each windowed frame
//! is zero-padded to `fft_size` and transformed; only the
//! `fft_size/2 + 1` non-negative bins are kept.
//!
//! The inverse overlap-adds plain inverse FFTs of every frame and divides by
//! the summed analysis windows, which is exact wherever that sum is nonzero.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::io::{ByteReader, ByteWriter};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: f64,
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// 32 ms window, 16 ms hop, fft size the next power of two.
    pub fn standard(sample_rate: f64) -> Result<Self> {
        Self::from_durations(sample_rate, 0.032, 0.016)
    }

    pub fn from_durations(sample_rate: f64, window_s: f64, hop_s: f64) -> Result<Self> {
        let window_length = (window_s * sample_rate).round() as usize;
        let hop = (hop_s * sample_rate).round() as usize;
        let cfg = Self {
            sample_rate,
            window_length,
            hop,
            fft_size: window_length.max(1).next_power_of_two(),
            window: WindowKind::Hamming,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.window_length {
            1
        } else {
            1 + (len - self.window_length).div_ceil(self.hop)
        }
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || self.window_length < 2 || self.hop == 0 || self.hop > self.window_length {
            return Err(Error::InvalidArgument(format!(
                "STFT needs a positive sample rate and 0 < hop ≤ window, got window {} hop {}",
                self.window_length, self.hop
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.window_length {
            return Err(Error::InvalidArgument(format!(
                "fft size {} must be a power of two ≥ the window length {}",
                self.fft_size, self.window_length
            )));
        }
        Ok(())
    }

    /// Whether shifted windows sum to a constant.
    pub fn is_cola(&self) -> bool {
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        sums.iter().all(|s| (s - mean).abs() <= 1e-9 * mean)
    }
}

/// Which signal a spectrogram holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    /// Array measurements `x`.
    Measured,
    /// Direct component `x_d`.
    MeasuredDirect,
    /// Reverberant component `x_r`.
    MeasuredReverb,
    /// Binaural reference `p`.
    Binaural,
    /// Filter output `z`.
    Estimate,
}

impl Origin {
    fn code(self) -> u8 {
        match self {
            Origin::Measured => 0,
            Origin::MeasuredDirect => 1,
            Origin::MeasuredReverb => 2,
            Origin::Binaural => 3,
            Origin::Estimate => 4,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Origin::Measured,
            1 => Origin::MeasuredDirect,
            2 => Origin::MeasuredReverb,
            3 => Origin::Binaural,
            4 => Origin::Estimate,
            other => return Err(Error::MalformedHeader(format!("unknown spectrogram origin {other}"))),
        })
    }
}

/// `channels × frames × bins` complex values, stored in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    config: StftConfig,
    origin: Origin,
    channels: usize,
    frames: usize,
    signal_len: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(config: StftConfig, origin: Origin, channels: usize, signal_len: usize) -> Self {
        let frames = config.frame_count(signal_len);
        Self {
            config,
            origin,
            channels,
            frames,
            signal_len,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * config.bins()],
        }
    }

    pub fn from_data(
        config: StftConfig,
        origin: Origin,
        channels: usize,
        signal_len: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        let mut out = Self::zeros(config, origin, channels, signal_len);
        if data.len() != out.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram data has {} values, expected {}",
                data.len(),
                out.data.len()
            )));
        }
        if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        out.data = data;
        Ok(out)
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn offset(&self, channel: usize, frame: usize) -> usize {
        (channel * self.frames + frame) * self.bins()
    }

    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[self.offset(channel, frame) + bin]
    }

    pub fn frame(&self, channel: usize, frame: usize) -> &[Complex64] {
        let at = self.offset(channel, frame);
        &self.data[at..at + self.bins()]
    }

    pub fn frame_mut(&mut self, channel: usize, frame: usize) -> &mut [Complex64] {
        let at = self.offset(channel, frame);
        let bins = self.bins();
        &mut self.data[at..at + bins]
    }

    pub fn channel(&self, channel: usize) -> &[Complex64] {
        let n = self.frames * self.bins();
        &self.data[channel * n..(channel + 1) * n]
    }

    /// One channel as its own spectrogram.
    pub fn select(&self, channel: usize) -> Spectrogram {
        Spectrogram {
            channels: 1,
            data: self.channel(channel).to_vec(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.config == other.config
            && self.channels == other.channels
            && self.frames == other.frames
            && self.signal_len == other.signal_len
    }

    pub(crate) fn check_shape(&self, other: &Spectrogram, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}×{}×{} vs {}×{}×{}",
                self.channels,
                self.frames,
                self.bins(),
                other.channels,
                other.frames,
                other.bins()
            )))
        }
    }

    /// Element-wise `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Spectrogram, b: f64, origin: Origin) -> Result<Spectrogram> {
        self.check_shape(other, "combining spectrograms")?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x * a + y * b).collect();
        Ok(Spectrogram {
            origin,
            data,
            ..self.clone()
        })
    }

    pub(crate) fn write_into(&self, w: &mut ByteWriter) {
        w.f64(self.config.sample_rate);
        w.u32(self.config.window_length as u32);
        w.u32(self.config.hop as u32);
        w.u32(self.config.fft_size as u32);
        w.u8(self.origin.code());
        w.u32(self.channels as u32);
        w.u64(self.signal_len as u64);
        for z in &self.data {
            w.f64(z.re);
            w.f64(z.im);
        }
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let config = StftConfig {
            sample_rate: r.f64()?,
            window_length: r.u32()? as usize,
            hop: r.u32()? as usize,
            fft_size: r.u32()? as usize,
            window: WindowKind::Hamming,
        };
        config.validate().map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let origin = Origin::from_code(r.u8()?)?;
        let channels = r.u32()? as usize;
        let signal_len = r.u64()? as usize;
        let count = channels * config.frame_count(signal_len) * config.bins();
        r.check_remaining(count, 16)?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let re = r.f64()?;
            data.push(Complex64::new(re, r.f64()?));
        }
        Self::from_data(config, origin, channels, signal_len, data)
    }
}

/// Planned transforms for one configuration.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    fn analyze(&self, signal: &[f64], frame: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.config.fft_size];
        let start = frame * self.config.hop;
        for (i, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
            if let Some(&s) = signal.get(start + i) {
                b.re = s * w;
            }
        }
        self.forward.process(&mut buf);
        buf.truncate(self.config.bins());
        buf
    }

    /// Forward transform of equal-length real channels.
    pub fn forward(&self, channels: &[Vec<f64>], origin: Origin) -> Result<Spectrogram> {
        let len = channels.first().map_or(0, |c| c.len());
        if len == 0 {
            return Err(Error::InvalidArgument("cannot transform an empty signal".into()));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::DimensionMismatch("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("time signal"));
        }
        let frames = self.config.frame_count(len);
        let jobs: Vec<(usize, usize)> = (0..channels.len()).flat_map(|c| (0..frames).map(move |t| (c, t))).collect();
        let data: Vec<Complex64> = jobs
            .par_iter()
            .flat_map_iter(|&(c, t)| self.analyze(&channels[c], t))
            .collect();
        Spectrogram::from_data(self.config, origin, channels.len(), len, data)
    }

    /// Overlap-add inverse, returning `signal_len` samples per channel.
    pub fn inverse(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        if spec.config != self.config {
            return Err(Error::DimensionMismatch("spectrogram was made with another STFT config".into()));
        }
        if !self.config.is_cola() {
            return Err(Error::InvalidArgument(format!(
                "window {} with hop {} does not overlap-add to a constant",
                self.config.window_length, self.config.hop
            )));
        }
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let span = (spec.frames - 1) * hop + self.config.window_length;
        let mut norm = vec![0.0; span];
        for t in 0..spec.frames {
            for (i, w) in self.window.iter().enumerate() {
                norm[t * hop + i] += w;
            }
        }
        let out = (0..spec.channels)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; span];
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for t in 0..spec.frames {
                    let half = spec.frame(c, t);
                    buf[0] = Complex64::new(half[0].re, 0.0);
                    for b in 1..n / 2 {
                        buf[b] = half[b];
                        buf[n - b] = half[b].conj();
                    }
                    buf[n / 2] = Complex64::new(half[n / 2].re, 0.0);
                    self.inverse.process(&mut buf);
                    for i in 0..self.config.window_length {
                        acc[t * hop + i] += buf[i].re / n as f64;
                    }
                }
                acc.iter()
                    .zip(&norm)
                    .take(spec.signal_len)
                    .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(out)
    }
}

pub fn stft(channels: &[Vec<f64>], config: StftConfig, origin: Origin) -> Result<Spectrogram> {
    Stft::new(config)?.forward(channels, origin)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    Stft::new(spec.config)?.inverse(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cfg() -> StftConfig {
        StftConfig::standard(48_000.0).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..len).map(|_| n.sample(&mut rng)).collect()
    }

    #[test]
    fn standard_parameters() {
        let c = cfg();
        assert_eq!((c.window_length, c.hop, c.fft_size, c.bins()), (1536, 768, 2048, 1025));
        assert!(c.is_cola());
        assert_eq!(c.frame_count(1536), 1);
        assert_eq!(c.frame_count(1537), 2);
        assert_eq!(c.frame_count(48_000), 1 + (48_000usize - 1536).div_ceil(768));
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let s = stft(&[vec![1.0; 48_000]], cfg(), Origin::Measured).unwrap();
        for t in 2..s.frames() - 2 {
            let f = s.frame(0, t);
            let peak = f[0].norm();
            assert!(f.iter().all(|z| z.norm() <= peak));
            // beyond the Hamming main lobe everything sits ≥ 40 dB down
            let lobe = 2 * s.config().fft_size / s.config().window_length + 1;
            assert!(f[lobe..].iter().all(|z| 20.0 * (z.norm() / peak).log10() < -40.0));
        }
    }

    #[test]
    fn sinusoid_peak_and_sidelobes() {
        let c = cfg();
        let bin = 100;
        let f0 = bin as f64 * c.sample_rate / c.fft_size as f64;
        let x: Vec<f64> = (0..24_000).map(|n| (2.0 * PI * f0 * n as f64 / c.sample_rate).cos()).collect();
        let s = stft(&[x], c, Origin::Measured).unwrap();
        let f = s.frame(0, 10);
        let peak = f[bin].norm();
        assert!(f.iter().all(|z| z.norm() <= peak));
        let lobe = 2 * c.fft_size / c.window_length + 1;
        for (b, z) in f.iter().enumerate() {
            if b.abs_diff(bin) > lobe {
                assert!(20.0 * (z.norm() / peak).log10() <= -40.0, "bin {b}");
            }
        }
    }

    #[test]
    fn linearity() {
        let a = noise(10_000, 1);
        let b = noise(10_000, 2);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let sa = stft(&[a], cfg(), Origin::MeasuredDirect).unwrap();
        let sb = stft(&[b], cfg(), Origin::MeasuredReverb).unwrap();
        let ss = stft(&[sum], cfg(), Origin::Measured).unwrap();
        for ((x, y), z) in sa.data().iter().zip(sb.data()).zip(ss.data()) {
            assert!((x + y - z).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_energy() {
        let x = noise(48_000, 3);
        let s = stft(std::slice::from_ref(&x), cfg(), Origin::Measured).unwrap();
        let y = istft(&s).unwrap().remove(0);
        assert_eq!(y.len(), x.len());
        let interior = 1536..x.len() - 1536;
        let err: f64 = interior.clone().map(|n| (x[n] - y[n]).powi(2)).sum();
        let energy: f64 = interior.clone().map(|n| x[n].powi(2)).sum();
        assert!((err / energy).sqrt() < 1e-10);
        let out_energy: f64 = interior.map(|n| y[n].powi(2)).sum();
        assert!(((out_energy - energy) / energy).abs() < 1e-9);
    }

    #[test]
    fn zero_in_zero_out() {
        let s = Spectrogram::zeros(cfg(), Origin::Estimate, 2, 5000);
        assert!(istft(&s).unwrap().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(stft(&[vec![]], cfg(), Origin::Measured).is_err());
        let mut c = cfg();
        c.hop = 500;
        assert!(!c.is_cola());
        let s = Spectrogram::zeros(c, Origin::Estimate, 1, 5000);
        assert!(istft(&s).is_err());
        c.fft_size = 1000;
        assert!(c.validate().is_err());
    }
}
