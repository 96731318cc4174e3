//! NMSE between binaural spectrograms and comparisons between pipelines.
//!
//! Per bin `k` and ear, `NMSE(k) = Σ_n |p̂(n,k) − p(n,k)|² / Σ_n |p(n,k)|²`
//! over the retained frames. Bins whose reference energy is below
//! [`ENERGY_FLOOR`] times the strongest bin are flagged instead of divided.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hrtf::Ear;
use crate::render::{BinauralSpectrogram, BinauralTag};
use crate::{Error, Result};

pub const ENERGY_FLOOR: f64 = 1e-12;
pub const DEFAULT_FRAME_TRIM: usize = 2;

/// Half-open range of frames entering the frame mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    /// All frames except `trim` at each edge.
    pub fn trimmed(frames: usize, trim: usize) -> Result<Self> {
        if frames <= 2 * trim {
            return Err(Error::InvalidArgument(format!(
                "{frames} frames leave nothing after trimming {trim} per edge"
            )));
        }
        Ok(Self {
            start: trim,
            end: frames - trim,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinFlag {
    Ok,
    InsufficientEnergy,
}

impl BinFlag {
    pub fn name(self) -> &'static str {
        match self {
            BinFlag::Ok => "ok",
            BinFlag::InsufficientEnergy => "insufficient_energy",
        }
    }
}

/// Per-bin NMSE of one ear.
#[derive(Debug, Clone, PartialEq)]
pub struct EarReport {
    /// Linear NMSE, `None` for flagged bins.
    pub nmse: Vec<Option<f64>>,
    /// Mean reference power per bin.
    pub reference_energy: Vec<f64>,
    /// Mean error power per bin.
    pub error_energy: Vec<f64>,
}

impl EarReport {
    pub fn flag(&self, bin: usize) -> BinFlag {
        if self.nmse[bin].is_some() {
            BinFlag::Ok
        } else {
            BinFlag::InsufficientEnergy
        }
    }

    pub fn db(&self, bin: usize) -> Option<f64> {
        self.nmse[bin].map(to_db)
    }

    /// Energy-weighted NMSE over the bins selected by `keep`.
    pub fn weighted(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (mut err, mut refe) = (0.0, 0.0);
        for b in 0..self.nmse.len() {
            if self.nmse[b].is_some() && keep(b) {
                err += self.error_energy[b];
                refe += self.reference_energy[b];
            }
        }
        (refe > 0.0).then(|| err / refe)
    }

    /// Plain mean of the linear NMSE over the bins selected by `keep`.
    pub fn mean(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let vals: Vec<f64> = (0..self.nmse.len()).filter(|&b| keep(b)).filter_map(|b| self.nmse[b]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseReport {
    pub frequencies: Vec<f64>,
    pub left: EarReport,
    pub right: EarReport,
    pub frames: FrameRange,
    pub estimate: BinauralTag,
    pub reference: BinauralTag,
    pub scene_digest: [u8; 32],
}

impl NmseReport {
    pub fn ear(&self, ear: Ear) -> &EarReport {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }

    pub fn bins(&self) -> usize {
        self.frequencies.len()
    }

    /// Energy-weighted NMSE over all valid bins, in dB.
    pub fn broadband_db(&self, ear: Ear) -> Option<f64> {
        self.ear(ear).weighted(|_| true).map(to_db)
    }

    /// Rows `ear,freq_hz,nmse_linear,nmse_db,flag`, left ear first.
    pub fn to_csv(&self) -> String {
        self.format_rows(',', true)
    }

    /// Whitespace-separated variant for plotting tools, with a `#` header.
    pub fn to_whitespace(&self) -> String {
        self.format_rows(' ', false)
    }

    fn format_rows(&self, sep: char, csv: bool) -> String {
        let mut out = String::new();
        let header = ["ear", "freq_hz", "nmse_linear", "nmse_db", "flag"].join(&sep.to_string());
        if csv {
            out.push_str(&header);
        } else {
            out.push_str("# ");
            out.push_str(&header);
        }
        out.push('\n');
        for ear in Ear::BOTH {
            let r = self.ear(ear);
            for (b, f) in self.frequencies.iter().enumerate() {
                let (lin, db) = match r.nmse[b] {
                    Some(v) => (format!("{v:e}"), format!("{}", to_db(v))),
                    None => ("nan".to_string(), "nan".to_string()),
                };
                let _ = writeln!(out, "{}{sep}{f}{sep}{lin}{sep}{db}{sep}{}", ear.name(), r.flag(b).name());
            }
        }
        out
    }
}

fn ear_nmse(est: &BinauralSpectrogram, reference: &BinauralSpectrogram, ear: Ear, frames: FrameRange) -> EarReport {
    let (e, r) = (est.ear(ear), reference.ear(ear));
    let bins = r.bins();
    let mut err = vec![0.0; bins];
    let mut refe = vec![0.0; bins];
    for t in frames.start..frames.end {
        let (ef, rf) = (e.frame(0, t), r.frame(0, t));
        for k in 0..bins {
            err[k] += (ef[k] - rf[k]).norm_sqr();
            refe[k] += rf[k].norm_sqr();
        }
    }
    let n = frames.len() as f64;
    err.iter_mut().for_each(|v| *v /= n);
    refe.iter_mut().for_each(|v| *v /= n);
    let max = refe.iter().cloned().fold(0.0, f64::max);
    let nmse = err
        .iter()
        .zip(&refe)
        .map(|(e, r)| (*r > ENERGY_FLOOR * max && *r > 0.0).then(|| e / r))
        .collect();
    EarReport {
        nmse,
        reference_energy: refe,
        error_energy: err,
    }
}

/// Per-bin, per-ear NMSE of `est` against `reference` over `frames`.
pub fn nmse(
    est: &BinauralSpectrogram,
    reference: &BinauralSpectrogram,
    frames: FrameRange,
    scene_digest: [u8; 32],
) -> Result<NmseReport> {
    if !est.same_shape(reference) {
        return Err(Error::DimensionMismatch("estimate and reference spectrograms differ in shape".into()));
    }
    if frames.is_empty() || frames.end > reference.left().frames() {
        return Err(Error::InvalidArgument(format!(
            "frame range {}..{} outside the {} available frames",
            frames.start,
            frames.end,
            reference.left().frames()
        )));
    }
    let left = ear_nmse(est, reference, Ear::Left, frames);
    let right = ear_nmse(est, reference, Ear::Right, frames);
    if left.nmse.iter().all(Option::is_none) || right.nmse.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument("reference has no energy in the evaluated frames".into()));
    }
    let cfg = reference.left().config();
    let frequencies = (0..cfg.bins()).map(|b| b as f64 * cfg.sample_rate / cfg.fft_size as f64).collect();
    Ok(NmseReport {
        frequencies,
        left,
        right,
        frames,
        estimate: est.tag(),
        reference: reference.tag(),
        scene_digest,
    })
}

/// Octave bands centered on 125 Hz · 2ᵏ whose upper edge stays within Nyquist.
pub fn octave_bands(nyquist: f64) -> Vec<(f64, f64)> {
    let r = std::f64::consts::SQRT_2;
    (0..)
        .map(|k| 125.0 * 2f64.powi(k))
        .map(|c| (c / r, c * r))
        .take_while(|&(_, hi)| hi <= nyquist)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandValue {
    pub low_hz: f64,
    pub high_hz: f64,
    pub left_db: f64,
    pub right_db: f64,
}

fn in_band(f: f64, lo: f64, hi: f64, nyquist: f64) -> bool {
    f >= lo && (f < hi || (hi >= nyquist && f <= hi))
}

/// Energy-weighted mean NMSE per band `[lo, hi)`, in dB.
pub fn band_summary(report: &NmseReport, bands: &[(f64, f64)], nyquist: f64) -> Result<Vec<BandValue>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            if !(lo >= 0.0 && hi > lo && hi <= nyquist) {
                return Err(Error::InvalidArgument(format!("band [{lo}, {hi}) outside (0, {nyquist}]")));
            }
            let keep = |b: usize| in_band(report.frequencies[b], lo, hi, nyquist);
            let value = |ear: Ear| {
                report
                    .ear(ear)
                    .weighted(keep)
                    .map(to_db)
                    .ok_or_else(|| Error::InvalidArgument(format!("band [{lo}, {hi}) holds no evaluated bins")))
            };
            Ok(BandValue {
                low_hz: lo,
                high_hz: hi,
                left_db: value(Ear::Left)?,
                right_db: value(Ear::Right)?,
            })
        })
        .collect()
}

/// `dB(b) − dB(a)`, with equal values (including two exact-zero NMSEs)
/// counting as no change.
fn improvement(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        to_db(b) - to_db(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarComparison {
    /// Per-bin improvement of `a` over `b` in dB; `None` where either is flagged.
    pub improvement_db: Vec<Option<f64>>,
    pub broadband_db: f64,
    pub fraction_improved: f64,
}

/// How much pipeline `a` improves on pipeline `b`; positive values mean
/// `a` has the lower NMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub frequencies: Vec<f64>,
    pub left: EarComparison,
    pub right: EarComparison,
    pub a: BinauralTag,
    pub b: BinauralTag,
}

impl Comparison {
    pub fn ear(&self, ear: Ear) -> &EarComparison {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }

    /// Improvement per band, from the energy-weighted band NMSEs.
    pub fn band_improvements(a: &NmseReport, b: &NmseReport, bands: &[(f64, f64)], nyquist: f64) -> Result<Vec<BandValue>> {
        let ba = band_summary(a, bands, nyquist)?;
        let bb = band_summary(b, bands, nyquist)?;
        Ok(ba
            .iter()
            .zip(&bb)
            .map(|(x, y)| BandValue {
                low_hz: x.low_hz,
                high_hz: x.high_hz,
                left_db: y.left_db - x.left_db,
                right_db: y.right_db - x.right_db,
            })
            .collect())
    }

    /// Rows `ear,freq_hz,improvement_db,flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ear,freq_hz,improvement_db,flag\n");
        for ear in Ear::BOTH {
            for (b, f) in self.frequencies.iter().enumerate() {
                let (v, flag) = match self.ear(ear).improvement_db[b] {
                    Some(v) => (format!("{v}"), BinFlag::Ok),
                    None => ("nan".to_string(), BinFlag::InsufficientEnergy),
                };
                let _ = writeln!(out, "{},{f},{v},{}", ear.name(), flag.name());
            }
        }
        out
    }
}

pub fn compare(a: &NmseReport, b: &NmseReport) -> Result<Comparison> {
    if a.scene_digest != b.scene_digest {
        return Err(Error::Digest("reports come from different scenes".into()));
    }
    if a.frequencies != b.frequencies || a.frames != b.frames || a.reference != b.reference {
        return Err(Error::DimensionMismatch("reports differ in bins, frames or reference".into()));
    }
    let ear = |e: Ear| {
        let (ra, rb) = (a.ear(e), b.ear(e));
        let improvement_db: Vec<Option<f64>> = ra
            .nmse
            .iter()
            .zip(&rb.nmse)
            .map(|(x, y)| Some(improvement((*x)?, (*y)?)))
            .collect();
        let valid: Vec<f64> = improvement_db.iter().flatten().copied().collect();
        let fraction_improved = valid.iter().filter(|v| **v > 0.0).count() as f64 / valid.len().max(1) as f64;
        let broadband_db = match (ra.weighted(|_| true), rb.weighted(|_| true)) {
            (Some(x), Some(y)) => improvement(x, y),
            _ => 0.0,
        };
        EarComparison {
            improvement_db,
            broadband_db,
            fraction_improved,
        }
    };
    Ok(Comparison {
        frequencies: a.frequencies.clone(),
        left: ear(Ear::Left),
        right: ear(Ear::Right),
        a: a.estimate,
        b: b.estimate,
    })
}
