//! Applying filter banks to array spectrograms and rendering binaural
//! references from SH-domain signals.
//!
//! The array output for ear `e` is `z_e(n, k) = Σ_m c*_{e,m}(k) x_m(n, k)`.
//! SH-domain signals `a_nm` are decoded as `p_e = Σ_nm a_nm ∗ w_nm` with the
//! decoder weights of [`HrtfShCoefficients::decoder_weight`], which
//! reproduces `h_e(û) s` for a single plane wave from `û`.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::hrtf::{Ear, HrtfShCoefficients, PointReceiverHead, ShHrir};
use crate::io::{Audio, ByteReader, ByteWriter};
use crate::scene::ShSignal;
use crate::solver::BsmFilterBank;
use crate::special::{sh_count, sh_degrees, sh_index};
use crate::sphere::FrequencyGrid;
use crate::stft::{Origin, Spectrogram, Stft};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinauralTag {
    Reference,
    ReferenceDirect,
    ReferenceReverb,
    BsmStandard,
    BsmDecomposed,
    ComponentDirect,
    ComponentReverb,
}

impl BinauralTag {
    pub const ALL: [BinauralTag; 7] = [
        BinauralTag::Reference,
        BinauralTag::ReferenceDirect,
        BinauralTag::ReferenceReverb,
        BinauralTag::BsmStandard,
        BinauralTag::BsmDecomposed,
        BinauralTag::ComponentDirect,
        BinauralTag::ComponentReverb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinauralTag::Reference => "reference",
            BinauralTag::ReferenceDirect => "reference-direct",
            BinauralTag::ReferenceReverb => "reference-reverb",
            BinauralTag::BsmStandard => "bsm-standard",
            BinauralTag::BsmDecomposed => "bsm-decomposed",
            BinauralTag::ComponentDirect => "component-direct",
            BinauralTag::ComponentReverb => "component-reverb",
        }
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|t| *t == self).unwrap() as u8
    }

    fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::MalformedHeader(format!("unknown binaural tag {code}")))
    }
}

/// Left and right single-channel spectrograms of one rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralSpectrogram {
    left: Spectrogram,
    right: Spectrogram,
    tag: BinauralTag,
}

impl BinauralSpectrogram {
    pub fn new(left: Spectrogram, right: Spectrogram, tag: BinauralTag) -> Result<Self> {
        if left.channels() != 1 {
            return Err(Error::DimensionMismatch("binaural ears must be single-channel".into()));
        }
        left.check_shape(&right, "left and right ears")?;
        Ok(Self { left, right, tag })
    }

    pub fn ear(&self, ear: Ear) -> &Spectrogram {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }

    pub fn left(&self) -> &Spectrogram {
        &self.left
    }

    pub fn right(&self) -> &Spectrogram {
        &self.right
    }

    pub fn tag(&self) -> BinauralTag {
        self.tag
    }

    /// Relabels the rendering; used when an artifact stands in for another.
    pub fn retagged(mut self, tag: BinauralTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn same_shape(&self, other: &BinauralSpectrogram) -> bool {
        self.left.same_shape(&other.left)
    }

    fn zip(&self, other: &BinauralSpectrogram, sign: f64, tag: BinauralTag) -> Result<Self> {
        let origin = Origin::Binaural;
        Ok(Self {
            left: self.left.combine(1.0, &other.left, sign, origin)?,
            right: self.right.combine(1.0, &other.right, sign, origin)?,
            tag,
        })
    }

    /// Sums the two component renderings into the decomposed estimate; any
    /// other pairing is rejected.
    pub fn add(&self, other: &BinauralSpectrogram) -> Result<Self> {
        use BinauralTag::*;
        match (self.tag, other.tag) {
            (ComponentDirect, ComponentReverb) | (ComponentReverb, ComponentDirect) => self.zip(other, 1.0, BsmDecomposed),
            (a, b) => Err(Error::Provenance(format!("cannot add {} and {}", a.name(), b.name()))),
        }
    }

    /// The reverberant reference as full minus direct reference.
    pub fn subtract(&self, other: &BinauralSpectrogram) -> Result<Self> {
        use BinauralTag::*;
        match (self.tag, other.tag) {
            (Reference, ReferenceDirect) => self.zip(other, -1.0, ReferenceReverb),
            (a, b) => Err(Error::Provenance(format!("cannot subtract {} from {}", b.name(), a.name()))),
        }
    }

    /// Both ears multiplied by `alpha`, keeping the tag.
    pub fn scaled(&self, alpha: Complex64) -> Self {
        let scale = |s: &Spectrogram| {
            let mut s = s.clone();
            s.data_mut().iter_mut().for_each(|z| *z *= alpha);
            s
        };
        Self {
            left: scale(&self.left),
            right: scale(&self.right),
            tag: self.tag,
        }
    }

    /// Stereo time signal via the inverse STFT.
    pub fn to_audio(&self) -> Result<Audio> {
        let stft = Stft::new(*self.left.config())?;
        let left = stft.inverse(&self.left)?.remove(0);
        let right = stft.inverse(&self.right)?.remove(0);
        Audio::new(self.left.config().sample_rate.round() as u32, vec![left, right])
    }

    /// `BSMP` archive: tag, digest, then both ears.
    pub fn to_bytes(&self, digest: [u8; 32]) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BSMP", 1);
        w.u8(self.tag.code());
        w.bytes(&digest);
        self.left.write_into(&mut w);
        self.right.write_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, [u8; 32])> {
        let mut r = ByteReader::new(bytes, b"BSMP", 1)?;
        let tag = BinauralTag::from_code(r.u8()?)?;
        let digest = r.array()?;
        let left = Spectrogram::read_from(&mut r)?;
        let right = Spectrogram::read_from(&mut r)?;
        r.expect_end()?;
        Ok((Self::new(left, right, tag)?, digest))
    }

    pub fn save(&self, path: impl AsRef<Path>, digest: [u8; 32]) -> Result<()> {
        std::fs::write(path, self.to_bytes(digest))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, [u8; 32])> {
        Self::from_bytes(&crate::io::read_existing(path)?)
    }
}

fn check_bank(bank: &BsmFilterBank, x: &Spectrogram) -> Result<()> {
    if bank.bins() != x.bins() || bank.mics() != x.channels() {
        return Err(Error::DimensionMismatch(format!(
            "filter bank is {} bins × {} mics, spectrogram {} bins × {} channels",
            bank.bins(),
            bank.mics(),
            x.bins(),
            x.channels()
        )));
    }
    if let Some(n) = bank.grid().fft_size() {
        if n != x.config().fft_size || bank.grid().sample_rate() != x.config().sample_rate {
            return Err(Error::DimensionMismatch("filter bank grid differs from the STFT grid".into()));
        }
    }
    Ok(())
}

fn filter_ear(bank: &BsmFilterBank, x: &Spectrogram, ear: Ear) -> Spectrogram {
    let bins = x.bins();
    let frames = x.frames();
    let data: Vec<Complex64> = (0..frames)
        .into_par_iter()
        .flat_map_iter(|t| {
            (0..bins).map(move |k| {
                bank.coefficients(ear, k)
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c.conj() * x.get(m, t, k))
                    .sum::<Complex64>()
            })
        })
        .collect();
    Spectrogram::from_data(*x.config(), Origin::Estimate, 1, x.signal_len(), data).expect("shape from input")
}

fn apply_tagged(bank: &BsmFilterBank, x: &Spectrogram, tag: BinauralTag) -> Result<BinauralSpectrogram> {
    check_bank(bank, x)?;
    BinauralSpectrogram::new(filter_ear(bank, x, Ear::Left), filter_ear(bank, x, Ear::Right), tag)
}

/// `z = cᴴ x` per bin and frame. The tag follows the input: component
/// renderings for `x_d` and `x_r`, the standard estimate for `x`.
pub fn apply_filterbank(bank: &BsmFilterBank, x: &Spectrogram) -> Result<BinauralSpectrogram> {
    let tag = match x.origin() {
        Origin::MeasuredDirect => BinauralTag::ComponentDirect,
        Origin::MeasuredReverb => BinauralTag::ComponentReverb,
        Origin::Measured => BinauralTag::BsmStandard,
        other => return Err(Error::Provenance(format!("cannot filter a {other:?} spectrogram"))),
    };
    apply_tagged(bank, x, tag)
}

/// `x_r = x − x_d`.
pub fn decompose_measurement(x: &Spectrogram, x_d: &Spectrogram) -> Result<Spectrogram> {
    x.combine(1.0, x_d, -1.0, Origin::MeasuredReverb)
}

/// `p̂ = c_dᴴ x_d + c_rᴴ x_r`.
pub fn render_decomposed(
    x_d: &Spectrogram,
    x_r: &Spectrogram,
    bank_d: &BsmFilterBank,
    bank_r: &BsmFilterBank,
) -> Result<BinauralSpectrogram> {
    x_d.check_shape(x_r, "direct and reverberant measurements")?;
    let direct = apply_tagged(bank_d, x_d, BinauralTag::ComponentDirect)?;
    let reverb = apply_tagged(bank_r, x_r, BinauralTag::ComponentReverb)?;
    direct.add(&reverb)
}

/// Whole-field BSM: `c_rᴴ x`.
pub fn render_standard(x: &Spectrogram, bank_r: &BsmFilterBank) -> Result<BinauralSpectrogram> {
    apply_tagged(bank_r, x, BinauralTag::BsmStandard)
}

/// Per-ear real signals of length `size` (circular) from SH-domain signals
/// and decoder weights on the matching `size`-point grid.
fn decode_sh(sh: &ShSignal, coeffs: &HrtfShCoefficients, size: usize) -> Result<[Vec<f64>; 2]> {
    if coeffs.grid().fft_size() != Some(size) {
        return Err(Error::DimensionMismatch(format!(
            "decoder weights must sit on a {size}-point FFT grid"
        )));
    }
    if sh.len() > size {
        return Err(Error::DimensionMismatch(format!(
            "SH signal of {} samples exceeds the {size}-point decoding grid",
            sh.len()
        )));
    }
    let order = sh.order().min(coeffs.order());
    let degrees: Vec<(usize, i64)> = sh_degrees(order).collect();
    let fft = FftPlanner::new().plan_fft_forward(size);
    let half = size / 2 + 1;
    const CHUNK: usize = 16;
    // chunked partial sums, reduced in chunk order for a fixed summation order
    let partials: Vec<[Vec<Complex64>; 2]> = degrees
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = [vec![Complex64::new(0.0, 0.0); half], vec![Complex64::new(0.0, 0.0); half]];
            let mut buf = vec![Complex64::new(0.0, 0.0); size];
            for &(n, m) in chunk {
                buf.fill(Complex64::new(0.0, 0.0));
                buf[..sh.len()].copy_from_slice(sh.channel(sh_index(n, m)));
                fft.process(&mut buf);
                for (e, ear) in Ear::BOTH.into_iter().enumerate() {
                    for (k, a) in acc[e].iter_mut().enumerate() {
                        *a += buf[k] * coeffs.decoder_weight(ear, k, n, m);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = [vec![Complex64::new(0.0, 0.0); half], vec![Complex64::new(0.0, 0.0); half]];
    for p in &partials {
        for e in 0..2 {
            for (t, v) in total[e].iter_mut().zip(&p[e]) {
                *t += v;
            }
        }
    }
    let [l, r] = total;
    Ok([dsp::irfft(&l, size), dsp::irfft(&r, size)])
}

/// Binaural reference for a full SH-domain signal. `coeffs` must lie on an
/// FFT grid at least as long as the signal.
pub fn render_reference(
    sh: &ShSignal,
    coeffs: &HrtfShCoefficients,
    stft: &Stft,
    tag: BinauralTag,
) -> Result<BinauralSpectrogram> {
    let size = coeffs
        .grid()
        .fft_size()
        .ok_or_else(|| Error::InvalidArgument("decoder weights need an FFT grid".into()))?;
    let [mut l, mut r] = decode_sh(sh, coeffs, size)?;
    l.truncate(sh.len());
    r.truncate(sh.len());
    binaural_stft(stft, l, r, tag)
}

fn binaural_stft(stft: &Stft, left: Vec<f64>, right: Vec<f64>, tag: BinauralTag) -> Result<BinauralSpectrogram> {
    let l = stft.forward(&[left], Origin::Binaural)?;
    let r = stft.forward(&[right], Origin::Binaural)?;
    BinauralSpectrogram::new(l, r, tag)
}

/// Source of SH-domain HRTF coefficients for the reference renderer.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceHrtf {
    Analytic(PointReceiverHead),
    Measured(ShHrir),
}

impl ReferenceHrtf {
    /// Length of the head's impulse responses, used to size the decoding grid.
    pub fn ir_length(&self) -> usize {
        match self {
            ReferenceHrtf::Analytic(_) => 0,
            ReferenceHrtf::Measured(h) => h.ir_length,
        }
    }

    pub fn coefficients(&self, order: usize, grid: &FrequencyGrid) -> Result<HrtfShCoefficients> {
        match self {
            ReferenceHrtf::Analytic(head) => Ok(head.sh_coefficients(order, grid)),
            ReferenceHrtf::Measured(h) => h.spectrum(order, grid),
        }
    }
}

/// Binaural room impulse responses from an SH-domain room impulse response.
pub fn binaural_rir(rir: &ShSignal, hrtf: &ReferenceHrtf, order: usize, speed_of_sound: f64) -> Result<[Vec<f64>; 2]> {
    // margin for the non-causal part of analytic heads and the IR tail
    let size = dsp::next_pow2(rir.len() + hrtf.ir_length() + 256);
    let grid = FrequencyGrid::from_fft(rir.sample_rate(), size, speed_of_sound)?;
    let coeffs = hrtf.coefficients(order.min(rir.order()), &grid)?;
    decode_sh(rir, &coeffs, size)
}

/// Binaural reference for a source signal rendered through an SH-domain
/// room impulse response: the binaural room impulse responses are decoded
/// first and then convolved with the source.
pub fn render_reference_from_rir(
    rir: &ShSignal,
    source: &[f64],
    hrtf: &ReferenceHrtf,
    order: usize,
    speed_of_sound: f64,
    stft: &Stft,
    tag: BinauralTag,
) -> Result<BinauralSpectrogram> {
    let [l, r] = binaural_rir(rir, hrtf, order, speed_of_sound)?;
    let left = dsp::convolve_real(&l, source, source.len());
    let right = dsp::convolve_real(&r, source, source.len());
    binaural_stft(stft, left, right, tag)
}

/// Number of SH channels a reference of `order` uses.
pub fn reference_channels(order: usize) -> usize {
    sh_count(order)
}
