//! Shoebox image-method simulation and scene statistics.
//!
//! The room spans `origin + [0, Lx] × [0, Ly] × [0, Lz]`. Walls are ordered
//! `x₀, x₁, y₀, y₁, z₀, z₁` (`x₀` at the origin side). Reflection
//! coefficients are frequency-independent pressure factors.
//!
//! Each image contributes `g s(t − τ)` with `g = Πβ / (4π d)` and `τ = d/c`,
//! `d` measured to the array center. Under the default
//! [`MicModel::PlaneWave`] an image reaches microphone `r_m` (relative to
//! the center) `r_m·û / c` earlier, with the same gain, where `û` points from
//! the center to the image; this is the far-field model the steering
//! vectors describe. [`MicModel::PointSource`] instead uses the exact
//! distance from every image to every microphone.
//!
//! Images beyond the largest sphere fully covered by the reflection-order
//! bound are discarded when rendering, so the simulated reflection density
//! does not depend on the direction.
//!
//! With positive reflection coefficients every image adds a positive pulse,
//! so once arrivals outnumber samples the impulse response builds up a DC
//! offset that grows with time and masks the exponential decay. Every
//! rendered response is therefore passed through a second-order Butterworth
//! high-pass ([`Scene::high_pass_hz`], 20 Hz by default).

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::io::{ByteReader, ByteWriter};
use crate::solver::Snr;
use crate::special::{sh_basis, sh_count};
use crate::sphere::{dot3, norm3, sub3, ArrayGeometry, Direction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub origin: [f64; 3],
    pub dimensions: [f64; 3],
    pub reflection: [f64; 6],
    pub speed_of_sound: f64,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], reflection: [f64; 6], speed_of_sound: f64) -> Result<Self> {
        let room = Self {
            origin: [0.0; 3],
            dimensions,
            reflection,
            speed_of_sound,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn uniform(dimensions: [f64; 3], beta: f64, speed_of_sound: f64) -> Result<Self> {
        Self::new(dimensions, [beta; 6], speed_of_sound)
    }

    /// Uniform walls whose Eyring reverberation time is `t60`.
    pub fn from_t60(dimensions: [f64; 3], t60: f64, speed_of_sound: f64) -> Result<Self> {
        if !(t60 > 0.0) {
            return Err(Error::InvalidArgument(format!("T60 must be positive, got {t60}")));
        }
        let (v, s) = volume_area(dimensions);
        // 1 − ᾱ = β² = exp(−24 ln10 V / (c S T60))
        let beta = (-12.0 * std::f64::consts::LN_10 * v / (speed_of_sound * s * t60)).exp();
        Self::uniform(dimensions, beta, speed_of_sound)
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self {
            origin: [self.origin[0] + by[0], self.origin[1] + by[1], self.origin[2] + by[2]],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("room dimensions must be positive".into()));
        }
        if self.reflection.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidArgument("reflection coefficients must lie in [0, 1)".into()));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidArgument("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] > self.origin[a] && p[a] < self.origin[a] + self.dimensions[a])
    }

    /// Eyring's reverberation time, with the area-weighted mean absorption
    /// `α = 1 − β²`.
    pub fn eyring_t60(&self) -> f64 {
        let [lx, ly, lz] = self.dimensions;
        let areas = [ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly];
        let (v, s) = volume_area(self.dimensions);
        let alpha: f64 = areas.iter().zip(&self.reflection).map(|(a, b)| a * (1.0 - b * b)).sum::<f64>() / s;
        24.0 * std::f64::consts::LN_10 * v / (-self.speed_of_sound * s * (1.0 - alpha).ln())
    }

    /// Radius of the largest sphere around any interior point whose images
    /// are all included at `max_order`.
    pub fn complete_radius(&self, max_order: usize) -> f64 {
        let s: f64 = self.dimensions.iter().map(|l| 1.0 / (l * l)).sum();
        // the nearest lattice point outside the bound lies on |i|+|j|+|k| = o+1;
        // stay one room diagonal inside to cover every source/receiver pair
        let diag = norm3(self.dimensions);
        ((max_order + 1) as f64 / s.sqrt() - diag).max(0.0)
    }
}

fn volume_area([lx, ly, lz]: [f64; 3]) -> (f64, f64) {
    (lx * ly * lz, 2.0 * (lx * ly + lx * lz + ly * lz))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    /// Lattice index per axis; `|i|+|j|+|k|` is the reflection order.
    pub index: [i32; 3],
    pub gain: f64,
    pub distance: f64,
    pub delay: f64,
    /// Arrival direction at the receiver (pointing towards the image).
    pub direction: Direction,
}

impl ImageSource {
    pub fn order(&self) -> u32 {
        self.index.iter().map(|i| i.unsigned_abs()).sum()
    }
}

/// Number of lattice images with `|i|+|j|+|k| ≤ order`.
pub fn image_count(order: usize) -> usize {
    let o = order;
    (2 * o + 1) * (2 * o * o + 2 * o + 3) / 3
}

/// Enumerates all images up to `max_order`, ordered by lattice index.
/// The first entry is the source itself.
pub fn compute_image_sources(room: &RoomSpec, source: [f64; 3], receiver: [f64; 3], max_order: usize) -> Result<Vec<ImageSource>> {
    room.validate()?;
    if !room.contains(source) {
        return Err(Error::OutsideRoom("source"));
    }
    if !room.contains(receiver) {
        return Err(Error::OutsideRoom("receiver"));
    }
    let o = max_order as i32;
    let rel = sub3(source, room.origin);
    let mut out = Vec::with_capacity(image_count(max_order));
    let mut push = |index: [i32; 3]| -> Result<()> {
        let mut pos = [0.0; 3];
        let mut gain = 1.0;
        for a in 0..3 {
            let i = index[a];
            let l = room.dimensions[a];
            // i = 2n − q: q = 1 mirrors the source coordinate
            let q = i.rem_euclid(2);
            let n = (i + q) / 2;
            pos[a] = room.origin[a] + if q == 0 { rel[a] } else { -rel[a] } + 2.0 * n as f64 * l;
            let near = (n - q).unsigned_abs() as i32;
            let far = n.unsigned_abs() as i32;
            gain *= room.reflection[2 * a].powi(near) * room.reflection[2 * a + 1].powi(far);
        }
        let offset = sub3(pos, receiver);
        let distance = norm3(offset);
        let direction = Direction::from_cartesian(offset)?;
        out.push(ImageSource {
            position: pos,
            index,
            gain: gain / (4.0 * PI * distance),
            distance,
            delay: distance / room.speed_of_sound,
            direction,
        });
        Ok(())
    };
    push([0, 0, 0])?;
    for i in -o..=o {
        let rest = o - i.abs();
        for j in -rest..=rest {
            let rest = rest - j.abs();
            for k in -rest..=rest {
                if (i, j, k) != (0, 0, 0) {
                    push([i, j, k])?;
                }
            }
        }
    }
    Ok(out)
}

/// Half-width of the windowed-sinc fractional delay (32 taps in total).
const SINC_HALF: i64 = 16;

/// Adds `gain · δ(n − delay)` band-limited by a Blackman-windowed sinc.
/// Integer delays reduce to a single tap.
fn fractional_taps(delay: f64) -> (i64, Vec<f64>) {
    let base = delay.floor();
    let frac = delay - base;
    let base = base as i64;
    if frac < 1e-12 {
        return (base, vec![1.0]);
    }
    if 1.0 - frac < 1e-12 {
        return (base + 1, vec![1.0]);
    }
    let start = base - SINC_HALF + 1;
    let taps = (0..2 * SINC_HALF)
        .map(|k| {
            let x = (start + k) as f64 - delay;
            let sinc = (PI * x).sin() / (PI * x);
            let w = 0.42 + 0.5 * (PI * x / SINC_HALF as f64).cos() + 0.08 * (2.0 * PI * x / SINC_HALF as f64).cos();
            sinc * w
        })
        .collect();
    (start, taps)
}

fn add_delayed(buf: &mut [f64], delay: f64, gain: f64) {
    let (start, taps) = fractional_taps(delay);
    for (k, t) in taps.iter().enumerate() {
        let idx = start + k as i64;
        if idx >= 0 && (idx as usize) < buf.len() {
            buf[idx as usize] += gain * t;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MicModel {
    #[default]
    PlaneWave,
    PointSource,
}

/// Which image sources an impulse response contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Full,
    Direct,
    Reverberant,
}

impl Component {
    fn keeps(self, image: &ImageSource) -> bool {
        match self {
            Component::Full => true,
            Component::Direct => image.index == [0, 0, 0],
            Component::Reverberant => image.index != [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: RoomSpec,
    pub source_position: [f64; 3],
    pub source_signal: Vec<f64>,
    pub sample_rate: f64,
    /// Microphones relative to `array.center()`, which is also the head center.
    pub array: ArrayGeometry,
    pub max_order: usize,
    pub mic_model: MicModel,
    pub noise_snr: Snr,
    pub seed: u64,
    /// Cutoff of the high-pass applied to every impulse response; `0`
    /// disables it.
    pub high_pass_hz: f64,
}

/// Default cutoff for [`Scene::high_pass_hz`].
pub const DEFAULT_HIGH_PASS_HZ: f64 = 20.0;

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if !(self.high_pass_hz >= 0.0 && self.high_pass_hz < self.sample_rate / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "high-pass cutoff {} Hz must lie in [0, fs/2)",
                self.high_pass_hz
            )));
        }
        if self.source_signal.is_empty() {
            return Err(Error::InvalidArgument("source signal is empty".into()));
        }
        if !self.room.contains(self.source_position) {
            return Err(Error::OutsideRoom("source"));
        }
        if !self.room.contains(self.array.center()) {
            return Err(Error::OutsideRoom("array center"));
        }
        if self.array.absolute_positions().into_iter().any(|p| !self.room.contains(p)) {
            return Err(Error::OutsideRoom("microphone"));
        }
        Ok(())
    }

    /// Images seen from the array center, limited to the complete sphere.
    pub fn images(&self) -> Result<Vec<ImageSource>> {
        self.validate()?;
        let all = compute_image_sources(&self.room, self.source_position, self.array.center(), self.max_order)?;
        let radius = self.room.complete_radius(self.max_order);
        Ok(all
            .into_iter()
            .filter(|im| im.index == [0, 0, 0] || im.distance <= radius)
            .collect())
    }

    fn rir_length(&self, images: &[ImageSource]) -> usize {
        let max_delay = images.iter().map(|im| im.delay).fold(0.0, f64::max);
        let slack = self.array.max_radius() / self.room.speed_of_sound;
        // room for the high-pass to ring out
        let ring = if self.high_pass_hz > 0.0 { 4.0 / self.high_pass_hz } else { 0.0 };
        ((max_delay + slack + ring) * self.sample_rate).ceil() as usize + SINC_HALF as usize + 2
    }

    fn high_pass(&self) -> Option<Biquad> {
        (self.high_pass_hz > 0.0).then(|| Biquad::butterworth_high_pass(self.high_pass_hz, self.sample_rate))
    }

    /// Impulse responses from the source to every microphone.
    pub fn mic_rirs(&self, component: Component) -> Result<Vec<Vec<f64>>> {
        let images = self.images()?;
        let len = self.rir_length(&images);
        let fs = self.sample_rate;
        let c = self.room.speed_of_sound;
        let center = self.array.center();
        Ok(self
            .array
            .relative_positions()
            .par_iter()
            .map(|&r| {
                let mic = [center[0] + r[0], center[1] + r[1], center[2] + r[2]];
                let mut rir = vec![0.0; len];
                for im in images.iter().filter(|im| component.keeps(im) && im.gain > 0.0) {
                    let (delay, gain) = match self.mic_model {
                        MicModel::PlaneWave => (im.delay - dot3(r, im.direction.unit_vector()) / c, im.gain),
                        MicModel::PointSource => {
                            let d = norm3(sub3(im.position, mic));
                            (d / c, im.gain * im.distance / d)
                        }
                    };
                    add_delayed(&mut rir, delay * fs, gain);
                }
                if let Some(hp) = self.high_pass() {
                    hp.filter_in_place(&mut rir);
                }
                rir
            })
            .collect())
    }

    /// Omnidirectional impulse response at the array center.
    pub fn center_rir(&self, component: Component) -> Result<Vec<f64>> {
        let images = self.images()?;
        let mut rir = vec![0.0; self.rir_length(&images)];
        for im in images.iter().filter(|im| component.keeps(im) && im.gain > 0.0) {
            add_delayed(&mut rir, im.delay * self.sample_rate, im.gain);
        }
        if let Some(hp) = self.high_pass() {
            hp.filter_in_place(&mut rir);
        }
        Ok(rir)
    }

    /// SH-domain impulse response at the array center:
    /// `a_nm(t) = Σ_i g_i Y_nm*(û_i) δ(t − τ_i)`.
    pub fn sh_rir(&self, order: usize, component: Component) -> Result<ShSignal> {
        let images: Vec<ImageSource> = self.images()?.into_iter().filter(|im| component.keeps(im) && im.gain > 0.0).collect();
        let len = self.rir_length(&images);
        let count = sh_count(order);
        let encoded: Vec<(i64, Vec<f64>, Vec<Complex64>)> = images
            .par_iter()
            .map(|im| {
                let (start, taps) = fractional_taps(im.delay * self.sample_rate);
                let y = sh_basis(order, im.direction).into_iter().map(|y| y.conj() * im.gain).collect();
                (start, taps, y)
            })
            .collect();
        const CHUNK: usize = 16;
        let chunks: Vec<Vec<Vec<Complex64>>> = (0..count.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * CHUNK;
                let hi = (lo + CHUNK).min(count);
                let mut out = vec![vec![Complex64::new(0.0, 0.0); len]; hi - lo];
                for (start, taps, y) in &encoded {
                    for (k, t) in taps.iter().enumerate() {
                        let idx = start + k as i64;
                        if idx < 0 || idx as usize >= len {
                            continue;
                        }
                        for (ch, o) in out.iter_mut().enumerate() {
                            o[idx as usize] += y[lo + ch] * t;
                        }
                    }
                }
                if let Some(hp) = self.high_pass() {
                    out.iter_mut().for_each(|o| hp.filter_complex_in_place(o));
                }
                out
            })
            .collect();
        ShSignal::new(order, self.sample_rate, chunks.into_iter().flatten().collect())
    }

    /// Microphone signals split into their direct and reverberant parts;
    /// the full signal is their sum.
    pub fn render_mic_signals(&self) -> Result<MicSignals> {
        let direct = convolve_all(&self.mic_rirs(Component::Direct)?, &self.source_signal);
        let reverb = convolve_all(&self.mic_rirs(Component::Reverberant)?, &self.source_signal);
        let full = direct
            .iter()
            .zip(&reverb)
            .map(|(d, r)| d.iter().zip(r).map(|(a, b)| a + b).collect())
            .collect();
        let full = add_noise(full, self.noise_snr, self.seed);
        Ok(MicSignals { full, direct, reverb })
    }

    /// SH-domain reference signal: the SH impulse response convolved with
    /// the source.
    pub fn render_reference_plane_waves(&self, order: usize, component: Component) -> Result<ShSignal> {
        Ok(self.sh_rir(order, component)?.convolve(&self.source_signal))
    }

    pub fn direct_path_distance(&self) -> f64 {
        norm3(sub3(self.source_position, self.array.center()))
    }
}

/// Second-order IIR section in direct form I.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform Butterworth high-pass.
    fn butterworth_high_pass(cutoff: f64, sample_rate: f64) -> Self {
        let w = 2.0 * PI * cutoff / sample_rate;
        let alpha = w.sin() / std::f64::consts::SQRT_2;
        let cw = w.cos();
        let a0 = 1.0 + alpha;
        let g = (1.0 + cw) / 2.0 / a0;
        Self {
            b: [g, -2.0 * g, g],
            a: [-2.0 * cw / a0, (1.0 - alpha) / a0],
        }
    }

    fn filter_in_place(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            (x2, x1, y2, y1) = (x1, x0, y1, y0);
            *v = y0;
        }
    }

    fn filter_complex_in_place(&self, x: &mut [Complex64]) {
        let mut re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = x.iter().map(|z| z.im).collect();
        self.filter_in_place(&mut re);
        self.filter_in_place(&mut im);
        for ((z, r), i) in x.iter_mut().zip(re).zip(im) {
            *z = Complex64::new(r, i);
        }
    }
}

/// Uniform reflection coefficient for which the simulated center impulse
/// response of `scene` decays with the target T60.
///
/// Starts from the Eyring inversion and rescales the Eyring-equivalent time
/// by `target / measured` until the Schroeder estimate is within 0.5% of the
/// target. Specular shoebox decay is slower than Eyring predicts, so the
/// result has a lower coefficient than [`RoomSpec::from_t60`].
pub fn calibrate_t60(scene: &Scene, target: f64) -> Result<RoomSpec> {
    let dims = scene.room.dimensions;
    let c = scene.room.speed_of_sound;
    let mut trial = scene.clone();
    let mut eyring = target;
    for _ in 0..12 {
        trial.room = RoomSpec::from_t60(dims, eyring, c)?.translated(scene.room.origin);
        let measured = estimate_t60(&trial.center_rir(Component::Full)?, scene.sample_rate)?;
        if (measured / target - 1.0).abs() < 5e-3 {
            return Ok(trial.room);
        }
        eyring *= target / measured;
    }
    Err(Error::InsufficientDecay(format!(
        "reflection calibration for T60 = {target} s did not converge"
    )))
}

fn convolve_all(rirs: &[Vec<f64>], source: &[f64]) -> Vec<Vec<f64>> {
    rirs.par_iter()
        .map(|rir| dsp::convolve_real(rir, source, source.len()))
        .collect()
}

/// Microphone signals with the direct part and the reverberant residual.
#[derive(Debug, Clone, PartialEq)]
pub struct MicSignals {
    pub full: Vec<Vec<f64>>,
    pub direct: Vec<Vec<f64>>,
    pub reverb: Vec<Vec<f64>>,
}

/// Adds white Gaussian noise scaled to the given per-channel SNR. Channel
/// `m` draws from a generator seeded with `seed + m`.
pub fn add_noise(mut signals: Vec<Vec<f64>>, snr: Snr, seed: u64) -> Vec<Vec<f64>> {
    if snr.is_infinite() {
        return signals;
    }
    for (m, channel) in signals.iter_mut().enumerate() {
        let power = channel.iter().map(|v| v * v).sum::<f64>() / channel.len().max(1) as f64;
        let sigma = (power / snr.value()).sqrt();
        if sigma == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(m as u64));
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in channel.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    signals
}

/// `10 log10(E_direct / E_reverb)`; `+∞` when there is no reverberant energy.
pub fn compute_drr(full: &[f64], direct: &[f64]) -> Result<f64> {
    if full.len() != direct.len() {
        return Err(Error::DimensionMismatch("RIRs differ in length".into()));
    }
    let ed: f64 = direct.iter().map(|v| v * v).sum();
    let er: f64 = full.iter().zip(direct).map(|(f, d)| (f - d).powi(2)).sum();
    if er == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (ed / er).log10())
}

/// Reverberation time from Schroeder backward integration: a linear fit of
/// the decay curve between −5 and −25 dB, extrapolated to 60 dB.
pub fn estimate_t60(rir: &[f64], sample_rate: f64) -> Result<f64> {
    let mut edc: Vec<f64> = rir.iter().map(|v| v * v).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(Error::InsufficientDecay("impulse response has no energy".into()));
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    if !db.iter().any(|&d| d <= -40.0) {
        return Err(Error::InsufficientDecay("decay never reaches −40 dB".into()));
    }
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &d)| (-25.0..=-5.0).contains(&d))
        .map(|(i, &d)| (i as f64 / sample_rate, d))
        .collect();
    if pts.len() < 8 {
        return Err(Error::InsufficientDecay(format!(
            "only {} samples between −5 and −25 dB",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let md = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay("decay curve does not fall".into()));
    }
    // 20 dB of fit range, extrapolated ×3
    Ok(3.0 * (-20.0 / slope))
}

/// Complex SH-domain time signals, `(order+1)²` channels of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ShSignal {
    order: usize,
    sample_rate: f64,
    channels: Vec<Vec<Complex64>>,
}

impl ShSignal {
    pub fn new(order: usize, sample_rate: f64, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if channels.len() != sh_count(order) {
            return Err(Error::DimensionMismatch(format!(
                "order {order} needs {} SH channels, got {}",
                sh_count(order),
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::DimensionMismatch("SH channels differ in length".into()));
        }
        Ok(Self {
            order,
            sample_rate,
            channels,
        })
    }

    pub fn zeros(order: usize, sample_rate: f64, len: usize) -> Self {
        Self {
            order,
            sample_rate,
            channels: vec![vec![Complex64::new(0.0, 0.0); len]; sh_count(order)],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Vec<Complex64>] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> &[Complex64] {
        &self.channels[index]
    }

    /// Each channel convolved with a real signal, truncated to its length.
    pub fn convolve(&self, signal: &[f64]) -> ShSignal {
        let channels = self
            .channels
            .par_iter()
            .map(|c| dsp::convolve_complex_real(c, signal, signal.len()))
            .collect();
        ShSignal {
            order: self.order,
            sample_rate: self.sample_rate,
            channels,
        }
    }

    /// `a·self + b·other`, zero-extending the shorter signal.
    pub fn combine(&self, a: f64, other: &ShSignal, b: f64) -> Result<ShSignal> {
        if self.order != other.order || self.sample_rate != other.sample_rate {
            return Err(Error::DimensionMismatch("SH signals differ in order or rate".into()));
        }
        let len = self.len().max(other.len());
        let zero = Complex64::new(0.0, 0.0);
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(x, y)| {
                (0..len)
                    .map(|t| x.get(t).copied().unwrap_or(zero) * a + y.get(t).copied().unwrap_or(zero) * b)
                    .collect()
            })
            .collect();
        Ok(ShSignal {
            order: self.order,
            sample_rate: self.sample_rate,
            channels,
        })
    }

    /// `BSMS` container: order, sample rate, length, digest, then complex
    /// `f32` samples channel by channel.
    pub fn to_bytes(&self, digest: [u8; 32]) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BSMS", 1);
        w.u32(self.order as u32);
        w.f64(self.sample_rate);
        w.u64(self.len() as u64);
        w.bytes(&digest);
        for c in &self.channels {
            for z in c {
                w.f32(z.re as f32);
                w.f32(z.im as f32);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, [u8; 32])> {
        let mut r = ByteReader::new(bytes, b"BSMS", 1)?;
        let order = r.u32()? as usize;
        let sample_rate = r.f64()?;
        let len = r.u64()? as usize;
        let digest = r.array()?;
        r.check_remaining(sh_count(order).saturating_mul(len), 8)?;
        let mut channels = Vec::with_capacity(sh_count(order));
        for _ in 0..sh_count(order) {
            let mut c = Vec::with_capacity(len);
            for _ in 0..len {
                let re = r.f32()? as f64;
                c.push(Complex64::new(re, r.f32()? as f64));
            }
            channels.push(c);
        }
        r.expect_end()?;
        Ok((Self::new(order, sample_rate, channels)?, digest))
    }

    pub fn save(&self, path: impl AsRef<Path>, digest: [u8; 32]) -> Result<()> {
        std::fs::write(path, self.to_bytes(digest))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, [u8; 32])> {
        Self::from_bytes(&crate::io::read_existing(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_room(beta: f64) -> RoomSpec {
        RoomSpec::uniform([4.0, 3.0, 2.5], beta, 343.0).unwrap()
    }

    fn scene(room: RoomSpec, order: usize) -> Scene {
        Scene {
            room,
            source_position: [2.47, 2.27, 1.7],
            source_signal: vec![1.0],
            sample_rate: 48_000.0,
            array: ArrayGeometry::semicircle(6, 0.1, [2.0, 2.0, 1.7]).unwrap(),
            max_order: order,
            mic_model: MicModel::PlaneWave,
            noise_snr: Snr::INFINITE,
            seed: 0,
            high_pass_hz: 0.0,
        }
    }

    #[test]
    fn direct_image_only() {
        let room = desk_room(0.8);
        let src = [1.0, 1.0, 1.0];
        let rcv = [3.0, 2.0, 1.5];
        let images = compute_image_sources(&room, src, rcv, 0).unwrap();
        assert_eq!(images.len(), 1);
        let d = norm3(sub3(src, rcv));
        assert_eq!(images[0].position, src);
        assert!((images[0].gain - 1.0 / (4.0 * PI * d)).abs() < 1e-15);
        assert!((images[0].delay - d / 343.0).abs() < 1e-15);
    }

    #[test]
    fn image_count_matches_brute_force() {
        let room = desk_room(0.5);
        for o in 0..=3usize {
            let images = compute_image_sources(&room, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], o).unwrap();
            let oi = o as i32;
            let mut brute = 0;
            for i in -oi..=oi {
                for j in -oi..=oi {
                    for k in -oi..=oi {
                        if i.abs() + j.abs() + k.abs() <= oi {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(images.len(), brute);
            assert_eq!(image_count(o), brute);
        }
    }

    #[test]
    fn first_order_images_mirror_walls() {
        let room = desk_room(0.5);
        let src = [1.0, 0.5, 2.0];
        let images = compute_image_sources(&room, src, [2.0, 2.0, 1.0], 1).unwrap();
        let find = |idx: [i32; 3]| images.iter().find(|im| im.index == idx).unwrap().position;
        assert_eq!(find([-1, 0, 0]), [-1.0, 0.5, 2.0]);
        assert_eq!(find([1, 0, 0]), [7.0, 0.5, 2.0]);
        assert_eq!(find([0, 1, 0]), [1.0, 5.5, 2.0]);
        assert_eq!(find([0, 0, -1]), [1.0, 0.5, -2.0]);
        for im in &images[1..] {
            assert!((im.gain * 4.0 * PI * im.distance - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn absorptive_walls_silence_reflections() {
        let room = desk_room(0.0);
        let images = compute_image_sources(&room, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 5).unwrap();
        assert!(images[0].gain > 0.0);
        assert!(images[1..].iter().all(|im| im.gain == 0.0));
    }

    #[test]
    fn translation_invariance() {
        let room = desk_room(0.7);
        let shift = [10.0, -3.0, 0.5];
        let a = compute_image_sources(&room, [1.0, 1.2, 0.8], [3.1, 2.0, 1.9], 4).unwrap();
        let b = compute_image_sources(
            &room.translated(shift),
            [11.0, -1.8, 1.3],
            [13.1, -1.0, 2.4],
            4,
        )
        .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.delay - y.delay).abs() < 1e-12);
            assert!((x.gain - y.gain).abs() < 1e-12 * x.gain.max(1e-30));
        }
    }

    #[test]
    fn outside_positions_rejected() {
        let room = desk_room(0.5);
        assert!(matches!(
            compute_image_sources(&room, [5.0, 1.0, 1.0], [1.0, 1.0, 1.0], 1),
            Err(Error::OutsideRoom("source"))
        ));
        assert!(matches!(
            compute_image_sources(&room, [1.0, 1.0, 1.0], [1.0, 1.0, 2.5], 1),
            Err(Error::OutsideRoom("receiver"))
        ));
    }

    #[test]
    fn eyring_inversion() {
        let room = RoomSpec::from_t60([8.0, 5.0, 3.0], 0.68, 343.0).unwrap();
        assert!((room.eyring_t60() - 0.68).abs() < 1e-12);
        assert!((room.reflection[0] - 0.914).abs() < 1e-3);
    }

    #[test]
    fn fractional_delay_is_band_limited_delta() {
        let (start, taps) = fractional_taps(10.0);
        assert_eq!((start, taps.as_slice()), (10, &[1.0][..]));
        // response to a low-frequency sinusoid matches the exact delay
        let delay = 40.37;
        let (start, taps) = fractional_taps(delay);
        let w = 2.0 * PI * 0.05;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, t) in taps.iter().enumerate() {
            acc += Complex64::from_polar(*t, -w * (start + k as i64) as f64);
        }
        let exact = Complex64::from_polar(1.0, -w * delay);
        assert!(20.0 * (acc - exact).norm().log10() < -60.0);
    }

    #[test]
    fn anechoic_full_equals_direct() {
        let mut s = scene(desk_room(0.0), 3);
        s.source_signal = (0..2000).map(|n| ((n * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let sig = s.render_mic_signals().unwrap();
        assert_eq!(sig.full, sig.direct);
        assert!(sig.reverb.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn reverb_energy_falls_with_absorption() {
        let energy = |beta: f64| -> Vec<f64> {
            scene(desk_room(beta), 8)
                .mic_rirs(Component::Reverberant)
                .unwrap()
                .iter()
                .map(|r| r.iter().map(|v| v * v).sum())
                .collect()
        };
        let lively = energy(0.9);
        let damped = energy(0.6);
        for (a, b) in lively.iter().zip(&damped) {
            assert!(b <= a);
        }
    }

    #[test]
    fn drr_definitions() {
        let direct = [1.0, 0.0, 0.0];
        assert_eq!(compute_drr(&direct, &direct).unwrap(), f64::INFINITY);
        let full = [1.0, 0.0, 1.0];
        assert!(compute_drr(&full, &direct).unwrap().abs() < 1e-12);
    }

    #[test]
    fn t60_of_exponential_decay() {
        let fs = 16_000.0;
        let tau = 0.05;
        let rir: Vec<f64> = (0..16_000).map(|n| (-(n as f64) / fs / tau).exp()).collect();
        let t60 = estimate_t60(&rir, fs).unwrap();
        // amplitude decay e^{-t/τ} ⇒ energy decay 60 dB after 3 ln10 τ = 6.91 τ
        assert!((t60 / (6.91 * tau) - 1.0).abs() < 0.05);
        let mut impulse = vec![0.0; 1000];
        impulse[0] = 1.0;
        assert!(matches!(estimate_t60(&impulse, fs), Err(Error::InsufficientDecay(_))));
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let x: Vec<f64> = (0..48_000).map(|n| (n as f64 * 0.01).sin()).collect();
        assert_eq!(add_noise(vec![x.clone()], Snr::INFINITE, 1), vec![x.clone()]);
        let y = add_noise(vec![x.clone()], Snr::linear(1.0).unwrap(), 3);
        let p_sig: f64 = x.iter().map(|v| v * v).sum();
        let p_noise: f64 = y[0].iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((p_noise / p_sig - 1.0).abs() < 0.05);
        assert_eq!(y, add_noise(vec![x], Snr::linear(1.0).unwrap(), 3));
    }

    #[test]
    fn single_image_sh_encoding() {
        let mut s = scene(desk_room(0.0), 0);
        s.source_position = [3.0, 2.0, 1.7];
        let rir = s.sh_rir(0, Component::Full).unwrap();
        let d = 1.0;
        let delay = d / 343.0 * 48_000.0;
        let mut expect = vec![0.0; rir.len()];
        add_delayed(&mut expect, delay, 1.0 / (4.0 * PI * d) / (4.0 * PI).sqrt());
        for (a, b) in rir.channel(0).iter().zip(&expect) {
            assert!((a.re - b).abs() < 1e-15 && a.im == 0.0);
        }
    }

    #[test]
    fn sh_encoding_energy() {
        let mut s = scene(desk_room(0.0), 0);
        s.source_position = [2.6, 2.3, 2.0];
        s.source_signal = (0..500).map(|n| (n as f64 * 0.3).sin()).collect();
        let order = 5;
        let sig = s.render_reference_plane_waves(order, Component::Full).unwrap();
        let omni = s.center_rir(Component::Full).unwrap();
        let p = dsp::convolve_real(&omni, &s.source_signal, s.source_signal.len());
        let e_omni: f64 = p.iter().map(|v| v * v).sum();
        let e_sh: f64 = sig.channels().iter().flatten().map(|z| z.norm_sqr()).sum();
        let sum: f64 = (0..=order).map(|n| (2 * n + 1) as f64 / (4.0 * PI)).sum();
        assert!((e_sh / (e_omni * sum) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sh_reference_linearity_and_container() {
        let s = scene(desk_room(0.6), 3);
        let full = s.sh_rir(2, Component::Full).unwrap();
        let direct = s.sh_rir(2, Component::Direct).unwrap();
        let reverb = s.sh_rir(2, Component::Reverberant).unwrap();
        let sum = direct.combine(1.0, &reverb, 1.0).unwrap();
        for (a, b) in sum.channels().iter().flatten().zip(full.channels().iter().flatten()) {
            assert!((a - b).norm() < 1e-15);
        }
        let (back, digest) = ShSignal::from_bytes(&full.to_bytes([9; 32])).unwrap();
        assert_eq!(digest, [9; 32]);
        assert_eq!(back.len(), full.len());
    }
}
