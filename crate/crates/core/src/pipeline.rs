//! The four pipeline stages behind the command-line tool.
//!
//! Every stage writes its artifacts into one output directory together with
//! a `<stage>.manifest.json` holding the scene digest and the SHA-256 of
//! each artifact. A stage first verifies the manifests of the stages it
//! reads from, so stale or modified inputs are rejected before any work.
//!
//! | stage      | artifacts |
//! |------------|-----------|
//! | `simulate` | `source.wav`, `mic.wav`, `mic_direct.wav`, `reference_sh.bsms`, `reference_direct_sh.bsms`, `scene_stats.json` |
//! | `design`   | `bank_direct.bsmf`, `bank_reverb.bsmf` |
//! | `render`   | `{bsm_standard,bsm_decomposed,reference,reference_direct}.{wav,bsmp}`, `component_direct.bsmp`, `component_reverb.bsmp` |
//! | `evaluate` | `nmse_{standard,decomposed,direct,reverb}.csv`, `comparison.csv`, `bands.csv`, `verdict.json` |
//!
//! The `.bsms` files hold SH-domain room impulse responses; the render stage
//! convolves them with `source.wav` to obtain the reference ear signals.

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::config::{ResolvedConfig, T60Fit};
use crate::dsp;
use crate::eval::{self, compare, nmse, Comparison, FrameRange, NmseReport};
use crate::hrtf::{Ear, HrirSet, HrtfSet, PointReceiverHead};
use crate::io::{read_existing, read_wav, wav_digest, write_wav, Audio, Manifest};
use crate::render::{
    apply_filterbank, decompose_measurement, render_reference_from_rir, BinauralSpectrogram, BinauralTag,
    ReferenceHrtf,
};
use crate::scene::{calibrate_t60, compute_drr, estimate_t60, Component, Scene, ShSignal};
use crate::solver::{design_filterbank, BsmFilterBank, Provenance};
use crate::sphere::{spiral_grid, Direction, FrequencyGrid};
use crate::stft::{Origin, Stft};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Design,
    Render,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Design, Stage::Render, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Design => "design",
            Stage::Render => "render",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Seeded speech-shaped noise: Gaussian noise with a spectrum falling
/// 6 dB per octave above 500 Hz, high-passed at 100 Hz, modulated at a
/// syllabic 4 Hz rate and normalized to a peak of 0.5.
pub fn synthetic_source(len: usize, sample_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let size = dsp::next_pow2(len);
    let mut spec = dsp::rfft(&white, size);
    for (b, z) in spec.iter_mut().enumerate() {
        let f = b as f64 * sample_rate / size as f64;
        let high_pass = f / (f * f + 100.0 * 100.0).sqrt();
        let tilt = 1.0 / (1.0 + (f / 500.0).powi(2)).sqrt();
        *z *= high_pass * tilt;
    }
    let mut x = dsp::irfft(&spec, size);
    x.truncate(len);
    for (n, v) in x.iter_mut().enumerate() {
        let t = n as f64 / sample_rate;
        *v *= 1.0 + 0.5 * (2.0 * std::f64::consts::PI * 4.0 * t).sin();
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    x
}

/// Scene statistics written by the simulate stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStats {
    pub drr_db: f64,
    pub t60_s: Option<f64>,
    pub t60_note: Option<String>,
    pub eyring_t60_s: f64,
    pub reflection: [f64; 6],
    pub image_sources: usize,
    pub direct_distance_m: f64,
}

impl SceneStats {
    pub fn compute(scene: &Scene) -> Result<Self> {
        let full = scene.center_rir(Component::Full)?;
        let direct = scene.center_rir(Component::Direct)?;
        let (t60_s, t60_note) = match estimate_t60(&full, scene.sample_rate) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            drr_db: compute_drr(&full, &direct)?,
            t60_s,
            t60_note,
            eyring_t60_s: scene.room.eyring_t60(),
            reflection: scene.room.reflection,
            image_sources: scene.images()?.len(),
            direct_distance_m: scene.direct_path_distance(),
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "drr_db": number(self.drr_db),
            "t60_s": self.t60_s.map(number),
            "t60_note": self.t60_note,
            "eyring_t60_s": number(self.eyring_t60_s),
            "reflection": self.reflection,
            "image_sources": self.image_sources,
            "direct_distance_m": number(self.direct_distance_m),
        })
    }
}

/// JSON number, with non-finite values spelled out as strings.
fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// The six binaural renderings the evaluation works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Renderings {
    pub standard: BinauralSpectrogram,
    pub decomposed: BinauralSpectrogram,
    pub component_direct: BinauralSpectrogram,
    pub component_reverb: BinauralSpectrogram,
    pub reference: BinauralSpectrogram,
    pub reference_direct: BinauralSpectrogram,
}

/// Per-ear booleans and figures behind the verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// Direct-component NMSE below −15 dB at every bin under 4 kHz, both ears.
    pub direct_component_accurate: bool,
    /// Reverberant-component NMSE is higher above 4 kHz than below 1 kHz.
    pub reverb_high_exceeds_low: bool,
    /// Reverberant-component broadband NMSE is not higher at the near ear.
    pub near_ear_reverb_lower: bool,
    /// Decomposed broadband NMSE strictly below standard BSM, both ears.
    pub decomposed_beats_standard: bool,
    /// At least 1 dB improvement in half of the bands at the near ear.
    pub near_ear_band_improvement: bool,
    pub broadband_improvement_db: [f64; 2],
    pub direct_worst_db_below_4khz: [f64; 2],
    pub reverb_high_band_db: [f64; 2],
    pub reverb_low_band_db: [f64; 2],
    pub reverb_broadband_db: [f64; 2],
    pub bands_improved: usize,
    pub band_count: usize,
}

impl Verdict {
    /// Accurate direct component and a decomposed pipeline no worse than
    /// standard BSM at either ear.
    pub fn pass(&self) -> bool {
        self.direct_component_accurate && self.broadband_improvement_db.iter().all(|&v| v >= 0.0)
    }

    pub fn to_json(&self) -> Value {
        let pair = |v: [f64; 2]| json!({"left": number(v[0]), "right": number(v[1])});
        json!({
            "pass": self.pass(),
            "direct_component_accurate": self.direct_component_accurate,
            "reverb_high_exceeds_low": self.reverb_high_exceeds_low,
            "near_ear_reverb_lower": self.near_ear_reverb_lower,
            "decomposed_beats_standard": self.decomposed_beats_standard,
            "near_ear_band_improvement": self.near_ear_band_improvement,
            "broadband_improvement_db": pair(self.broadband_improvement_db),
            "direct_worst_db_below_4khz": pair(self.direct_worst_db_below_4khz),
            "reverb_high_band_db": pair(self.reverb_high_band_db),
            "reverb_low_band_db": pair(self.reverb_low_band_db),
            "reverb_broadband_db": pair(self.reverb_broadband_db),
            "bands_improved": self.bands_improved,
            "band_count": self.band_count,
        })
    }
}

/// Everything the evaluate stage derives from the renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub standard: NmseReport,
    pub decomposed: NmseReport,
    pub direct: NmseReport,
    pub reverb: NmseReport,
    pub comparison: Comparison,
    pub band_improvements: Vec<eval::BandValue>,
    pub verdict: Verdict,
}

fn both(f: impl Fn(Ear) -> f64) -> [f64; 2] {
    [f(Ear::Left), f(Ear::Right)]
}

pub fn evaluate_renderings(
    r: &Renderings,
    frame_trim: usize,
    bands: &[(f64, f64)],
    digest: [u8; 32],
) -> Result<Evaluation> {
    let frames = FrameRange::trimmed(r.reference.left().frames(), frame_trim)?;
    let reference_reverb = r.reference.subtract(&r.reference_direct)?;
    let standard = nmse(&r.standard, &r.reference, frames, digest)?;
    let decomposed = nmse(&r.decomposed, &r.reference, frames, digest)?;
    let direct = nmse(&r.component_direct, &r.reference_direct, frames, digest)?;
    let reverb = nmse(&r.component_reverb, &reference_reverb, frames, digest)?;
    let comparison = compare(&decomposed, &standard)?;
    let nyquist = r.reference.left().config().sample_rate / 2.0;
    let band_improvements = Comparison::band_improvements(&decomposed, &standard, bands, nyquist)?;

    let freqs = &direct.frequencies;
    let worst = |report: &NmseReport, ear: Ear| {
        (0..freqs.len())
            .filter(|&b| freqs[b] < 4000.0)
            .filter_map(|b| report.ear(ear).db(b))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let direct_worst = both(|e| worst(&direct, e));
    let mean_db = |ear: Ear, keep: &dyn Fn(f64) -> bool| {
        reverb.ear(ear).mean(|b| keep(freqs[b])).map(eval::to_db).unwrap_or(f64::NAN)
    };
    let high = both(|e| mean_db(e, &|f| f > 4000.0));
    let low = both(|e| mean_db(e, &|f| f < 1000.0));
    let reverb_broadband = both(|e| reverb.broadband_db(e).unwrap_or(f64::NAN));
    let improvement = both(|e| comparison.ear(e).broadband_db);
    let bands_improved = band_improvements.iter().filter(|b| b.left_db >= 1.0).count();
    let verdict = Verdict {
        direct_component_accurate: direct_worst.iter().all(|&v| v < -15.0),
        reverb_high_exceeds_low: high.iter().zip(&low).all(|(h, l)| h > l),
        near_ear_reverb_lower: reverb_broadband[0] <= reverb_broadband[1],
        decomposed_beats_standard: improvement.iter().all(|&v| v > 0.0),
        near_ear_band_improvement: 2 * bands_improved >= band_improvements.len() && !band_improvements.is_empty(),
        broadband_improvement_db: improvement,
        direct_worst_db_below_4khz: direct_worst,
        reverb_high_band_db: high,
        reverb_low_band_db: low,
        reverb_broadband_db: reverb_broadband,
        bands_improved,
        band_count: band_improvements.len(),
    };
    Ok(Evaluation {
        standard,
        decomposed,
        direct,
        reverb,
        comparison,
        band_improvements,
        verdict,
    })
}

/// One configured run rooted at an output directory.
pub struct Pipeline {
    config: ResolvedConfig,
    out: PathBuf,
    digest: [u8; 32],
}

const SIM_ARTIFACTS: [&str; 6] = [
    "source.wav",
    "mic.wav",
    "mic_direct.wav",
    "reference_sh.bsms",
    "reference_direct_sh.bsms",
    "scene_stats.json",
];

impl Pipeline {
    pub fn new(config: ResolvedConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let digest = config.digest()?;
        Ok(Self {
            config,
            out: out.into(),
            digest,
        })
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn check_digest(&self, name: &str, found: [u8; 32]) -> Result<()> {
        if found == self.digest {
            Ok(())
        } else {
            Err(Error::Digest(format!("{name} was produced for a different scene or config")))
        }
    }

    fn verify(&self, stage: Stage) -> Result<()> {
        Manifest::load(&self.out, stage.name())?.verify(&self.out, self.digest)
    }

    fn read_audio(&self, name: &str) -> Result<Audio> {
        let path = self.path(name);
        let bytes = read_existing(&path)?;
        self.check_digest(name, wav_digest(&bytes).unwrap_or([0; 32]))?;
        read_wav(&path)
    }

    fn source_signal(&self) -> Result<Vec<f64>> {
        let cfg = &self.config.config;
        match self.config.source_path() {
            Some(path) => {
                let audio = read_wav(&path)?;
                if audio.sample_rate as f64 != cfg.scene.sample_rate {
                    return Err(Error::Config(format!(
                        "source is sampled at {} Hz, the scene at {} Hz",
                        audio.sample_rate, cfg.scene.sample_rate
                    )));
                }
                // mono mixdown
                let n = audio.channels.len() as f64;
                Ok((0..audio.len()).map(|t| audio.channels.iter().map(|c| c[t]).sum::<f64>() / n).collect())
            }
            None => {
                let len = (cfg.scene.source_duration * cfg.scene.sample_rate).round() as usize;
                Ok(synthetic_source(len, cfg.scene.sample_rate, cfg.seed))
            }
        }
    }

    pub fn scene(&self, source_signal: Vec<f64>) -> Result<Scene> {
        let cfg = &self.config.config;
        let mut scene = Scene {
            room: cfg.room()?,
            source_position: cfg.scene.source_position,
            source_signal,
            sample_rate: cfg.scene.sample_rate,
            array: cfg.array()?,
            max_order: cfg.scene.max_order,
            mic_model: cfg.scene.mic_model,
            noise_snr: cfg.noise_snr()?,
            seed: cfg.seed,
            high_pass_hz: cfg.scene.high_pass_hz,
        };
        scene.validate()?;
        if let (Some(t60), T60Fit::Simulated) = (cfg.scene.t60, cfg.scene.t60_fit) {
            scene.room = calibrate_t60(&scene, t60)?;
        }
        Ok(scene)
    }

    fn sample_rate(&self) -> u32 {
        self.config.config.scene.sample_rate.round() as u32
    }

    pub fn simulate(&self) -> Result<SceneStats> {
        std::fs::create_dir_all(&self.out)?;
        let scene = self.scene(self.source_signal()?)?;
        let signals = scene.render_mic_signals()?;
        let fs = self.sample_rate();
        let d = Some(self.digest);
        write_wav(self.path("source.wav"), &Audio::new(fs, vec![scene.source_signal.clone()])?, d)?;
        write_wav(self.path("mic.wav"), &Audio::new(fs, signals.full)?, d)?;
        write_wav(self.path("mic_direct.wav"), &Audio::new(fs, signals.direct)?, d)?;
        let order = self.config.config.design.reference_order;
        scene.sh_rir(order, Component::Full)?.save(self.path("reference_sh.bsms"), self.digest)?;
        scene.sh_rir(order, Component::Direct)?.save(self.path("reference_direct_sh.bsms"), self.digest)?;
        let stats = SceneStats::compute(&scene)?;
        write_json(&self.path("scene_stats.json"), &stats.to_json())?;
        let mut manifest = Manifest::new(Stage::Simulate.name(), self.digest);
        for name in SIM_ARTIFACTS {
            manifest.record(&self.out, name)?;
        }
        manifest.save(&self.out)?;
        Ok(stats)
    }

    /// HRTFs at `doas` on the design grid.
    fn design_hrtf(&self, grid: &FrequencyGrid, doas: &[Direction]) -> Result<HrtfSet> {
        let cfg = &self.config.config;
        let order = cfg.design.hrtf_sh_order;
        match self.config.hrtf_path() {
            None => PointReceiverHead::new(cfg.hrtf.ear_offset)?.sh_coefficients(order, grid).evaluate(doas),
            Some(path) => {
                let size = grid.fft_size().expect("STFT grid");
                let set = HrirSet::load(path)?.to_hrtf_set(size, cfg.scene.speed_of_sound)?;
                crate::hrtf::sh_interpolate(&set, order, doas)
            }
        }
    }

    pub fn design(&self) -> Result<(BsmFilterBank, BsmFilterBank)> {
        std::fs::create_dir_all(&self.out)?;
        let cfg = &self.config.config;
        let grid = cfg.grid()?;
        let geom = cfg.array()?;
        let direct_doa = [cfg.direct_doa()?];
        let reverb_doas = spiral_grid(cfg.design.reverb_grid_size)?;
        let steering = cfg.design.steering;
        let direct = design_filterbank(
            &geom,
            &grid,
            &direct_doa,
            &self.design_hrtf(&grid, &direct_doa)?,
            &cfg.direct_solver()?,
            Provenance::Direct,
            steering,
        )?
        .with_digest(self.digest);
        let reverb = design_filterbank(
            &geom,
            &grid,
            &reverb_doas,
            &self.design_hrtf(&grid, &reverb_doas)?,
            &cfg.reverb_solver()?,
            Provenance::Reverberant,
            steering,
        )?
        .with_digest(self.digest);
        direct.save(self.path("bank_direct.bsmf"))?;
        reverb.save(self.path("bank_reverb.bsmf"))?;
        let mut manifest = Manifest::new(Stage::Design.name(), self.digest);
        manifest.record(&self.out, "bank_direct.bsmf")?;
        manifest.record(&self.out, "bank_reverb.bsmf")?;
        manifest.save(&self.out)?;
        Ok((direct, reverb))
    }

    fn load_bank(&self, name: &str) -> Result<BsmFilterBank> {
        let bank = BsmFilterBank::load(self.path(name))?;
        self.check_digest(name, bank.digest())?;
        Ok(bank)
    }

    fn load_sh(&self, name: &str) -> Result<ShSignal> {
        let (sh, digest) = ShSignal::load(self.path(name))?;
        self.check_digest(name, digest)?;
        Ok(sh)
    }

    fn reference_hrtf(&self) -> Result<ReferenceHrtf> {
        let cfg = &self.config.config;
        Ok(match self.config.hrtf_path() {
            None => ReferenceHrtf::Analytic(PointReceiverHead::new(cfg.hrtf.ear_offset)?),
            Some(path) => ReferenceHrtf::Measured(HrirSet::load(path)?.sh_fit_time(cfg.design.reference_order)?),
        })
    }

    pub fn render(&self) -> Result<Renderings> {
        self.verify(Stage::Simulate)?;
        self.verify(Stage::Design)?;
        let cfg = &self.config.config;
        let stft = Stft::new(cfg.stft_config()?)?;
        let mic = self.read_audio("mic.wav")?;
        let mic_direct = self.read_audio("mic_direct.wav")?;
        let source = self.read_audio("source.wav")?.channels.remove(0);
        let bank_d = self.load_bank("bank_direct.bsmf")?;
        let bank_r = self.load_bank("bank_reverb.bsmf")?;

        let x = stft.forward(&mic.channels, Origin::Measured)?;
        let x_d = stft.forward(&mic_direct.channels, Origin::MeasuredDirect)?;
        let x_r = decompose_measurement(&x, &x_d)?;
        let standard = apply_filterbank(&bank_r, &x)?;
        let component_direct = apply_filterbank(&bank_d, &x_d)?;
        let component_reverb = apply_filterbank(&bank_r, &x_r)?;
        let decomposed = component_direct.add(&component_reverb)?;

        let hrtf = self.reference_hrtf()?;
        let order = cfg.design.reference_order;
        let c = cfg.scene.speed_of_sound;
        let reference = render_reference_from_rir(&self.load_sh("reference_sh.bsms")?, &source, &hrtf, order, c, &stft, BinauralTag::Reference)?;
        let reference_direct = render_reference_from_rir(
            &self.load_sh("reference_direct_sh.bsms")?,
            &source,
            &hrtf,
            order,
            c,
            &stft,
            BinauralTag::ReferenceDirect,
        )?;

        let r = Renderings {
            standard,
            decomposed,
            component_direct,
            component_reverb,
            reference,
            reference_direct,
        };
        let mut manifest = Manifest::new(Stage::Render.name(), self.digest);
        for (name, b, wav) in [
            ("bsm_standard", &r.standard, true),
            ("bsm_decomposed", &r.decomposed, true),
            ("reference", &r.reference, true),
            ("reference_direct", &r.reference_direct, true),
            ("component_direct", &r.component_direct, false),
            ("component_reverb", &r.component_reverb, false),
        ] {
            let archive = format!("{name}.bsmp");
            b.save(self.path(&archive), self.digest)?;
            manifest.record(&self.out, &archive)?;
            if wav {
                let file = format!("{name}.wav");
                write_wav(self.path(&file), &b.to_audio()?, Some(self.digest))?;
                manifest.record(&self.out, &file)?;
            }
        }
        manifest.save(&self.out)?;
        Ok(r)
    }

    fn load_binaural(&self, name: &str, tag: BinauralTag) -> Result<BinauralSpectrogram> {
        let (b, digest) = BinauralSpectrogram::load(self.path(name))?;
        self.check_digest(name, digest)?;
        if b.tag() != tag {
            return Err(Error::Provenance(format!("{name} holds {} instead of {}", b.tag().name(), tag.name())));
        }
        Ok(b)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        self.verify(Stage::Render)?;
        let cfg = &self.config.config;
        let r = Renderings {
            standard: self.load_binaural("bsm_standard.bsmp", BinauralTag::BsmStandard)?,
            decomposed: self.load_binaural("bsm_decomposed.bsmp", BinauralTag::BsmDecomposed)?,
            component_direct: self.load_binaural("component_direct.bsmp", BinauralTag::ComponentDirect)?,
            component_reverb: self.load_binaural("component_reverb.bsmp", BinauralTag::ComponentReverb)?,
            reference: self.load_binaural("reference.bsmp", BinauralTag::Reference)?,
            reference_direct: self.load_binaural("reference_direct.bsmp", BinauralTag::ReferenceDirect)?,
        };
        let ev = evaluate_renderings(&r, cfg.eval.frame_trim, &cfg.bands()?, self.digest)?;
        let files = [
            ("nmse_standard.csv", ev.standard.to_csv()),
            ("nmse_decomposed.csv", ev.decomposed.to_csv()),
            ("nmse_direct.csv", ev.direct.to_csv()),
            ("nmse_reverb.csv", ev.reverb.to_csv()),
            ("comparison.csv", ev.comparison.to_csv()),
            ("bands.csv", bands_csv(&ev)),
        ];
        let mut manifest = Manifest::new(Stage::Evaluate.name(), self.digest);
        for (name, text) in &files {
            std::fs::write(self.path(name), text)?;
            manifest.record(&self.out, name)?;
        }
        let mut verdict = ev.verdict.to_json();
        verdict["scene_digest"] = json!(hex::encode(self.digest));
        write_json(&self.path("verdict.json"), &verdict)?;
        manifest.record(&self.out, "verdict.json")?;
        manifest.save(&self.out)?;
        Ok(ev)
    }

    /// Runs every stage in order, stopping at the first failure.
    pub fn run_all(&self) -> std::result::Result<Evaluation, StageError> {
        let tag = |stage| move |error| StageError { stage, error };
        self.simulate().map_err(tag(Stage::Simulate))?;
        self.design().map_err(tag(Stage::Design))?;
        self.render().map_err(tag(Stage::Render))?;
        self.evaluate().map_err(tag(Stage::Evaluate))
    }
}

fn bands_csv(ev: &Evaluation) -> String {
    let mut out = String::from("low_hz,high_hz,improvement_left_db,improvement_right_db\n");
    for b in &ev.band_improvements {
        out.push_str(&format!("{},{},{},{}\n", b.low_hz, b.high_hz, b.left_db, b.right_db));
    }
    out
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// A zero rendering with the shape of `like`.
pub fn silent_like(like: &BinauralSpectrogram, tag: BinauralTag) -> BinauralSpectrogram {
    like.scaled(Complex64::new(0.0, 0.0)).retagged(tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_source_is_deterministic_and_bounded() {
        let a = synthetic_source(10_000, 48_000.0, 4);
        assert_eq!(a, synthetic_source(10_000, 48_000.0, 4));
        assert_ne!(a, synthetic_source(10_000, 48_000.0, 5));
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_numbers_are_spelled_out() {
        assert_eq!(number(f64::INFINITY), json!("inf"));
        assert_eq!(number(f64::NEG_INFINITY), json!("-inf"));
        assert_eq!(number(1.5), json!(1.5));
    }
}
