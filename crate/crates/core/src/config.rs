//! Run configuration for the command-line pipeline.
//!
//! A config file is TOML with the sections `[scene]`, `[scene.array]`,
//! `[hrtf]`, `[design]`, `[stft]` and `[eval]`. It is merged key by key over
//! the defaults of the selected [`Profile`], so a file only needs the keys it
//! changes; unknown keys are errors. Relative paths are resolved against the
//! directory holding the config file.
//!
//! ```toml
//! seed = 7
//!
//! [scene]
//! room_dimensions = [4.0, 3.0, 2.5]
//! t60 = 0.3                  # or: reflection = [β_x0, β_x1, β_y0, β_y1, β_z0, β_z1]
//! t60_fit = "simulated"      # or "eyring"
//! high_pass_hz = 20.0
//! max_order = 40
//! source = "synthetic"       # or a WAV path
//! source_duration = 2.0
//! noise_snr_db = inf
//!
//! [scene.array]
//! layout = "semicircle"      # or "custom" with mics = [[r, θ, φ], ...]
//! count = 6
//! radius = 0.1
//!
//! [hrtf]
//! source = "analytic"        # or a BSMH path
//!
//! [design]
//! direct_doa = [1.5707963267948966, 0.5235987755982988]   # or "auto"
//! reverb_snr_db = 20.0
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::sha256;
use crate::scene::{MicModel, RoomSpec, DEFAULT_HIGH_PASS_HZ};
use crate::solver::{Snr, SolverConfig};
use crate::sphere::{ArrayGeometry, Direction, FrequencyGrid, Microphone, SteeringModel};
use crate::stft::StftConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?}, expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub hrtf: HrtfConfig,
    pub design: DesignConfig,
    pub stft: StftSection,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    pub room_dimensions: [f64; 3],
    /// Target reverberation time for uniform walls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t60: Option<f64>,
    /// How the wall coefficient is derived from `t60`.
    pub t60_fit: T60Fit,
    /// Explicit wall reflection coefficients, instead of `t60`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<[f64; 6]>,
    pub max_order: usize,
    pub source_position: [f64; 3],
    /// `"synthetic"` for seeded speech-shaped noise, otherwise a WAV path.
    pub source: String,
    /// Length of the synthetic source in seconds.
    pub source_duration: f64,
    pub array_center: [f64; 3],
    pub array: ArrayConfig,
    pub mic_model: MicModel,
    /// Sensor noise level; `inf` disables noise.
    pub noise_snr_db: f64,
    /// High-pass cutoff applied to simulated impulse responses; 0 disables.
    pub high_pass_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T60Fit {
    /// Invert Eyring's formula.
    Eyring,
    /// Refine the Eyring inversion until the simulated decay meets the target.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Semicircle,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub layout: Layout,
    pub count: usize,
    pub radius: f64,
    /// `[radius, colatitude, azimuth]` per microphone for the custom layout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mics: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrtfConfig {
    /// `"analytic"` for the point-receiver head, otherwise a BSMH path.
    pub source: String,
    /// Ear distance from the head center for the analytic head.
    pub ear_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DoaSetting {
    Angles([f64; 2]),
    /// `"auto"`: the true source direction seen from the array center.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub direct_doa: DoaSetting,
    pub direct_snr_db: f64,
    /// MagLS for the direct filters too; off by default because a single
    /// source direction leaves the phase undetermined.
    pub direct_magls: bool,
    pub reverb_grid_size: usize,
    pub reverb_snr_db: f64,
    pub magls: bool,
    pub magls_cutoff_hz: f64,
    pub reference_order: usize,
    pub hrtf_sh_order: usize,
    pub steering: SteeringModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    pub window_ms: f64,
    pub hop_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandSetting {
    List(Vec<[f64; 2]>),
    /// `"octave"`.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub frame_trim: usize,
    pub bands: BandSetting,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (room_dimensions, t60, max_order) = match profile {
            Profile::Desk => ([4.0, 3.0, 2.5], 0.3, 40),
            Profile::Paper => ([8.0, 5.0, 3.0], 0.68, 64),
        };
        RunConfig {
            seed: 1,
            scene: SceneConfig {
                sample_rate: 48_000.0,
                speed_of_sound: 343.0,
                room_dimensions,
                t60: Some(t60),
                t60_fit: T60Fit::Simulated,
                reflection: None,
                max_order,
                source_position: [2.47, 2.27, 1.7],
                source: "synthetic".into(),
                source_duration: 2.0,
                array_center: [2.0, 2.0, 1.7],
                array: ArrayConfig {
                    layout: Layout::Semicircle,
                    count: 6,
                    radius: 0.1,
                    mics: Vec::new(),
                },
                mic_model: MicModel::PlaneWave,
                noise_snr_db: f64::INFINITY,
                high_pass_hz: DEFAULT_HIGH_PASS_HZ,
            },
            hrtf: HrtfConfig {
                source: "analytic".into(),
                ear_offset: 0.0875,
            },
            design: DesignConfig {
                direct_doa: DoaSetting::Angles([PI / 2.0, PI / 6.0]),
                direct_snr_db: f64::INFINITY,
                direct_magls: false,
                reverb_grid_size: 240,
                reverb_snr_db: 20.0,
                magls: true,
                magls_cutoff_hz: 1500.0,
                reference_order: 14,
                hrtf_sh_order: 30,
                steering: SteeringModel::ClosedForm,
            },
            stft: StftSection {
                window_ms: 32.0,
                hop_ms: 16.0,
                fft_size: None,
            },
            eval: EvalConfig {
                frame_trim: 2,
                bands: BandSetting::Named("octave".into()),
            },
        }
    }

    /// Profile defaults overlaid with the TOML text `overrides`.
    pub fn from_toml(profile: Profile, overrides: &str) -> Result<Self> {
        let user: toml::Table = overrides.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        let s = &self.scene;
        if !(s.sample_rate > 0.0) || !(s.speed_of_sound > 0.0) {
            return Err(Error::Config("scene.sample_rate and scene.speed_of_sound must be positive".into()));
        }
        if s.t60.is_some() == s.reflection.is_some() {
            return Err(Error::Config("give exactly one of scene.t60 and scene.reflection".into()));
        }
        if s.source != "synthetic" {
            require_file(&resolve(base_dir, &s.source), "scene.source")?;
        } else if !(s.source_duration > 0.0) {
            return Err(Error::Config("scene.source_duration must be positive".into()));
        }
        if self.hrtf.source != "analytic" {
            require_file(&resolve(base_dir, &self.hrtf.source), "hrtf.source")?;
        }
        if !(s.high_pass_hz >= 0.0 && s.high_pass_hz < s.sample_rate / 2.0) {
            return Err(Error::Config("scene.high_pass_hz must lie in [0, sample_rate/2)".into()));
        }
        if !(s.noise_snr_db > f64::NEG_INFINITY) || s.noise_snr_db.is_nan() {
            return Err(Error::Config("scene.noise_snr_db must be a number or inf".into()));
        }
        if let DoaSetting::Named(name) = &self.design.direct_doa {
            if name != "auto" {
                return Err(Error::Config(format!("design.direct_doa {name:?}: expected [θ, φ] or \"auto\"")));
            }
        }
        if let BandSetting::Named(name) = &self.eval.bands {
            if name != "octave" {
                return Err(Error::Config(format!("eval.bands {name:?}: expected a list or \"octave\"")));
            }
        }
        if self.design.reverb_grid_size == 0 {
            return Err(Error::Config("design.reverb_grid_size must be positive".into()));
        }
        let room = self.room()?;
        let geom = self.array()?;
        if !room.contains(s.source_position) {
            return Err(Error::OutsideRoom("source"));
        }
        if geom.absolute_positions().into_iter().any(|p| !room.contains(p)) {
            return Err(Error::OutsideRoom("microphone"));
        }
        self.direct_doa()?;
        let stft = self.stft_config()?;
        self.reverb_solver()?.validate(stft.sample_rate / 2.0)?;
        self.direct_solver()?.validate(stft.sample_rate / 2.0)?;
        self.bands()?;
        Ok(())
    }

    /// The room before any [`T60Fit::Simulated`] refinement.
    pub fn room(&self) -> Result<RoomSpec> {
        let s = &self.scene;
        match (s.t60, s.reflection) {
            (Some(t60), None) => RoomSpec::from_t60(s.room_dimensions, t60, s.speed_of_sound),
            (None, Some(r)) => RoomSpec::new(s.room_dimensions, r, s.speed_of_sound),
            _ => Err(Error::Config("give exactly one of scene.t60 and scene.reflection".into())),
        }
    }

    pub fn array(&self) -> Result<ArrayGeometry> {
        let a = &self.scene.array;
        match a.layout {
            Layout::Semicircle => ArrayGeometry::semicircle(a.count, a.radius, self.scene.array_center),
            Layout::Custom => {
                let mics = a
                    .mics
                    .iter()
                    .map(|&[r, th, ph]| {
                        Ok(Microphone {
                            radius: r,
                            direction: Direction::new(th, ph)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                ArrayGeometry::new(mics, self.scene.array_center)
            }
        }
    }

    pub fn direct_doa(&self) -> Result<Direction> {
        match &self.design.direct_doa {
            DoaSetting::Angles([th, ph]) => Direction::new(*th, *ph),
            DoaSetting::Named(_) => {
                let [sx, sy, sz] = self.scene.source_position;
                let [cx, cy, cz] = self.scene.array_center;
                Direction::from_cartesian([sx - cx, sy - cy, sz - cz])
            }
        }
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        let s = &self.stft;
        let mut cfg = StftConfig::from_durations(self.scene.sample_rate, s.window_ms / 1000.0, s.hop_ms / 1000.0)?;
        if let Some(n) = s.fft_size {
            cfg.fft_size = n;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        let stft = self.stft_config()?;
        FrequencyGrid::from_fft(stft.sample_rate, stft.fft_size, self.scene.speed_of_sound)
    }

    pub fn direct_solver(&self) -> Result<SolverConfig> {
        let snr = Snr::from_db(self.design.direct_snr_db)?;
        Ok(if self.design.direct_magls {
            SolverConfig::magls(snr, self.design.magls_cutoff_hz)
        } else {
            SolverConfig::ls(snr)
        })
    }

    pub fn reverb_solver(&self) -> Result<SolverConfig> {
        let snr = Snr::from_db(self.design.reverb_snr_db)?;
        Ok(if self.design.magls {
            SolverConfig::magls(snr, self.design.magls_cutoff_hz)
        } else {
            SolverConfig::ls(snr)
        })
    }

    pub fn noise_snr(&self) -> Result<Snr> {
        Snr::from_db(self.scene.noise_snr_db)
    }

    pub fn bands(&self) -> Result<Vec<(f64, f64)>> {
        let nyquist = self.scene.sample_rate / 2.0;
        match &self.eval.bands {
            BandSetting::Named(_) => Ok(crate::eval::octave_bands(nyquist)),
            BandSetting::List(list) => {
                if list.is_empty() {
                    return Err(Error::Config("eval.bands is empty".into()));
                }
                for &[lo, hi] in list {
                    if !(lo >= 0.0 && hi > lo && hi <= nyquist) {
                        return Err(Error::Config(format!("band [{lo}, {hi}] outside [0, {nyquist}]")));
                    }
                }
                Ok(list.iter().map(|&[lo, hi]| (lo, hi)).collect())
            }
        }
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn require_file(path: &Path, key: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: {} does not exist", path.display())))
    }
}

pub fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// A validated configuration together with where its inputs live.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub profile: Profile,
    pub base_dir: PathBuf,
}

impl ResolvedConfig {
    /// Reads `path` (or uses bare profile defaults), applies the seed
    /// override and validates.
    pub fn load(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<Self> {
        let (text, base_dir) = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (std::fs::read_to_string(p)?, dir)
            }
            None => (String::new(), PathBuf::from(".")),
        };
        let mut config = RunConfig::from_toml(profile, &text)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        Self::new(config, profile, base_dir)
    }

    pub fn new(config: RunConfig, profile: Profile, base_dir: PathBuf) -> Result<Self> {
        config.validate(&base_dir)?;
        Ok(Self {
            config,
            profile,
            base_dir,
        })
    }

    pub fn source_path(&self) -> Option<PathBuf> {
        (self.config.scene.source != "synthetic").then(|| resolve(&self.base_dir, &self.config.scene.source))
    }

    pub fn hrtf_path(&self) -> Option<PathBuf> {
        (self.config.hrtf.source != "analytic").then(|| resolve(&self.base_dir, &self.config.hrtf.source))
    }

    /// Hash of the resolved config and the contents of every input file.
    pub fn digest(&self) -> Result<[u8; 32]> {
        let mut text = String::from("bsm run v1\n");
        text.push_str(&self.config.to_toml());
        for (name, path) in [("source", self.source_path()), ("hrtf", self.hrtf_path())] {
            if let Some(p) = path {
                text.push_str(&format!("{name} {}\n", crate::io::sha256_file(&p)?));
            }
        }
        Ok(sha256(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for p in [Profile::Desk, Profile::Paper] {
            let cfg = RunConfig::profile(p);
            cfg.validate(Path::new(".")).unwrap();
            assert_eq!(cfg.array().unwrap().len(), 6);
            assert_eq!(cfg.grid().unwrap().len(), 1025);
        }
    }

    #[test]
    fn toml_round_trip_and_merge() {
        let cfg = RunConfig::profile(Profile::Desk);
        assert_eq!(RunConfig::from_toml(Profile::Desk, &cfg.to_toml()).unwrap(), cfg);
        let merged = RunConfig::from_toml(Profile::Paper, "seed = 9\n[scene]\nmax_order = 3\n").unwrap();
        assert_eq!(merged.seed, 9);
        assert_eq!(merged.scene.max_order, 3);
        assert_eq!(merged.scene.room_dimensions, [8.0, 5.0, 3.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(Profile::Desk, "[scene]\nmax_ordr = 3\n").is_err());
        assert!(RunConfig::from_toml(Profile::Desk, "colour = 1\n").is_err());
    }

    #[test]
    fn reflection_replaces_t60() {
        let mut cfg = RunConfig::from_toml(Profile::Desk, "[scene]\nreflection = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5]\n").unwrap();
        assert!(cfg.validate(Path::new(".")).is_err());
        cfg.scene.t60 = None;
        cfg.validate(Path::new(".")).unwrap();
        assert_eq!(cfg.room().unwrap().reflection, [0.5; 6]);
    }

    #[test]
    fn missing_files_rejected() {
        let cfg = RunConfig::from_toml(Profile::Desk, "[hrtf]\nsource = \"missing.bsmh\"\n").unwrap();
        assert!(matches!(cfg.validate(Path::new("/nonexistent")), Err(Error::Config(_))));
    }

    #[test]
    fn auto_doa_points_at_source() {
        let cfg = RunConfig::from_toml(Profile::Desk, "[design]\ndirect_doa = \"auto\"\n").unwrap();
        let d = cfg.direct_doa().unwrap();
        assert!((d.colatitude() - PI / 2.0).abs() < 1e-12);
        assert!((d.azimuth() - 0.27f64.atan2(0.47)).abs() < 1e-12);
    }

    #[test]
    fn digest_tracks_config() {
        let a = ResolvedConfig::new(RunConfig::profile(Profile::Desk), Profile::Desk, ".".into()).unwrap();
        let mut b = a.clone();
        b.config.seed += 1;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap(), a.clone().digest().unwrap());
    }
}
