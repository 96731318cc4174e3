//! Binary containers, float32 WAV files, hashing and stage manifests.
//!
//! Every container written by this crate starts with a 4-byte magic and a
//! little-endian `u32` version, followed by type-specific fields. Artifacts
//! produced by the pipeline carry the 32-byte scene digest of the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::{Error, Result};

pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        let name = String::from_utf8_lossy(magic);
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(Error::MalformedHeader(format!("bad magic, expected {name}")));
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if found != version {
            return Err(Error::MalformedHeader(format!("{name} version {found} is not supported")));
        }
        Ok(Self { bytes, at: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::MalformedHeader(format!("truncated at byte {}", self.at)));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    /// Guards a length field against allocating more than the remaining bytes.
    pub(crate) fn check_remaining(&self, elements: usize, element_size: usize) -> Result<()> {
        match elements.checked_mul(element_size) {
            Some(n) if n <= self.bytes.len() - self.at => Ok(()),
            _ => Err(Error::MalformedHeader("declared size exceeds the file".into())),
        }
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.at == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::MalformedHeader(format!("{} trailing bytes", self.bytes.len() - self.at)))
        }
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&read_existing(path)?))
}

pub(crate) fn read_existing(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read(path)?)
}

/// Multichannel audio at a fixed sample rate, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("audio needs at least one channel".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::DimensionMismatch("audio channels differ in length".into()));
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const DIGEST_CHUNK: &[u8; 4] = b"bsmd";

/// RIFF/WAVE float32 bytes, with an optional `bsmd` chunk holding a digest.
/// Readers that do not know the chunk skip it.
pub fn wav_bytes(audio: &Audio, digest: Option<[u8; 32]>) -> Vec<u8> {
    let channels = audio.channels.len() as u16;
    let frames = audio.len();
    let data_len = frames * channels as usize * 4;
    let extra = if digest.is_some() { 8 + 32 } else { 0 };
    let mut out = Vec::with_capacity(12 + 26 + extra + 8 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((4 + 26 + extra + 8 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&18u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * channels as u32 * 4).to_le_bytes());
    out.extend_from_slice(&(channels * 4).to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    if let Some(d) = digest {
        out.extend_from_slice(DIGEST_CHUNK);
        out.extend_from_slice(&32u32.to_le_bytes());
        out.extend_from_slice(&d);
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for t in 0..frames {
        for c in &audio.channels {
            out.extend_from_slice(&(c[t] as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, audio: &Audio, digest: Option<[u8; 32]>) -> Result<()> {
    std::fs::write(path, wav_bytes(audio, digest))?;
    Ok(())
}

/// Reads integer or float WAV files; integer samples are scaled to [−1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let bytes = read_existing(path)?;
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes))?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut channels = vec![Vec::with_capacity(samples.len() / nch.max(1)); nch];
    for (i, s) in samples.into_iter().enumerate() {
        channels[i % nch].push(s);
    }
    Audio::new(spec.sample_rate, channels)
}

/// The digest stored in a WAV file's `bsmd` chunk, if present.
pub fn wav_digest(bytes: &[u8]) -> Option<[u8; 32]> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as usize;
        let body = at + 8;
        if id == DIGEST_CHUNK && len == 32 && body + 32 <= bytes.len() {
            return bytes[body..body + 32].try_into().ok();
        }
        at = body + len + (len & 1);
    }
    None
}

/// Per-stage record of the scene digest and the hash of each artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub scene_digest: String,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, scene_digest: [u8; 32]) -> Self {
        Self {
            stage: stage.to_string(),
            scene_digest: hex::encode(scene_digest),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn path(dir: &Path, stage: &str) -> PathBuf {
        dir.join(format!("{stage}.manifest.json"))
    }

    /// Records an artifact written under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.artifacts.insert(name.to_string(), sha256_file(dir.join(name))?);
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(Self::path(dir, &self.stage), text)?;
        Ok(())
    }

    pub fn load(dir: &Path, stage: &str) -> Result<Self> {
        let bytes = read_existing(Self::path(dir, stage))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Digest(format!("{stage} manifest: {e}")))
    }

    /// Checks that the manifest belongs to this scene and that every
    /// artifact is unchanged on disk.
    pub fn verify(&self, dir: &Path, scene_digest: [u8; 32]) -> Result<()> {
        if self.scene_digest != hex::encode(scene_digest) {
            return Err(Error::Digest(format!(
                "{} artifacts were produced for a different scene or config",
                self.stage
            )));
        }
        for (name, hash) in &self.artifacts {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            if &sha256_file(&path)? != hash {
                return Err(Error::Digest(format!("{name} does not match its {} manifest entry", self.stage)));
            }
        }
        Ok(())
    }
}
