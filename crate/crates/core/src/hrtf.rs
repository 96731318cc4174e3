//! Head-related transfer functions.
//!
//! The head sits at the origin facing +x with the interaural axis on y: the
//! left ear is on +y, the right ear on −y.
//!
//! # `BSMH` container
//!
//! Little-endian binary, laid out as
//!
//! | field           | type                          |
//! |-----------------|-------------------------------|
//! | magic           | `b"BSMH"`                     |
//! | version         | `u32` (= 1)                   |
//! | sample_rate     | `u32`                         |
//! | direction_count | `u32`                         |
//! | ir_length       | `u32`                         |
//! | directions      | `(f64 colatitude, f64 azimuth)` × count |
//! | left IRs        | `f32` × ir_length × count (direction-major) |
//! | right IRs       | `f32` × ir_length × count     |

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::special::{sh_basis, sh_count, sh_degrees, sh_index, spherical_bessel_j};
use crate::sphere::{dot3, Direction, FrequencyGrid};
use crate::{DMatrix, Error, Result};

const MAGIC: &[u8; 4] = b"BSMH";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ear {
    Left,
    Right,
}

impl Ear {
    pub const BOTH: [Ear; 2] = [Ear::Left, Ear::Right];

    /// Unit vector from the head center towards this ear.
    pub fn axis(self) -> [f64; 3] {
        match self {
            Ear::Left => [0.0, 1.0, 0.0],
            Ear::Right => [0.0, -1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ear::Left => "left",
            Ear::Right => "right",
        }
    }
}

/// Direction-indexed frequency responses for both ears.
///
/// Responses are stored direction-major: entry `(d, b)` sits at
/// `d * bins + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HrtfSet {
    grid: FrequencyGrid,
    directions: Vec<Direction>,
    left: Vec<Complex64>,
    right: Vec<Complex64>,
}

impl HrtfSet {
    pub fn new(
        grid: FrequencyGrid,
        directions: Vec<Direction>,
        left: Vec<Complex64>,
        right: Vec<Complex64>,
    ) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidArgument("HRTF set has no directions".into()));
        }
        let expected = directions.len() * grid.len();
        if left.len() != expected || right.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} responses per ear, got {} / {}",
                left.len(),
                right.len()
            )));
        }
        if left.iter().chain(&right).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("HRTF response"));
        }
        Ok(Self {
            grid,
            directions,
            left,
            right,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn sample_rate(&self) -> f64 {
        self.grid.sample_rate()
    }

    pub fn response(&self, ear: Ear, direction: usize, bin: usize) -> Complex64 {
        self.ear_data(ear)[direction * self.grid.len() + bin]
    }

    /// Responses of one ear at one bin across all directions (the vector
    /// `h` of the filter design).
    pub fn at_bin(&self, ear: Ear, bin: usize) -> Vec<Complex64> {
        let bins = self.grid.len();
        self.ear_data(ear).iter().skip(bin).step_by(bins).copied().collect()
    }

    pub(crate) fn ear_data(&self, ear: Ear) -> &[Complex64] {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }

    /// `alpha·self + beta·other`, which must share grid and directions.
    pub fn linear_combination(&self, alpha: Complex64, other: &HrtfSet, beta: Complex64) -> Result<HrtfSet> {
        if self.grid != other.grid || self.directions != other.directions {
            return Err(Error::DimensionMismatch("HRTF sets differ in grid or directions".into()));
        }
        let mix = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect();
        HrtfSet::new(
            self.grid.clone(),
            self.directions.clone(),
            mix(&self.left, &other.left),
            mix(&self.right, &other.right),
        )
    }
}

/// Time-domain head-related impulse responses as stored in a `BSMH` file.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirSet {
    pub sample_rate: u32,
    pub directions: Vec<Direction>,
    pub ir_length: usize,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

impl HrirSet {
    pub fn new(
        sample_rate: u32,
        directions: Vec<Direction>,
        ir_length: usize,
        left: Vec<f32>,
        right: Vec<f32>,
    ) -> Result<Self> {
        if directions.is_empty() || ir_length == 0 {
            return Err(Error::InvalidArgument("HRIR set needs directions and taps".into()));
        }
        let expected = directions.len() * ir_length;
        if left.len() != expected || right.len() != expected {
            return Err(Error::ChannelMismatch {
                left: left.len() / ir_length,
                right: right.len() / ir_length,
            });
        }
        if left.iter().chain(&right).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("HRIR tap"));
        }
        Ok(Self {
            sample_rate,
            directions,
            ir_length,
            left,
            right,
        })
    }

    pub fn ir(&self, ear: Ear, direction: usize) -> &[f32] {
        let data = match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        };
        &data[direction * self.ir_length..(direction + 1) * self.ir_length]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.directions.len() * 16 + (self.left.len() + self.right.len()) * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.directions.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.ir_length as u32).to_le_bytes());
        for d in &self.directions {
            out.extend_from_slice(&d.colatitude().to_le_bytes());
            out.extend_from_slice(&d.azimuth().to_le_bytes());
        }
        for v in self.left.iter().chain(&self.right) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::MalformedHeader("bad magic, expected BSMH".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::MalformedHeader(format!("unsupported version {version}")));
        }
        let sample_rate = word(8);
        let count = word(12) as usize;
        let ir_length = word(16) as usize;
        if count == 0 || ir_length == 0 || sample_rate == 0 {
            return Err(Error::MalformedHeader("zero sample rate, direction count or IR length".into()));
        }
        let table_end = HEADER_LEN + count * 16;
        let channel_bytes = count * ir_length * 4;
        if bytes.len() < table_end + channel_bytes {
            return Err(Error::MalformedHeader("file truncated before the left channel ends".into()));
        }
        let remaining = bytes.len() - table_end - channel_bytes;
        if remaining != channel_bytes {
            if !remaining.is_multiple_of(ir_length * 4) {
                return Err(Error::MalformedHeader("right channel is not a whole number of IRs".into()));
            }
            return Err(Error::ChannelMismatch {
                left: count,
                right: remaining / (ir_length * 4),
            });
        }
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let directions = (0..count)
            .map(|d| {
                let at = HEADER_LEN + d * 16;
                Direction::new(f64_at(at), f64_at(at + 8))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::MalformedHeader(format!("direction table: {e}")))?;
        let floats = |start: usize| -> Vec<f32> {
            bytes[start..start + channel_bytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let left = floats(table_end);
        let right = floats(table_end + channel_bytes);
        Self::new(sample_rate, directions, ir_length, left, right)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Frequency responses on the one-sided grid of an `fft_size` transform.
    pub fn to_hrtf_set(&self, fft_size: usize, speed_of_sound: f64) -> Result<HrtfSet> {
        if fft_size < self.ir_length {
            return Err(Error::InvalidArgument(format!(
                "fft size {fft_size} shorter than IR length {}",
                self.ir_length
            )));
        }
        let grid = FrequencyGrid::from_fft(self.sample_rate as f64, fft_size, speed_of_sound)?;
        let spectra = |ear: Ear| -> Vec<Complex64> {
            (0..self.directions.len())
                .flat_map(|d| {
                    let ir: Vec<f64> = self.ir(ear, d).iter().map(|&v| v as f64).collect();
                    dsp::rfft(&ir, fft_size)
                })
                .collect()
        };
        HrtfSet::new(grid, self.directions.clone(), spectra(Ear::Left), spectra(Ear::Right))
    }

    /// Least-squares SH fit applied tap by tap, giving complex SH-domain
    /// impulse responses.
    pub fn sh_fit_time(&self, order: usize) -> Result<ShHrir> {
        let fit = ShFit::new(&self.directions, order)?;
        let taps = self.ir_length;
        let fit_ear = |ear: Ear| -> Vec<Complex64> {
            let data = DMatrix::from_fn(self.directions.len(), taps, |d, t| Complex64::new(self.ir(ear, d)[t] as f64, 0.0));
            let coeffs = fit.apply(&data);
            // coefficient-major: channel c occupies [c*taps, (c+1)*taps)
            (0..coeffs.nrows())
                .flat_map(|c| (0..taps).map(move |t| (c, t)))
                .map(|(c, t)| coeffs[(c, t)])
                .collect()
        };
        Ok(ShHrir {
            order,
            sample_rate: self.sample_rate,
            ir_length: taps,
            left: fit_ear(Ear::Left),
            right: fit_ear(Ear::Right),
        })
    }
}

/// Reads a `BSMH` file and transforms it onto an `fft_size` grid.
pub fn load_hrtf(path: impl AsRef<Path>, fft_size: usize, speed_of_sound: f64) -> Result<HrtfSet> {
    HrirSet::load(path)?.to_hrtf_set(fft_size, speed_of_sound)
}

pub fn save_hrtf(set: &HrirSet, path: impl AsRef<Path>) -> Result<()> {
    set.save(path)
}

/// Analytic test head: each ear is an omnidirectional point receiver at
/// `±ear_offset` on the interaural axis, `h(f, û) = exp(+i k r_ear·û)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointReceiverHead {
    pub ear_offset: f64,
}

impl PointReceiverHead {
    pub fn new(ear_offset: f64) -> Result<Self> {
        if !(ear_offset > 0.0) || !ear_offset.is_finite() {
            return Err(Error::InvalidArgument(format!("ear offset must be positive, got {ear_offset}")));
        }
        Ok(Self { ear_offset })
    }

    pub fn ear_position(&self, ear: Ear) -> [f64; 3] {
        let a = ear.axis();
        [a[0] * self.ear_offset, a[1] * self.ear_offset, a[2] * self.ear_offset]
    }

    pub fn response(&self, ear: Ear, wavenumber: f64, d: Direction) -> Complex64 {
        Complex64::from_polar(1.0, wavenumber * dot3(self.ear_position(ear), d.unit_vector()))
    }

    /// Exact SH coefficients `h_nm = 4π iⁿ j_n(k r) Y_n^m(r̂_ear)*`.
    pub fn sh_coefficients(&self, order: usize, grid: &FrequencyGrid) -> HrtfShCoefficients {
        let count = sh_count(order);
        let mut out = HrtfShCoefficients::zeros(order, grid.clone());
        for ear in Ear::BOTH {
            let ear_dir = Direction::from_cartesian(ear.axis()).expect("unit axis");
            let y = sh_basis(order, ear_dir);
            let data = out.ear_data_mut(ear);
            for (b, &f) in grid.frequencies().iter().enumerate() {
                let radial = spherical_bessel_j(order, grid.wavenumber(f) * self.ear_offset);
                let row = &mut data[b * count..(b + 1) * count];
                for (n, m) in sh_degrees(order) {
                    let i_pow = match n % 4 {
                        0 => Complex64::new(1.0, 0.0),
                        1 => Complex64::new(0.0, 1.0),
                        2 => Complex64::new(-1.0, 0.0),
                        _ => Complex64::new(0.0, -1.0),
                    };
                    row[sh_index(n, m)] = 4.0 * PI * radial[n] * i_pow * y[sh_index(n, m)].conj();
                }
            }
        }
        out
    }
}

/// Samples a [`PointReceiverHead`] at `directions` on `grid`.
pub fn point_receiver_hrtf(ear_offset: f64, grid: &FrequencyGrid, directions: &[Direction]) -> Result<HrtfSet> {
    let head = PointReceiverHead::new(ear_offset)?;
    let eval = |ear: Ear| -> Vec<Complex64> {
        directions
            .iter()
            .flat_map(|d| grid.frequencies().iter().map(move |&f| head.response(ear, grid.wavenumber(f), *d)))
            .collect()
    };
    HrtfSet::new(grid.clone(), directions.to_vec(), eval(Ear::Left), eval(Ear::Right))
}

/// Per-bin SH coefficients of both ears (`h = Σ h_nm Y_n^m`), stored
/// bin-major: entry `(b, nm)` sits at `b * (order+1)² + nm`.
#[derive(Debug, Clone, PartialEq)]
pub struct HrtfShCoefficients {
    order: usize,
    grid: FrequencyGrid,
    left: Vec<Complex64>,
    right: Vec<Complex64>,
}

impl HrtfShCoefficients {
    pub fn zeros(order: usize, grid: FrequencyGrid) -> Self {
        let n = sh_count(order) * grid.len();
        Self {
            order,
            grid,
            left: vec![Complex64::new(0.0, 0.0); n],
            right: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn coefficients(&self, ear: Ear, bin: usize) -> &[Complex64] {
        let c = sh_count(self.order);
        &self.ear_data(ear)[bin * c..(bin + 1) * c]
    }

    fn ear_data(&self, ear: Ear) -> &[Complex64] {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }

    fn ear_data_mut(&mut self, ear: Ear) -> &mut Vec<Complex64> {
        match ear {
            Ear::Left => &mut self.left,
            Ear::Right => &mut self.right,
        }
    }

    /// Decoder weight `w_nm = ∫ h Y_n^m dΩ = (−1)^m h_{n,−m}` used to render
    /// a plane-wave density with coefficients `a_nm` as `Σ a_nm w_nm`.
    pub fn decoder_weight(&self, ear: Ear, bin: usize, n: usize, m: i64) -> Complex64 {
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        sign * self.coefficients(ear, bin)[sh_index(n, -m)]
    }

    /// Evaluates the expansion at `targets`.
    pub fn evaluate(&self, targets: &[Direction]) -> Result<HrtfSet> {
        let c = sh_count(self.order);
        let bases: Vec<Vec<Complex64>> = targets.iter().map(|d| sh_basis(self.order, *d)).collect();
        let bins = self.grid.len();
        let eval = |ear: Ear| -> Vec<Complex64> {
            let data = self.ear_data(ear);
            let mut out = Vec::with_capacity(targets.len() * bins);
            for y in &bases {
                for b in 0..bins {
                    let row = &data[b * c..(b + 1) * c];
                    out.push(row.iter().zip(y).map(|(h, y)| h * y).sum());
                }
            }
            out
        };
        HrtfSet::new(self.grid.clone(), targets.to_vec(), eval(Ear::Left), eval(Ear::Right))
    }

    /// Copy truncated to a lower order.
    pub fn truncated(&self, order: usize) -> HrtfShCoefficients {
        let order = order.min(self.order);
        let (src, dst) = (sh_count(self.order), sh_count(order));
        let cut = |data: &[Complex64]| data.chunks_exact(src).flat_map(|row| row[..dst].to_vec()).collect();
        HrtfShCoefficients {
            order,
            grid: self.grid.clone(),
            left: cut(&self.left),
            right: cut(&self.right),
        }
    }
}

/// SH-domain impulse responses from [`HrirSet::sh_fit_time`], stored
/// coefficient-major: channel `nm` occupies `[nm*ir_length, (nm+1)*ir_length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShHrir {
    pub order: usize,
    pub sample_rate: u32,
    pub ir_length: usize,
    pub left: Vec<Complex64>,
    pub right: Vec<Complex64>,
}

impl ShHrir {
    /// Transforms the SH impulse responses onto `grid`, whose transform size
    /// must cover the IR length.
    pub fn spectrum(&self, order: usize, grid: &FrequencyGrid) -> Result<HrtfShCoefficients> {
        let size = grid
            .fft_size()
            .ok_or_else(|| Error::InvalidArgument("SH spectrum needs an FFT grid".into()))?;
        if size < self.ir_length {
            return Err(Error::InvalidArgument(format!("fft size {size} shorter than IR length {}", self.ir_length)));
        }
        let order = order.min(self.order);
        let count = sh_count(order);
        let bins = grid.len();
        let mut out = HrtfShCoefficients::zeros(order, grid.clone());
        for ear in Ear::BOTH {
            let src = match ear {
                Ear::Left => &self.left,
                Ear::Right => &self.right,
            };
            let dst = out.ear_data_mut(ear);
            for c in 0..count {
                let mut buf = vec![Complex64::new(0.0, 0.0); size];
                buf[..self.ir_length].copy_from_slice(&src[c * self.ir_length..(c + 1) * self.ir_length]);
                dsp::fft(&mut buf);
                for b in 0..bins {
                    dst[b * count + c] = buf[b];
                }
            }
        }
        Ok(out)
    }
}

/// Least-squares SH fit operator for a fixed direction set and order.
pub struct ShFit {
    order: usize,
    // (Y^H Y)^{-1} Y^H via thin QR: R^{-1} Q^H
    pinv: DMatrix<Complex64>,
}

impl ShFit {
    pub fn new(directions: &[Direction], order: usize) -> Result<Self> {
        let count = sh_count(order);
        if directions.len() < count {
            return Err(Error::UnderdeterminedFit {
                order,
                required: count,
                available: directions.len(),
            });
        }
        let mut y = DMatrix::zeros(directions.len(), count);
        for (d, dir) in directions.iter().enumerate() {
            for (c, v) in sh_basis(order, *dir).into_iter().enumerate() {
                y[(d, c)] = v;
            }
        }
        let qr = y.qr();
        let r = qr.r();
        let q = qr.q();
        let diag_max = (0..count).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        let diag_min = (0..count).map(|i| r[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if !(diag_min > diag_max * 1e-10) {
            return Err(Error::IllConditioned {
                condition: diag_max / diag_min,
                ceiling: 1e10,
            });
        }
        let pinv = r
            .solve_upper_triangular(&q.adjoint())
            .ok_or_else(|| Error::InvalidArgument("singular SH fit".into()))?;
        Ok(Self { order, pinv })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficients (rows) for each data column.
    pub fn apply(&self, data: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        &self.pinv * data
    }

    /// Operator mapping source-grid samples straight to `targets`.
    pub fn interpolator(&self, targets: &[Direction]) -> DMatrix<Complex64> {
        let count = sh_count(self.order);
        let mut y = DMatrix::zeros(targets.len(), count);
        for (t, dir) in targets.iter().enumerate() {
            for (c, v) in sh_basis(self.order, *dir).into_iter().enumerate() {
                y[(t, c)] = v;
            }
        }
        y * &self.pinv
    }
}

fn ear_matrix(set: &HrtfSet, ear: Ear) -> DMatrix<Complex64> {
    let bins = set.grid.len();
    let data = set.ear_data(ear);
    DMatrix::from_fn(set.directions.len(), bins, |d, b| data[d * bins + b])
}

/// Per-bin least-squares SH fit of an HRTF set.
pub fn sh_fit(set: &HrtfSet, order: usize) -> Result<HrtfShCoefficients> {
    let fit = ShFit::new(&set.directions, order)?;
    let count = sh_count(order);
    let mut out = HrtfShCoefficients::zeros(order, set.grid.clone());
    for ear in Ear::BOTH {
        let coeffs = fit.apply(&ear_matrix(set, ear));
        let dst = out.ear_data_mut(ear);
        for b in 0..set.grid.len() {
            for c in 0..count {
                dst[b * count + c] = coeffs[(c, b)];
            }
        }
    }
    Ok(out)
}

/// Fits an order-`order` SH expansion per bin and evaluates it at `targets`.
pub fn sh_interpolate(set: &HrtfSet, order: usize, targets: &[Direction]) -> Result<HrtfSet> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no interpolation targets".into()));
    }
    let fit = ShFit::new(&set.directions, order)?;
    let op = fit.interpolator(targets);
    let bins = set.grid.len();
    let eval = |ear: Ear| -> Vec<Complex64> {
        let out = &op * ear_matrix(set, ear);
        (0..targets.len())
            .flat_map(|t| (0..bins).map(move |b| (t, b)))
            .map(|(t, b)| out[(t, b)])
            .collect()
    };
    HrtfSet::new(set.grid.clone(), targets.to_vec(), eval(Ear::Left), eval(Ear::Right))
}

/// Root-mean-square residual of an order-`order` fit on the source grid.
pub fn sh_fit_residual(set: &HrtfSet, order: usize) -> Result<f64> {
    let back = sh_interpolate(set, order, &set.directions)?;
    let mut err = 0.0;
    let mut n = 0usize;
    for ear in Ear::BOTH {
        for (a, b) in set.ear_data(ear).iter().zip(back.ear_data(ear)) {
            err += (a - b).norm_sqr();
            n += 1;
        }
    }
    Ok((err / n as f64).sqrt())
}
