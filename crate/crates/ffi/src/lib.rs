//! C interface to the `bsm` library.
//!
//! Every function returns a [`BsmStatus`]. On failure the message is kept
//! per thread and can be read with [`bsm_last_error_message`]. Geometries
//! and filter banks are opaque handles released with their `_free`
//! function. Complex arrays are interleaved `re, im` pairs ([`BsmComplex`]);
//! matrices are column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bsm::eval::{nmse, FrameRange};
use bsm::hrtf::{point_receiver_hrtf, Ear};
use bsm::render::{apply_filterbank, BinauralSpectrogram, BinauralTag};
use bsm::solver::{self, design_filterbank, Provenance, Snr, SolverConfig};
use bsm::sphere::{spiral_grid, steering_vector, ArrayGeometry, Direction, FrequencyGrid, Microphone, SteeringModel};
use bsm::stft::{Origin, Stft, StftConfig};
use bsm::{Complex64, Error};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IllConditioned = 4,
    NonFinite = 5,
    UnderdeterminedFit = 6,
    OutsideRoom = 7,
    InsufficientDecay = 8,
    MissingFile = 9,
    MalformedFile = 10,
    Provenance = 11,
    Digest = 12,
    Config = 13,
    Io = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmEar {
    Left = 0,
    Right = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmProvenance {
    Direct = 0,
    Reverberant = 1,
    WholeField = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmComplex {
    pub re: f64,
    pub im: f64,
}

/// Microphone array handle.
pub struct BsmGeometry(ArrayGeometry);

/// Filter bank handle.
pub struct BsmFilterBank(solver::BsmFilterBank);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &Error) -> BsmStatus {
    match e {
        Error::InvalidArgument(_) => BsmStatus::InvalidArgument,
        Error::DimensionMismatch(_) => BsmStatus::DimensionMismatch,
        Error::IllConditioned { .. } => BsmStatus::IllConditioned,
        Error::NonFinite(_) => BsmStatus::NonFinite,
        Error::AtBin { source, .. } => status_of(source),
        Error::UnderdeterminedFit { .. } => BsmStatus::UnderdeterminedFit,
        Error::OutsideRoom(_) => BsmStatus::OutsideRoom,
        Error::InsufficientDecay(_) => BsmStatus::InsufficientDecay,
        Error::MissingFile(_) => BsmStatus::MissingFile,
        Error::MalformedHeader(_) | Error::ChannelMismatch { .. } | Error::Wav(_) => BsmStatus::MalformedFile,
        Error::Provenance(_) => BsmStatus::Provenance,
        Error::Digest(_) => BsmStatus::Digest,
        Error::Config(_) => BsmStatus::Config,
        Error::Io(_) => BsmStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn set_error(msg: String) {
    LAST_ERROR.with(|m| *m.borrow_mut() = msg);
}

/// Runs `f`, records any failure and converts it to a status.
fn guard(f: impl FnOnce() -> FfiResult) -> BsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BsmStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            BsmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            BsmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &'static str) -> std::result::Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(name))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> std::result::Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(p, name)?, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &'static str) -> std::result::Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path<'a>(p: *const c_char) -> std::result::Result<&'a str, Failure> {
    CStr::from_ptr(non_null(p, "path")?)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument("path is not valid UTF-8".into())))
}

fn complex(z: &[BsmComplex]) -> Vec<Complex64> {
    z.iter().map(|c| Complex64::new(c.re, c.im)).collect()
}

fn write_complex(out: &mut [BsmComplex], values: impl IntoIterator<Item = Complex64>) {
    for (o, v) in out.iter_mut().zip(values) {
        *o = BsmComplex { re: v.re, im: v.im };
    }
}

fn ear(e: BsmEar) -> Ear {
    match e {
        BsmEar::Left => Ear::Left,
        BsmEar::Right => Ear::Right,
    }
}

fn snr(linear: f64) -> Result<Snr, Failure> {
    Ok(Snr::linear(linear)?)
}

fn directions(colatitude: &[f64], azimuth: &[f64]) -> Result<Vec<Direction>, Failure> {
    colatitude
        .iter()
        .zip(azimuth)
        .map(|(&t, &p)| Direction::new(t, p).map_err(Failure::from))
        .collect()
}

/// Copies the calling thread's last error message into `buffer`
/// (NUL-terminated, truncated to `capacity`) and returns its full length in
/// bytes. Pass a null buffer to query the length.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bsm_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|m| {
        let msg = m.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buffer, n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn bsm_status_name(status: BsmStatus) -> *const c_char {
    let name: &'static CStr = match status {
        BsmStatus::Ok => c"ok",
        BsmStatus::NullPointer => c"null pointer",
        BsmStatus::InvalidArgument => c"invalid argument",
        BsmStatus::DimensionMismatch => c"dimension mismatch",
        BsmStatus::IllConditioned => c"ill-conditioned",
        BsmStatus::NonFinite => c"non-finite input",
        BsmStatus::UnderdeterminedFit => c"underdetermined fit",
        BsmStatus::OutsideRoom => c"outside room",
        BsmStatus::InsufficientDecay => c"insufficient decay",
        BsmStatus::MissingFile => c"missing file",
        BsmStatus::MalformedFile => c"malformed file",
        BsmStatus::Provenance => c"provenance",
        BsmStatus::Digest => c"digest mismatch",
        BsmStatus::Config => c"config",
        BsmStatus::Io => c"io",
        BsmStatus::Panic => c"panic",
    };
    name.as_ptr()
}

/// Array of `count` microphones at spherical positions around `center`
/// (three values, meters).
///
/// # Safety
/// Each input array must hold `count` values, `center` three, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsm_geometry_new(
    radius: *const f64,
    colatitude: *const f64,
    azimuth: *const f64,
    count: usize,
    center: *const f64,
    out: *mut *mut BsmGeometry,
) -> BsmStatus {
    guard(|| {
        non_null(out, "out")?;
        let radius = slice(radius, count, "radius")?;
        let dirs = directions(slice(colatitude, count, "colatitude")?, slice(azimuth, count, "azimuth")?)?;
        let c = slice(center, 3, "center")?;
        let mics = radius
            .iter()
            .zip(dirs)
            .map(|(&radius, direction)| Microphone { radius, direction })
            .collect();
        let geom = ArrayGeometry::new(mics, [c[0], c[1], c[2]])?;
        *out = Box::into_raw(Box::new(BsmGeometry(geom)));
        Ok(())
    })
}

/// `count` microphones evenly spaced on a horizontal semicircle.
///
/// # Safety
/// `center` must hold three values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsm_geometry_semicircle(
    count: usize,
    radius: f64,
    center: *const f64,
    out: *mut *mut BsmGeometry,
) -> BsmStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = slice(center, 3, "center")?;
        let geom = ArrayGeometry::semicircle(count, radius, [c[0], c[1], c[2]])?;
        *out = Box::into_raw(Box::new(BsmGeometry(geom)));
        Ok(())
    })
}

/// Number of microphones, or 0 for a null handle.
///
/// # Safety
/// `geometry` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsm_geometry_mic_count(geometry: *const BsmGeometry) -> usize {
    geometry.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `geometry` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsm_geometry_free(geometry: *mut BsmGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// `M × count` steering matrix at STFT bin `bin` of an `fft_size`-point
/// transform, written column-major into `out`.
///
/// # Safety
/// `colatitude` and `azimuth` must hold `count` values and `out` must hold
/// `M * count`.
#[no_mangle]
pub unsafe extern "C" fn bsm_steering_matrix(
    geometry: *const BsmGeometry,
    sample_rate: f64,
    fft_size: usize,
    speed_of_sound: f64,
    bin: usize,
    colatitude: *const f64,
    azimuth: *const f64,
    count: usize,
    out: *mut BsmComplex,
) -> BsmStatus {
    guard(|| {
        let g = &non_null(geometry, "geometry").map(|p| &*p)?.0;
        let grid = FrequencyGrid::from_fft(sample_rate, fft_size, speed_of_sound)?;
        let Some(&f) = grid.frequencies().get(bin) else {
            return Err(Error::InvalidArgument(format!("bin {bin} outside a {}-bin grid", grid.len())).into());
        };
        let dirs = directions(slice(colatitude, count, "colatitude")?, slice(azimuth, count, "azimuth")?)?;
        let out = slice_mut(out, g.len() * count, "out")?;
        for (l, d) in dirs.into_iter().enumerate() {
            let v = steering_vector(f, &grid, g, d)?;
            write_complex(&mut out[l * g.len()..(l + 1) * g.len()], v.iter().copied());
        }
        Ok(())
    })
}

/// Regularized least-squares filter `c` (length `m`) for the `m × l`
/// steering matrix `v` and HRTF vector `h` (length `l`). `snr` is linear;
/// pass `INFINITY` for the noiseless solve.
///
/// # Safety
/// `v` must hold `m * l` values, `h` `l`, and `out` `m`.
#[no_mangle]
pub unsafe extern "C" fn bsm_solve_ls(
    v: *const BsmComplex,
    m: usize,
    l: usize,
    h: *const BsmComplex,
    snr_linear: f64,
    out: *mut BsmComplex,
) -> BsmStatus {
    guard(|| {
        let v = DMatrix::from_vec(m, l, complex(slice(v, m * l, "v")?));
        let h = complex(slice(h, l, "h")?);
        let c = solver::solve_ls(&v, &h, snr(snr_linear)?)?;
        write_complex(slice_mut(out, m, "out")?, c.iter().copied());
        Ok(())
    })
}

/// Magnitude least-squares filter. `phase_init` (length `m`) may be null;
/// `iterations` and `converged` may be null.
///
/// # Safety
/// As [`bsm_solve_ls`]; non-null optional pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bsm_solve_magls(
    v: *const BsmComplex,
    m: usize,
    l: usize,
    h: *const BsmComplex,
    snr_linear: f64,
    phase_init: *const BsmComplex,
    out: *mut BsmComplex,
    iterations: *mut usize,
    converged: *mut bool,
) -> BsmStatus {
    guard(|| {
        let v = DMatrix::from_vec(m, l, complex(slice(v, m * l, "v")?));
        let h = complex(slice(h, l, "h")?);
        let init = if phase_init.is_null() {
            None
        } else {
            Some(DVector::from_vec(complex(slice(phase_init, m, "phase_init")?)))
        };
        let sol = solver::solve_magls(&v, &h, snr(snr_linear)?, init.as_ref())?;
        write_complex(slice_mut(out, m, "out")?, sol.coefficients.iter().copied());
        if !iterations.is_null() {
            *iterations = sol.iterations;
        }
        if !converged.is_null() {
            *converged = sol.converged;
        }
        Ok(())
    })
}

/// Designs a filter bank for the built-in point-receiver head on the
/// one-sided grid of an `fft_size`-point STFT. `doa_count` directions come
/// from `colatitude`/`azimuth`; when both are null a spiral grid of
/// `doa_count` points is used. `magls_cutoff_hz <= 0` selects plain least
/// squares at every bin.
///
/// # Safety
/// Non-null direction arrays must hold `doa_count` values and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_design(
    geometry: *const BsmGeometry,
    sample_rate: f64,
    fft_size: usize,
    speed_of_sound: f64,
    colatitude: *const f64,
    azimuth: *const f64,
    doa_count: usize,
    ear_offset: f64,
    snr_db: f64,
    magls_cutoff_hz: f64,
    provenance: BsmProvenance,
    out: *mut *mut BsmFilterBank,
) -> BsmStatus {
    guard(|| {
        let g = &non_null(geometry, "geometry").map(|p| &*p)?.0;
        non_null(out, "out")?;
        let grid = FrequencyGrid::from_fft(sample_rate, fft_size, speed_of_sound)?;
        let doas = if colatitude.is_null() && azimuth.is_null() {
            spiral_grid(doa_count)?
        } else {
            directions(slice(colatitude, doa_count, "colatitude")?, slice(azimuth, doa_count, "azimuth")?)?
        };
        let hrtf = point_receiver_hrtf(ear_offset, &grid, &doas)?;
        let snr = Snr::from_db(snr_db)?;
        let config = if magls_cutoff_hz > 0.0 {
            SolverConfig::magls(snr, magls_cutoff_hz)
        } else {
            SolverConfig::ls(snr)
        };
        let provenance = match provenance {
            BsmProvenance::Direct => Provenance::Direct,
            BsmProvenance::Reverberant => Provenance::Reverberant,
            BsmProvenance::WholeField => Provenance::WholeField,
        };
        let bank = design_filterbank(g, &grid, &doas, &hrtf, &config, provenance, SteeringModel::ClosedForm)?;
        *out = Box::into_raw(Box::new(BsmFilterBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_load(file: *const c_char, out: *mut *mut BsmFilterBank) -> BsmStatus {
    guard(|| {
        non_null(out, "out")?;
        let bank = solver::BsmFilterBank::load(path(file)?)?;
        *out = Box::into_raw(Box::new(BsmFilterBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle and `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_save(bank: *const BsmFilterBank, file: *const c_char) -> BsmStatus {
    guard(|| {
        let bank = &non_null(bank, "bank").map(|p| &*p)?.0;
        bank.save(path(file)?)?;
        Ok(())
    })
}

/// Microphone count, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_mics(bank: *const BsmFilterBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.mics())
}

/// Bin count, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_bins(bank: *const BsmFilterBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.bins())
}

/// Copies the `M` coefficients of one ear at one bin into `out`.
///
/// # Safety
/// `bank` must be a live handle and `out` must hold `M` values.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_coefficients(
    bank: *const BsmFilterBank,
    which: BsmEar,
    bin: usize,
    out: *mut BsmComplex,
) -> BsmStatus {
    guard(|| {
        let bank = &non_null(bank, "bank").map(|p| &*p)?.0;
        if bin >= bank.bins() {
            return Err(Error::InvalidArgument(format!("bin {bin} outside a {}-bin bank", bank.bins())).into());
        }
        write_complex(slice_mut(out, bank.mics(), "out")?, bank.coefficients(ear(which), bin).iter().copied());
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsm_filterbank_free(bank: *mut BsmFilterBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of one-sided bins of the standard STFT at `sample_rate`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsm_stft_bins(sample_rate: f64, out: *mut usize) -> BsmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = StftConfig::standard(sample_rate)?.bins();
        Ok(())
    })
}

/// Filters `mics` channels of `len` samples (channel-major) with `bank`
/// through the standard STFT and writes `len` samples per ear.
///
/// # Safety
/// `signals` must hold `mics * len` values, `left` and `right` `len` each.
#[no_mangle]
pub unsafe extern "C" fn bsm_render(
    bank: *const BsmFilterBank,
    signals: *const f64,
    mics: usize,
    len: usize,
    sample_rate: f64,
    left: *mut f64,
    right: *mut f64,
) -> BsmStatus {
    guard(|| {
        let bank = &non_null(bank, "bank").map(|p| &*p)?.0;
        let data = slice(signals, mics * len, "signals")?;
        let channels: Vec<Vec<f64>> = data.chunks(len.max(1)).map(<[f64]>::to_vec).collect();
        let stft = Stft::new(StftConfig::standard(sample_rate)?)?;
        let z = apply_filterbank(bank, &stft.forward(&channels, Origin::Measured)?)?;
        let audio = z.to_audio()?;
        slice_mut(left, len, "left")?.copy_from_slice(&audio.channels[0]);
        slice_mut(right, len, "right")?.copy_from_slice(&audio.channels[1]);
        Ok(())
    })
}

/// Per-bin NMSE in dB of a binaural estimate against a reference, both
/// `len` samples per ear, over all STFT frames except `frame_trim` at each
/// edge. Bins without reference energy are written as NaN.
///
/// # Safety
/// The four signals must hold `len` values; `left_db` and `right_db` must
/// hold the bin count of [`bsm_stft_bins`].
#[no_mangle]
pub unsafe extern "C" fn bsm_nmse(
    estimate_left: *const f64,
    estimate_right: *const f64,
    reference_left: *const f64,
    reference_right: *const f64,
    len: usize,
    sample_rate: f64,
    frame_trim: usize,
    left_db: *mut f64,
    right_db: *mut f64,
) -> BsmStatus {
    guard(|| {
        let stft = Stft::new(StftConfig::standard(sample_rate)?)?;
        let binaural = |l: *const f64, r: *const f64, tag| -> Result<BinauralSpectrogram, Failure> {
            let spec = |p, name| -> Result<_, Failure> {
                Ok(stft.forward(&[slice(p, len, name)?.to_vec()], Origin::Binaural)?)
            };
            Ok(BinauralSpectrogram::new(spec(l, "left")?, spec(r, "right")?, tag)?)
        };
        let est = binaural(estimate_left, estimate_right, BinauralTag::BsmStandard)?;
        let reference = binaural(reference_left, reference_right, BinauralTag::Reference)?;
        let frames = FrameRange::trimmed(reference.left().frames(), frame_trim)?;
        let report = nmse(&est, &reference, frames, [0; 32])?;
        let bins = report.bins();
        for (e, out) in [(Ear::Left, left_db), (Ear::Right, right_db)] {
            let out = slice_mut(out, bins, "nmse output")?;
            for (b, o) in out.iter_mut().enumerate() {
                *o = report.ear(e).db(b).unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}
