//! Per-bin BSM filter solvers and filter-bank design.
//!
//! For an `M × L` steering matrix `V` and HRTF vector `h` (one entry per
//! assumed source direction) the filters `c` are chosen so that the array
//! output `cᴴ x` matches the ear signal `hᵀ s`:
//!
//! * [`solve_general`]: `c = (V R_s Vᴴ + R_n)⁻¹ V R_s h*`
//! * [`solve_ls`]: `c = (V Vᴴ + SNR⁻¹ I)⁻¹ V h*`, the uncorrelated-source,
//!   white-noise special case
//! * [`solve_magls`]: matches `|Vᴴ c|` to `|h|` by iterated phase substitution
//!
//! With `SNR = ∞` the regularization is replaced by a floor of
//! `tikhonov_floor · trace(V Vᴴ) / M`.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hrtf::{Ear, HrtfSet};
use crate::io::{ByteReader, ByteWriter};
use crate::sphere::{steering_matrix_with, ArrayGeometry, Direction, FrequencyGrid, SteeringModel};
use crate::{DMatrix, DVector, Error, Result};

/// Signal-to-noise ratio `σ_s² / σ_n²` as a linear power ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(f64);

impl Snr {
    pub const INFINITE: Snr = Snr(f64::INFINITY);

    pub fn linear(value: f64) -> Result<Self> {
        if value.is_nan() || value <= 0.0 {
            return Err(Error::InvalidArgument(format!("SNR must be positive, got {value}")));
        }
        Ok(Snr(value))
    }

    pub fn from_db(db: f64) -> Result<Self> {
        if db == f64::INFINITY {
            return Ok(Self::INFINITE);
        }
        Self::linear(10f64.powf(db / 10.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

pub const DEFAULT_TIKHONOV_FLOOR: f64 = 1e-12;
pub const DEFAULT_CONDITION_CEILING: f64 = 1e12;
pub const DEFAULT_MAGLS_ITERATIONS: usize = 50;
pub const DEFAULT_PHASE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub snr: Snr,
    pub magls_enabled: bool,
    pub magls_cutoff_hz: f64,
    /// Relative floor used in place of `1/SNR` when the SNR is infinite.
    pub tikhonov_floor: f64,
    pub max_magls_iterations: usize,
    pub phase_tolerance: f64,
    pub condition_ceiling: f64,
}

impl SolverConfig {
    /// Plain least squares at every bin.
    pub fn ls(snr: Snr) -> Self {
        Self {
            snr,
            magls_enabled: false,
            magls_cutoff_hz: 1500.0,
            tikhonov_floor: DEFAULT_TIKHONOV_FLOOR,
            max_magls_iterations: DEFAULT_MAGLS_ITERATIONS,
            phase_tolerance: DEFAULT_PHASE_TOLERANCE,
            condition_ceiling: DEFAULT_CONDITION_CEILING,
        }
    }

    /// Least squares below `cutoff_hz`, MagLS at and above it.
    pub fn magls(snr: Snr, cutoff_hz: f64) -> Self {
        Self {
            magls_enabled: true,
            magls_cutoff_hz: cutoff_hz,
            ..Self::ls(snr)
        }
    }

    pub fn validate(&self, nyquist: f64) -> Result<()> {
        if !(self.snr.0 > 0.0) {
            return Err(Error::InvalidArgument("SNR must be positive".into()));
        }
        if self.magls_enabled && !(self.magls_cutoff_hz > 0.0 && self.magls_cutoff_hz <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "MagLS cutoff {} Hz outside (0, {nyquist}]",
                self.magls_cutoff_hz
            )));
        }
        if !(self.tikhonov_floor >= 0.0) || !(self.condition_ceiling > 1.0) {
            return Err(Error::InvalidArgument("bad Tikhonov floor or condition ceiling".into()));
        }
        Ok(())
    }
}

fn check_finite(values: impl IntoIterator<Item = Complex64>, what: &'static str) -> Result<()> {
    if values.into_iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Hermitian condition estimate `λ_max / λ_min`.
fn hermitian_condition(a: &DMatrix<Complex64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `A X = B` for Hermitian positive definite `A`, enforcing the
/// condition ceiling.
fn solve_hermitian(a: DMatrix<Complex64>, b: &DMatrix<Complex64>, ceiling: f64) -> Result<(DMatrix<Complex64>, f64)> {
    let condition = hermitian_condition(&a);
    if !(condition <= ceiling) {
        return Err(Error::IllConditioned { condition, ceiling });
    }
    let chol = a.cholesky().ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
        ceiling,
    })?;
    Ok((chol.solve(b), condition))
}

/// The regularization weight added to the diagonal.
pub fn regularization(v: &DMatrix<Complex64>, snr: Snr, tikhonov_floor: f64) -> f64 {
    if snr.is_infinite() {
        let trace: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        tikhonov_floor * trace / v.nrows() as f64
    } else {
        1.0 / snr.0
    }
}

/// The linear map `h ↦ (V Vᴴ + εI)⁻¹ V h*` for one bin, factored once and
/// reused for both ears and every MagLS iteration.
///
/// When `L < M` the algebraically identical push-through form
/// `V (Vᴴ V + εI)⁻¹` is solved instead, so the smaller system is the one
/// whose conditioning is checked.
#[derive(Debug, Clone)]
pub struct LsOperator {
    gain: DMatrix<Complex64>,
    condition: f64,
}

impl LsOperator {
    pub fn new(v: &DMatrix<Complex64>, snr: Snr, tikhonov_floor: f64, ceiling: f64) -> Result<Self> {
        check_finite(v.iter().copied(), "steering matrix")?;
        if v.nrows() == 0 || v.ncols() == 0 {
            return Err(Error::DimensionMismatch("empty steering matrix".into()));
        }
        let eps = regularization(v, snr, tikhonov_floor);
        let (m, l) = v.shape();
        let vh = v.adjoint();
        let (gain, condition) = if l < m {
            let gram = &vh * v + DMatrix::from_diagonal_element(l, l, Complex64::new(eps, 0.0));
            let (inv, cond) = solve_hermitian(gram, &DMatrix::identity(l, l), ceiling)?;
            (v * inv, cond)
        } else {
            let sys = v * &vh + DMatrix::from_diagonal_element(m, m, Complex64::new(eps, 0.0));
            solve_hermitian(sys, v, ceiling)?
        };
        Ok(Self { gain, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `c = G h*`.
    pub fn apply(&self, h: &[Complex64]) -> DVector<Complex64> {
        let hc = DVector::from_iterator(h.len(), h.iter().map(|z| z.conj()));
        &self.gain * hc
    }

    /// `c = G t` for a target `t` of `Vᴴ c` given directly.
    fn apply_target(&self, target: &DVector<Complex64>) -> DVector<Complex64> {
        &self.gain * target
    }
}

/// Source and noise covariances for [`solve_general`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    source: DMatrix<Complex64>,
    noise: DMatrix<Complex64>,
}

impl CovarianceModel {
    pub fn new(source: DMatrix<Complex64>, noise: DMatrix<Complex64>) -> Result<Self> {
        for (name, m) in [("source", &source), ("noise", &noise)] {
            if !m.is_square() {
                return Err(Error::DimensionMismatch(format!("{name} covariance is not square")));
            }
            check_finite(m.iter().copied(), "covariance")?;
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
            if (m - m.adjoint()).camax() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("{name} covariance is not Hermitian")));
            }
            let eig = m.clone().symmetric_eigenvalues();
            let max = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
            if eig.iter().any(|&e| e < -1e-10 * max.max(f64::MIN_POSITIVE)) {
                return Err(Error::InvalidArgument(format!("{name} covariance is not positive semidefinite")));
            }
        }
        Ok(Self { source, noise })
    }

    /// `R_s = σ_s² I_L`, `R_n = σ_n² I_M`.
    pub fn isotropic(sources: usize, mics: usize, source_power: f64, noise_power: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal_element(sources, sources, Complex64::new(source_power, 0.0)),
            DMatrix::from_diagonal_element(mics, mics, Complex64::new(noise_power, 0.0)),
        )
    }

    pub fn source(&self) -> &DMatrix<Complex64> {
        &self.source
    }

    pub fn noise(&self) -> &DMatrix<Complex64> {
        &self.noise
    }
}

/// `c = (V R_s Vᴴ + R_n)⁻¹ V R_s h*`.
pub fn solve_general(v: &DMatrix<Complex64>, cov: &CovarianceModel, h: &[Complex64]) -> Result<DVector<Complex64>> {
    solve_general_with(v, cov, h, DEFAULT_CONDITION_CEILING)
}

pub fn solve_general_with(
    v: &DMatrix<Complex64>,
    cov: &CovarianceModel,
    h: &[Complex64],
    ceiling: f64,
) -> Result<DVector<Complex64>> {
    let (m, l) = v.shape();
    if cov.source.nrows() != l || cov.noise.nrows() != m || h.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "V is {m}×{l}, R_s {0}×{0}, R_n {1}×{1}, h has {2}",
            cov.source.nrows(),
            cov.noise.nrows(),
            h.len()
        )));
    }
    check_finite(v.iter().copied(), "steering matrix")?;
    check_finite(h.iter().copied(), "HRTF vector")?;
    let vrs = v * &cov.source;
    let sys = &vrs * v.adjoint() + &cov.noise;
    let hc = DMatrix::from_iterator(l, 1, h.iter().map(|z| z.conj()));
    let (c, _) = solve_hermitian(sys, &(vrs * hc), ceiling)?;
    Ok(c.column(0).into_owned())
}

/// `c = (V Vᴴ + SNR⁻¹ I)⁻¹ V h*` with the default floor and ceiling.
pub fn solve_ls(v: &DMatrix<Complex64>, h: &[Complex64], snr: Snr) -> Result<DVector<Complex64>> {
    if h.len() != v.ncols() {
        return Err(Error::DimensionMismatch(format!("h has {} entries, V has {} columns", h.len(), v.ncols())));
    }
    check_finite(h.iter().copied(), "HRTF vector")?;
    Ok(LsOperator::new(v, snr, DEFAULT_TIKHONOV_FLOOR, DEFAULT_CONDITION_CEILING)?.apply(h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaglsSolution {
    pub coefficients: DVector<Complex64>,
    pub iterations: usize,
    pub converged: bool,
}

fn wrapped_phase_diff(a: Complex64, b: Complex64) -> f64 {
    (a * b.conj()).arg().abs()
}

/// MagLS by iterated phase substitution: the LS target for `Vᴴ c` keeps the
/// magnitudes `|h|` and takes its phases from the current estimate.
///
/// Seeded by `phase_init` (typically the previous bin's filter) or by the
/// plain LS solution.
pub fn solve_magls(
    v: &DMatrix<Complex64>,
    h: &[Complex64],
    snr: Snr,
    phase_init: Option<&DVector<Complex64>>,
) -> Result<MaglsSolution> {
    if h.len() != v.ncols() {
        return Err(Error::DimensionMismatch(format!("h has {} entries, V has {} columns", h.len(), v.ncols())));
    }
    check_finite(h.iter().copied(), "HRTF vector")?;
    let op = LsOperator::new(v, snr, DEFAULT_TIKHONOV_FLOOR, DEFAULT_CONDITION_CEILING)?;
    magls_iterate(&op, v, h, phase_init, DEFAULT_MAGLS_ITERATIONS, DEFAULT_PHASE_TOLERANCE)
}

pub fn magls_iterate(
    op: &LsOperator,
    v: &DMatrix<Complex64>,
    h: &[Complex64],
    phase_init: Option<&DVector<Complex64>>,
    max_iterations: usize,
    tolerance: f64,
) -> Result<MaglsSolution> {
    let mut c = match phase_init {
        Some(init) if init.len() == v.nrows() => init.clone(),
        Some(init) => {
            return Err(Error::DimensionMismatch(format!(
                "phase seed has {} entries, array has {}",
                init.len(),
                v.nrows()
            )))
        }
        None => op.apply(h),
    };
    let vh = v.adjoint();
    let mut y = &vh * &c;
    let magnitude: Vec<f64> = h.iter().map(|z| z.norm()).collect();
    for it in 1..=max_iterations {
        let target = DVector::from_iterator(
            h.len(),
            y.iter().zip(&magnitude).map(|(yi, &a)| {
                if yi.norm() > 0.0 {
                    a * yi / yi.norm()
                } else {
                    Complex64::new(a, 0.0)
                }
            }),
        );
        c = op.apply_target(&target);
        let y_next = &vh * &c;
        let change = y_next
            .iter()
            .zip(y.iter())
            .map(|(a, b)| wrapped_phase_diff(*a, *b))
            .fold(0.0, f64::max);
        y = y_next;
        if change < tolerance {
            return Ok(MaglsSolution {
                coefficients: c,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(MaglsSolution {
        coefficients: c,
        iterations: max_iterations,
        converged: false,
    })
}

/// `‖ |Vᴴ c| − |h| ‖₂`.
pub fn magnitude_error(v: &DMatrix<Complex64>, c: &DVector<Complex64>, h: &[Complex64]) -> f64 {
    (v.adjoint() * c)
        .iter()
        .zip(h)
        .map(|(y, h)| (y.norm() - h.norm()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Which component of the sound field a filter bank was designed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Direct,
    Reverberant,
    WholeField,
}

impl Provenance {
    fn code(self) -> u8 {
        match self {
            Provenance::Direct => 0,
            Provenance::Reverberant => 1,
            Provenance::WholeField => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Provenance::Direct,
            1 => Provenance::Reverberant,
            2 => Provenance::WholeField,
            other => return Err(Error::MalformedHeader(format!("unknown provenance code {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinSolver {
    Ls,
    MagLs,
}

/// Per-bin, per-ear filters `c^{l,r}(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsmFilterBank {
    grid: FrequencyGrid,
    mics: usize,
    provenance: Provenance,
    config: SolverConfig,
    solvers: Vec<BinSolver>,
    left: Vec<Complex64>,
    right: Vec<Complex64>,
    digest: [u8; 32],
}

impl BsmFilterBank {
    /// Assembles a bank from bin-major coefficient arrays (`bins × M`).
    pub fn from_parts(
        grid: FrequencyGrid,
        mics: usize,
        provenance: Provenance,
        config: SolverConfig,
        left: Vec<Complex64>,
        right: Vec<Complex64>,
    ) -> Result<Self> {
        let bins = grid.len();
        if mics == 0 || left.len() != bins * mics || right.len() != bins * mics {
            return Err(Error::DimensionMismatch(format!(
                "filter bank expects {bins}×{mics} coefficients per ear"
            )));
        }
        check_finite(left.iter().chain(&right).copied(), "filter coefficients")?;
        Ok(Self {
            grid,
            mics,
            provenance,
            config,
            solvers: vec![BinSolver::Ls; bins],
            left,
            right,
            digest: [0; 32],
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn bins(&self) -> usize {
        self.grid.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn solvers(&self) -> &[BinSolver] {
        &self.solvers
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn with_digest(mut self, digest: [u8; 32]) -> Self {
        self.digest = digest;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn coefficients(&self, ear: Ear, bin: usize) -> &[Complex64] {
        let data = match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        };
        &data[bin * self.mics..(bin + 1) * self.mics]
    }

    /// Lowest frequency solved with MagLS, if any.
    pub fn magls_start_hz(&self) -> Option<f64> {
        self.solvers
            .iter()
            .position(|s| *s == BinSolver::MagLs)
            .map(|b| self.grid.frequencies()[b])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(b"BSMF", 1);
        w.u32(self.mics as u32);
        w.u32(self.bins() as u32);
        w.u8(self.provenance.code());
        w.u8(self.config.magls_enabled as u8);
        w.f64(self.config.snr.value());
        w.f64(self.config.magls_cutoff_hz);
        w.f64(self.config.tikhonov_floor);
        w.u32(self.config.max_magls_iterations as u32);
        w.f64(self.config.phase_tolerance);
        w.f64(self.config.condition_ceiling);
        w.f64(self.grid.sample_rate());
        w.f64(self.grid.speed_of_sound());
        w.u32(self.grid.fft_size().unwrap_or(0) as u32);
        w.bytes(&self.digest);
        for &f in self.grid.frequencies() {
            w.f64(f);
        }
        for s in &self.solvers {
            w.u8(matches!(s, BinSolver::MagLs) as u8);
        }
        for b in 0..self.bins() {
            for ear in Ear::BOTH {
                for z in self.coefficients(ear, b) {
                    w.f64(z.re);
                    w.f64(z.im);
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, b"BSMF", 1)?;
        let mics = r.u32()? as usize;
        let bins = r.u32()? as usize;
        let provenance = Provenance::from_code(r.u8()?)?;
        let magls_enabled = r.u8()? != 0;
        let snr = Snr::linear(r.f64()?).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let config = SolverConfig {
            snr,
            magls_enabled,
            magls_cutoff_hz: r.f64()?,
            tikhonov_floor: r.f64()?,
            max_magls_iterations: r.u32()? as usize,
            phase_tolerance: r.f64()?,
            condition_ceiling: r.f64()?,
        };
        let sample_rate = r.f64()?;
        let speed = r.f64()?;
        let fft_size = r.u32()? as usize;
        let digest: [u8; 32] = r.array()?;
        let freqs = (0..bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let grid = if fft_size > 0 {
            FrequencyGrid::from_fft(sample_rate, fft_size, speed)?
        } else {
            FrequencyGrid::custom(sample_rate, freqs.clone(), speed)?
        };
        if grid.frequencies() != freqs.as_slice() {
            return Err(Error::MalformedHeader("bin frequencies disagree with the FFT size".into()));
        }
        let solvers = (0..bins)
            .map(|_| r.u8().map(|b| if b == 0 { BinSolver::Ls } else { BinSolver::MagLs }))
            .collect::<Result<Vec<_>>>()?;
        let mut left = Vec::with_capacity(bins * mics);
        let mut right = Vec::with_capacity(bins * mics);
        for _ in 0..bins {
            for dst in [&mut left, &mut right] {
                for _ in 0..mics {
                    let re = r.f64()?;
                    dst.push(Complex64::new(re, r.f64()?));
                }
            }
        }
        r.expect_end()?;
        let mut bank = Self::from_parts(grid, mics, provenance, config, left, right)?;
        bank.solvers = solvers;
        bank.digest = digest;
        Ok(bank)
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
}

struct BinDesign {
    v: DMatrix<Complex64>,
    op: LsOperator,
    h: [Vec<Complex64>; 2],
    ls: [DVector<Complex64>; 2],
}

/// Designs filters at every bin of `grid` for the sources `doas`, whose
/// HRTFs are given in `hrtf` (same grid, directions in the same order).
///
/// Bins below the MagLS cutoff, and bin 0 always, use least squares; MagLS
/// bins are seeded by the preceding bin's filter, so that chain is solved in
/// frequency order while the per-bin factorizations run in parallel.
pub fn design_filterbank(
    geom: &ArrayGeometry,
    grid: &FrequencyGrid,
    doas: &[Direction],
    hrtf: &HrtfSet,
    config: &SolverConfig,
    provenance: Provenance,
    steering: SteeringModel,
) -> Result<BsmFilterBank> {
    config.validate(grid.nyquist())?;
    if doas.is_empty() {
        return Err(Error::InvalidArgument("filter design needs at least one DOA".into()));
    }
    if hrtf.directions() != doas {
        return Err(Error::DimensionMismatch(format!(
            "HRTF set has {} directions that do not match the {} design DOAs",
            hrtf.directions().len(),
            doas.len()
        )));
    }
    if hrtf.grid().frequencies() != grid.frequencies() {
        return Err(Error::DimensionMismatch("HRTF grid differs from the design grid".into()));
    }
    let bins: Vec<BinDesign> = grid
        .frequencies()
        .par_iter()
        .enumerate()
        .map(|(b, &f)| -> Result<BinDesign> {
            let wrap = |e| Error::at_bin(b, e);
            let v = steering_matrix_with(steering, f, grid, geom, doas).map_err(wrap)?.matrix;
            let op = LsOperator::new(&v, config.snr, config.tikhonov_floor, config.condition_ceiling).map_err(wrap)?;
            let h = [hrtf.at_bin(Ear::Left, b), hrtf.at_bin(Ear::Right, b)];
            let ls = [op.apply(&h[0]), op.apply(&h[1])];
            Ok(BinDesign { v, op, h, ls })
        })
        .collect::<Result<Vec<_>>>()?;

    let m = geom.len();
    let mut coeffs = [Vec::with_capacity(bins.len() * m), Vec::with_capacity(bins.len() * m)];
    let mut solvers = Vec::with_capacity(bins.len());
    let mut previous: [Option<DVector<Complex64>>; 2] = [None, None];
    for (b, bin) in bins.iter().enumerate() {
        let f = grid.frequencies()[b];
        let use_magls = config.magls_enabled && b > 0 && f >= config.magls_cutoff_hz;
        solvers.push(if use_magls { BinSolver::MagLs } else { BinSolver::Ls });
        for e in 0..2 {
            let c = if use_magls {
                magls_iterate(
                    &bin.op,
                    &bin.v,
                    &bin.h[e],
                    previous[e].as_ref(),
                    config.max_magls_iterations,
                    config.phase_tolerance,
                )
                .map_err(|err| Error::at_bin(b, err))?
                .coefficients
            } else {
                bin.ls[e].clone()
            };
            coeffs[e].extend(c.iter().copied());
            previous[e] = Some(c);
        }
    }
    let [left, right] = coeffs;
    let mut bank = BsmFilterBank::from_parts(grid.clone(), m, provenance, *config, left, right)?;
    bank.solvers = solvers;
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrtf::point_receiver_hrtf;
    use crate::sphere::{spiral_grid, steering_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, l: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(m, l, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn scalar_cases() {
        let v = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let h = [Complex64::new(0.3, 0.4)];
        let c = solve_ls(&v, &h, Snr::INFINITE).unwrap();
        assert!((c[0] - h[0].conj()).norm() < 1e-11);
        let snr = Snr::linear(4.0).unwrap();
        let c = solve_ls(&v, &h, snr).unwrap();
        assert!((c[0] - h[0].conj() / 1.25).norm() < 1e-15);

        let cov = CovarianceModel::new(
            DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            DMatrix::from_element(1, 1, Complex64::new(DEFAULT_TIKHONOV_FLOOR, 0.0)),
        )
        .unwrap();
        let c = solve_general(&v, &cov, &h).unwrap();
        assert!((c[0] - h[0].conj()).norm() < 1e-11);
    }

    #[test]
    fn general_reduces_to_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_matrix(&mut rng, 6, 4);
        let h = random_vec(&mut rng, 4);
        let cov = CovarianceModel::isotropic(4, 6, 2.0, 0.5).unwrap();
        let a = solve_general(&v, &cov, &h).unwrap();
        let b = solve_ls(&v, &h, Snr::linear(4.0).unwrap()).unwrap();
        assert!((a - &b).norm() < 1e-12 * b.norm().max(1.0));
    }

    fn objective(v: &DMatrix<Complex64>, cov: &CovarianceModel, h: &[Complex64], c: &DVector<Complex64>) -> f64 {
        // E|p − z|² = eᴴ R_s e + cᴴ R_n c with e = Vᴴ c − h*
        let hc = DVector::from_iterator(h.len(), h.iter().map(|z| z.conj()));
        let e = v.adjoint() * c - hc;
        let a = (e.adjoint() * cov.source() * &e)[(0, 0)].re;
        let b = (c.adjoint() * cov.noise() * c)[(0, 0)].re;
        a + b
    }

    #[test]
    fn general_solution_is_a_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_matrix(&mut rng, 4, 3);
        let a = random_matrix(&mut rng, 3, 3);
        let rs = &a * a.adjoint();
        let b = random_matrix(&mut rng, 4, 4);
        let rn = (&b * b.adjoint()) * Complex64::new(0.1, 0.0);
        let cov = CovarianceModel::new(rs, rn).unwrap();
        let h = random_vec(&mut rng, 3);
        let c = solve_general(&v, &cov, &h).unwrap();
        let best = objective(&v, &cov, &h, &c);
        for _ in 0..100 {
            let dir = DVector::from_vec(random_vec(&mut rng, 4));
            let step = &dir * Complex64::new(1e-3 / dir.norm(), 0.0);
            assert!(objective(&v, &cov, &h, &(&c + step)) >= best);
        }
    }

    #[test]
    fn covariance_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 0.0),
        ]);
        assert!(CovarianceModel::new(bad, DMatrix::identity(2, 2)).is_err());
        let indefinite = DMatrix::from_diagonal_element(2, 2, Complex64::new(-1.0, 0.0));
        assert!(CovarianceModel::new(DMatrix::identity(2, 2), indefinite).is_err());
    }

    #[test]
    fn overdetermined_infinite_snr_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_matrix(&mut rng, 6, 2);
        let h = random_vec(&mut rng, 2);
        let c = solve_ls(&v, &h, Snr::INFINITE).unwrap();
        let hc = DVector::from_iterator(2, h.iter().map(|z| z.conj()));
        assert!((v.adjoint() * c - hc).norm() < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        let v = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        assert!(matches!(
            solve_ls(&v, &[Complex64::new(f64::NAN, 0.0)], Snr::INFINITE),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn singular_system_reports_condition() {
        // two identical columns, L = 2 < M = 3, no regularization headroom
        let col = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0)];
        let v = DMatrix::from_fn(3, 2, |i, _| col[i]);
        let err = solve_ls(&v, &[Complex64::new(1.0, 0.0); 2], Snr::INFINITE).unwrap_err();
        match err {
            Error::IllConditioned { condition, .. } => assert!(condition > 1e12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conjugating_h_conjugates_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_matrix(&mut rng, 5, 7);
        let h = random_vec(&mut rng, 7);
        let snr = Snr::linear(10.0).unwrap();
        let op = LsOperator::new(&v, snr, DEFAULT_TIKHONOV_FLOOR, DEFAULT_CONDITION_CEILING).unwrap();
        // linear in h*: c(α h₁ + β h₂) = α* c(h₁) + β* c(h₂)
        let h2 = random_vec(&mut rng, 7);
        let (a, b) = (Complex64::new(0.5, -2.0), Complex64::new(1.5, 0.25));
        let mix: Vec<Complex64> = h.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
        let lhs = op.apply(&mix);
        let rhs = op.apply(&h) * a.conj() + op.apply(&h2) * b.conj();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn norm_shrinks_with_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = random_matrix(&mut rng, 6, 10);
        let h = random_vec(&mut rng, 10);
        let mut last = f64::INFINITY;
        for snr_db in [60.0, 40.0, 20.0, 10.0, 0.0, -10.0] {
            let c = solve_ls(&v, &h, Snr::from_db(snr_db).unwrap()).unwrap();
            assert!(c.norm() <= last + 1e-12);
            last = c.norm();
        }
    }

    #[test]
    fn magls_fixed_point_and_unitary_case() {
        let v = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let h = [Complex64::new(0.8, 0.0)];
        let ls = solve_ls(&v, &h, Snr::INFINITE).unwrap();
        let mag = solve_magls(&v, &h, Snr::INFINITE, None).unwrap();
        assert!((ls - mag.coefficients).norm() < 1e-14);

        let s = 1.0 / 2f64.sqrt();
        let u = DMatrix::from_row_slice(2, 2, &[
            Complex64::new(s, 0.0),
            Complex64::new(0.0, s),
            Complex64::new(0.0, s),
            Complex64::new(s, 0.0),
        ]);
        let h = [Complex64::new(0.3, 1.1), Complex64::new(-0.7, 0.2)];
        let sol = solve_magls(&u, &h, Snr::INFINITE, None).unwrap();
        assert!(magnitude_error(&u, &sol.coefficients, &h) < 1e-8);
    }

    #[test]
    fn magls_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, 4, 30);
        let h = random_vec(&mut rng, 30);
        let seed = DVector::from_vec(random_vec(&mut rng, 4));
        let a = solve_magls(&v, &h, Snr::linear(100.0).unwrap(), Some(&seed)).unwrap();
        let b = solve_magls(&v, &h, Snr::linear(100.0).unwrap(), Some(&seed)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn magls_beats_ls_on_magnitude_mostly() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut wins = 0;
        for _ in 0..100 {
            let v = random_matrix(&mut rng, 3, 12);
            let h = random_vec(&mut rng, 12);
            let snr = Snr::linear(100.0).unwrap();
            let ls = solve_ls(&v, &h, snr).unwrap();
            let mag = solve_magls(&v, &h, snr, None).unwrap();
            if magnitude_error(&v, &mag.coefficients, &h) <= magnitude_error(&v, &ls, &h) + 1e-12 {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}");
    }

    fn semicircle_array() -> ArrayGeometry {
        ArrayGeometry::semicircle(6, 0.1, [2.0, 2.0, 1.7]).unwrap()
    }

    #[test]
    fn single_bin_bank_equals_ls() {
        let geom = semicircle_array();
        let grid = FrequencyGrid::custom(48_000.0, vec![700.0], 343.0).unwrap();
        let doas = spiral_grid(20).unwrap();
        let hrtf = point_receiver_hrtf(0.0875, &grid, &doas).unwrap();
        let cfg = SolverConfig::magls(Snr::linear(100.0).unwrap(), 1500.0);
        let bank = design_filterbank(&geom, &grid, &doas, &hrtf, &cfg, Provenance::Reverberant, SteeringModel::ClosedForm).unwrap();
        let v = steering_matrix(700.0, &grid, &geom, &doas).unwrap().matrix;
        let c = solve_ls(&v, &hrtf.at_bin(Ear::Left, 0), cfg.snr).unwrap();
        assert_eq!(bank.coefficients(Ear::Left, 0), c.as_slice());
        assert_eq!(bank.solvers(), &[BinSolver::Ls]);
    }

    #[test]
    fn direct_design_matches_exactly() {
        let geom = semicircle_array();
        let grid = FrequencyGrid::from_fft(48_000.0, 256, 343.0).unwrap();
        let doa = [Direction::new(PI / 2.0, PI / 6.0).unwrap()];
        let hrtf = point_receiver_hrtf(0.0875, &grid, &doa).unwrap();
        let bank = design_filterbank(&geom, &grid, &doa, &hrtf, &SolverConfig::ls(Snr::INFINITE), Provenance::Direct, SteeringModel::ClosedForm).unwrap();
        for (b, &f) in grid.frequencies().iter().enumerate() {
            let v = steering_matrix(f, &grid, &geom, &doa).unwrap().matrix;
            for ear in Ear::BOTH {
                let c = DVector::from_column_slice(bank.coefficients(ear, b));
                let y = (v.adjoint() * c)[0];
                assert!((y - hrtf.response(ear, 0, b).conj()).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn reverberant_design_is_bounded() {
        let geom = semicircle_array();
        let grid = FrequencyGrid::from_fft(48_000.0, 512, 343.0).unwrap();
        let doas = spiral_grid(240).unwrap();
        let hrtf = point_receiver_hrtf(0.0875, &grid, &doas).unwrap();
        let snr = Snr::linear(100.0).unwrap();
        let bank = design_filterbank(&geom, &grid, &doas, &hrtf, &SolverConfig::magls(snr, 1500.0), Provenance::Reverberant, SteeringModel::ClosedForm).unwrap();
        assert_eq!(bank.magls_start_hz().map(|f| f >= 1500.0), Some(true));
        for b in 0..bank.bins() {
            for ear in Ear::BOTH {
                let c = bank.coefficients(ear, b);
                assert!(c.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
                let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                assert!(norm <= snr.value().sqrt() * 1.0, "bin {b}: {norm}");
            }
        }
    }

    #[test]
    fn bank_round_trip_and_errors() {
        let geom = semicircle_array();
        let grid = FrequencyGrid::from_fft(16_000.0, 64, 343.0).unwrap();
        let doas = spiral_grid(12).unwrap();
        let hrtf = point_receiver_hrtf(0.0875, &grid, &doas).unwrap();
        let bank = design_filterbank(&geom, &grid, &doas, &hrtf, &SolverConfig::magls(Snr::linear(50.0).unwrap(), 2000.0), Provenance::Reverberant, SteeringModel::ClosedForm)
            .unwrap()
            .with_digest([7; 32]);
        let bytes = bank.to_bytes();
        assert_eq!(BsmFilterBank::from_bytes(&bytes).unwrap(), bank);
        assert!(BsmFilterBank::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let other = spiral_grid(13).unwrap();
        assert!(design_filterbank(&geom, &grid, &other, &hrtf, &SolverConfig::ls(Snr::INFINITE), Provenance::Direct, SteeringModel::ClosedForm).is_err());
    }
}
