//! Spherical coordinates, direction grids and plane-wave steering vectors.
//!
//! Directions use `(colatitude θ, azimuth φ)`: θ is measured from the +z
//! axis down towards the xy plane, φ from +x towards +y.
//!
//! A plane wave arriving from unit direction `û` is observed at position `r`
//! with phase `exp(+i k r·û)`, i.e. points closer to the source lead. This
//! matches a forward DFT with kernel `exp(-iωt)` applied to delayed signals
//! and is the single sign convention used for steering vectors, analytic
//! HRTFs and SH encoding throughout the crate.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::special::{sh_basis, sh_count, spherical_bessel_j};
use crate::{DMatrix, DVector, Error, Result};

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    colatitude: f64,
    azimuth: f64,
}

impl Direction {
    /// Builds a direction, normalizing the azimuth to `[0, 2π)`.
    pub fn new(colatitude: f64, azimuth: f64) -> Result<Self> {
        if !colatitude.is_finite() || !azimuth.is_finite() {
            return Err(Error::NonFinite("direction"));
        }
        if !(0.0..=PI).contains(&colatitude) {
            return Err(Error::InvalidArgument(format!(
                "colatitude {colatitude} outside [0, π]"
            )));
        }
        let mut azimuth = azimuth.rem_euclid(2.0 * PI);
        if azimuth >= 2.0 * PI {
            azimuth = 0.0;
        }
        Ok(Self {
            colatitude,
            azimuth,
        })
    }

    /// Direction of a non-zero Cartesian vector.
    pub fn from_cartesian(v: [f64; 3]) -> Result<Self> {
        let r = norm3(v);
        if r == 0.0 || !r.is_finite() {
            return Err(Error::InvalidArgument("zero-length direction vector".into()));
        }
        let colatitude = (v[2] / r).clamp(-1.0, 1.0).acos();
        Self::new(colatitude, v[1].atan2(v[0]))
    }

    pub fn colatitude(&self) -> f64 {
        self.colatitude
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        sph_to_cart(1.0, *self)
    }

    pub fn cos_angle_to(&self, other: Direction) -> f64 {
        dot3(self.unit_vector(), other.unit_vector()).clamp(-1.0, 1.0)
    }

    pub fn angle_to(&self, other: Direction) -> f64 {
        self.cos_angle_to(other).acos()
    }
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Spherical to Cartesian conversion.
pub fn sph_to_cart(r: f64, d: Direction) -> [f64; 3] {
    let (st, ct) = d.colatitude.sin_cos();
    let (sp, cp) = d.azimuth.sin_cos();
    [r * st * cp, r * st * sp, r * ct]
}

/// One omnidirectional microphone relative to the array center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Microphone {
    pub radius: f64,
    pub direction: Direction,
}

impl Microphone {
    pub fn position(&self) -> [f64; 3] {
        sph_to_cart(self.radius, self.direction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mics: Vec<Microphone>,
    center: [f64; 3],
}

impl ArrayGeometry {
    pub fn new(mics: Vec<Microphone>, center: [f64; 3]) -> Result<Self> {
        if mics.is_empty() {
            return Err(Error::InvalidArgument("array needs at least one microphone".into()));
        }
        if let Some(bad) = mics.iter().find(|m| !(m.radius > 0.0) || !m.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "microphone radius must be positive, got {}",
                bad.radius
            )));
        }
        Ok(Self { mics, center })
    }

    /// `count` microphones on a horizontal semicircle of the given radius
    /// with `φ_m = π − π(m−1)/(M−1)`; a single microphone sits at `φ = π/2`.
    pub fn semicircle(count: usize, radius: f64, center: [f64; 3]) -> Result<Self> {
        let mics = (0..count)
            .map(|m| {
                let phi = if count == 1 {
                    PI / 2.0
                } else {
                    PI - PI * m as f64 / (count - 1) as f64
                };
                Direction::new(PI / 2.0, phi).map(|direction| Microphone { radius, direction })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mics, center)
    }

    pub fn mics(&self) -> &[Microphone] {
        &self.mics
    }

    pub fn len(&self) -> usize {
        self.mics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mics.is_empty()
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// Microphone positions relative to the center.
    pub fn relative_positions(&self) -> Vec<[f64; 3]> {
        self.mics.iter().map(Microphone::position).collect()
    }

    /// Microphone positions in the room frame.
    pub fn absolute_positions(&self) -> Vec<[f64; 3]> {
        self.relative_positions()
            .into_iter()
            .map(|p| [p[0] + self.center[0], p[1] + self.center[1], p[2] + self.center[2]])
            .collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.mics.iter().map(|m| m.radius).fold(0.0, f64::max)
    }

    /// Same geometry moved to a new center.
    pub fn with_center(&self, center: [f64; 3]) -> Self {
        Self {
            mics: self.mics.clone(),
            center,
        }
    }
}

/// One-sided frequency axis shared by every per-bin quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    sample_rate: f64,
    speed_of_sound: f64,
    fft_size: Option<usize>,
    frequencies: Vec<f64>,
}

impl FrequencyGrid {
    /// Bins `0, fs/N, …, fs/2` of an `fft_size`-point transform.
    pub fn from_fft(sample_rate: f64, fft_size: usize, speed_of_sound: f64) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("fft size {fft_size} must be even and ≥ 2")));
        }
        let frequencies = (0..=fft_size / 2)
            .map(|b| b as f64 * sample_rate / fft_size as f64)
            .collect();
        let mut grid = Self::custom(sample_rate, frequencies, speed_of_sound)?;
        grid.fft_size = Some(fft_size);
        Ok(grid)
    }

    /// An arbitrary strictly increasing list of frequencies in `[0, fs/2]`.
    pub fn custom(sample_rate: f64, frequencies: Vec<f64>, speed_of_sound: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !(speed_of_sound > 0.0) {
            return Err(Error::InvalidArgument("sample rate and speed of sound must be positive".into()));
        }
        if frequencies.is_empty() {
            return Err(Error::InvalidArgument("frequency grid is empty".into()));
        }
        let nyquist = sample_rate / 2.0;
        if frequencies.iter().any(|f| !(0.0..=nyquist).contains(f)) {
            return Err(Error::InvalidArgument("grid frequency outside [0, Nyquist]".into()));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid frequencies must be strictly increasing".into()));
        }
        Ok(Self {
            sample_rate,
            speed_of_sound,
            fft_size: None,
            frequencies,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    /// The transform size when the grid came from [`FrequencyGrid::from_fft`].
    pub fn fft_size(&self) -> Option<usize> {
        self.fft_size
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn wavenumber(&self, f: f64) -> f64 {
        2.0 * PI * f / self.speed_of_sound
    }

    fn check_frequency(&self, f: f64) -> Result<()> {
        if !f.is_finite() {
            return Err(Error::NonFinite("frequency"));
        }
        if f < 0.0 {
            return Err(Error::InvalidArgument(format!("negative frequency {f}")));
        }
        if f > self.nyquist() * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("frequency {f} above Nyquist")));
        }
        Ok(())
    }
}

/// Golden-angle spiral of `count` nearly uniform directions.
///
/// Point `i` sits at `cos θ = 1 − (2i+1)/count` and `φ = i · π(3 − √5)`.
pub fn spiral_grid(count: usize) -> Result<Vec<Direction>> {
    if count == 0 {
        return Err(Error::InvalidArgument("spiral grid needs at least one point".into()));
    }
    let golden = PI * (3.0 - 5.0f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            Direction::new(z.clamp(-1.0, 1.0).acos(), i as f64 * golden)
        })
        .collect()
}

/// Closed-form free-field steering vector `v_m = exp(+i k r_m·û)`.
pub fn steering_vector(
    f: f64,
    grid: &FrequencyGrid,
    geom: &ArrayGeometry,
    doa: Direction,
) -> Result<DVector<Complex64>> {
    grid.check_frequency(f)?;
    let k = grid.wavenumber(f);
    let u = doa.unit_vector();
    Ok(DVector::from_iterator(
        geom.len(),
        geom.relative_positions()
            .into_iter()
            .map(|p| Complex64::from_polar(1.0, k * dot3(p, u))),
    ))
}

/// Padding added to `⌈k r_max⌉` when truncating SH expansions of plane waves.
pub const SH_TRUNCATION_PAD: usize = 10;

/// Truncation order `⌈k r⌉ + pad` for a plane wave seen at radius `r`.
pub fn truncation_order(k: f64, radius: f64, pad: usize) -> usize {
    (k * radius).ceil() as usize + pad
}

/// The same steering vector evaluated through the spherical-harmonic
/// plane-wave expansion
/// `v_m = Σ_n 4π iⁿ j_n(k r_m) Σ_m' Y_n^m'(r̂_m)* Y_n^m'(û)`, truncated at
/// `n = ⌈k r_max⌉ + pad`.
pub fn steering_vector_sh(
    f: f64,
    grid: &FrequencyGrid,
    geom: &ArrayGeometry,
    doa: Direction,
    pad: usize,
) -> Result<DVector<Complex64>> {
    grid.check_frequency(f)?;
    let k = grid.wavenumber(f);
    let order = truncation_order(k, geom.max_radius(), pad);
    Ok(steering_vector_sh_order(k, geom, doa, order))
}

/// SH-domain steering vector at an explicit truncation order.
pub fn steering_vector_sh_order(
    k: f64,
    geom: &ArrayGeometry,
    doa: Direction,
    order: usize,
) -> DVector<Complex64> {
    let y_doa = sh_basis(order, doa);
    DVector::from_iterator(
        geom.len(),
        geom.mics().iter().map(|mic| {
            let y_mic = sh_basis(order, mic.direction);
            let radial = spherical_bessel_j(order, k * mic.radius);
            plane_wave_sh_sum(&radial, &y_mic, &y_doa, order)
        }),
    )
}

fn plane_wave_sh_sum(radial: &[f64], y_point: &[Complex64], y_doa: &[Complex64], order: usize) -> Complex64 {
    debug_assert_eq!(y_point.len(), sh_count(order));
    let mut acc = Complex64::new(0.0, 0.0);
    let mut i_pow = Complex64::new(1.0, 0.0);
    for (n, &jn) in radial.iter().enumerate().take(order + 1) {
        let lo = n * n;
        let hi = lo + 2 * n + 1;
        let inner: Complex64 = y_point[lo..hi]
            .iter()
            .zip(&y_doa[lo..hi])
            .map(|(a, b)| a.conj() * b)
            .sum();
        acc += 4.0 * PI * i_pow * jn * inner;
        i_pow *= Complex64::new(0.0, 1.0);
    }
    acc
}

/// How steering matrices are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteeringModel {
    /// Closed-form exponentials.
    #[default]
    ClosedForm,
    /// Spherical-harmonic plane-wave expansion with [`SH_TRUNCATION_PAD`].
    ShDomain,
}

/// An `M × L` steering matrix at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    pub frequency: f64,
    pub doas: Vec<Direction>,
    pub matrix: DMatrix<Complex64>,
}

/// Column-stacks [`steering_vector`] over `doas`.
pub fn steering_matrix(
    f: f64,
    grid: &FrequencyGrid,
    geom: &ArrayGeometry,
    doas: &[Direction],
) -> Result<SteeringMatrix> {
    steering_matrix_with(SteeringModel::ClosedForm, f, grid, geom, doas)
}

pub fn steering_matrix_with(
    model: SteeringModel,
    f: f64,
    grid: &FrequencyGrid,
    geom: &ArrayGeometry,
    doas: &[Direction],
) -> Result<SteeringMatrix> {
    if doas.is_empty() {
        return Err(Error::InvalidArgument("steering matrix needs at least one DOA".into()));
    }
    grid.check_frequency(f)?;
    let m = geom.len();
    let mut matrix = DMatrix::zeros(m, doas.len());
    match model {
        SteeringModel::ClosedForm => {
            for (l, doa) in doas.iter().enumerate() {
                matrix.set_column(l, &steering_vector(f, grid, geom, *doa)?);
            }
        }
        SteeringModel::ShDomain => {
            let k = grid.wavenumber(f);
            let order = truncation_order(k, geom.max_radius(), SH_TRUNCATION_PAD);
            let y_mics: Vec<_> = geom.mics().iter().map(|mic| sh_basis(order, mic.direction)).collect();
            let radial: Vec<_> = geom
                .mics()
                .iter()
                .map(|mic| spherical_bessel_j(order, k * mic.radius))
                .collect();
            for (l, doa) in doas.iter().enumerate() {
                let y_doa = sh_basis(order, *doa);
                for mi in 0..m {
                    matrix[(mi, l)] = plane_wave_sh_sum(&radial[mi], &y_mics[mi], &y_doa, order);
                }
            }
        }
    }
    Ok(SteeringMatrix {
        frequency: f,
        doas: doas.to_vec(),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn semicircle_array() -> ArrayGeometry {
        ArrayGeometry::semicircle(6, 0.1, [2.0, 2.0, 1.7]).unwrap()
    }

    fn grid() -> FrequencyGrid {
        FrequencyGrid::from_fft(48_000.0, 2048, 343.0).unwrap()
    }

    #[test]
    fn sph_to_cart_axes() {
        let p = sph_to_cart(1.0, Direction::new(0.0, 0.0).unwrap());
        assert_abs_diff_eq!(p[2], 1.0);
        let p = sph_to_cart(1.0, Direction::new(PI / 2.0, 0.0).unwrap());
        assert_abs_diff_eq!(p[0], 1.0);
        assert_abs_diff_eq!(p[2], 0.0, epsilon = 1e-16);
        let p = sph_to_cart(2.0, Direction::new(PI / 2.0, PI / 2.0).unwrap());
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 2.0);
    }

    #[test]
    fn direction_validation() {
        assert!(Direction::new(-0.1, 0.0).is_err());
        assert!(Direction::new(3.2, 0.0).is_err());
        let d = Direction::new(1.0, -PI / 2.0).unwrap();
        assert_abs_diff_eq!(d.azimuth(), 1.5 * PI);
        let d = Direction::new(1.0, 2.0 * PI).unwrap();
        assert_eq!(d.azimuth(), 0.0);
    }

    #[test]
    fn semicircle_layout() {
        let g = semicircle_array();
        let az: Vec<f64> = g.mics().iter().map(|m| m.direction.azimuth()).collect();
        assert_abs_diff_eq!(az[0], PI, epsilon = 1e-15);
        assert_abs_diff_eq!(az[5], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(az[2], 0.6 * PI, epsilon = 1e-15);
        assert!(ArrayGeometry::semicircle(0, 0.1, [0.0; 3]).is_err());
        assert!(ArrayGeometry::semicircle(3, 0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn spiral_degenerate_and_rejects_zero() {
        assert!(spiral_grid(0).is_err());
        let one = spiral_grid(1).unwrap();
        assert_abs_diff_eq!(one[0].colatitude(), PI / 2.0);
        assert_eq!(spiral_grid(240).unwrap(), spiral_grid(240).unwrap());
    }

    #[test]
    fn spiral_240_quality() {
        let pts = spiral_grid(240).unwrap();
        let mut mean = [0.0; 3];
        for p in &pts {
            let u = p.unit_vector();
            for i in 0..3 {
                mean[i] += u[i] / 240.0;
            }
        }
        assert!(norm3(mean) < 0.02);
        let mut min_angle = f64::INFINITY;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                min_angle = min_angle.min(pts[i].angle_to(pts[j]));
            }
        }
        assert!(min_angle > 0.6 * (4.0 * PI / 240.0).sqrt(), "min angle {min_angle}");
    }

    #[test]
    fn steering_dc_is_all_ones() {
        let v = steering_vector(0.0, &grid(), &semicircle_array(), Direction::new(1.0, 1.0).unwrap()).unwrap();
        for z in v.iter() {
            assert_abs_diff_eq!(z.re, 1.0);
            assert_abs_diff_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn steering_half_wavelength_aligned_mic() {
        let r = 0.1;
        let geom = ArrayGeometry::new(
            vec![Microphone {
                radius: r,
                direction: Direction::new(PI / 2.0, 0.0).unwrap(),
            }],
            [0.0; 3],
        )
        .unwrap();
        // k r = π
        let f = 343.0 / (2.0 * r);
        let g = FrequencyGrid::from_fft(48_000.0, 2048, 343.0).unwrap();
        let v = steering_vector(f, &g, &geom, Direction::new(PI / 2.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(v[0].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[0].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_rejects_negative_frequency() {
        assert!(steering_vector(-1.0, &grid(), &semicircle_array(), Direction::new(1.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn sh_steering_matches_closed_form_at_4k() {
        let geom = semicircle_array();
        let g = grid();
        for doa in spiral_grid(24).unwrap() {
            let a = steering_vector(4000.0, &g, &geom, doa).unwrap();
            let b = steering_vector_sh(4000.0, &g, &geom, doa, SH_TRUNCATION_PAD).unwrap();
            // Omitted terms are bounded by Σ_{n>N} (2n+1) |j_n(k r)|.
            let k = g.wavenumber(4000.0);
            let order = truncation_order(k, 0.1, SH_TRUNCATION_PAD);
            let j = spherical_bessel_j(order + 40, k * 0.1);
            let tail: f64 = (order + 1..=order + 40).map(|n| (2 * n + 1) as f64 * j[n].abs()).sum();
            let err = (a - b).camax();
            assert!(err <= tail * 1.001, "{err} > {tail}");
            assert!(err < 2e-6);
        }
    }

    #[test]
    fn sh_steering_converges_with_order() {
        let geom = semicircle_array();
        let g = grid();
        let f = 7000.0;
        let k = g.wavenumber(f);
        let doa = Direction::new(1.2, 0.9).unwrap();
        let exact = steering_vector(f, &g, &geom, doa).unwrap();
        let base = truncation_order(k, geom.max_radius(), 0);
        let errs: Vec<f64> = (base..base + 12)
            .map(|n| (steering_vector_sh_order(k, &geom, doa, n) - &exact).camax())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * 1.0001 || w[1] < 1e-13, "{errs:?}");
        }
    }

    #[test]
    fn steering_matrix_properties() {
        let geom = semicircle_array();
        let g = grid();
        let doa = Direction::new(PI / 2.0, PI / 6.0).unwrap();
        let single = steering_matrix(1500.0, &g, &geom, &[doa]).unwrap();
        let v = steering_vector(1500.0, &g, &geom, doa).unwrap();
        assert_eq!(single.matrix.column(0), v.column(0));

        let doas = spiral_grid(240).unwrap();
        let sm = steering_matrix(1000.0, &g, &geom, &doas).unwrap();
        assert!(sm.matrix.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        let sv = sm.matrix.clone().svd(false, false).singular_values;
        let tol = sv[0] * 1e-10;
        assert_eq!(sv.iter().filter(|s| **s > tol).count(), 6);
        assert!(steering_matrix(1000.0, &g, &geom, &[]).is_err());
    }

    #[test]
    fn sh_domain_matrix_agrees() {
        let geom = semicircle_array();
        let g = grid();
        let doas = spiral_grid(12).unwrap();
        let a = steering_matrix_with(SteeringModel::ClosedForm, 3000.0, &g, &geom, &doas).unwrap();
        let b = steering_matrix_with(SteeringModel::ShDomain, 3000.0, &g, &geom, &doas).unwrap();
        assert!((a.matrix - b.matrix).camax() < 1e-6);
    }
}
