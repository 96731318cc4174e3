//! Property tests over randomized inputs.

use std::f64::consts::PI;

use bsm::eval::{nmse, FrameRange};
use bsm::hrtf::{point_receiver_hrtf, sh_fit_residual, sh_interpolate, Ear, PointReceiverHead};
use bsm::render::{apply_filterbank, BinauralSpectrogram, BinauralTag};
use bsm::scene::{compute_image_sources, image_count, RoomSpec};
use bsm::solver::{
    design_filterbank, solve_general, solve_ls, CovarianceModel, Provenance, Snr, SolverConfig,
};
use bsm::special::{sh_basis, sh_count};
use bsm::sphere::{
    spiral_grid, steering_vector, ArrayGeometry, Direction, FrequencyGrid, Microphone, SteeringModel,
};
use bsm::stft::{Origin, Spectrogram, Stft, StftConfig};
use bsm::Complex64;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn c64() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn direction() -> impl Strategy<Value = Direction> {
    (0.0..=PI, 0.0..2.0 * PI).prop_map(|(t, p)| Direction::new(t, p).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    prop::collection::vec(c64(), rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn geometry() -> impl Strategy<Value = ArrayGeometry> {
    prop::collection::vec((0.01..0.3f64, direction()), 1..8).prop_map(|mics| {
        let mics = mics
            .into_iter()
            .map(|(radius, direction)| Microphone { radius, direction })
            .collect();
        ArrayGeometry::new(mics, [0.0; 3]).unwrap()
    })
}

/// `V`, `h` with `M × L` dimensions drawn together.
fn system() -> impl Strategy<Value = (DMatrix<Complex64>, Vec<Complex64>)> {
    (1usize..7, 1usize..9).prop_flat_map(|(m, l)| (matrix(m, l), prop::collection::vec(c64(), l)))
}

fn rel(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-15 {
                    return (x, 2.0 / ((1.0 - x * x) * dp * dp));
                }
            }
        })
        .collect()
}

#[test]
fn sh_basis_is_orthonormal() {
    // Exact for products up to degree 12 in cos θ and |m − m'| ≤ 12.
    let order = 6;
    let rings = gauss_legendre(16);
    let azimuths = 16;
    let count = sh_count(order);
    let mut gram = DMatrix::<Complex64>::zeros(count, count);
    for &(x, w) in &rings {
        for j in 0..azimuths {
            let d = Direction::new(x.acos(), 2.0 * PI * j as f64 / azimuths as f64).unwrap();
            let y = DVector::from_vec(sh_basis(order, d));
            gram += (&y * y.adjoint()) * Complex64::from(w * 2.0 * PI / azimuths as f64);
        }
    }
    let err = (gram - DMatrix::identity(count, count)).camax();
    assert!(err < 1e-8, "Gram deviation {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_entries_are_unit_phasors(geom in geometry(), f in 0.0..24_000.0f64, doa in direction()) {
        let grid = FrequencyGrid::from_fft(48_000.0, 2048, 343.0).unwrap();
        let v = steering_vector(f, &grid, &geom, doa).unwrap();
        let dc = steering_vector(0.0, &grid, &geom, doa).unwrap();
        for (z, one) in v.iter().zip(dc.iter()) {
            prop_assert!((z.norm() - 1.0).abs() < 1e-14);
            prop_assert_eq!(*one, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn spiral_grid_is_reproducible(count in 1usize..600) {
        let a = spiral_grid(count).unwrap();
        let b = spiral_grid(count).unwrap();
        prop_assert_eq!(a.len(), count);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.colatitude().to_bits(), y.colatitude().to_bits());
            prop_assert_eq!(x.azimuth().to_bits(), y.azimuth().to_bits());
        }
    }

    #[test]
    fn point_receiver_has_unit_magnitude(offset in 0.01..0.2f64, k in 0.0..450.0f64, d in direction()) {
        let head = PointReceiverHead::new(offset).unwrap();
        for ear in Ear::BOTH {
            prop_assert!((head.response(ear, k, d).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sh_interpolation_is_linear(a in 0.03..0.12f64, b in 0.03..0.12f64, alpha in c64(), beta in c64()) {
        let grid = FrequencyGrid::from_fft(48_000.0, 32, 343.0).unwrap();
        let dirs = spiral_grid(64).unwrap();
        let targets = spiral_grid(17).unwrap();
        let sa = point_receiver_hrtf(a, &grid, &dirs).unwrap();
        let sb = point_receiver_hrtf(b, &grid, &dirs).unwrap();
        let mixed = sh_interpolate(&sa.linear_combination(alpha, &sb, beta).unwrap(), 5, &targets).unwrap();
        let ia = sh_interpolate(&sa, 5, &targets).unwrap();
        let ib = sh_interpolate(&sb, 5, &targets).unwrap();
        for ear in Ear::BOTH {
            for bin in 0..grid.len() {
                for t in 0..targets.len() {
                    let want = alpha * ia.response(ear, t, bin) + beta * ib.response(ear, t, bin);
                    prop_assert!((mixed.response(ear, t, bin) - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sh_fit_residual_never_grows_with_order(offset in 0.03..0.12f64) {
        let grid = FrequencyGrid::from_fft(48_000.0, 64, 343.0).unwrap();
        let set = point_receiver_hrtf(offset, &grid, &spiral_grid(81).unwrap()).unwrap();
        let residuals: Vec<f64> = (0..=8).map(|n| sh_fit_residual(&set, n).unwrap()).collect();
        for w in residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14, "{:?}", residuals);
        }
    }

    #[test]
    fn isotropic_general_solution_is_ls((v, h) in system(), sigma_s in 0.5..2.0f64, sigma_n in 0.05..0.5f64) {
        let cov = CovarianceModel::isotropic(v.ncols(), v.nrows(), sigma_s * sigma_s, sigma_n * sigma_n).unwrap();
        let general = solve_general(&v, &cov, &h).unwrap();
        let ls = solve_ls(&v, &h, Snr::linear((sigma_s / sigma_n).powi(2)).unwrap()).unwrap();
        prop_assert!(rel(&general, &ls) < 1e-12);
    }

    #[test]
    fn ls_is_conjugate_linear_in_h((v, h) in system(), g in prop::collection::vec(c64(), 8), alpha in c64(), beta in c64()) {
        let g = &g[..h.len()];
        let snr = Snr::from_db(20.0).unwrap();
        let mixed: Vec<Complex64> = h.iter().zip(g).map(|(x, y)| alpha * x + beta * y).collect();
        let c = solve_ls(&v, &mixed, snr).unwrap();
        let want = solve_ls(&v, &h, snr).unwrap() * alpha.conj() + solve_ls(&v, g, snr).unwrap() * beta.conj();
        prop_assert!((c - &want).norm() <= 1e-10 * (1.0 + want.norm()));
    }

    #[test]
    fn filter_norm_shrinks_with_regularization((v, h) in system(), db in prop::collection::vec(-20.0..60.0f64, 2..6)) {
        let mut db = db;
        db.sort_by(|a, b| b.total_cmp(a));
        let norms: Vec<f64> = db.iter().map(|&d| solve_ls(&v, &h, Snr::from_db(d).unwrap()).unwrap().norm()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{:?} at {:?} dB", norms, db);
        }
    }

    #[test]
    fn full_rank_noiseless_systems_match_exactly(m in 2usize..8, seed in matrix(8, 8), h in prop::collection::vec(c64(), 8)) {
        // Tall slices of a random square matrix, conditioned by adding the identity.
        let l = m - 1;
        let v = seed.view((0, 0), (m, l)).into_owned() + DMatrix::identity(m, l) * Complex64::from(2.0);
        let h = &h[..l];
        let c = solve_ls(&v, h, Snr::INFINITE).unwrap();
        let fit = v.adjoint() * c;
        for (a, b) in fit.iter().zip(h) {
            prop_assert!((a - b.conj()).norm() < 1e-6);
        }
    }

    #[test]
    fn stft_is_linear_and_inverts(len in 200usize..1200, seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let stft = Stft::new(small_stft()).unwrap();
        let noise = |s: u64| -> Vec<f64> {
            (0..len).map(|n| (((n as u64 + 1).wrapping_mul(s | 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 / (1u64 << 53) as f64) - 0.5).collect()
        };
        let x = noise(seed);
        let y = noise(seed.rotate_left(17) ^ 0xABCD);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sx = stft.forward(std::slice::from_ref(&x), Origin::Measured).unwrap();
        let sy = stft.forward(std::slice::from_ref(&y), Origin::Measured).unwrap();
        let sm = stft.forward(std::slice::from_ref(&mix), Origin::Measured).unwrap();
        let want = sx.combine(a, &sy, b, Origin::Measured).unwrap();
        for (p, q) in sm.data().iter().zip(want.data()) {
            prop_assert!((p - q).norm() < 1e-12);
        }
        let cfg = small_stft();
        prop_assert_eq!(sx.frames(), 1 + (len.saturating_sub(cfg.window_length)).div_ceil(cfg.hop));
        let back = stft.inverse(&sx).unwrap().remove(0);
        for n in cfg.window_length..len.saturating_sub(cfg.window_length) {
            prop_assert!((back[n] - x[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn image_sources_are_translation_invariant(
        src in ((0.1..3.9f64), (0.1..2.9f64), (0.1..2.4f64)),
        rcv in ((0.1..3.9f64), (0.1..2.9f64), (0.1..2.4f64)),
        shift in ((-50.0..50.0f64), (-50.0..50.0f64), (-50.0..50.0f64)),
        beta in 0.1..0.95f64,
    ) {
        let room = RoomSpec::uniform([4.0, 3.0, 2.5], beta, 343.0).unwrap();
        let s = [src.0, src.1, src.2];
        let r = [rcv.0, rcv.1, rcv.2];
        let t = [shift.0, shift.1, shift.2];
        let add = |p: [f64; 3]| [p[0] + t[0], p[1] + t[1], p[2] + t[2]];
        let a = compute_image_sources(&room, s, r, 3).unwrap();
        let b = compute_image_sources(&room.translated(t), add(s), add(r), 3).unwrap();
        prop_assert_eq!(a.len(), image_count(3));
        prop_assert_eq!(a.len(), b.len());
        let direct = a.iter().find(|i| i.order() == 0).unwrap().delay;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.gain > 0.0);
            prop_assert!(x.delay >= direct);
            prop_assert!((x.delay - y.delay).abs() < 1e-9);
            prop_assert!((x.gain - y.gain).abs() <= 1e-9 * x.gain);
        }
    }

    #[test]
    fn filtering_is_linear(offset in 0.05..0.1f64, a in c64(), b in c64(), seed in any::<u64>()) {
        let (bank, cfg) = small_bank(offset);
        let m = bank.mics();
        let x = random_spectrogram(cfg, m, seed);
        let y = random_spectrogram(cfg, m, seed ^ 0x5555);
        let mut mixed = x.clone();
        for (z, (p, q)) in mixed.data_mut().iter_mut().zip(x.data().iter().zip(y.data())) {
            *z = a * p + b * q;
        }
        let zx = apply_filterbank(&bank, &x).unwrap();
        let zy = apply_filterbank(&bank, &y).unwrap();
        let zm = apply_filterbank(&bank, &mixed).unwrap();
        for ear in Ear::BOTH {
            let parts = zx.ear(ear).data().iter().zip(zy.ear(ear).data());
            for (p, (u, w)) in zm.ear(ear).data().iter().zip(parts) {
                let q = a * u + b * w;
                prop_assert!((p - q).norm() < 1e-12 * (1.0 + q.norm()));
            }
        }
    }

    #[test]
    fn nmse_ignores_common_scale_and_frame_order(alpha in c64(), seed in any::<u64>(), rotate in 1usize..9) {
        prop_assume!(alpha.norm() > 1e-3);
        let cfg = small_stft();
        let reference = random_binaural(cfg, seed, BinauralTag::Reference);
        let estimate = random_binaural(cfg, seed.wrapping_add(1), BinauralTag::BsmStandard);
        let all = FrameRange { start: 0, end: reference.left().frames() };
        let base = nmse(&estimate, &reference, all, [0; 32]).unwrap();
        let scaled = nmse(&estimate.scaled(alpha), &reference.scaled(alpha), all, [0; 32]).unwrap();
        let permuted = nmse(&rotate_frames(&estimate, rotate), &rotate_frames(&reference, rotate), all, [0; 32]).unwrap();
        for ear in Ear::BOTH {
            for bin in 0..base.bins() {
                let v = base.ear(ear).nmse[bin].unwrap();
                prop_assert!((scaled.ear(ear).nmse[bin].unwrap() - v).abs() <= 1e-12 * v);
                prop_assert!((permuted.ear(ear).nmse[bin].unwrap() - v).abs() <= 1e-12 * v);
            }
        }
    }
}

fn small_stft() -> StftConfig {
    StftConfig::from_durations(48_000.0, 64.0 / 48_000.0, 32.0 / 48_000.0).unwrap()
}

fn small_bank(offset: f64) -> (bsm::solver::BsmFilterBank, StftConfig) {
    let cfg = small_stft();
    let grid = FrequencyGrid::from_fft(48_000.0, cfg.fft_size, 343.0).unwrap();
    let geom = ArrayGeometry::semicircle(4, 0.1, [0.0; 3]).unwrap();
    let doas = spiral_grid(24).unwrap();
    let hrtf = point_receiver_hrtf(offset, &grid, &doas).unwrap();
    let bank = design_filterbank(
        &geom,
        &grid,
        &doas,
        &hrtf,
        &SolverConfig::ls(Snr::from_db(20.0).unwrap()),
        Provenance::WholeField,
        SteeringModel::ClosedForm,
    )
    .unwrap();
    (bank, cfg)
}

fn random_spectrogram(cfg: StftConfig, channels: usize, seed: u64) -> Spectrogram {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let len = 320;
    let frames = cfg.frame_count(len);
    let data = (0..channels * frames * cfg.bins())
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    Spectrogram::from_data(cfg, Origin::Measured, channels, len, data).unwrap()
}

fn random_binaural(cfg: StftConfig, seed: u64, tag: BinauralTag) -> BinauralSpectrogram {
    let left = random_spectrogram(cfg, 1, seed).with_origin(Origin::Binaural);
    let right = random_spectrogram(cfg, 1, seed ^ 0xFFFF).with_origin(Origin::Binaural);
    BinauralSpectrogram::new(left, right, tag).unwrap()
}

fn rotate_frames(s: &BinauralSpectrogram, by: usize) -> BinauralSpectrogram {
    let rotate = |sp: &Spectrogram| {
        let mut out = sp.clone();
        let frames = sp.frames();
        for t in 0..frames {
            out.frame_mut(0, (t + by) % frames).copy_from_slice(sp.frame(0, t));
        }
        out
    };
    BinauralSpectrogram::new(rotate(s.left()), rotate(s.right()), s.tag()).unwrap()
}
