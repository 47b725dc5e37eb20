//! Property suites for the invariants each module promises.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sap_core::dictionary::{dual_purify, sdc_loss_with, DictConfig, LatentHsi, SdcClusters};
use sap_core::hsi::{fold, normalize, unfold, HsiCube, NormalizeMode, UnfoldedMatrix};
use sap_core::metrics::{auc_indicators, roc_curves};
use sap_core::prior::{
    adaptive_threshold, propagate_raw, split_cubes, DetectionMap, PriorConfig, TargetTask, ThresholdMethod,
};
use sap_core::pseudo_anomaly::{generate_pseudo_anomaly, sample_prism_spec, GenConfig};
use sap_core::solver::{e_step, estimate_noise, l_step, prox_l21, AnomalyPrior};
use sap_core::spectral::{kmeans, sad};

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn cube(b: usize, m: usize, n: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HsiCube::new(b, m, n, (0..b * m * n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn light() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #[test]
    fn fold_unfold_identity(b in 1usize..6, m in 1usize..9, n in 1usize..9, seed in any::<u64>()) {
        let c = cube(b, m, n, seed);
        let back = fold(&unfold(&c)).unwrap();
        prop_assert_eq!(back.data(), c.data());
        let u = unfold(&c);
        let again = unfold(&fold(&u).unwrap());
        prop_assert_eq!(again.values(), u.values());
        prop_assert_eq!(UnfoldedMatrix::new(u.values().clone(), m, n).unwrap().cols(), m * n);
    }

    #[test]
    fn sad_ignores_positive_scale(
        u in prop::collection::vec(0.01f64..1.0, 2..20),
        seed in any::<u64>(),
        alpha in 1e-3f64..1e3,
        beta in 1e-3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|_| rng.random_range(0.01..1.0)).collect();
        let base = sad(&u, &v).unwrap();
        let us: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        let vs: Vec<f64> = v.iter().map(|x| beta * x).collect();
        prop_assert!((sad(&us, &vs).unwrap() - base).abs() < 1e-12);
        prop_assert!((sad(&v, &u).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn normalize_lands_in_unit_interval(
        data in prop::collection::vec(-1e6f64..1e6, 2 * 3 * 4),
        per_band in any::<bool>(),
    ) {
        let c = HsiCube::new(2, 3, 4, data).unwrap();
        let mode = if per_band { NormalizeMode::PerBandMinmax } else { NormalizeMode::GlobalMinmax };
        let out = normalize(&c, mode);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(light())]

    #[test]
    fn kmeans_inertia_never_increases(k in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Vec<f64>> =
            (0..60).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let km = kmeans(&samples, k, seed).unwrap();
        for w in km.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{:?}", km.inertia_history);
        }
    }

    #[test]
    fn pseudo_anomaly_is_single_and_confined(seed in any::<u64>(), bands in 4usize..12) {
        let x = cube(bands, 32, 32, seed ^ 0x55);
        let cfg = GenConfig::for_bands(bands, 0);
        let spec = sample_prism_spec(seed, (bands, 32, 32), &cfg).unwrap();
        let foot = spec.footprint((32, 32));
        let frac = foot.count() as f64 / 1024.0;
        prop_assert!(frac >= cfg.area_fraction_range.0 && frac <= cfg.area_fraction_range.1, "{frac}");
        let y = generate_pseudo_anomaly(&x, &spec).unwrap();
        let mut changed = 0;
        for b in 0..bands {
            for r in 0..32 {
                for c in 0..32 {
                    if x.get(b, r, c) != y.get(b, r, c) {
                        changed += 1;
                        prop_assert!(spec.bands().contains(&b) && foot.get(r, c), "change at ({b}, {r}, {c})");
                    }
                }
            }
        }
        prop_assert!(changed > 0);
        let again = generate_pseudo_anomaly(&x, &sample_prism_spec(seed, (bands, 32, 32), &cfg).unwrap()).unwrap();
        prop_assert_eq!(again.data(), y.data());
    }

    #[test]
    fn dictionary_atoms_are_latent_columns(seed in any::<u64>(), k in 2usize..6, q in 0.0f64..0.9) {
        let latent = LatentHsi::from_matrix(UnfoldedMatrix::new(matrix(5, 60, seed), 6, 10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignments: Vec<usize> = (0..60).map(|p| p % k).collect();
        assignments[0] = rng.random_range(0..k);
        let probs: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let cfg = DictConfig { drop_quantile: q, max_atoms: None, ..DictConfig::default() };
        let d = dual_purify(&latent, &assignments, &probs, &cfg).unwrap();
        let excluded = d.excluded_cluster.unwrap();
        for (col, &p) in d.atom_pixel_ids.iter().enumerate() {
            for r in 0..5 {
                prop_assert_eq!(d.atoms[(r, col)].to_bits(), latent.values()[(r, p)].to_bits());
            }
            prop_assert_ne!(assignments[p], excluded);
        }
        let looser = DictConfig { drop_quantile: (q - 0.1).max(0.0), ..cfg };
        prop_assert!(dual_purify(&latent, &assignments, &probs, &looser).unwrap().nb() >= d.nb());
    }

    #[test]
    fn sdc_vanishes_on_scaled_copies(seed in any::<u64>(), s in 0.01f64..100.0) {
        let h = matrix(4, 30, seed).map(|v| v.abs() + 0.1);
        let clusters = SdcClusters::compute(&h, 3, seed).unwrap();
        prop_assert_eq!(sdc_loss_with(&h, &h, &clusters).unwrap(), 0.0);
        let scaled = &h * s;
        prop_assert!(sdc_loss_with(&h, &scaled, &clusters).unwrap().abs() < 1e-12);
    }

    #[test]
    fn e_step_solves_its_normal_equations(seed in any::<u64>(), alpha in 0.1f64..10.0) {
        let d = matrix(6, 9, seed);
        let (phi, a) = (matrix(6, 20, seed.wrapping_add(1)), matrix(6, 20, seed.wrapping_add(2)));
        let (j, l) = (matrix(9, 20, seed.wrapping_add(3)), matrix(9, 20, seed.wrapping_add(4)));
        let e = e_step(&d, &phi, &a, &j, &l, alpha).unwrap();
        let lhs = d.transpose() * &d * &e + &e * alpha;
        let rhs = d.transpose() * (&phi - &a) + &j * alpha + &l;
        prop_assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm().max(1.0));
    }

    #[test]
    fn l_step_is_linear(seed in any::<u64>(), alpha in 0.01f64..10.0) {
        let (l, j, e) = (matrix(5, 7, seed), matrix(5, 7, seed.wrapping_add(1)), matrix(5, 7, seed.wrapping_add(2)));
        let diff = l_step(&l, &j, &e, alpha) - &l;
        prop_assert!((diff - (&j - &e) * alpha).amax() < 1e-14);
    }

    #[test]
    fn prox_never_grows_a_row(seed in any::<u64>(), beta in 0.0f64..3.0) {
        let z = matrix(8, 5, seed) * 2.0;
        let a = prox_l21(&z, beta);
        for i in 0..z.nrows() {
            prop_assert!(a.row(i).norm() <= z.row(i).norm() + 1e-15);
        }
    }

    #[test]
    fn noise_estimate_ignores_constant_shift(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let m = matrix(8, 200, seed) * 0.1;
        let a = estimate_noise(&m).unwrap().sigma;
        let b = estimate_noise(&m.add_scalar(shift)).unwrap().sigma;
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn cubes_cover_the_grid(h in 1usize..40, w in 1usize..40, size_pick in 0usize..100, stride_pick in 0usize..100) {
        let size = 1 + size_pick % h.min(w);
        let stride = 1 + stride_pick % size;
        let cubes = split_cubes(h, w, size, stride).unwrap();
        let mut covered = vec![false; h * w];
        for p in &cubes {
            prop_assert!(p.top + size <= h && p.left + size <= w);
            for r in p.top..p.top + size {
                for c in p.left..p.left + size {
                    covered[r * w + c] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn propagation_is_a_convex_combination(seed in any::<u64>(), sigma in 0.5f64..20.0) {
        let positions = split_cubes(24, 20, 8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = positions.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw = propagate_raw(&scores, &positions, 8, 24, 20, sigma).unwrap();
        prop_assert!(raw.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn otsu_is_stable_under_affine_rescaling(seed in any::<u64>(), shift in -3.0f64..3.0, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // values on bin centres survive the round trip through an affine map
        let scores: Vec<f64> = (0..400)
            .map(|i| {
                let bin = if i % 5 == 0 { rng.random_range(180..256) } else { rng.random_range(0..90) };
                (bin as f64 + 0.5) / 256.0
            })
            .collect();
        let base = adaptive_threshold(&DetectionMap::new(20, 20, scores.clone()).unwrap().normalize(), ThresholdMethod::Otsu, 2.0).unwrap();
        let moved: Vec<f64> = scores.iter().map(|v| shift + scale * v).collect();
        let map = DetectionMap::new(20, 20, moved).unwrap().normalize();
        let other = adaptive_threshold(&map, ThresholdMethod::Otsu, 2.0).unwrap();
        prop_assert_eq!(base.mask, other.mask);
    }

    #[test]
    fn target_task_is_deterministic(seed in any::<u64>()) {
        let z = matrix(3, 24 * 24, seed);
        let cfg = PriorConfig { cube_size: 8, stride: 4, feature_dim: 6, ..PriorConfig::default() };
        let a = TargetTask::fallback(3, seed, cfg.clone()).target_task(&z, 24, 24).unwrap();
        let b = TargetTask::fallback(3, seed, cfg).target_task(&z, 24, 24).unwrap();
        prop_assert_eq!(a.a, b.a);
        prop_assert_eq!(a.cube_scores, b.cube_scores);
    }

    #[test]
    fn auc_pd_pf_only_sees_ranks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth: Vec<bool> = (0..80).map(|_| rng.random_bool(0.2)).collect();
        truth[0] = true;
        truth[1] = false;
        let scores: Vec<f64> = (0..80).map(|_| rng.random_range(0.05..0.95)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let a = auc_indicators(&roc_curves(&scores, &truth).unwrap());
        let b = auc_indicators(&roc_curves(&squashed, &truth).unwrap());
        prop_assert!((a.auc_pd_pf - b.auc_pd_pf).abs() < 1e-12);
        prop_assert!((a.auc_pd_tau - b.auc_pd_tau).abs() > 1e-6);
        prop_assert!((a.auc_pf_tau - b.auc_pf_tau).abs() > 1e-6);
        prop_assert_eq!(a.auc_oa, a.auc_pd_pf + a.auc_pd_tau - a.auc_pf_tau);
    }

    #[test]
    fn roc_curves_are_monotone(seed in any::<u64>(), levels in 2u32..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth: Vec<bool> = (0..100).map(|_| rng.random_bool(0.3)).collect();
        truth[0] = true;
        truth[1] = false;
        let scores: Vec<f64> =
            (0..100).map(|_| rng.random_range(0..=levels) as f64 / levels as f64).collect();
        let r = roc_curves(&scores, &truth).unwrap();
        for i in 1..r.taus.len() {
            prop_assert!(r.taus[i] < r.taus[i - 1]);
            prop_assert!(r.pd[i] >= r.pd[i - 1] && r.pf[i] >= r.pf[i - 1]);
        }
        prop_assert_eq!((*r.pd.last().unwrap(), *r.pf.last().unwrap()), (1.0, 1.0));
    }
}
