mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmclust::em::e_step;
use tmclust::mda::{self, Mda};
use tmclust::metrics::{adjusted_rand_index, kron_relative_error, rand_index, relative_error};
use tmclust::mlnd::{self, SliceMode};
use tmclust::selection::bic;
use tmclust::{MixtureModel, MlndParams, ScaleModelSpec};

use common::{dense_log_density, random_mda, random_params, random_pd};

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 2..=4)
}

fn labels_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..4, n),
            prop::collection::vec(0u8..5, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ari_is_symmetric_and_bounded((a, b) in labels_strategy()) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        let ri = rand_index(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ri));
    }

    #[test]
    fn ari_ignores_label_names((a, b) in labels_strategy(), shift in 1u8..50) {
        let renamed: Vec<u8> = b.iter().map(|&l| (l + shift) % 7 + 10 * (l % 2)).collect();
        // renaming is injective on 0..5 only when it keeps classes apart
        let distinct = |v: &[u8]| { let mut s = v.to_vec(); s.sort(); s.dedup(); s.len() };
        prop_assume!(distinct(&b) == distinct(&renamed));
        let before = adjusted_rand_index(&a, &b).unwrap();
        let after = adjusted_rand_index(&a, &renamed).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
        prop_assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn relative_error_scales_linearly(seed in any::<u64>(), n in 1usize..6, c in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_pd(n, &mut rng);
        let e = relative_error(&(&m * c), &m).unwrap();
        prop_assert!((e - (c - 1.0).abs()).abs() < 1e-10);
    }

    #[test]
    fn kron_error_matches_dense(seed in any::<u64>(), dims in dims_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<DMatrix<f64>> = dims.iter().map(|&n| random_pd(n, &mut rng)).collect();
        let b: Vec<DMatrix<f64>> = dims.iter().map(|&n| random_pd(n, &mut rng)).collect();
        let dense = relative_error(&mda::kron(&a), &mda::kron(&b)).unwrap();
        let fast = kron_relative_error(&a, &b).unwrap();
        prop_assert!((dense - fast).abs() <= 1e-9 * dense.max(1.0));
    }

    #[test]
    fn permuting_twice_is_identity(seed in any::<u64>(), dims in dims_strategy(), pick in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_mda(&dims, &mut rng);
        let axis = 2 + pick % (dims.len() - 1).max(1);
        prop_assume!(axis < dims.len());
        let once = mda::permute_with_second(&x, axis).unwrap();
        prop_assert_eq!(once.dims()[1], dims[axis]);
        prop_assert_eq!(mda::permute_with_second(&once, axis).unwrap(), x);
    }

    #[test]
    fn unfoldings_keep_values(seed in any::<u64>(), dims in dims_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_mda(&dims, &mut rng);
        let m1 = mda::matricize_mode1(&x);
        prop_assert_eq!(m1.matrix().ncols(), dims[0]);
        prop_assert_eq!(m1.to_mda(), x.clone());
        for axis in 0..dims.len() {
            let u = mda::matricize(&x, axis).unwrap();
            prop_assert_eq!(u.nrows() * u.ncols(), x.len());
            let mut a: Vec<f64> = u.iter().copied().collect();
            let mut b = x.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn density_matches_dense_and_all_slice_routes(seed in any::<u64>(), dims in dims_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&dims, &mut rng);
        let x = random_mda(&dims, &mut rng);
        let fast = mlnd::log_density(&x, &params).unwrap();
        let dense = dense_log_density(&x, &params);
        prop_assert!((fast - dense).abs() <= 1e-8 * dense.abs().max(1.0));
        let q = mlnd::quadratic_form(&x, &params, SliceMode::Standard).unwrap();
        for axis in 2..dims.len() {
            let qp = mlnd::quadratic_form(&x, &params, SliceMode::Permuted(axis)).unwrap();
            prop_assert!((q - qp).abs() <= 1e-8 * q.max(1.0));
        }
    }

    #[test]
    fn density_ignores_scale_trading(seed in any::<u64>(), dims in dims_strategy(), c in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&dims, &mut rng);
        let x = random_mda(&dims, &mut rng);
        let mut scales = params.scales().to_vec();
        scales[0] *= c;
        scales[1] /= c;
        let traded = MlndParams::new(params.mean().clone(), scales).unwrap();
        let a = mlnd::log_density(&x, &params).unwrap();
        let b = mlnd::log_density(&x, &traded).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
    }

    #[test]
    fn responsibilities_are_distributions(seed in any::<u64>(), groups in 1usize..4, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [3, 2, 2];
        let components: Vec<MlndParams> = (0..groups).map(|_| random_params(&dims, &mut rng)).collect();
        let model = MixtureModel::new(vec![1.0 / groups as f64; groups], components, vec![ScaleModelSpec::Vvv; 3]).unwrap();
        let data: Vec<Mda> = (0..n).map(|_| random_mda(&dims, &mut rng)).collect();
        let (z, loglik) = e_step(&data, &model).unwrap();
        prop_assert!(loglik.is_finite());
        for i in 0..n {
            let row: f64 = (0..groups).map(|g| z.get(i, g)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            prop_assert!((0..groups).all(|g| (0.0..=1.0).contains(&z.get(i, g))));
        }
        prop_assert!((model.log_likelihood(&data).unwrap() - loglik).abs() < 1e-9 * loglik.abs().max(1.0));
    }

    #[test]
    fn bic_penalizes_parameters(l in -1e4f64..1e4, rho in 0usize..500, extra in 1usize..50, n in 2usize..5000) {
        prop_assert!(bic(l, rho + extra, n) < bic(l, rho, n));
        prop_assert_eq!(bic(l, 0, n), 2.0 * l);
    }

    #[test]
    fn kron_log_det_is_weighted_sum(seed in any::<u64>(), dims in dims_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&dims, &mut rng);
        let factors = params.factorize().unwrap();
        let dense = mda::kron(params.scales()).determinant().ln();
        prop_assert!((factors.kron_log_det() - dense).abs() <= 1e-8 * dense.abs().max(1.0));
    }
}
