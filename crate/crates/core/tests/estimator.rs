use dose_dr_core::data::{Dataset, FoldAssignment};
use dose_dr_core::estimator::{
    dr_estimate, plugin_estimate, two_fold_dr_estimate, EstimationConfig, SmoothingOptions,
};
use dose_dr_core::simulation::{dgp_sample, smoothed_target, DgpVariant};
use dose_dr_core::smoother::{BandwidthPolicy, Kernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample(n: usize, seed: u64) -> (Dataset, dose_dr_core::nuisance::NuisanceBundle) {
    dgp_sample(n, DgpVariant::IndependentSurrogates, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn true_nuisances_cover_the_smoothed_curve() {
    let (data, truth) = sample(20_000, 31);
    let h = 0.3;
    let opts = SmoothingOptions {
        kernel: Kernel::Epanechnikov,
        bandwidth: BandwidthPolicy::Fixed(h),
        compute_se: true,
    };
    let folds = FoldAssignment::new(data.n(), 2, 4).unwrap();
    let grid = [0.5, 1.0, 1.5];
    let est = two_fold_dr_estimate(&data, &truth, &folds, &grid, &opts, 0.95).unwrap();
    let se = est.se.as_ref().unwrap();
    for (i, &a) in grid.iter().enumerate() {
        let target = smoothed_target(DgpVariant::IndependentSurrogates, a, h, Kernel::Epanechnikov);
        let z = (est.theta_hat[i] - target) / se[i];
        assert!(z.abs() < 4.0, "a={a}: {} vs {target} (se {})", est.theta_hat[i], se[i]);
    }
}

#[test]
fn plugin_with_true_tau_is_the_curve() {
    let (data, truth) = sample(100_000, 32);
    let grid = [0.0, 0.5, 1.0, 2.0];
    let est = plugin_estimate(&truth.tau, &data, &grid);
    for (a, t) in grid.iter().zip(&est.theta_hat) {
        // sd of tau(a, V) is at most 0.5 here, so 5 sd of the mean is 0.008
        assert!((t - (1.0 + a - a * a)).abs() < 0.008, "a={a}: {t}");
    }
}

#[test]
fn fitted_estimate_tracks_the_curve() {
    let (data, _) = sample(6000, 33);
    let config = EstimationConfig {
        grid: Some(vec![0.5, 1.0, 1.5]),
        smoothing: SmoothingOptions {
            bandwidth: BandwidthPolicy::Fixed(0.35),
            ..Default::default()
        },
        seed: 2,
        ..Default::default()
    };
    let est = dr_estimate(&data, &config).unwrap();
    let se = est.se.as_ref().unwrap();
    for (i, &a) in [0.5, 1.0, 1.5].iter().enumerate() {
        let target = smoothed_target(DgpVariant::IndependentSurrogates, a, 0.35, Kernel::Epanechnikov);
        assert!((est.theta_hat[i] - target).abs() < 4.0 * se[i], "a={a}: {} vs {target}", est.theta_hat[i]);
        let lo = est.ci_lower.as_ref().unwrap()[i];
        let hi = est.ci_upper.as_ref().unwrap()[i];
        assert!(lo < est.theta_hat[i] && est.theta_hat[i] < hi);
    }
}

#[test]
fn rotations_are_thread_independent() {
    let (data, _) = sample(1500, 34);
    let config = EstimationConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| dr_estimate(&data, &config).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn no_labels_is_an_error() {
    let (data, _) = sample(300, 35);
    let n = data.n();
    let v: Vec<f64> = (0..n).flat_map(|i| data.v(i).to_vec()).collect();
    let s: Vec<f64> = (0..n).flat_map(|i| data.s(i).to_vec()).collect();
    let blank = Dataset::from_parts(&v, 4, &s, 2, data.treatments().to_vec(), vec![None; n]).unwrap();
    assert!(dr_estimate(&blank, &EstimationConfig::default()).is_err());
}
