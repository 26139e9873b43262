use dose_dr_core::data::{read_csv, write_csv, CsvSchema, Dataset, Fold, FoldAssignment};
use dose_dr_core::simulation::{dgp_sample, DgpVariant};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..30, 1usize..4, 0usize..3).prop_flat_map(|(n, p, q)| {
        (
            proptest::collection::vec(-1e3f64..1e3, n * p),
            proptest::collection::vec(-1e3f64..1e3, n * q),
            proptest::collection::vec(-10f64..10.0, n),
            proptest::collection::vec(proptest::option::of(-1e6f64..1e6), n),
        )
            .prop_map(move |(v, s, a, y)| Dataset::from_parts(&v, p, &s, q, a, y).unwrap())
    })
}

proptest! {
    #[test]
    fn folds_partition_rows(n in 3usize..500, k in 2usize..=3, seed: u64) {
        let f = FoldAssignment::new(n, k, seed).unwrap();
        let mut seen = vec![0u8; n];
        for j in 0..k {
            for r in f.rows(Fold::from_index(j)) {
                seen[r] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = f.sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(f, FoldAssignment::new(n, k, seed).unwrap());
    }

    #[test]
    fn csv_round_trip_is_exact(d in dataset()) {
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(&buf[..], &CsvSchema::for_dataset(&d)).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn generated_moments_at_a_million_rows() {
    let n = 1_000_000;
    for variant in [DgpVariant::IndependentSurrogates, DgpVariant::DependentSurrogates] {
        let (d, _) = dgp_sample(n, variant, 0.5, &mut ChaCha8Rng::seed_from_u64(21));
        let nf = n as f64;
        for k in 0..4 {
            let m = (0..n).map(|i| d.v(i)[k]).sum::<f64>() / nf;
            assert!(m.abs() < 0.01, "V{k} mean {m}");
        }
        let rate = d.n_labeled() as f64 / nf;
        assert!((rate - 0.5).abs() < 0.005, "{rate}");
        let ma = d.treatments().iter().sum::<f64>() / nf;
        let va = d.treatments().iter().map(|a| (a - ma).powi(2)).sum::<f64>() / (nf - 1.0);
        assert!((ma - 1.0).abs() < 0.01, "{ma}");
        assert!((va - 1.21).abs() < 0.01, "{va}");
        if variant == DgpVariant::IndependentSurrogates {
            for k in 0..2 {
                let m = (0..n).map(|i| d.s(i)[k]).sum::<f64>() / nf;
                assert!(m.abs() < 0.01, "S{k} mean {m}");
            }
        } else {
            // E[S] = (E V1 + E A, E V2 - E A) = (1, -1)
            let m0 = (0..n).map(|i| d.s(i)[0]).sum::<f64>() / nf;
            let m1 = (0..n).map(|i| d.s(i)[1]).sum::<f64>() / nf;
            assert!((m0 - 1.0).abs() < 0.01 && (m1 + 1.0).abs() < 0.01, "{m0} {m1}");
        }
    }
}

#[test]
fn unlabeled_rows_have_no_outcome() {
    let (d, _) = dgp_sample(1000, DgpVariant::IndependentSurrogates, 0.3, &mut ChaCha8Rng::seed_from_u64(22));
    for i in 0..d.n() {
        assert_eq!(d.is_labeled(i), d.y(i).is_some());
    }
}
