use gramflow::archive::{disagreement, weighted_vote};
use gramflow::cli_io::{holdout_indices, load_csv_with_classes, write_csv};
use gramflow::evaluation::{balanced_accuracy, macro_f1, stratified_kfold, Dataset};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label_pair() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..8, 1usize..120).prop_flat_map(|(k, n)| {
        (Just(k), prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
    })
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..5, 1usize..5, 10usize..60).prop_flat_map(|(k, d, n)| {
        (
            prop::collection::vec(-1e6f64..1e6, n * d),
            prop::collection::vec(0..k, n),
            Just((k, d, n)),
        )
            .prop_map(|(values, mut labels, (k, d, n))| {
                // Every class needs at least one row.
                for c in 0..k {
                    labels[c % n] = c;
                }
                Dataset::new(
                    Array2::from_shape_vec((n, d), values).unwrap(),
                    labels,
                    (0..k).map(|c| format!("class {c}")).collect(),
                    (0..d).map(|j| format!("f{j}")).collect(),
                )
                .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_perfect_only_on_exact_match((_k, y, p) in label_pair()) {
        let ba = balanced_accuracy(&y, &p).unwrap();
        let f1 = macro_f1(&y, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&ba));
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(balanced_accuracy(&y, &y).unwrap(), 1.0);
        prop_assert_eq!(macro_f1(&y, &y).unwrap(), 1.0);
        if y != p {
            prop_assert!(f1 < 1.0);
        }
    }

    #[test]
    fn balanced_accuracy_ignores_class_relabelling((k, y, p) in label_pair(), shift in 1usize..7) {
        let relabel = |v: &[usize]| v.iter().map(|&c| (c + shift) % k).collect::<Vec<_>>();
        let a = balanced_accuracy(&y, &p).unwrap();
        let b = balanced_accuracy(&relabel(&y), &relabel(&p)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn disagreement_is_a_normalised_hamming_distance((_k, x, y) in label_pair()) {
        let d = disagreement(&x, &y).unwrap();
        prop_assert_eq!(d, disagreement(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d == 0.0, x == y);
    }

    #[test]
    fn unanimous_vote_wins((k, x, _y) in label_pair(), w in prop::collection::vec(0.01f64..1.0, 1..5)) {
        let preds = vec![x.clone(); w.len()];
        prop_assert_eq!(weighted_vote(&preds, &w, k), x);
    }

    #[test]
    fn folds_partition_and_stratify((_k, y, _p) in label_pair(), k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(y.len() >= k);
        let folds = stratified_kfold(&y, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
        let max_class = *y.iter().max().unwrap();
        for c in 0..=max_class {
            let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| y[i] == c).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn holdout_is_a_deterministic_partition(d in dataset(), seed in any::<u64>()) {
        let run = || holdout_indices(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(seed));
        match (run(), run()) {
            (Ok((tr, te)), Ok((tr2, te2))) => {
                prop_assert_eq!(&tr, &tr2);
                prop_assert_eq!(&te, &te2);
                let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..d.n_samples()).collect::<Vec<_>>());
                for c in 0..d.n_classes() {
                    prop_assert!(tr.iter().any(|&i| d.labels[i] == c));
                    prop_assert!(te.iter().any(|&i| d.labels[i] == c));
                }
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            _ => prop_assert!(false, "non-deterministic outcome"),
        }
    }

    #[test]
    fn csv_round_trip(d in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&d, &path, "label").unwrap();
        let back = load_csv_with_classes(&path, Some("label"), &d.class_names).unwrap();
        prop_assert_eq!(back, d);
    }
}
