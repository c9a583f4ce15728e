use mixem_core::clustering::{
    forgy_init, inertia, kmeans, mixem_init, random_restart_kmeans, restart_rng, KMeansParams,
};
use mixem_core::metrics::{ari, hungarian, hungarian_accuracy, nmi, EvalReport};
use mixem_core::numcore::Tensor;
use proptest::prelude::*;

fn points() -> impl Strategy<Value = (Tensor, usize)> {
    (3usize..=30, 1usize..=4, 1usize..=4).prop_flat_map(|(n, d, k)| {
        (
            prop::collection::vec(-10.0..10.0f64, n * d).prop_map(move |v| Tensor::matrix(n, d, v).unwrap()),
            Just(k.min(n)),
        )
    })
}

fn labelings() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=60, 1usize..=6, 1usize..=6).prop_flat_map(|(n, kp, kt)| {
        (prop::collection::vec(0..kp, n), prop::collection::vec(0..kt, n))
    })
}

/// Applies `label -> (label * mult + add) mod 7` (a bijection on 0..7).
fn relabel(l: &[usize], mult: usize, add: usize) -> Vec<usize> {
    l.iter().map(|&x| (x * mult + add) % 7).collect()
}

proptest! {
    #[test]
    fn lloyd_inertia_never_increases((x, k) in points(), seed in any::<u64>()) {
        let init = forgy_init(&x, k, &mut restart_rng(seed, 0)).unwrap();
        let res = kmeans(&x, &init, &KMeansParams::default()).unwrap();
        for w in res.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", res.inertia_history);
        }
        prop_assert!(res.assignments.iter().all(|&a| a < k));
        let recomputed = inertia(&x, &res.centroids, &res.assignments);
        prop_assert!((recomputed - res.inertia).abs() <= 1e-9 * recomputed.max(1.0));
    }

    #[test]
    fn restarts_keep_the_best_single_run((x, k) in points(), seed in any::<u64>(), restarts in 1usize..=6) {
        let params = KMeansParams::default();
        let best = random_restart_kmeans(&x, k, restarts, seed, &params).unwrap();
        let again = random_restart_kmeans(&x, k, restarts, seed, &params).unwrap();
        prop_assert_eq!(&best.assignments, &again.assignments);
        prop_assert_eq!(best.restarts_used, restarts);
        for r in 0..restarts {
            let init = forgy_init(&x, k, &mut restart_rng(seed, r)).unwrap();
            let single = kmeans(&x, &init, &params).unwrap();
            prop_assert!(best.inertia <= single.inertia);
        }
    }

    #[test]
    fn component_seeding_is_deterministic_and_sized(
        (x, k) in points(),
        dominant_seed in prop::collection::vec(0usize..5, 30),
    ) {
        let n = x.rows();
        let dominant = &dominant_seed[..n];
        let a = mixem_init(&x, dominant, 5, k).unwrap();
        let b = mixem_init(&x, dominant, 5, k).unwrap();
        prop_assert_eq!(a.shape(), &[k, x.cols()][..]);
        prop_assert_eq!(a.data(), b.data());
        prop_assert!(a.is_finite());
    }

    #[test]
    fn metrics_are_bounded_and_permutation_invariant(
        (pred, truth) in labelings(),
        mult in prop::sample::select(vec![1usize, 2, 3, 4, 5, 6]),
        add in 0usize..7,
    ) {
        let (acc, _) = hungarian_accuracy(&pred, &truth).unwrap();
        let n = nmi(&pred, &truth).unwrap();
        let a = ari(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&n));
        prop_assert!((-1.0..=1.0).contains(&a));

        let p2 = relabel(&pred, mult, add);
        let t2 = relabel(&truth, 6 - mult + 1, (add + 3) % 7);
        prop_assert_eq!(hungarian_accuracy(&p2, &t2).unwrap().0, acc);
        prop_assert_eq!(nmi(&p2, &t2).unwrap(), n);
        prop_assert_eq!(ari(&p2, &t2).unwrap(), a);

        // NMI and ARI are symmetric in their arguments.
        prop_assert!((nmi(&truth, &pred).unwrap() - n).abs() <= 1e-12);
        prop_assert!((ari(&truth, &pred).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn identical_partitions_score_one((labels, _) in labelings(), add in 1usize..7) {
        let shifted = relabel(&labels, 1, add);
        prop_assert_eq!(hungarian_accuracy(&shifted, &labels).unwrap().0, 1.0);
        prop_assert!((nmi(&shifted, &labels).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((ari(&shifted, &labels).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn confusion_matrix_accounts_for_every_sample((pred, truth) in labelings()) {
        let r = EvalReport::compute(&pred, &truth, "test", false).unwrap();
        prop_assert_eq!(r.confusion.total(), pred.len() as u64);
        let diag: u64 = r
            .confusion
            .row_clusters
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let class = r.mapping.get(*c)?;
                let j = r.confusion.col_classes.iter().position(|&x| x == class)?;
                Some(r.confusion.counts[i][j])
            })
            .sum();
        prop_assert!((diag as f64 / pred.len() as f64 - r.acc).abs() <= 1e-12);
    }

    #[test]
    fn hungarian_beats_every_cyclic_shift(cost in (1usize..=6).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(-50i64..50, n), n)
    })) {
        let n = cost.len();
        let assign = hungarian(&cost).unwrap();
        let mut seen = vec![false; n];
        for &j in &assign {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        let total: i64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        for shift in 0..n {
            let other: i64 = (0..n).map(|i| cost[i][(i + shift) % n]).sum();
            prop_assert!(total <= other);
        }
    }
}
