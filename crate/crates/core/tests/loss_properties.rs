use mixem_core::losses::{
    associative_embedding_loss, component_entropy_loss, contrastive_loss, instance_entropy_loss, total_loss,
    BatchEmbeddings, LossWeights,
};
use mixem_core::numcore::{softmax, Tensor};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, cols), rows)
}

/// `2n` views of dimension `d`, rows bounded away from zero.
fn views() -> impl Strategy<Value = (Vec<Vec<f64>>, f64)> {
    (1usize..=5, 2usize..=6)
        .prop_flat_map(|(n, d)| (matrix(2 * n, d), 0.1..1.0f64))
        .prop_filter("non-zero rows", |(z, _)| {
            z.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
}

fn coefficients(rows: usize, m: usize) -> impl Strategy<Value = Tensor> {
    matrix(rows, m).prop_map(move |logits| {
        let rows: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l).unwrap()).collect();
        Tensor::from_rows(&rows).unwrap()
    })
}

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Rotates coordinates `(a, b)` of every row by `theta`.
fn rotate(z: &[Vec<f64>], a: usize, b: usize, theta: f64) -> Vec<Vec<f64>> {
    let (s, c) = theta.sin_cos();
    z.iter()
        .map(|r| {
            let mut r = r.clone();
            let (x, y) = (r[a], r[b]);
            r[a] = c * x - s * y;
            r[b] = s * x + c * y;
            r
        })
        .collect()
}

/// A batch with a mixture head: views, coefficients and per-component embeddings.
fn mixture_batch() -> impl Strategy<Value = (Vec<Vec<Vec<f64>>>, Tensor)> {
    (1usize..=4, 2usize..=4, 2usize..=5).prop_flat_map(|(n, m, d)| {
        (prop::collection::vec(matrix(2 * n, d), m), coefficients(2 * n, m))
    })
}

proptest! {
    #[test]
    fn contrastive_ignores_pair_order_and_view_order((z, tau) in views(), seed in any::<u64>()) {
        let pairs = z.len() / 2;
        let mut order: Vec<usize> = (0..pairs).collect();
        // Deterministic shuffle driven by the generated seed.
        let mut s = seed;
        for i in (1..pairs).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut permuted = Vec::new();
        for (k, &p) in order.iter().enumerate() {
            // Swap the two views of every other pair as well.
            let (a, b) = if k % 2 == 0 { (2 * p, 2 * p + 1) } else { (2 * p + 1, 2 * p) };
            permuted.push(z[a].clone());
            permuted.push(z[b].clone());
        }
        let base = contrastive_loss(&t(&z), tau).unwrap();
        let moved = contrastive_loss(&t(&permuted), tau).unwrap();
        prop_assert!(close(base, moved, 1e-12), "{base} vs {moved}");
    }

    #[test]
    fn contrastive_is_rotation_and_scale_invariant(
        (z, tau) in views(),
        theta in -3.0..3.0f64,
        scales in prop::collection::vec(0.1..10.0f64, 10),
    ) {
        let d = z[0].len();
        let rotated = rotate(&z, 0, d - 1, theta);
        let scaled: Vec<Vec<f64>> = z
            .iter()
            .zip(scales.iter().cycle())
            .map(|(r, s)| r.iter().map(|x| x * s).collect())
            .collect();
        let base = contrastive_loss(&t(&z), tau).unwrap();
        prop_assert!(close(base, contrastive_loss(&t(&rotated), tau).unwrap(), 1e-10));
        prop_assert!(close(base, contrastive_loss(&t(&scaled), tau).unwrap(), 1e-10));
        // Each term is -log of a probability over 2N - 1 candidates.
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn entropy_terms_stay_in_their_ranges(
        (m, p) in (1usize..=8, 1usize..=6).prop_flat_map(|(rows, m)| (Just(m), coefficients(rows, m)))
    ) {
        let rows = p.rows();
        let comp = component_entropy_loss(&p).unwrap();
        let inst = instance_entropy_loss(&p).unwrap();
        prop_assert!(comp <= 1e-12 && comp >= -(m as f64).ln() - 1e-12, "comp {comp}");
        prop_assert!(inst >= -1e-12 && inst <= rows as f64 * (1.0 - 1.0 / m as f64) + 1e-12, "inst {inst}");
    }

    #[test]
    fn pull_is_nonnegative_and_push_nonpositive((comps, p) in mixture_batch()) {
        let comps: Vec<Tensor> = comps.iter().map(|c| t(c)).collect();
        let a = associative_embedding_loss(&comps, &p).unwrap();
        prop_assert!(a.pull >= 0.0);
        prop_assert!(a.push <= 0.0);
        prop_assert_eq!(a.diagnostics.collapsed, a.diagnostics.populated == 1);
        if a.diagnostics.collapsed {
            prop_assert_eq!(a.push, 0.0);
        }
    }

    #[test]
    fn associative_terms_respect_rigid_motions_and_scale(
        (comps, p) in mixture_batch(),
        theta in -3.0..3.0f64,
        shift in -5.0..5.0f64,
        scale in 0.1..10.0f64,
    ) {
        let base = associative_embedding_loss(&comps.iter().map(|c| t(c)).collect::<Vec<_>>(), &p).unwrap();
        let d = comps[0][0].len();
        let moved: Vec<Tensor> = comps
            .iter()
            .map(|c| {
                let r = rotate(c, 0, d - 1, theta);
                t(&r.iter().map(|row| row.iter().map(|x| x + shift).collect()).collect::<Vec<Vec<f64>>>())
            })
            .collect();
        let m = associative_embedding_loss(&moved, &p).unwrap();
        prop_assert!(close(base.pull, m.pull, 1e-9) && close(base.push, m.push, 1e-9));
        let scaled: Vec<Tensor> = comps
            .iter()
            .map(|c| t(&c.iter().map(|row| row.iter().map(|x| x * scale).collect()).collect::<Vec<Vec<f64>>>()))
            .collect();
        let s = associative_embedding_loss(&scaled, &p).unwrap();
        prop_assert!(close(base.pull * scale, s.pull, 1e-9) && close(base.push * scale, s.push, 1e-9));
    }

    #[test]
    fn associative_terms_ignore_component_relabeling((comps, p) in mixture_batch(), rot in 1usize..4) {
        let m = comps.len();
        let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
        let comps_t: Vec<Tensor> = comps.iter().map(|c| t(c)).collect();
        let relabeled: Vec<Tensor> = perm.iter().map(|&j| comps_t[j].clone()).collect();
        let rows: Vec<Vec<f64>> = p.row_iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let a = associative_embedding_loss(&comps_t, &p).unwrap();
        let b = associative_embedding_loss(&relabeled, &t(&rows)).unwrap();
        prop_assert!(close(a.pull, b.pull, 1e-12) && close(a.push, b.push, 1e-12));
    }

    #[test]
    fn total_recombines_its_terms(
        (comps, p) in mixture_batch(),
        w in prop::collection::vec(0.0..2.0f64, 4),
        tau in 0.1..1.0f64,
    ) {
        let comps: Vec<Tensor> = comps.iter().map(|c| t(c)).collect();
        // Any embedding works for the decomposition; use the mixture average.
        let mut z = Tensor::zeros(&[p.rows(), comps[0].cols()]);
        for i in 0..p.rows() {
            for (m, c) in comps.iter().enumerate() {
                for (o, x) in z.row_mut(i).iter_mut().zip(c.row(i)) {
                    *o += p.get(i, m) * x;
                }
            }
        }
        prop_assume!(z.row_iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let weights = LossWeights { comp_entropy: w[0], inst_entropy: w[1], push: w[2], pull: w[3], temperature: tau };
        let batch = BatchEmbeddings { embedding: z.clone(), coefficients: Some(p.clone()), components: comps.clone() };
        let b = total_loss(&batch, &weights).unwrap();
        prop_assert!(close(b.total, b.recombine(&weights), 1e-12));
        prop_assert!(close(b.contrast, contrastive_loss(&z, tau).unwrap(), 1e-12));
        prop_assert!(close(b.comp_entropy, component_entropy_loss(&p).unwrap(), 1e-12));
        prop_assert!(close(b.inst_entropy, instance_entropy_loss(&p).unwrap(), 1e-12));
        let a = associative_embedding_loss(&comps, &p).unwrap();
        prop_assert!(close(b.pull, a.pull, 1e-12) && close(b.push, a.push, 1e-12));
    }
}
