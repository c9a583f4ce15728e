use super::tape::dot;
use crate::error::{Error, Result};

/// Norm threshold at or below which a vector counts as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Softmax of a logit vector, computed with max subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("softmax of non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Result of [`l2_normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    /// Unit vector, or all zeros when degenerate.
    pub vector: Vec<f64>,
    pub norm: f64,
    pub degenerate: bool,
}

/// Scales `v` to unit Euclidean norm. Vectors with norm `<= eps` come back
/// as zeros with `degenerate` set.
pub fn l2_normalize(v: &[f64], eps: f64) -> Normalized {
    let norm = dot(v, v).sqrt();
    // Squares of tiny entries underflow; rescale before giving up on them.
    let norm = if norm == 0.0 {
        let amax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if amax > 0.0 {
            let scaled: Vec<f64> = v.iter().map(|x| x / amax).collect();
            amax * dot(&scaled, &scaled).sqrt()
        } else {
            0.0
        }
    } else {
        norm
    };
    if !(norm > eps) {
        return Normalized {
            vector: vec![0.0; v.len()],
            norm,
            degenerate: true,
        };
    }
    Normalized {
        vector: v.iter().map(|x| x / norm).collect(),
        norm,
        degenerate: false,
    }
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "cosine_similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = l2_normalize(u, DEGENERACY_EPS);
    let nv = l2_normalize(v, DEGENERACY_EPS);
    if nu.degenerate || nv.degenerate {
        return Err(Error::domain("cosine_similarity of a degenerate vector"));
    }
    Ok(dot(&nu.vector, &nv.vector).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::Domain(_))));
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize(&[3.0, 4.0], DEGENERACY_EPS);
        assert!(!n.degenerate);
        assert!((n.vector[0] - 0.6).abs() < 1e-15 && (n.vector[1] - 0.8).abs() < 1e-15);
        assert!(l2_normalize(&[0.0, 0.0], DEGENERACY_EPS).degenerate);
        let tiny = l2_normalize(&[1e-200, 0.0], 1e-12);
        assert!(tiny.degenerate);
        assert_eq!(tiny.vector, vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3, -1.0, 2.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&u, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&u, &[0.0; 3]), Err(Error::Domain(_))));
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..8)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_positive(v in vec_strategy()) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn softmax_is_permutation_equivariant(v in vec_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..v.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let p = softmax(&v).unwrap();
            let pp = softmax(&pv).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((pp[k] - p[i]).abs() <= 1e-15);
            }
        }

        #[test]
        fn normalize_is_scale_invariant(v in vec_strategy(), c in 1e-3f64..1e3) {
            let a = l2_normalize(&v, DEGENERACY_EPS);
            prop_assume!(!a.degenerate);
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let b = l2_normalize(&scaled, DEGENERACY_EPS);
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            (u, v) in (1usize..8).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )),
            c1 in 1e-3f64..1e3,
            c2 in 1e-3f64..1e3,
        ) {
            prop_assume!(!l2_normalize(&u, DEGENERACY_EPS).degenerate);
            prop_assume!(!l2_normalize(&v, DEGENERACY_EPS).degenerate);
            let a = cosine_similarity(&u, &v).unwrap();
            let su: Vec<f64> = u.iter().map(|x| c1 * x).collect();
            let sv: Vec<f64> = v.iter().map(|x| c2 * x).collect();
            let b = cosine_similarity(&su, &sv).unwrap();
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
