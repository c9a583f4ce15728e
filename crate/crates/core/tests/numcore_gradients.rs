//! Every tape primitive against central differences at 20 random points.

use mixem_core::numcore::{gradient_check, Tape, Tensor, Var};
use mixem_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 20;
const TOL: f64 = 1e-6;
const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Contracts an op output with fixed random weights so every output entry
/// contributes to the scalar.
fn weighted_sum(t: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = if t.value(y).shape().is_empty() {
        t.constant(Tensor::scalar(weights.data()[0]))
    } else {
        t.constant(weights.clone())
    };
    let prod = t.mul(y, w)?;
    Ok(t.sum(prod))
}

fn check<F>(name: &str, shapes: &[(usize, usize)], lo: f64, hi: f64, out_shape: (usize, usize), op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    for point in 0..POINTS {
        let params: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c, lo, hi)).collect();
        let weights = random(&mut rng, out_shape.0, out_shape.1, -1.0, 1.0);
        let report = gradient_check(
            |t, v| {
                let y = op(t, v)?;
                weighted_sum(t, y, &weights)
            },
            &params,
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{name} point {point}: {report:?}");
    }
}

#[test]
fn elementwise_binary() {
    check("add", &[(3, 4), (3, 4)], -2.0, 2.0, (3, 4), |t, v| t.add(v[0], v[1]));
    check("sub", &[(3, 4), (3, 4)], -2.0, 2.0, (3, 4), |t, v| t.sub(v[0], v[1]));
    check("mul", &[(3, 4), (3, 4)], -2.0, 2.0, (3, 4), |t, v| t.mul(v[0], v[1]));
    check("affine", &[(2, 5)], -2.0, 2.0, (2, 5), |t, v| Ok(t.affine(v[0], -1.7, 3.0)));
}

#[test]
fn matrix_products() {
    check("matmul", &[(3, 4), (4, 2)], -1.0, 1.0, (3, 2), |t, v| t.matmul(v[0], v[1]));
    check("matmul_t", &[(3, 4), (5, 4)], -1.0, 1.0, (3, 5), |t, v| t.matmul_t(v[0], v[1]));
    check("add_row", &[(4, 3), (1, 3)], -1.0, 1.0, (4, 3), |t, v| t.add_row(v[0], v[1]));
    check("mul_col", &[(4, 3), (4, 1)], -1.0, 1.0, (4, 3), |t, v| t.mul_col(v[0], v[1]));
    check("column", &[(4, 3)], -1.0, 1.0, (4, 1), |t, v| t.column(v[0], 2));
}

#[test]
fn activations() {
    // Sample away from the kink so a ±step perturbation never crosses it.
    check("relu+", &[(3, 3)], 0.01, 2.0, (3, 3), |t, v| Ok(t.relu(v[0])));
    check("relu-", &[(3, 3)], -2.0, -0.01, (3, 3), |t, v| Ok(t.relu(v[0])));
    check("tanh", &[(3, 3)], -2.0, 2.0, (3, 3), |t, v| Ok(t.tanh(v[0])));
    check("xlogx", &[(2, 3)], 0.05, 2.0, (2, 3), |t, v| t.xlogx(v[0]));
}

#[test]
fn reductions() {
    check("sum", &[(3, 4)], -1.0, 1.0, (1, 1), |t, v| Ok(t.sum(v[0])));
    check("mean_rows", &[(5, 3)], -1.0, 1.0, (1, 3), |t, v| t.mean_rows(v[0]));
    check("gather_rows", &[(4, 3)], -1.0, 1.0, (5, 3), |t, v| t.gather_rows(v[0], &[3, 0, 3, 1, 2]));
    check("row_max", &[(4, 5)], -1.0, 1.0, (4, 1), |t, v| t.row_max(v[0]));
    check("row_norm", &[(4, 3)], -1.0, 1.0, (4, 1), |t, v| t.row_norm(v[0]));
    check("pick", &[(3, 3)], -1.0, 1.0, (4, 1), |t, v| t.pick(v[0], &[(0, 1), (2, 2), (1, 0), (0, 1)]));
}

#[test]
fn normalizing_ops() {
    check("normalize_rows", &[(4, 3)], -1.0, 1.0, (4, 3), |t, v| t.normalize_rows(v[0]));
    check("softmax_rows", &[(3, 4)], -3.0, 3.0, (3, 4), |t, v| t.softmax_rows(v[0]));
    check("lse_off_diag", &[(5, 5)], -3.0, 3.0, (5, 1), |t, v| t.row_logsumexp_off_diag(v[0]));
}
