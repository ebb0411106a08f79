use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, ArrayView1, ArrayView2};

use super::BoError;

/// Observation noise added to the kernel diagonal.
pub const GP_NOISE: f64 = 1e-6;
const JITTER: [f64; 2] = [1e-5, 1e-4];
const REFINE_STEPS: usize = 3;

pub fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, lengthscale: f64) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
    (-sq / (2.0 * lengthscale * lengthscale)).exp()
}

/// Median pairwise Euclidean distance, or 1 when there are no pairs or the
/// median is zero.
pub fn median_lengthscale(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(x.row(i).iter().zip(x.row(j).iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Dot product with a compensated (twice working precision) accumulator.
fn dot2(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut err) = (0.0f64, 0.0f64);
    for (&u, &v) in a.iter().zip(b) {
        let p = u * v;
        let p_err = u.mul_add(v, -p);
        let t = sum + p;
        let z = t - sum;
        err += (sum - (t - z)) + (p - z) + p_err;
        sum = t;
    }
    sum + err
}

/// Cholesky solve followed by refinement steps with compensated residuals.
/// Near-duplicate inputs make the kernel matrix badly conditioned; the
/// refinement recovers the solution of the rounded system to working accuracy.
fn refined_solve(a: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = chol.solve(b);
    // [a_i | b_i] · [x | -1], accumulated in one compensated sum.
    let (mut row, mut xs) = (vec![0.0; n + 1], vec![-1.0; n + 1]);
    for _ in 0..REFINE_STEPS {
        xs[..n].copy_from_slice(x.as_slice());
        let r = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                row[..n].iter_mut().zip(a.row(i).iter()).for_each(|(d, &s)| *d = s);
                row[n] = b[i];
                -dot2(&row, &xs)
            }),
        );
        x += chol.solve(&r);
    }
    x
}

/// Exact GP posterior mean and std at each query row.
///
/// Outputs are standardized before fitting and mapped back afterwards. The
/// kernel is a unit-variance RBF with a median-distance lengthscale.
pub fn gp_posterior(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    query: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>), BoError> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(BoError::Gp(format!("need matching non-empty observations, got {n} inputs and {} outputs", y.len())));
    }
    if query.ncols() != x.ncols() {
        return Err(BoError::Gp(format!("query dimension {} differs from data dimension {}", query.ncols(), x.ncols())));
    }
    if x.iter().chain(y.iter()).chain(query.iter()).any(|v| !v.is_finite()) {
        return Err(BoError::Gp("non-finite input".into()));
    }
    let mean_y = y.sum() / n as f64;
    let sd = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sd_y = if sd > 1e-12 { sd } else { 1.0 };
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean_y) / sd_y));

    let ell = median_lengthscale(x);
    let kernel = DMatrix::from_fn(n, n, |i, j| rbf(x.row(i), x.row(j), ell));
    let (noisy, chol) = std::iter::once(GP_NOISE)
        .chain(JITTER)
        .find_map(|noise| {
            let noisy = &kernel + DMatrix::identity(n, n) * noise;
            noisy.clone().cholesky().map(|c| (noisy, c))
        })
        .ok_or_else(|| BoError::Gp(format!("kernel matrix not positive definite after jitter {}", JITTER[1])))?;
    let alpha = refined_solve(&noisy, &chol, &ys);

    let mut mean = Array1::zeros(query.nrows());
    let mut std = Array1::zeros(query.nrows());
    for (q, row) in query.rows().into_iter().enumerate() {
        let ks = DVector::from_iterator(n, (0..n).map(|i| rbf(x.row(i), row, ell)));
        let v = refined_solve(&noisy, &chol, &ks);
        let var = (1.0 - dot2(ks.as_slice(), v.as_slice())).max(0.0);
        mean[q] = dot2(ks.as_slice(), alpha.as_slice()) * sd_y + mean_y;
        std[q] = var.sqrt() * sd_y;
    }
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn compensated_dot_survives_cancellation() {
        assert_eq!(dot2(&[1e16, 1.0, -1e16], &[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(dot2(&[0.1, 0.1], &[3.0, -3.0]), 0.0);
        let third = 1.0f64 / 3.0;
        // 3·fl(1/3) - 1 is exactly -2^-54.
        assert_eq!(dot2(&[third, -1.0], &[3.0, 1.0]), -(2.0f64).powi(-54));
    }

    #[test]
    fn kernel_diagonal_is_unit() {
        let a = array![0.3, -1.2, 4.0];
        assert_eq!(rbf(a.view(), a.view(), 0.7), 1.0);
    }

    #[test]
    fn single_observation_is_interpolated() {
        let x = array![[0.2, 0.9, 0.4]];
        let (m, s) = gp_posterior(x.view(), array![-7.5].view(), x.view()).unwrap();
        assert!((m[0] + 7.5).abs() < 1e-4);
        assert!(s[0] <= 1e-2);
    }

    #[test]
    fn lengthscale_heuristic() {
        assert_eq!(median_lengthscale(array![[1.0, 2.0]].view()), 1.0);
        assert_eq!(median_lengthscale(array![[1.0], [1.0]].view()), 1.0);
        assert_eq!(median_lengthscale(array![[0.0], [1.0], [3.0]].view()), 2.0);
        assert_eq!(median_lengthscale(array![[0.0], [1.0], [3.0], [7.0]].view()), 3.5);
    }

    #[test]
    fn duplicate_points_need_jitter_or_fail_cleanly() {
        let x = array![[0.5, 0.5], [0.5, 0.5], [0.1, 0.2]];
        let (m, s) = gp_posterior(x.view(), array![1.0, 1.0, 0.0].view(), x.view()).unwrap();
        assert!(m.iter().chain(s.iter()).all(|v| v.is_finite()));
        assert!(gp_posterior(Array2::zeros((0, 2)).view(), Array1::zeros(0).view(), x.view()).is_err());
    }

    /// Posterior by Gaussian elimination on the joint covariance.
    fn naive_posterior(x: &Array2<f64>, y: &Array1<f64>, query: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = x.nrows();
        let mu = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let mut dists = vec![];
        for i in 0..n {
            for j in 0..i {
                let mut acc = 0.0;
                for c in 0..x.ncols() {
                    acc += (x[[i, c]] - x[[j, c]]).powi(2);
                }
                dists.push(acc.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ell = match dists.len() {
            0 => 1.0,
            m if m % 2 == 1 => dists[m / 2],
            m => (dists[m / 2 - 1] + dists[m / 2]) / 2.0,
        };
        let ell = if ell == 0.0 { 1.0 } else { ell };
        let k = |a: &[f64], b: &[f64]| {
            let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
            (-0.5 * sq / (ell * ell)).exp()
        };
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let ys: Vec<f64> = y.iter().map(|v| (v - mu) / sd).collect();
        let (mut means, mut stds) = (vec![], vec![]);
        for q in query.rows() {
            let q = q.to_vec();
            // Joint covariance of (f(x_1..x_n) + noise, f(q)) with the standardized
            // observations appended as an extra column. Eliminating the observed
            // block leaves the conditional variance and the negated mean.
            let mut joint = vec![vec![0.0; n + 2]; n + 1];
            for i in 0..n {
                for j in 0..n {
                    joint[i][j] = k(&rows[i], &rows[j]) + if i == j { 1e-6 } else { 0.0 };
                }
                joint[i][n] = k(&rows[i], &q);
                joint[n][i] = joint[i][n];
                joint[i][n + 1] = ys[i];
            }
            joint[n][n] = 1.0;
            for col in 0..n {
                for r in col + 1..=n {
                    let f = joint[r][col] / joint[col][col];
                    for c in col..n + 2 {
                        joint[r][c] -= f * joint[col][c];
                    }
                }
            }
            means.push(-joint[n][n + 1] * sd + mu);
            stds.push(joint[n][n].max(0.0).sqrt() * sd);
        }
        (means, stds)
    }

    #[test]
    fn matches_naive_conditioning_on_five_points() {
        let mut rng = seed::rng(77);
        let x = Array2::from_shape_simple_fn((5, 3), || rng.random_range(0.0..1.0));
        let y = Array1::from_shape_simple_fn(5, || rng.random_range(-20.0..0.0));
        let q = Array2::from_shape_simple_fn((4, 3), || rng.random_range(0.0..1.0));
        let (m, s) = gp_posterior(x.view(), y.view(), q.view()).unwrap();
        let (nm, ns) = naive_posterior(&x, &y, &q);
        for i in 0..4 {
            assert!((m[i] - nm[i]).abs() < 1e-8 && (s[i] - ns[i]).abs() < 1e-8, "{m} {nm:?} {s} {ns:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn std_shrinks_near_data(seed_ in 0u64..10_000, n in 1usize..8, d in 1usize..6) {
            let mut rng = seed::rng(seed_);
            let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(0.0..1.0));
            let y = Array1::from_shape_simple_fn(n, || rng.random_range(-5.0..5.0));
            let ell = median_lengthscale(x.view());
            let far_coord = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * ell + 0.1;
            let mut q = Array2::from_elem((2, d), far_coord);
            q.row_mut(0).assign(&x.row(rng.random_range(0..n)));
            let (_, s) = gp_posterior(x.view(), y.view(), q.view()).unwrap();
            prop_assert!(s[0] <= s[1]);
        }
    }
}
