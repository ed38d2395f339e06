use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{AnalysisError, Result};

/// Linear CKA, `||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F)`.
///
/// Columns are centered first unless `no_center` is set.
pub fn cka(x: &ArrayView2<f64>, y: &ArrayView2<f64>, no_center: bool) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(AnalysisError::LengthMismatch(x.nrows(), y.nrows()));
    }
    let center = |m: &ArrayView2<f64>| -> Array2<f64> {
        if no_center || m.nrows() == 0 {
            m.to_owned()
        } else {
            m - &m.mean_axis(Axis(0)).expect("non-empty")
        }
    };
    let (xc, yc) = (center(x), center(y));
    let fro2 = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
    let xx = fro2(&xc.t().dot(&xc)).sqrt();
    let yy = fro2(&yc.t().dot(&yc)).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(AnalysisError::ZeroMatrix);
    }
    let yx = fro2(&yc.t().dot(&xc));
    Ok(yx / (xx * yy))
}

/// `D_ij = 1 - cos(x_i, x_j)`; symmetric with an exact zero diagonal.
pub fn cosine_dissimilarity(rows: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = rows.nrows();
    let mut unit = rows.to_owned();
    for (i, mut r) in unit.rows_mut().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if norm == 0.0 {
            return Err(AnalysisError::ZeroRow(i));
        }
        r /= norm;
    }
    let g = unit.dot(&unit.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (1.0 - g[[i, j]]).clamp(0.0, 2.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Representation at each state's final occurrence in `states`; `None` for
/// states never visited.
pub fn last_encounter(
    states: &[usize],
    reps: &ArrayView2<f64>,
    n_states: usize,
) -> Result<Vec<Option<Array1<f64>>>> {
    if states.len() != reps.nrows() {
        return Err(AnalysisError::LengthMismatch(states.len(), reps.nrows()));
    }
    let mut out = vec![None; n_states];
    for (t, &s) in states.iter().enumerate() {
        if s >= n_states {
            return Err(AnalysisError::Invalid(format!("state {s} >= {n_states}")));
        }
        out[s] = Some(reps.row(t).to_owned());
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order with eigenvectors as columns.
pub fn symmetric_eigen(a: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn randn(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::seeded(seed);
        Array2::from_shape_fn((n, m), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
    fn random_orthogonal(p: usize, seed: u64) -> Array2<f64> {
        let mut q = randn(p, p, seed);
        for j in 0..p {
            for k in 0..j {
                let proj = q.column(j).dot(&q.column(k));
                let ck = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &ck);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        q
    }

    /// CKA through the n x n Gram matrices, an independent formulation.
    fn gram_cka(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let n = x.nrows();
        let h = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
        let k = h.dot(&x.dot(&x.t())).dot(&h);
        let l = h.dot(&y.dot(&y.t())).dot(&h);
        let hsic = |a: &Array2<f64>, b: &Array2<f64>| (a * b).sum();
        hsic(&k, &l) / (hsic(&k, &k).sqrt() * hsic(&l, &l).sqrt())
    }

    #[test]
    fn cka_examples() {
        let x = randn(30, 4, 1);
        assert_abs_diff_eq!(cka(&x.view(), &x.view(), false).unwrap(), 1.0, epsilon = 1e-12);
        let a = ndarray::array![[1.0], [-1.0], [1.0], [-1.0]];
        let b = ndarray::array![[1.0], [1.0], [-1.0], [-1.0]];
        assert_abs_diff_eq!(cka(&a.view(), &b.view(), false).unwrap(), 0.0, epsilon = 1e-15);
        let y = randn(30, 6, 2);
        assert_abs_diff_eq!(
            cka(&x.view(), &y.view(), false).unwrap(),
            gram_cka(&x, &y),
            epsilon = 1e-12
        );
        let c = Array2::<f64>::ones((5, 2));
        assert!(matches!(cka(&c.view(), &c.view(), false), Err(AnalysisError::ZeroMatrix)));
        assert!(cka(&c.view(), &c.view(), true).is_ok());
    }

    #[test]
    fn cka_raw_formula_differs_from_centered() {
        let x = randn(20, 3, 3) + 5.0;
        let y = randn(20, 3, 4) + 5.0;
        let raw = cka(&x.view(), &y.view(), true).unwrap();
        let centered = cka(&x.view(), &y.view(), false).unwrap();
        assert!(raw > 0.9 && centered < raw);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn cka_properties(seed in 0u64..100_000, p in 1usize..6, q in 1usize..6, c in 0.1f64..10.0) {
            let x = randn(25, p, seed);
            let y = randn(25, q, seed + 7);
            let v = cka(&x.view(), &y.view(), false).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            let sym = cka(&y.view(), &x.view(), false).unwrap();
            prop_assert!((v - sym).abs() <= 1e-12);
            let rot = x.dot(&random_orthogonal(p, seed + 1));
            prop_assert!((cka(&rot.view(), &y.view(), false).unwrap() - v).abs() <= 1e-9);
            let scaled = &x * -c;
            prop_assert!((cka(&scaled.view(), &y.view(), false).unwrap() - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn cosine_examples() {
        let rows = ndarray::array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]];
        let d = cosine_dissimilarity(&rows.view()).unwrap();
        assert_eq!(d[[0, 1]], 0.0);
        assert_eq!(d[[0, 2]], 1.0);
        assert_eq!(d[[0, 3]], 2.0);
        for i in 0..4 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..4 {
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
        let bad = ndarray::array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(cosine_dissimilarity(&bad.view()), Err(AnalysisError::ZeroRow(1))));
    }

    #[test]
    fn last_encounter_picks_final_occurrence() {
        let reps = Array2::from_shape_fn((5, 2), |(t, j)| (10 * t + j) as f64);
        let out = last_encounter(&[0, 1, 0, 2, 1], &reps.view(), 4).unwrap();
        assert_eq!(out[0].as_ref().unwrap().to_vec(), vec![20.0, 21.0]);
        assert_eq!(out[1].as_ref().unwrap().to_vec(), vec![40.0, 41.0]);
        assert!(out[3].is_none());
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = randn(7, 7, 9);
        let s = &a + &a.t();
        let (vals, vecs) = symmetric_eigen(&s.view());
        let back = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (x, y) in back.iter().zip(s.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        assert!(vals.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }
}
