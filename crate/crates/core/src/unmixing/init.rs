//! Starting points for the factorization.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let scale = m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = T::epsilon() * scale;

    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap().then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Deterministic SVD-based non-negative start (NNDSVD).
///
/// The leading singular triplets of `s` come from the eigen-decomposition of
/// the small Gram matrix `sᵀs`; each pair of singular vectors is split into
/// positive and negative parts and the dominant part is kept. Components
/// beyond the numerical rank start at zero.
pub fn nndsvd<T: Scalar>(s: ArrayView2<'_, T>, k: usize) -> (Array2<T>, Array2<T>) {
    let (n, l) = s.dim();
    let gram = s.t().dot(&s);
    let (eigvals, eigvecs) = symmetric_eigen(gram.view());
    let mut w = Array2::<T>::zeros((n, k));
    let mut h = Array2::<T>::zeros((k, l));
    let cutoff = eigvals.get(0).copied().unwrap_or(T::zero()) * T::epsilon() * T::count(l);

    for j in 0..k.min(l) {
        let lambda = eigvals[j];
        if lambda <= cutoff || lambda <= T::zero() {
            break;
        }
        let sigma = lambda.sqrt();
        let v = eigvecs.column(j).to_owned();
        let u = s.dot(&v) / sigma;

        let pos = |x: T| x.max(T::zero());
        let neg = |x: T| (-x).max(T::zero());
        let norm = |a: &Array1<T>| a.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();

        if j == 0 {
            let root = sigma.sqrt();
            // Leading singular vectors share a sign; take magnitudes.
            w.column_mut(0).assign(&u.mapv(|x| x.abs() * root));
            h.row_mut(0).assign(&v.mapv(|x| x.abs() * root));
            continue;
        }

        let (up, un) = (u.mapv(pos), u.mapv(neg));
        let (vp, vn) = (v.mapv(pos), v.mapv(neg));
        let (nup, nun, nvp, nvn) = (norm(&up), norm(&un), norm(&vp), norm(&vn));
        let (mp, mn) = (nup * nvp, nun * nvn);
        let (x, y, nx, ny, m) = if mp >= mn {
            (up, vp, nup, nvp, mp)
        } else {
            (un, vn, nun, nvn, mn)
        };
        if m == T::zero() {
            continue;
        }
        let root = (sigma * m).sqrt();
        w.column_mut(j).assign(&x.mapv(|e| e / nx * root));
        h.row_mut(j).assign(&y.mapv(|e| e / ny * root));
    }
    (w, h)
}

/// `|N(0, 1)|` entries scaled so that `W·H` matches the data's mean level.
pub fn random<T: Scalar>(s: ArrayView2<'_, T>, k: usize, seed: u64) -> (Array2<T>, Array2<T>) {
    let (n, l) = s.dim();
    let mean = if s.is_empty() {
        T::zero()
    } else {
        s.iter().fold(T::zero(), |acc, &x| acc + x) / T::count(s.len())
    };
    let scale = (mean / T::count(k)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || T::lit(rng.sample::<f64, _>(StandardNormal).abs()) * scale;
    let w = Array2::from_shape_simple_fn((n, k), &mut draw);
    let h = Array2::from_shape_simple_fn((k, l), &mut draw);
    (w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_of_diagonal_and_rotated() {
        let (vals, _) = symmetric_eigen(array![[1.0f64, 0.0], [0.0, 3.0]].view());
        assert_eq!(vals.to_vec(), vec![3.0, 1.0]);

        let a = array![[2.0f64, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view());
        let expected = [2.0 + 2f64.sqrt(), 2.0, 2.0 - 2f64.sqrt()];
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        // A·v = λ·v and orthonormality.
        let av = a.dot(&vecs);
        for j in 0..3 {
            for i in 0..3 {
                assert!((av[(i, j)] - vals[j] * vecs[(i, j)]).abs() < 1e-12);
            }
        }
        let vtv = vecs.t().dot(&vecs);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nndsvd_is_nonnegative_and_exact_for_rank_one() {
        let u = array![1.0f64, 2.0, 3.0];
        let v = array![0.5f64, 0.0, 2.0, 1.0];
        let s = Array2::from_shape_fn((3, 4), |(i, j)| u[i] * v[j]);
        let (w, h) = nndsvd(s.view(), 2);
        assert!(w.iter().chain(h.iter()).all(|&x| x >= 0.0));
        let r = &s - &w.dot(&h);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        assert!(h.row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_init_is_seeded() {
        let s = Array2::from_elem((5, 3), 2.0f64);
        assert_eq!(random(s.view(), 2, 9), random(s.view(), 2, 9));
        assert_ne!(random(s.view(), 2, 9).0, random(s.view(), 2, 10).0);
    }
}
