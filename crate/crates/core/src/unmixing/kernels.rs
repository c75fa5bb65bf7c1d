//! Dense products specialised to the tall, skinny shapes of the factorization.
//!
//! `k` is small, so general matrix multiplication spends most of its time
//! packing `S`. These loops read `S` once per product instead. Work is split
//! into fixed row chunks and every reduction adds chunk partials in chunk
//! order, so results do not depend on the number of workers.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::scalar::Scalar;

/// Rows per parallel task.
pub(super) const ROW_CHUNK: usize = 512;

fn slice<'a, T>(m: &'a ArrayView2<'_, T>) -> &'a [T] {
    m.as_slice().expect("matrix is in standard layout")
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `S·Hᵀ`, `[N × k]`.
pub(super) fn s_ht<T: Scalar>(s: ArrayView2<'_, T>, h: ArrayView2<'_, T>) -> Array2<T> {
    let (n, l) = s.dim();
    let k = h.nrows();
    let hs = slice(&h);
    let mut out = Array2::<T>::zeros((n, k));
    if n == 0 || k == 0 {
        return out;
    }
    slice(&s)
        .par_chunks(ROW_CHUNK * l)
        .zip(out.as_slice_mut().unwrap().par_chunks_mut(ROW_CHUNK * k))
        .for_each(|(sc, oc)| {
            for (srow, orow) in sc.chunks(l).zip(oc.chunks_mut(k)) {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(srow, &hs[j * l..(j + 1) * l]);
                }
            }
        });
    out
}

/// Sums per-chunk `[rows × cols]` partials in chunk order.
fn ordered_sum<T: Scalar>(partials: Vec<Array2<T>>, rows: usize, cols: usize) -> Array2<T> {
    partials.into_iter().fold(Array2::zeros((rows, cols)), |acc, p| acc + p)
}

/// `Sᵀ·W`, `[bands × k]`.
pub(super) fn st_w<T: Scalar>(s: ArrayView2<'_, T>, w: ArrayView2<'_, T>) -> Array2<T> {
    let l = s.ncols();
    let k = w.ncols();
    if s.nrows() == 0 || l == 0 || k == 0 {
        return Array2::zeros((l, k));
    }
    // Accumulated as Wᵀ·S so the inner loop runs along contiguous bands.
    let partials: Vec<Array2<T>> = slice(&s)
        .par_chunks(ROW_CHUNK * l)
        .zip(slice(&w).par_chunks(ROW_CHUNK * k))
        .map(|(sc, wc)| {
            let mut p = Array2::<T>::zeros((k, l));
            let ps = p.as_slice_mut().unwrap();
            for (srow, wrow) in sc.chunks(l).zip(wc.chunks(k)) {
                for (pj, &wv) in ps.chunks_mut(l).zip(wrow) {
                    if wv == T::zero() {
                        continue;
                    }
                    for (acc, &sv) in pj.iter_mut().zip(srow) {
                        *acc += wv * sv;
                    }
                }
            }
            p
        })
        .collect();
    ordered_sum(partials, k, l).reversed_axes().as_standard_layout().into_owned()
}

/// `Wᵀ·W`, `[k × k]`.
pub(super) fn gram_cols<T: Scalar>(w: ArrayView2<'_, T>) -> Array2<T> {
    let k = w.ncols();
    if w.nrows() == 0 || k == 0 {
        return Array2::zeros((k, k));
    }
    let partials: Vec<Array2<T>> = slice(&w)
        .par_chunks(ROW_CHUNK * k)
        .map(|wc| {
            let mut p = Array2::<T>::zeros((k, k));
            for row in wc.chunks(k) {
                for a in 0..k {
                    if row[a] == T::zero() {
                        continue;
                    }
                    for b in 0..k {
                        p[(a, b)] += row[a] * row[b];
                    }
                }
            }
            p
        })
        .collect();
    ordered_sum(partials, k, k)
}

/// `‖S − WH‖²_F`.
pub(super) fn residual_norm2<T: Scalar>(s: ArrayView2<'_, T>, w: ArrayView2<'_, T>, h: ArrayView2<'_, T>) -> T {
    let l = s.ncols();
    let k = w.ncols();
    if s.nrows() == 0 || l == 0 {
        return T::zero();
    }
    let hs = slice(&h);
    let ws = slice(&w);
    let partials: Vec<T> = slice(&s)
        .par_chunks(ROW_CHUNK * l)
        .enumerate()
        .map(|(c, sc)| {
            let mut approx = vec![T::zero(); l];
            let mut total = T::zero();
            for (r, srow) in sc.chunks(l).enumerate() {
                let i = c * ROW_CHUNK + r;
                let wrow = &ws[i * k..(i + 1) * k];
                approx.iter_mut().for_each(|a| *a = T::zero());
                for (j, &wv) in wrow.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    for (a, &hv) in approx.iter_mut().zip(&hs[j * l..(j + 1) * l]) {
                        *a += wv * hv;
                    }
                }
                for (&x, &a) in srow.iter().zip(&approx) {
                    total += (x - a) * (x - a);
                }
            }
            total
        })
        .collect();
    partials.into_iter().fold(T::zero(), |acc, x| acc + x)
}

/// One exact coordinate pass over a coefficient row, given `a = s·Hᵀ` for
/// that row and the `[k × k]` Gram matrix `b = H·Hᵀ`. Returns the squared
/// norm of the change.
#[inline]
pub(super) fn sweep_row<T: Scalar>(w: &mut [T], a: &[T], b: &[T], lambda1: T, lambda_f: T) -> T {
    let k = w.len();
    let mut change = T::zero();
    for j in 0..k {
        let bj = &b[j * k..(j + 1) * k];
        let denom = bj[j] + lambda_f;
        let old = w[j];
        let new = if denom > T::zero() {
            // b is symmetric, so row j holds b_lj.
            let mut num = a[j];
            for (l, (&wl, &blj)) in w.iter().zip(bj).enumerate() {
                if l != j {
                    num -= wl * blj;
                }
            }
            ((num - lambda1) / denom).max(T::zero())
        } else {
            T::zero()
        };
        w[j] = new;
        change += (new - old) * (new - old);
    }
    change
}

/// One coordinate pass over every row of `target`; returns the total
/// squared change, summed in chunk order.
pub(super) fn sweep_all<T: Scalar>(
    target: &mut Array2<T>,
    cross: ArrayView2<'_, T>,
    gram: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
    parallel: bool,
) -> T {
    let k = target.ncols();
    if target.nrows() == 0 || k == 0 {
        return T::zero();
    }
    let gs = slice(&gram);
    let chunk = |(wc, ac): (&mut [T], &[T])| {
        wc.chunks_mut(k)
            .zip(ac.chunks(k))
            .fold(T::zero(), |acc, (wr, ar)| acc + sweep_row(wr, ar, gs, lambda1, lambda_f))
    };
    let ws = target.as_slice_mut().expect("matrix is in standard layout");
    let cs = slice(&cross);
    let partials: Vec<T> = if parallel {
        ws.par_chunks_mut(ROW_CHUNK * k)
            .zip(cs.par_chunks(ROW_CHUNK * k))
            .map(chunk)
            .collect()
    } else {
        ws.chunks_mut(ROW_CHUNK * k).zip(cs.chunks(ROW_CHUNK * k)).map(chunk).collect()
    };
    partials.into_iter().fold(T::zero(), |acc, x| acc + x)
}
