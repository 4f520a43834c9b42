//! Small dense complex linear-algebra helpers.
//!
//! `vec` is column-major throughout: column `j` of an `r x c` matrix lands
//! at `j*r .. (j+1)*r`. This is the ordering under which
//! `vec(A X B) = (B^T ⊗ A) vec(X)` holds.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::C64;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            for p in 0..br {
                for q in 0..bc {
                    out[[i * br + p, j * bc + q]] = s * b[[p, q]];
                }
            }
        }
    }
    out
}

/// Column-wise Khatri-Rao product: column `n` is `a[:, n] ⊗ b[:, n]`.
///
/// Panics if the column counts differ.
pub fn khatri_rao(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    assert_eq!(ac, bc, "khatri_rao: column counts differ");
    let mut out = Array2::zeros((ar * br, ac));
    for n in 0..ac {
        for i in 0..ar {
            let s = a[[i, n]];
            for p in 0..br {
                out[[i * br + p, n]] = s * b[[p, n]];
            }
        }
    }
    out
}

/// Column-major vectorization.
pub fn vec(m: &ArrayView2<C64>) -> Array1<C64> {
    let (r, c) = m.dim();
    let mut out = Array1::zeros(r * c);
    for j in 0..c {
        for i in 0..r {
            out[j * r + i] = m[[i, j]];
        }
    }
    out
}

/// Inverse of [`vec`] for a target shape `rows x cols`.
pub fn devec(v: &ArrayView1<C64>, rows: usize, cols: usize) -> Array2<C64> {
    assert_eq!(v.len(), rows * cols, "devec: length mismatch");
    Array2::from_shape_fn((rows, cols), |(i, j)| v[j * rows + i])
}

pub fn fro_norm(m: &ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm(v: &ArrayView1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `x^H y`.
pub fn inner(x: &ArrayView1<C64>, y: &ArrayView1<C64>) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Conjugate transpose.
pub fn herm(m: &ArrayView2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// `m * diag(d)`.
pub fn scale_columns(m: &ArrayView2<C64>, d: &ArrayView1<C64>) -> Array2<C64> {
    let mut out = m.to_owned();
    for (mut col, s) in out.columns_mut().into_iter().zip(d.iter()) {
        col.mapv_inplace(|z| z * s);
    }
    out
}
