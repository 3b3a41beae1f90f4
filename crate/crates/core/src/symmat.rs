//! Dense symmetric matrices and the scaled lower-triangle packing used by
//! the PSD blocks of the conic solver.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat, SymEigen};

/// Dense symmetric matrix. Entries satisfy `m[i][j] == m[j][i]` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SymMatrix {
    mat: Mat,
    /// Largest `|M_ij - M_ji|` removed by symmetrization at construction.
    asymmetry: f64,
}

/// Accepted JSON shapes: `{"n": .., "rows": [[..], ..]}` or a bare array of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Tagged { n: usize, rows: Vec<Vec<f64>> },
    Rows(Vec<Vec<f64>>),
}

impl TryFrom<MatrixJson> for SymMatrix {
    type Error = Error;

    fn try_from(raw: MatrixJson) -> Result<Self> {
        match raw {
            MatrixJson::Tagged { n, rows } => {
                if rows.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "declared n = {n} but {} rows given",
                        rows.len()
                    )));
                }
                SymMatrix::from_rows(&rows)
            }
            MatrixJson::Rows(rows) => SymMatrix::from_rows(&rows),
        }
    }
}

impl From<SymMatrix> for MatrixJson {
    fn from(m: SymMatrix) -> Self {
        MatrixJson::Tagged { n: m.n(), rows: m.rows() }
    }
}

impl SymMatrix {
    /// Builds from a full square array. Asymmetry up to
    /// `1e-12 * (1 + max|entry|)` is averaged away; more is an error.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("matrix must have n >= 1".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has length {} but n = {n}",
                rows[bad].len()
            )));
        }
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::from_mat(Mat::from_vec(n, data))
    }

    pub fn from_mat(mut mat: Mat) -> Result<Self> {
        let n = mat.dim();
        if n == 0 {
            return Err(Error::DimensionMismatch("matrix must have n >= 1".into()));
        }
        if mat.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let mut asymmetry: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                asymmetry = asymmetry.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        let tolerance = 1e-12 * (1.0 + mat.max_abs());
        if asymmetry > tolerance {
            return Err(Error::Asymmetric { asymmetry, tolerance });
        }
        if asymmetry > 0.0 {
            mat.symmetrize();
        }
        Ok(SymMatrix { mat, asymmetry })
    }

    /// Builds from a generator evaluated on the lower triangle (`i >= j`).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1, "matrix must have n >= 1");
        let mut mat = Mat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        SymMatrix { mat, asymmetry: 0.0 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_fn(n, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    /// `u v^T + v u^T` scaled by one half, i.e. the symmetric part of `u v^T`.
    pub fn sym_outer(u: &[f64], v: &[f64]) -> Self {
        assert_eq!(u.len(), v.len());
        Self::from_fn(u.len(), |i, j| 0.5 * (u[i] * v[j] + u[j] * v[i]))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.mat.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn as_mat(&self) -> &Mat {
        &self.mat
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.mat.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.max_abs()
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n());
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let row = self.mat.row(i);
            let mut r = 0.0;
            for j in 0..n {
                r += row[j] * x[j];
            }
            acc += x[i] * r;
        }
        acc
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| crate::linalg::dot(self.mat.row(i), x)).collect()
    }

    /// Trace inner product `M . N`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.mat.frobenius_dot(&other.mat)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix::from_fn(self.n(), |i, j| s * self.get(i, j))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n(), other.n());
        SymMatrix::from_fn(self.n(), |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n(), other.n());
        SymMatrix::from_fn(self.n(), |i, j| self.get(i, j) - other.get(i, j))
    }

    /// Principal submatrix on the given index list.
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    /// The `(n+1) x (n+1)` matrix `[[corner, v^T], [v, self]]`.
    pub fn bordered(&self, corner: f64, v: &[f64]) -> SymMatrix {
        assert_eq!(v.len(), self.n());
        SymMatrix::from_fn(self.n() + 1, |i, j| match (i, j) {
            (0, 0) => corner,
            (i, 0) => v[i - 1],
            (i, j) => self.get(i - 1, j - 1),
        })
    }

    /// True iff every off-diagonal entry is at most `tol`.
    pub fn is_submodular(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) <= tol))
    }

    pub fn eigen(&self) -> Result<SymEigen> {
        sym_eigen(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigen()?.values[0])
    }

    pub fn is_psd(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalue()? >= -tol)
    }

    /// Scaled lower-triangle vectorization (see [`pack`]).
    pub fn svec(&self) -> Vec<f64> {
        pack(&self.mat)
    }

    pub fn from_svec(v: &[f64], n: usize) -> Result<SymMatrix> {
        if v.len() != svec_len(n) {
            return Err(Error::DimensionMismatch(format!(
                "svec of length {} does not match n = {n}",
                v.len()
            )));
        }
        let mat = unpack(v, n);
        Ok(SymMatrix { mat, asymmetry: 0.0 })
    }
}

/// Smallest eigenvalue, see [`SymMatrix::min_eigenvalue`].
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    m.min_eigenvalue()
}

pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<bool> {
    m.is_psd(tol)
}

pub fn is_submodular(m: &SymMatrix, tol: f64) -> bool {
    m.is_submodular(tol)
}

/// Number of packed coordinates of a `d x d` symmetric matrix.
#[inline]
pub const fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Packed position of entry `(i, j)`; order is row-wise over the lower triangle.
#[inline]
pub fn svec_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

/// Inverse of [`svec_index`].
pub fn svec_position(k: usize) -> (usize, usize) {
    let mut r = ((((8 * k + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
    while r * (r + 1) / 2 > k {
        r -= 1;
    }
    while (r + 1) * (r + 2) / 2 <= k {
        r += 1;
    }
    (r, k - r * (r + 1) / 2)
}

/// Lower-triangle vectorization with off-diagonals multiplied by `sqrt(2)`,
/// so `pack(A) . pack(B) == A . B`.
pub fn pack(m: &Mat) -> Vec<f64> {
    let d = m.dim();
    let mut out = Vec::with_capacity(svec_len(d));
    for i in 0..d {
        for j in 0..=i {
            let v = if i == j { m[(i, i)] } else { SQRT_2 * m[(i, j)] };
            out.push(v);
        }
    }
    out
}

pub fn unpack(v: &[f64], d: usize) -> Mat {
    debug_assert_eq!(v.len(), svec_len(d));
    let mut m = Mat::zeros(d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SymMatrix {
        SymMatrix::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ])
        .unwrap()
    }

    fn m2(a: f64, b: f64, c: f64) -> SymMatrix {
        SymMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap()
    }

    #[test]
    fn submodularity_examples() {
        assert!(m2(2.0, -1.0, 3.0).is_submodular(0.0));
        assert!(!m2(0.0, 0.5, 0.0).is_submodular(0.0));
        assert!(path3().is_submodular(0.0));
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((SymMatrix::identity(3).min_eigenvalue().unwrap() - 1.0).abs() < 1e-12);
        assert!((m2(0.0, 1.0, 0.0).min_eigenvalue().unwrap() + 1.0).abs() < 1e-12);
        assert!(path3().min_eigenvalue().unwrap().abs() < 1e-12);
    }

    #[test]
    fn psd_examples() {
        assert!(m2(1.0, 0.0, 1.0).is_psd(1e-9).unwrap());
        assert!(!m2(1.0, 2.0, 1.0).is_psd(1e-9).unwrap());
        assert!(path3().is_psd(1e-9).unwrap());
    }

    #[test]
    fn construction_rejects_large_asymmetry() {
        let err = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::Asymmetric { .. }));
        let tiny = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5 + 1e-14, 1.0]]).unwrap();
        assert_eq!(tiny.get(0, 1), tiny.get(1, 0));
        assert!(tiny.asymmetry() > 0.0);
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        assert!(SymMatrix::from_rows(&[]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0]]).is_err());
    }

    #[test]
    fn json_forms() {
        let m: SymMatrix = serde_json::from_str(r#"{"n":2,"rows":[[1,2],[2,3]]}"#).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        let bare: SymMatrix = serde_json::from_str("[[1,2],[2,3]]").unwrap();
        assert_eq!(m, bare);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"n":2,"rows":[[1.0,2.0],[2.0,3.0]]}"#);
        assert!(serde_json::from_str::<SymMatrix>(r#"{"n":2,"rows":[[1,2],[3,3]]}"#).is_err());
        assert!(serde_json::from_str::<SymMatrix>(r#"{"n":3,"rows":[[1,2],[2,3]]}"#).is_err());
    }

    #[test]
    fn svec_preserves_inner_products() {
        let a = SymMatrix::from_rows(&[
            vec![1.0, 2.0, -1.0],
            vec![2.0, 0.5, 3.0],
            vec![-1.0, 3.0, 4.0],
        ])
        .unwrap();
        let b = path3();
        let lhs = crate::linalg::dot(&a.svec(), &b.svec());
        assert!((lhs - a.dot(&b)).abs() < 1e-12);
    }

    #[test]
    fn svec_index_roundtrip() {
        for k in 0..200 {
            let (i, j) = svec_position(k);
            assert!(j <= i);
            assert_eq!(svec_index(i, j), k);
            assert_eq!(svec_index(j, i), k);
        }
    }

    fn ulp_distance(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        let key = |x: f64| {
            let bits = x.to_bits() as i64;
            if bits < 0 { i64::MIN - bits } else { bits }
        };
        key(a).abs_diff(key(b))
    }

    /// Independent check: LDL^T without pivoting on `M + shift I`, success
    /// iff every pivot is positive.
    fn shifted_cholesky_succeeds(m: &SymMatrix, shift: f64) -> bool {
        let n = m.n();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = m.get(i, j) + if i == j { shift } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        return false;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        true
    }

    /// `Q diag(lambda) Q^T` with `Q` a product of two Householder reflections.
    fn with_spectrum(lambda: &[f64], u: &[f64], v: &[f64]) -> SymMatrix {
        let n = lambda.len();
        let reflect = |w: &[f64]| {
            let nn: f64 = w.iter().map(|x| x * x).sum::<f64>().max(1e-300);
            (0..n).map(|i| (0..n).map(|j| (if i == j { 1.0 } else { 0.0 }) - 2.0 * w[i] * w[j] / nn).collect()).collect()
        };
        let (h1, h2): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (reflect(u), reflect(v));
        let q: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| h1[i][k] * h2[k][j]).sum()).collect()).collect();
        SymMatrix::from_fn(n, |i, j| (0..n).map(|k| q[i][k] * lambda[k] * q[j][k]).sum())
    }

    use proptest::prelude::*;

    fn arb_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=10).prop_flat_map(|n| {
            proptest::collection::vec(-1e3f64..1e3, n * (n + 1) / 2).prop_map(move |tri| {
                let mut rows = vec![vec![0.0; n]; n];
                let mut k = 0;
                for i in 0..n {
                    for j in 0..=i {
                        rows[i][j] = tri[k];
                        rows[j][i] = tri[k];
                        k += 1;
                    }
                }
                rows
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn psd_test_agrees_with_cholesky(
            n in 1usize..=10,
            raw in proptest::collection::vec(-1.0f64..1.0, 10),
            u in proptest::collection::vec(-1.0f64..1.0, 10),
            v in proptest::collection::vec(-1.0f64..1.0, 10),
            negative in any::<bool>(),
            gap in 1e-5f64..1.0,
        ) {
            let tol = 1e-9;
            // Smallest eigenvalue sits at -tol -/+ gap, clear of the threshold.
            let mut lambda: Vec<f64> = raw[..n].iter().map(|x| x.abs() + gap).collect();
            lambda[0] = if negative { -tol - gap } else { -tol + gap };
            let m = with_spectrum(&lambda, &u[..n], &v[..n]);
            let expected = shifted_cholesky_succeeds(&m, tol);
            prop_assert_eq!(expected, !negative);
            prop_assert_eq!(m.is_psd(tol).unwrap(), expected);
        }

        #[test]
        fn symmetric_input_is_kept_verbatim(rows in arb_rows()) {
            let m = SymMatrix::from_rows(&rows).unwrap();
            prop_assert_eq!(m.asymmetry(), 0.0);
            prop_assert_eq!(&m.rows(), &rows);
            let again = SymMatrix::from_rows(&m.rows()).unwrap();
            prop_assert_eq!(again, m);
        }

        #[test]
        fn packing_round_trip(rows in arb_rows()) {
            let m = SymMatrix::from_rows(&rows).unwrap();
            let back = SymMatrix::from_svec(&m.svec(), m.n()).unwrap();
            for i in 0..m.n() {
                prop_assert_eq!(back.get(i, i).to_bits(), m.get(i, i).to_bits());
                for j in 0..i {
                    prop_assert!(ulp_distance(back.get(i, j), m.get(i, j)) <= 1);
                    prop_assert_eq!(back.get(i, j).to_bits(), back.get(j, i).to_bits());
                }
            }
        }
    }
}
