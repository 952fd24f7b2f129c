//! Labeled dense operators on tensor-product spaces.
//!
//! A [`LabeledOperator`] is a square complex matrix together with the ordered
//! list of tensor factors it acts on. The first label is the most significant
//! index (standard Kronecker ordering). Labels are identified by
//! `(lab, role)`; the dimension travels with the label and must agree
//! wherever two operators share a factor.

pub mod linalg;
mod serial;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMatrix, C64};

pub use serial::{matrix_list, matrix_rows, OperatorJson};

/// Default tolerance for PSD / rank decisions.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Input,
    Output,
    Ancilla,
    Env,
}

/// One tensor factor: which lab it belongs to, its role, and its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLabel {
    pub lab: usize,
    pub role: Role,
    pub dim: usize,
}

impl SpaceLabel {
    pub const fn new(lab: usize, role: Role, dim: usize) -> Self {
        Self { lab, role, dim }
    }

    pub const fn input(lab: usize, dim: usize) -> Self {
        Self::new(lab, Role::Input, dim)
    }

    pub const fn output(lab: usize, dim: usize) -> Self {
        Self::new(lab, Role::Output, dim)
    }

    pub const fn ancilla(lab: usize, dim: usize) -> Self {
        Self::new(lab, Role::Ancilla, dim)
    }

    pub const fn env(lab: usize, dim: usize) -> Self {
        Self::new(lab, Role::Env, dim)
    }

    /// Identity key used for matching factors across operators.
    pub fn key(&self) -> (usize, Role) {
        (self.lab, self.role)
    }

    pub fn same_space(&self, other: &SpaceLabel) -> bool {
        self.key() == other.key()
    }
}

impl fmt::Display for SpaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.role {
            Role::Input => "I",
            Role::Output => "O",
            Role::Ancilla => "A",
            Role::Env => "E",
        };
        write!(f, "{tag}{}[{}]", self.lab, self.dim)
    }
}

/// Row-major strides for a list of factor dimensions.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Flat offsets obtained by enumerating the multi-index over `positions`
/// (first position most significant) with the given full strides.
fn offsets(dims: &[usize], strides: &[usize], positions: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for &p in positions {
        let mut next = Vec::with_capacity(out.len() * dims[p]);
        for &base in &out {
            for digit in 0..dims[p] {
                next.push(base + digit * strides[p]);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    labels: Vec<SpaceLabel>,
    matrix: CMatrix,
}

impl LabeledOperator {
    pub fn new(labels: Vec<SpaceLabel>, matrix: CMatrix) -> Result<Self> {
        for (i, l) in labels.iter().enumerate() {
            if l.dim < 2 {
                return Err(Error::DimMismatch(format!("label {l} has dimension < 2")));
            }
            if labels[..i].iter().any(|m| m.same_space(l)) {
                return Err(Error::DuplicateLabel(*l));
            }
        }
        let side: usize = labels.iter().map(|l| l.dim).product();
        if matrix.nrows() != side || matrix.ncols() != side {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {}x{} but labels imply side {side}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite entry".into()));
        }
        Ok(Self { labels, matrix })
    }

    /// 1x1 operator with no labels.
    pub fn scalar(value: C64) -> Self {
        Self {
            labels: Vec::new(),
            matrix: CMatrix::from_element(1, 1, value),
        }
    }

    pub fn identity(labels: Vec<SpaceLabel>) -> Result<Self> {
        let side: usize = labels.iter().map(|l| l.dim).product();
        Self::new(labels, CMatrix::identity(side, side))
    }

    pub fn labels(&self) -> &[SpaceLabel] {
        &self.labels
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.dim).collect()
    }

    pub fn position(&self, label: &SpaceLabel) -> Option<usize> {
        self.labels.iter().position(|l| l.same_space(label))
    }

    pub fn has_label(&self, label: &SpaceLabel) -> bool {
        self.position(label).is_some()
    }

    /// Same matrix, new labels (dimensions must match factor by factor).
    pub fn relabel(&self, labels: Vec<SpaceLabel>) -> Result<Self> {
        if labels.len() != self.labels.len() || labels.iter().zip(&self.labels).any(|(a, b)| a.dim != b.dim) {
            return Err(Error::DimMismatch("relabel changes factor dimensions".into()));
        }
        Self::new(labels, self.matrix.clone())
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            matrix: self.matrix.transpose(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            labels: self.labels.clone(),
            matrix: self.matrix.map(|z| z * c),
        }
    }

    pub fn hermitian_part(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            matrix: linalg::hermitian_part(&self.matrix),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Bring `other` into this operator's label order; fails if the label
    /// sets differ.
    pub fn aligned(&self, other: &LabeledOperator) -> Result<LabeledOperator> {
        if self.labels.len() != other.labels.len() {
            return Err(Error::DimMismatch(format!(
                "label sets differ: {} vs {} factors",
                self.labels.len(),
                other.labels.len()
            )));
        }
        for l in &self.labels {
            match other.position(l) {
                Some(p) if other.labels[p].dim == l.dim => {}
                Some(p) => {
                    return Err(Error::DimMismatchOnSharedLabel {
                        label: *l,
                        left: l.dim,
                        right: other.labels[p].dim,
                    })
                }
                None => return Err(Error::UnknownLabel(*l)),
            }
        }
        other.permute(&self.labels)
    }

    /// `self + other`, with `other` aligned to this label order.
    pub fn add(&self, other: &LabeledOperator) -> Result<Self> {
        let o = self.aligned(other)?;
        Ok(Self {
            labels: self.labels.clone(),
            matrix: &self.matrix + o.matrix,
        })
    }

    pub fn sub(&self, other: &LabeledOperator) -> Result<Self> {
        let o = self.aligned(other)?;
        Ok(Self {
            labels: self.labels.clone(),
            matrix: &self.matrix - o.matrix,
        })
    }

    /// Largest entry-wise deviation after label alignment.
    pub fn max_abs_diff(&self, other: &LabeledOperator) -> Result<f64> {
        Ok(linalg::max_abs(self.sub(other)?.matrix()))
    }

    pub fn frobenius_diff(&self, other: &LabeledOperator) -> Result<f64> {
        Ok(self.sub(other)?.frobenius_norm())
    }

    /// Kronecker product with concatenated labels.
    pub fn tensor(&self, other: &LabeledOperator) -> Result<Self> {
        if let Some(l) = other.labels.iter().find(|l| self.has_label(l)) {
            return Err(Error::DuplicateLabel(*l));
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            labels,
            matrix: self.matrix.kronecker(&other.matrix),
        })
    }

    fn split_positions(&self, over: &[SpaceLabel]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut selected = Vec::with_capacity(over.len());
        for l in over {
            let p = self.position(l).ok_or(Error::UnknownLabel(*l))?;
            if !selected.contains(&p) {
                selected.push(p);
            }
        }
        selected.sort_unstable();
        let kept = (0..self.labels.len()).filter(|p| !selected.contains(p)).collect();
        Ok((kept, selected))
    }

    /// Trace over the listed factors; remaining labels keep their order.
    pub fn partial_trace(&self, over: &[SpaceLabel]) -> Result<Self> {
        let (kept, traced) = self.split_positions(over)?;
        let dims = self.dims();
        let st = strides(&dims);
        let koff = offsets(&dims, &st, &kept);
        let toff = offsets(&dims, &st, &traced);
        let n = koff.len();
        let mut out = CMatrix::zeros(n, n);
        for (c, &kc) in koff.iter().enumerate() {
            for (r, &kr) in koff.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for &t in &toff {
                    acc += self.matrix[(kr + t, kc + t)];
                }
                out[(r, c)] = acc;
            }
        }
        Ok(Self {
            labels: kept.iter().map(|&p| self.labels[p]).collect(),
            matrix: out,
        })
    }

    /// Transpose on the listed factors only, in the computational basis.
    pub fn partial_transpose(&self, over: &[SpaceLabel]) -> Result<Self> {
        let (kept, sel) = self.split_positions(over)?;
        let dims = self.dims();
        let st = strides(&dims);
        let koff = offsets(&dims, &st, &kept);
        let soff = offsets(&dims, &st, &sel);
        let mut out = CMatrix::zeros(self.side(), self.side());
        for &kc in &koff {
            for &kr in &koff {
                for &s in &soff {
                    for &t in &soff {
                        out[(kr + s, kc + t)] = self.matrix[(kr + t, kc + s)];
                    }
                }
            }
        }
        Ok(Self {
            labels: self.labels.clone(),
            matrix: out,
        })
    }

    /// Reorder tensor factors to `new_order` (matched by `(lab, role)`).
    pub fn permute(&self, new_order: &[SpaceLabel]) -> Result<Self> {
        if new_order.len() != self.labels.len() {
            return Err(Error::NotAPermutation);
        }
        let mut perm = Vec::with_capacity(new_order.len());
        for l in new_order {
            let p = self.position(l).ok_or(Error::NotAPermutation)?;
            if perm.contains(&p) {
                return Err(Error::NotAPermutation);
            }
            perm.push(p);
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let dims = self.dims();
        let map = offsets(&dims, &strides(&dims), &perm);
        let n = self.side();
        let out = CMatrix::from_fn(n, n, |r, c| self.matrix[(map[r], map[c])]);
        Ok(Self {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            matrix: out,
        })
    }

    /// Labels sorted by `(lab, role)` with `Input < Output < Ancilla < Env`.
    pub fn canonical_labels(&self) -> Vec<SpaceLabel> {
        let mut l = self.labels.clone();
        l.sort_by_key(|x| x.key());
        l
    }

    pub fn canonical(&self) -> Self {
        self.permute(&self.canonical_labels())
            .expect("own labels form a permutation")
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.matrix)
    }

    pub fn sqrt_psd(&self, tol: f64) -> Result<Self> {
        Ok(Self {
            labels: self.labels.clone(),
            matrix: linalg::sqrt_psd_matrix(&self.matrix, tol)?,
        })
    }

    pub fn rank_and_pinv(&self, tol: f64) -> (usize, Self) {
        let (rank, p) = linalg::pinv(&self.matrix, tol);
        (
            rank,
            Self {
                labels: self.labels.clone(),
                matrix: p,
            },
        )
    }

    /// Reshape across the bipartition `left | rest`: the returned matrix has
    /// rows indexed by `(a, a')` over `left` and columns by `(b, b')` over the
    /// remaining factors, so that `self = Σ_k A_k ⊗ B_k` maps to a rank
    /// decomposition.
    pub fn realign(&self, left: &[SpaceLabel]) -> Result<CMatrix> {
        let (rest, sel) = self.split_positions(left)?;
        let mut order: Vec<SpaceLabel> = sel.iter().map(|&p| self.labels[p]).collect();
        order.extend(rest.iter().map(|&p| self.labels[p]));
        let p = self.permute(&order)?;
        let da: usize = sel.iter().map(|&i| self.labels[i].dim).product();
        let db: usize = rest.iter().map(|&i| self.labels[i].dim).product();
        let m = &p.matrix;
        Ok(CMatrix::from_fn(da * da, db * db, |r, c| {
            let (a, a2) = (r / da, r % da);
            let (b, b2) = (c / db, c % db);
            m[(a * db + b, a2 * db + b2)]
        }))
    }
}

impl fmt::Display for LabeledOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        write!(
            f,
            "LabeledOperator[{}] {}x{}",
            names.join(","),
            self.side(),
            self.side()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_hermitian, random_matrix, rng};

    fn re(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)])
    }

    fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[re(1.0), re(0.0), re(0.0), re(-1.0)])
    }

    fn op(lab: usize, m: CMatrix) -> LabeledOperator {
        let d = m.nrows();
        LabeledOperator::new(vec![SpaceLabel::input(lab, d)], m).unwrap()
    }

    #[test]
    fn tensor_of_identities() {
        let a = LabeledOperator::identity(vec![SpaceLabel::input(0, 2)]).unwrap();
        let b = LabeledOperator::identity(vec![SpaceLabel::input(1, 2)]).unwrap();
        let t = a.tensor(&b).unwrap();
        assert_eq!(t.matrix(), &CMatrix::identity(4, 4));
    }

    #[test]
    fn tensor_x_z() {
        let t = op(0, pauli_x()).tensor(&op(1, pauli_z())).unwrap();
        let expected = CMatrix::from_row_slice(
            4,
            4,
            &[0., 0., 1., 0., 0., 0., 0., -1., 1., 0., 0., 0., 0., -1., 0., 0.].map(re),
        );
        assert_eq!(t.matrix(), &expected);
    }

    #[test]
    fn tensor_dims_and_duplicates() {
        let a = LabeledOperator::identity(vec![SpaceLabel::input(0, 2)]).unwrap();
        let b = LabeledOperator::identity(vec![SpaceLabel::output(0, 3)]).unwrap();
        assert_eq!(a.tensor(&b).unwrap().side(), 6);
        assert!(matches!(a.tensor(&a), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn partial_trace_factorizes() {
        let mut r = rng(1);
        let a = op(0, random_matrix(&mut r, 2));
        let b = op(1, random_matrix(&mut r, 2));
        let ab = a.tensor(&b).unwrap();
        let red = ab.partial_trace(&[b.labels()[0]]).unwrap();
        let expected = a.scale(b.trace());
        assert!(red.max_abs_diff(&expected).unwrap() < 1e-12);
        let full = ab.partial_trace(ab.labels()).unwrap();
        assert_eq!(full.side(), 1);
        assert!((full.matrix()[(0, 0)] - ab.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_max_entangled() {
        let v = CMatrix::from_column_slice(4, 1, &[1., 0., 0., 1.].map(re));
        let labels = vec![SpaceLabel::input(0, 2), SpaceLabel::output(0, 2)];
        let phi = LabeledOperator::new(labels.clone(), &v * v.adjoint()).unwrap();
        let red = phi.partial_trace(&[labels[1]]).unwrap();
        assert!((red.matrix() - CMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn unknown_label_errors() {
        let a = op(0, pauli_x());
        assert!(matches!(
            a.partial_trace(&[SpaceLabel::output(3, 2)]),
            Err(Error::UnknownLabel(_))
        ));
        assert!(matches!(
            a.partial_transpose(&[SpaceLabel::output(3, 2)]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn partial_transpose_cases() {
        let mut r = rng(2);
        let a = op(0, random_matrix(&mut r, 2));
        let b = op(1, random_matrix(&mut r, 2));
        let ab = a.tensor(&b).unwrap();
        let pt = ab.partial_transpose(&[b.labels()[0]]).unwrap();
        let expected = a.tensor(&b.transpose()).unwrap();
        assert!(pt.max_abs_diff(&expected).unwrap() < 1e-15);
        let all = ab.partial_transpose(ab.labels()).unwrap();
        assert!((all.matrix() - ab.matrix().transpose()).norm() < 1e-15);
    }

    #[test]
    fn swap_partial_transpose_is_max_entangled() {
        // F = Σ |ij><ji|; F^{T_B} = |I><I|
        let mut f = CMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                f[(i * 2 + j, j * 2 + i)] = re(1.0);
            }
        }
        let labels = vec![SpaceLabel::input(0, 2), SpaceLabel::input(1, 2)];
        let f = LabeledOperator::new(labels.clone(), f).unwrap();
        let pt = f.partial_transpose(&[labels[1]]).unwrap();
        let expected = CMatrix::from_row_slice(
            4,
            4,
            &[1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 1.].map(re),
        );
        assert_eq!(pt.matrix(), &expected);
    }

    #[test]
    fn permute_identity_and_involution() {
        let mut r = rng(3);
        let labels = vec![SpaceLabel::input(0, 2), SpaceLabel::input(1, 2)];
        let a = LabeledOperator::new(labels.clone(), random_matrix(&mut r, 4)).unwrap();
        assert_eq!(a.permute(&labels).unwrap(), a);
        let swapped = a.permute(&[labels[1], labels[0]]).unwrap();
        assert_ne!(swapped.matrix(), a.matrix());
        let back = swapped.permute(&labels).unwrap();
        assert_eq!(back, a);
        assert!(matches!(a.permute(&[labels[0]]), Err(Error::NotAPermutation)));
        assert!(matches!(
            a.permute(&[labels[0], labels[0]]),
            Err(Error::NotAPermutation)
        ));
    }

    #[test]
    fn permute_preserves_spectrum() {
        let mut r = rng(4);
        let labels = vec![
            SpaceLabel::input(0, 2),
            SpaceLabel::output(0, 2),
            SpaceLabel::input(1, 2),
        ];
        let a = LabeledOperator::new(labels.clone(), random_hermitian(&mut r, 8)).unwrap();
        let p = a.permute(&[labels[2], labels[0], labels[1]]).unwrap();
        let (e1, e2) = (a.eigenvalues(), p.eigenvalues());
        for (x, y) in e1.iter().zip(&e2) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.trace() - p.trace()).norm() < 1e-12);
        assert!((a.frobenius_norm() - p.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_identity_and_diag() {
        let id = LabeledOperator::identity(vec![SpaceLabel::input(0, 3)]).unwrap();
        assert!(id.sqrt_psd(1e-10).unwrap().max_abs_diff(&id).unwrap() < 1e-14);
    }

    #[test]
    fn pinv_penrose_identity() {
        let mut r = rng(5);
        let m = random_matrix(&mut r, 16);
        let labels = vec![
            SpaceLabel::input(0, 2),
            SpaceLabel::output(0, 2),
            SpaceLabel::input(1, 2),
            SpaceLabel::output(1, 2),
        ];
        let a = LabeledOperator::new(labels, m.clone()).unwrap();
        let (rank, p) = a.rank_and_pinv(1e-10);
        assert_eq!(rank, 16);
        let apa = &m * p.matrix() * &m;
        assert!(linalg::max_abs(&(apa - &m)) < 1e-10);
        let id = LabeledOperator::identity(vec![SpaceLabel::input(0, 4)]).unwrap();
        let (rank, p) = id.rank_and_pinv(1e-10);
        assert_eq!(rank, 4);
        assert!(p.max_abs_diff(&id).unwrap() < 1e-14);
    }

    #[test]
    fn realign_product_has_rank_one() {
        let mut r = rng(6);
        let a = op(0, random_matrix(&mut r, 2));
        let b = op(1, random_matrix(&mut r, 2));
        let ab = a.tensor(&b).unwrap();
        let m = ab.realign(&[a.labels()[0]]).unwrap();
        assert_eq!(linalg::rank(&m, 1e-10), 1);
    }
}
