//! Choi operators, vectorization, the link product, and comb validation.
//!
//! Vectorization is fixed globally as `|A⟩ = (I ⊗ A)|𝕀⟩` with
//! `|𝕀⟩ = Σ_n |n⟩⊗|n⟩`, so component `n·d + m` of `|A⟩` is `A[m, n]`
//! (column stacking). A Choi operator lives on `inputs ⊗ outputs`, inputs
//! first. All transposes are taken in the computational product basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::linalg::{max_abs, unitarity_deviation};
use crate::tensor::{LabeledOperator, OperatorJson, Role, SpaceLabel};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedOperator {
    pub amplitudes: CVector,
    pub source_labels: Vec<SpaceLabel>,
}

impl VectorizedOperator {
    /// `⟨self|other⟩ = Tr[A† B]`.
    pub fn inner(&self, other: &VectorizedOperator) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }
}

/// Column-stacking vectorization of a raw matrix.
pub fn vec_matrix(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

pub fn unvec_matrix(v: &CVector, side: usize) -> CMatrix {
    CMatrix::from_column_slice(side, side, v.as_slice())
}

pub fn vec(a: &LabeledOperator) -> VectorizedOperator {
    VectorizedOperator {
        amplitudes: vec_matrix(a.matrix()),
        source_labels: a.labels().to_vec(),
    }
}

pub fn unvec(v: &VectorizedOperator) -> Result<LabeledOperator> {
    let side: usize = v.source_labels.iter().map(|l| l.dim).product();
    if side * side != v.amplitudes.len() {
        return Err(Error::DimMismatch("vector length does not match labels".into()));
    }
    LabeledOperator::new(v.source_labels.clone(), unvec_matrix(&v.amplitudes, side))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChoiKind {
    #[serde(rename = "CP")]
    Cp,
    #[serde(rename = "CPTP")]
    Cptp,
    Unitary,
    Probabilistic,
}

/// Choi operator of a CP map from `inputs` to `outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiOperator {
    pub op: LabeledOperator,
    pub kind: ChoiKind,
    n_inputs: usize,
}

impl ChoiOperator {
    pub fn new(op: LabeledOperator, kind: ChoiKind, n_inputs: usize) -> Result<Self> {
        if n_inputs > op.labels().len() {
            return Err(Error::ShapeMismatch("more inputs than labels".into()));
        }
        Ok(Self { op, kind, n_inputs })
    }

    pub fn inputs(&self) -> &[SpaceLabel] {
        &self.op.labels()[..self.n_inputs]
    }

    pub fn outputs(&self) -> &[SpaceLabel] {
        &self.op.labels()[self.n_inputs..]
    }

    /// Checks PSD plus the partial-trace identities implied by `kind`.
    /// Returns the largest violation.
    pub fn validate(&self, tol: f64) -> Result<f64> {
        let min = self.op.min_eigenvalue();
        if min < -tol {
            return Err(Error::NotPsd { min_eig: min });
        }
        let mut worst = 0.0f64;
        if matches!(self.kind, ChoiKind::Cptp | ChoiKind::Unitary) {
            let t = self.op.partial_trace(self.outputs())?;
            let id = LabeledOperator::identity(t.labels().to_vec())?;
            worst = worst.max(t.max_abs_diff(&id)?);
        }
        if self.kind == ChoiKind::Unitary {
            let t = self.op.partial_trace(self.inputs())?;
            let id = LabeledOperator::identity(t.labels().to_vec())?;
            worst = worst.max(t.max_abs_diff(&id)?);
        }
        Ok(worst)
    }
}

#[derive(Serialize, Deserialize)]
struct ChoiJson {
    #[serde(flatten)]
    op: OperatorJson,
    kind: ChoiKind,
    n_inputs: usize,
}

impl Serialize for ChoiOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChoiJson {
            op: OperatorJson::from(&self.op),
            kind: self.kind,
            n_inputs: self.n_inputs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChoiOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ChoiJson::deserialize(d)?;
        let op = LabeledOperator::try_from(j.op).map_err(serde::de::Error::custom)?;
        ChoiOperator::new(op, j.kind, j.n_inputs).map_err(serde::de::Error::custom)
    }
}

fn side_of(labels: &[SpaceLabel]) -> usize {
    labels.iter().map(|l| l.dim).product()
}

/// `|vec K⟩⟨vec K|` for a raw map `K : inputs -> outputs`.
pub fn rank_one_choi(k: &CMatrix, input: &[SpaceLabel], output: &[SpaceLabel]) -> Result<LabeledOperator> {
    let (din, dout) = (side_of(input), side_of(output));
    if k.nrows() != dout || k.ncols() != din {
        return Err(Error::ShapeMismatch(format!(
            "map is {}x{}, labels need {dout}x{din}",
            k.nrows(),
            k.ncols()
        )));
    }
    // |K⟩ = Σ_n |n⟩ ⊗ K|n⟩, index n·dout + m
    let v = CVector::from_fn(din * dout, |i, _| k[(i % dout, i / dout)]);
    let mut labels = input.to_vec();
    labels.extend_from_slice(output);
    LabeledOperator::new(labels, &v * v.adjoint())
}

/// `|vec A⟩⟨vec B|` for two maps of the same shape.
pub fn outer_choi(a: &CMatrix, b: &CMatrix, input: &[SpaceLabel], output: &[SpaceLabel]) -> Result<LabeledOperator> {
    let (din, dout) = (side_of(input), side_of(output));
    for k in [a, b] {
        if k.nrows() != dout || k.ncols() != din {
            return Err(Error::ShapeMismatch("outer_choi operand shape".into()));
        }
    }
    let va = CVector::from_fn(din * dout, |i, _| a[(i % dout, i / dout)]);
    let vb = CVector::from_fn(din * dout, |i, _| b[(i % dout, i / dout)]);
    let mut labels = input.to_vec();
    labels.extend_from_slice(output);
    LabeledOperator::new(labels, &va * vb.adjoint())
}

pub fn choi_of_unitary(u: &CMatrix, input: &[SpaceLabel], output: &[SpaceLabel], tol: f64) -> Result<ChoiOperator> {
    let dev = unitarity_deviation(u);
    if dev > tol {
        return Err(Error::NotUnitary { deviation: dev });
    }
    let op = rank_one_choi(u, input, output)?;
    ChoiOperator::new(op, ChoiKind::Unitary, input.len())
}

/// `Σ_k |vec K_k⟩⟨vec K_k|`; kind is CPTP when `Σ K†K = I` within `tol`,
/// otherwise CP (trace non-increasing).
pub fn choi_of_kraus(ks: &[CMatrix], input: &[SpaceLabel], output: &[SpaceLabel], tol: f64) -> Result<ChoiOperator> {
    let first = ks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no Kraus operators".into()))?;
    if ks.iter().any(|k| k.shape() != first.shape()) {
        return Err(Error::ShapeMismatch("Kraus operators differ in shape".into()));
    }
    let din = first.ncols();
    let s = ks.iter().fold(CMatrix::zeros(din, din), |acc, k| acc + k.adjoint() * k);
    let excess = crate::tensor::linalg::eigvalsh(&(s.clone() - CMatrix::identity(din, din)))
        .last()
        .copied()
        .unwrap_or(0.0);
    if excess > tol {
        return Err(Error::TraceExceedsOne { excess });
    }
    let mut total: Option<LabeledOperator> = None;
    for k in ks {
        let c = rank_one_choi(k, input, output)?;
        total = Some(match total {
            None => c,
            Some(t) => t.add(&c)?,
        });
    }
    let kind = if max_abs(&(s - CMatrix::identity(din, din))) <= tol {
        ChoiKind::Cptp
    } else {
        ChoiKind::Cp
    };
    ChoiOperator::new(total.expect("non-empty"), kind, input.len())
}

/// `Tr_in[(ρᵀ ⊗ I) J]` with `ρ` carried on the Choi input labels.
pub fn apply_channel(choi: &ChoiOperator, rho: &LabeledOperator) -> Result<LabeledOperator> {
    let inputs = choi.inputs();
    if rho.labels().len() != inputs.len() {
        return Err(Error::DimMismatch(
            "state and channel input differ in factor count".into(),
        ));
    }
    for (a, b) in rho.labels().iter().zip(inputs) {
        if a.dim != b.dim {
            return Err(Error::DimMismatch(format!("state factor {a} vs channel input {b}")));
        }
    }
    let rho_in = rho.relabel(inputs.to_vec())?;
    link_product(&rho_in, &choi.op)
}

/// Link product `A ⋆ B = Tr_C[(A^{T_C} ⊗ I)(I ⊗ B)]` over the shared
/// factors `C` (matched by `(lab, role)`). Result labels: `A`'s private
/// factors in `A`'s order, then `B`'s private factors in `B`'s order.
pub fn link_product(a: &LabeledOperator, b: &LabeledOperator) -> Result<LabeledOperator> {
    let mut common = Vec::new();
    for l in a.labels() {
        if let Some(p) = b.position(l) {
            let r = b.labels()[p];
            if r.dim != l.dim {
                return Err(Error::DimMismatchOnSharedLabel {
                    label: *l,
                    left: l.dim,
                    right: r.dim,
                });
            }
            common.push(*l);
        }
    }
    if common.is_empty() {
        return a.tensor(b);
    }
    let a_priv: Vec<SpaceLabel> = a.labels().iter().filter(|l| !b.has_label(l)).copied().collect();
    let b_priv: Vec<SpaceLabel> = b.labels().iter().filter(|l| !a.has_label(l)).copied().collect();

    let mut a_order = a_priv.clone();
    a_order.extend_from_slice(&common);
    let mut b_order = common.clone();
    b_order.extend_from_slice(&b_priv);
    let ap = a.permute(&a_order)?;
    let bp = b.permute(&b_order)?;
    let (da, dc, db) = (side_of(&a_priv), side_of(&common), side_of(&b_priv));

    // (A⋆B)[(x,y),(x',y')] = Σ_{c,c'} A[(x,c),(x',c')] B[(c,y),(c',y')]
    let am = ap.matrix();
    let bm = bp.matrix();
    let at = CMatrix::from_fn(da * da, dc * dc, |r, c| {
        let (x, x2) = (r / da, r % da);
        let (y, z) = (c / dc, c % dc);
        am[(x * dc + y, x2 * dc + z)]
    });
    let bt = CMatrix::from_fn(dc * dc, db * db, |r, c| {
        let (y, z) = (r / dc, r % dc);
        let (u, u2) = (c / db, c % db);
        bm[(y * db + u, z * db + u2)]
    });
    let prod = at * bt;
    let out = CMatrix::from_fn(da * db, da * db, |r, c| {
        let (x, u) = (r / db, r % db);
        let (x2, u2) = (c / db, c % db);
        prod[(x * da + x2, u * db + u2)]
    });
    let mut labels = a_priv;
    labels.extend(b_priv);
    LabeledOperator::new(labels, out)
}

/// Left-fold of link products.
pub fn link_chain<'a>(ops: impl IntoIterator<Item = &'a LabeledOperator>) -> Result<LabeledOperator> {
    let mut it = ops.into_iter();
    let first = it.next().ok_or(Error::EmptyFamily)?.clone();
    it.try_fold(first, |acc, op| link_product(&acc, op))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombDirection {
    /// The comb receives lab outputs and emits lab inputs.
    Process,
    /// The comb receives lab inputs and emits lab outputs.
    Tester,
}

impl CombDirection {
    fn received_role(self) -> Role {
        match self {
            CombDirection::Process => Role::Output,
            CombDirection::Tester => Role::Input,
        }
    }
}

/// One time step of a comb: the factor it receives and the factor it emits.
/// Either side may be absent at the ends of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombSlot {
    pub received: Option<SpaceLabel>,
    pub emitted: Option<SpaceLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombLevel {
    pub slot: usize,
    pub violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombReport {
    pub direction: CombDirection,
    pub min_eigenvalue: f64,
    pub psd_passed: bool,
    pub levels: Vec<CombLevel>,
    /// `|W_{-1} - 1|` after the last reduction.
    pub normalization_violation: f64,
    pub tol: f64,
}

impl CombReport {
    pub fn passed(&self) -> bool {
        self.psd_passed && self.levels.iter().all(|l| l.passed) && self.normalization_violation <= self.tol
    }

    pub fn max_violation(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.violation)
            .fold(self.normalization_violation, f64::max)
    }
}

/// Slots for a process matrix on labs `1..=n_labs`. With boundary wires the
/// first slot receives lab 0's output and the last emits lab `n+1`'s input.
pub fn process_ordering(n_labs: usize, d: usize, boundary: bool) -> Vec<CombSlot> {
    let mut slots = Vec::with_capacity(n_labs + 1);
    for t in 0..=n_labs {
        let received = (t > 0 || boundary).then(|| SpaceLabel::output(t, d));
        let emitted = (t < n_labs || boundary).then(|| SpaceLabel::input(t + 1, d));
        slots.push(CombSlot { received, emitted });
    }
    slots
}

/// Slots for a tester on labs `1..=n_labs`: each lab's input then output.
pub fn tester_ordering(n_labs: usize, d: usize) -> Vec<CombSlot> {
    (1..=n_labs)
        .map(|t| CombSlot {
            received: Some(SpaceLabel::input(t, d)),
            emitted: Some(SpaceLabel::output(t, d)),
        })
        .collect()
}

/// Recursive comb check `Tr_{emitted_t}[W_t] = I_{received_t} ⊗ W_{t-1}`,
/// ending with `W_{-1} = 1`. Violations are max-abs entry deviations.
pub fn validate_comb(
    w: &LabeledOperator,
    ordering: &[CombSlot],
    direction: CombDirection,
    tol: f64,
) -> Result<CombReport> {
    let mut covered = Vec::new();
    for s in ordering {
        if let Some(r) = s.received {
            if r.role != direction.received_role() {
                return Err(Error::InvalidSetting(format!(
                    "slot receives {r} but direction {direction:?} expects role {:?}",
                    direction.received_role()
                )));
            }
            covered.push(r);
        }
        covered.extend(s.emitted);
    }
    if covered.len() != w.labels().len() || covered.iter().any(|l| !w.has_label(l)) {
        return Err(Error::InvalidSetting(
            "ordering does not partition the operator labels".into(),
        ));
    }
    let min = w.min_eigenvalue();
    let mut levels = Vec::with_capacity(ordering.len());
    let mut current = w.clone();
    for (t, slot) in ordering.iter().enumerate().rev() {
        let reduced = match slot.emitted {
            Some(e) => current.partial_trace(&[e])?,
            None => current,
        };
        current = match slot.received {
            Some(r) => {
                let prev = reduced.partial_trace(&[r])?.scale(C64::new(1.0 / r.dim as f64, 0.0));
                let expected = LabeledOperator::identity(vec![r])?.tensor(&prev)?;
                let violation = reduced.max_abs_diff(&expected)?;
                levels.push(CombLevel {
                    slot: t,
                    violation,
                    passed: violation <= tol,
                });
                prev
            }
            None => reduced,
        };
    }
    levels.reverse();
    let norm = (current.matrix()[(0, 0)] - C64::new(1.0, 0.0)).norm();
    Ok(CombReport {
        direction,
        min_eigenvalue: min,
        psd_passed: min >= -tol,
        levels,
        normalization_violation: norm,
        tol,
    })
}
