//! Weyl-Heisenberg bases, the single-qubit Clifford 2-design, second-moment
//! twirls, and span-dimension analysis of single-lab Choi families.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::choi::{choi_of_kraus, choi_of_unitary, rank_one_choi, vec_matrix};
use crate::error::{Error, Result};
use crate::random::{haar_unitary, random_kraus, rng_for};
use crate::tensor::linalg::{count_above, singular_values, unitarity_deviation};
use crate::tensor::{LabeledOperator, SpaceLabel};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `Tr[σ_μ† σ_ν] = δ_{μν}`
    HsOrthonormal,
    /// `Tr[σ_μ† σ_ν] = d δ_{μν}`; every element unitary.
    WeylUnitary,
}

/// `σ_(a,b) = X^a Z^b`, indexed `μ = a·d + b`, with `X|j⟩ = |j+1⟩` and
/// `Z|j⟩ = ω^j|j⟩`.
#[derive(Debug, Clone)]
pub struct WeylBasis {
    pub d: usize,
    pub normalization: Normalization,
    pub elements: Vec<CMatrix>,
}

pub fn shift(d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |r, c| if r == (c + 1) % d { one() } else { zero() })
}

pub fn clock(d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |r, c| if r == c { omega(d, r as i64) } else { zero() })
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn omega(d: usize, k: i64) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * (k.rem_euclid(d as i64)) as f64 / d as f64)
}

pub fn weyl_basis(d: usize, normalization: Normalization) -> WeylBasis {
    let (x, z) = (shift(d), clock(d));
    let scale = match normalization {
        Normalization::HsOrthonormal => 1.0 / (d as f64).sqrt(),
        Normalization::WeylUnitary => 1.0,
    };
    let mut elements = Vec::with_capacity(d * d);
    let mut xa = CMatrix::identity(d, d);
    for _a in 0..d {
        let mut zb = CMatrix::identity(d, d);
        for _b in 0..d {
            elements.push((&xa * &zb) * C64::new(scale, 0.0));
            zb = &zb * &z;
        }
        xa = &xa * &x;
    }
    WeylBasis {
        d,
        normalization,
        elements,
    }
}

impl WeylBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.d + b
    }

    pub fn split_index(&self, mu: usize) -> (usize, usize) {
        (mu / self.d, mu % self.d)
    }

    /// `σ_μ σ_ν† = e^{iφ} σ_λ`; returns `(λ, e^{iφ})`. Exact for the
    /// unitary normalization (the phase is independent of the scale up to
    /// the factor `1/d` for the orthonormal one, which is folded in).
    pub fn product_with_adjoint(&self, mu: usize, nu: usize) -> (usize, C64) {
        let d = self.d as i64;
        let (a, b) = self.split_index(mu);
        let (c, e) = self.split_index(nu);
        let (a, b, c, e) = (a as i64, b as i64, c as i64, e as i64);
        // X^a Z^b Z^{-e} X^{-c} = ω^{-c(b-e)} X^{a-c} Z^{b-e}
        let lambda = self.index((a - c).rem_euclid(d) as usize, (b - e).rem_euclid(d) as usize);
        let mut phase = omega(self.d, -c * (b - e));
        if self.normalization == Normalization::HsOrthonormal {
            phase /= (self.d as f64).sqrt();
        }
        (lambda, phase)
    }
}

/// Pure states whose projectors span all `d×d` matrices: `|j⟩`,
/// `(|j⟩+|k⟩)/√2` and `(|j⟩+i|k⟩)/√2` for `j < k`.
pub fn ic_states(d: usize) -> Vec<CVector> {
    let mut out = Vec::with_capacity(d * d);
    for j in 0..d {
        out.push(CVector::from_fn(d, |r, _| if r == j { one() } else { zero() }));
    }
    let s = 1.0 / 2f64.sqrt();
    for j in 0..d {
        for k in j + 1..d {
            for phase in [one(), C64::new(0.0, 1.0)] {
                let mut v = CVector::zeros(d);
                v[j] = C64::new(s, 0.0);
                v[k] = phase * s;
                out.push(v);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct UnitaryDesign {
    pub elements: Vec<CMatrix>,
    pub order: usize,
}

impl UnitaryDesign {
    pub fn dim(&self) -> usize {
        self.elements.first().map_or(0, |u| u.nrows())
    }
}

pub fn hadamard() -> CMatrix {
    let s = C64::new(1.0 / 2f64.sqrt(), 0.0);
    CMatrix::from_row_slice(2, 2, &[s, s, s, -s])
}

pub fn phase_s() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[one(), zero(), zero(), C64::new(0.0, 1.0)])
}

fn same_up_to_phase(a: &CMatrix, b: &CMatrix) -> bool {
    let overlap = (a.adjoint() * b).trace();
    (overlap.norm() - a.nrows() as f64).abs() < 1e-9
}

/// The 24 single-qubit Clifford unitaries modulo global phase, generated
/// from `H` and `S` by breadth-first closure.
pub fn clifford_design_qubit() -> UnitaryDesign {
    let gens = [hadamard(), phase_s()];
    let mut elements = vec![CMatrix::identity(2, 2)];
    let mut frontier = vec![CMatrix::identity(2, 2)];
    while let Some(u) = frontier.pop() {
        for g in &gens {
            let v = g * &u;
            if !elements.iter().any(|e| same_up_to_phase(e, &v)) {
                elements.push(v.clone());
                frontier.push(v);
            }
        }
    }
    UnitaryDesign { elements, order: 2 }
}

fn swap_matrix(d: usize) -> CMatrix {
    let mut f = CMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            f[(i * d + j, j * d + i)] = one();
        }
    }
    f
}

fn twirl_coefficients(x: &CMatrix, d: usize) -> (C64, C64) {
    let f = swap_matrix(d);
    let tr_x = x.trace();
    let tr_fx = (&f * x).trace();
    let dd = d as f64;
    let a = (tr_x - tr_fx / dd) / (dd * dd - 1.0);
    let b = (tr_fx - tr_x / dd) / (dd * dd - 1.0);
    (a, b)
}

fn twirl_raw(x: &CMatrix, d: usize) -> CMatrix {
    let (a, b) = twirl_coefficients(x, d);
    CMatrix::identity(d * d, d * d) * a + swap_matrix(d) * b
}

fn doubled_dim(x: &LabeledOperator) -> Result<usize> {
    let dims = x.dims();
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(Error::DimMismatch(format!(
            "second-moment twirl needs two equal factors, got {dims:?}"
        )));
    }
    Ok(dims[0])
}

/// Haar average `∫ U⊗U X (U†)⊗U† dU = a I + b F` with `a, b` fixed by
/// `Tr[X]` and `Tr[F X]`.
pub fn haar_twirl2(x: &LabeledOperator) -> Result<LabeledOperator> {
    let d = doubled_dim(x)?;
    LabeledOperator::new(x.labels().to_vec(), twirl_raw(x.matrix(), d))
}

/// Empirical second-moment average over a finite design.
pub fn design_twirl2(design: &UnitaryDesign, x: &LabeledOperator) -> Result<LabeledOperator> {
    let d = doubled_dim(x)?;
    if design.dim() != d {
        return Err(Error::DimMismatch("design acts on a different dimension".into()));
    }
    let mut acc = CMatrix::zeros(d * d, d * d);
    for u in &design.elements {
        let uu = u.kronecker(u);
        acc += &uu * x.matrix() * uu.adjoint();
    }
    let l = design.elements.len() as f64;
    LabeledOperator::new(x.labels().to_vec(), acc / C64::new(l, 0.0))
}

/// Where second moments come from: a finite design or the analytic Haar twirl.
#[derive(Debug, Clone, Copy)]
pub enum TwirlSource<'a> {
    Design(&'a UnitaryDesign),
    Haar,
}

/// `C_pq(U) = Tr[σ_p† U σ_q U†]`.
pub fn coefficient(basis: &WeylBasis, p: usize, q: usize, u: &CMatrix) -> C64 {
    (basis.elements[p].adjoint() * u * &basis.elements[q] * u.adjoint()).trace()
}

fn check_traceless_index(basis: &WeylBasis, idx: &[usize]) -> Result<()> {
    if basis.normalization != Normalization::HsOrthonormal {
        return Err(Error::InvalidSetting(
            "moment identities need the orthonormal basis".into(),
        ));
    }
    for &i in idx {
        if i == 0 || i >= basis.len() {
            return Err(Error::IndexOutOfRange(format!(
                "traceless index {i} outside 1..{}",
                basis.len()
            )));
        }
    }
    Ok(())
}

/// Second moment `M_{pq,ij} = avg conj(C_pq(U)) C_ij(U)`.
pub fn moment_entry(
    basis: &WeylBasis,
    source: TwirlSource<'_>,
    (p, q): (usize, usize),
    (i, j): (usize, usize),
) -> Result<C64> {
    check_traceless_index(basis, &[p, q, i, j])?;
    match source {
        TwirlSource::Design(design) => {
            let total: C64 = design
                .elements
                .iter()
                .map(|u| coefficient(basis, p, q, u).conj() * coefficient(basis, i, j, u))
                .sum();
            Ok(total / C64::new(design.elements.len() as f64, 0.0))
        }
        TwirlSource::Haar => {
            let s = &basis.elements;
            // conj(C_pq) C_ij = Tr[(σ_p ⊗ σ_i†) U⊗U (σ_q† ⊗ σ_j) U†⊗U†]
            let x = s[q].adjoint().kronecker(&s[j]);
            let y = s[p].kronecker(&s[i].adjoint());
            Ok((y * twirl_raw(&x, basis.d)).trace())
        }
    }
}

/// Full moment matrix over the traceless sector, rows `(p, q)` and columns
/// `(i, j)` with `p, q, i, j ∈ 1..d²`.
pub fn moment_matrix(basis: &WeylBasis, source: TwirlSource<'_>) -> Result<CMatrix> {
    let n = basis.len() - 1;
    let mut m = CMatrix::zeros(n * n, n * n);
    for p in 1..=n {
        for q in 1..=n {
            for i in 1..=n {
                for j in 1..=n {
                    m[((p - 1) * n + (q - 1), (i - 1) * n + (j - 1))] = moment_entry(basis, source, (p, q), (i, j))?;
                }
            }
        }
    }
    Ok(m)
}

/// `K_pq = avg conj(C_pq(U)) [U]`, a linear combination of unitary Chois on
/// `(I_lab, O_lab)`.
pub fn kpq_operator(
    p: usize,
    q: usize,
    source: TwirlSource<'_>,
    basis: &WeylBasis,
    lab: usize,
) -> Result<LabeledOperator> {
    check_traceless_index(basis, &[p, q])?;
    let d = basis.d;
    let input = [SpaceLabel::input(lab, d)];
    let output = [SpaceLabel::output(lab, d)];
    match source {
        TwirlSource::Design(design) => {
            if design.dim() != d {
                return Err(Error::DimMismatch("design acts on a different dimension".into()));
            }
            let mut acc = CMatrix::zeros(d * d, d * d);
            for u in &design.elements {
                let c = coefficient(basis, p, q, u).conj();
                acc += rank_one_choi(u, &input, &output)?.into_matrix() * c;
            }
            let l = design.elements.len() as f64;
            LabeledOperator::new(vec![input[0], output[0]], acc / C64::new(l, 0.0))
        }
        TwirlSource::Haar => {
            // [U] = Σ_{r,r'} |r⟩⟨r'| ⊗ U|r⟩⟨r'|U†, and conj(C_pq) = Tr[σ_p U σ_q† U†];
            // each block is Tr_B[(I⊗σ_p) Φ2(|r⟩⟨r'| ⊗ σ_q†)] = a Tr(σ_p) I + b σ_p.
            let sp = &basis.elements[p];
            let sq_dag = basis.elements[q].adjoint();
            let tr_sp = sp.trace();
            let mut out = CMatrix::zeros(d * d, d * d);
            for r in 0..d {
                for r2 in 0..d {
                    let mut e = CMatrix::zeros(d, d);
                    e[(r, r2)] = one();
                    let (a, b) = twirl_coefficients(&e.kronecker(&sq_dag), d);
                    let block = CMatrix::identity(d, d) * (a * tr_sp) + sp * b;
                    for m in 0..d {
                        for m2 in 0..d {
                            out[(r * d + m, r2 * d + m2)] = block[(m, m2)];
                        }
                    }
                }
            }
            LabeledOperator::new(vec![input[0], output[0]], out)
        }
    }
}

/// Rank of the matrix whose rows are `vec(T_a)`, thresholded at
/// `tol · σ_max`.
pub fn span_dimension(family: &[LabeledOperator], tol: f64) -> Result<usize> {
    let first = family.first().ok_or(Error::EmptyFamily)?;
    let sig = first.labels().to_vec();
    let dim = first.side() * first.side();
    let mut rows = CMatrix::zeros(family.len(), dim);
    for (r, op) in family.iter().enumerate() {
        let aligned = first.aligned(op)?;
        debug_assert_eq!(aligned.labels(), &sig[..]);
        let v = vec_matrix(aligned.matrix());
        for c in 0..dim {
            rows[(r, c)] = v[c];
        }
    }
    Ok(count_above(&singular_values(&rows), tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEntry {
    pub family: String,
    pub measured: usize,
    pub formula: usize,
    #[serde(rename = "match")]
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub dim: usize,
    pub entries: Vec<SpanEntry>,
    /// `((d²−1)²+1)/d⁴`
    pub unitary_fraction: f64,
}

impl SpanReport {
    pub fn all_match(&self) -> bool {
        self.entries.iter().all(|e| e.matches)
    }

    pub fn measured(&self, family: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.family == family).map(|e| e.measured)
    }
}

pub fn unitary_span_formula(d: usize) -> usize {
    (d * d - 1).pow(2) + 1
}

pub fn cptp_span_formula(d: usize) -> usize {
    d * d * (d * d - 1) + 1
}

pub fn single_lab_labels(d: usize) -> ([SpaceLabel; 1], [SpaceLabel; 1]) {
    ([SpaceLabel::input(1, d)], [SpaceLabel::output(1, d)])
}

pub fn sample_unitary_chois<R: Rng + ?Sized>(r: &mut R, d: usize, count: usize) -> Result<Vec<LabeledOperator>> {
    let (i, o) = single_lab_labels(d);
    (0..count)
        .map(|_| Ok(choi_of_unitary(&haar_unitary(r, d), &i, &o, 1e-9)?.op))
        .collect()
}

/// Random channels with Kraus rank drawn uniformly from `1..=d²`.
pub fn sample_cptp_chois<R: Rng + ?Sized>(r: &mut R, d: usize, count: usize) -> Result<Vec<LabeledOperator>> {
    let (i, o) = single_lab_labels(d);
    (0..count)
        .map(|_| {
            let rank = r.random_range(1..=d * d);
            Ok(choi_of_kraus(&random_kraus(r, d, rank), &i, &o, 1e-9)?.op)
        })
        .collect()
}

/// `|a⟩⟨a|ᵀ ⊗ |ψ⟩⟨ψ|` over `a, ψ ∈ ic_states(d)`.
pub fn measure_prepare_chois(d: usize) -> Result<Vec<LabeledOperator>> {
    let (i, o) = single_lab_labels(d);
    let states = ic_states(d);
    let mut out = Vec::with_capacity(states.len() * states.len());
    for a in &states {
        for psi in &states {
            out.push(rank_one_choi(&(psi * a.adjoint()), &i, &o)?);
        }
    }
    Ok(out)
}

/// Measured span dimensions of unitary, CPTP and measure-and-prepare Choi
/// families against the counting formulas.
pub fn span_bound_reports(d: usize, seed: u64, tol: f64) -> Result<SpanReport> {
    if d < 2 {
        return Err(Error::DimMismatch("d must be at least 2".into()));
    }
    let d4 = d.pow(4);
    let mut ru = rng_for(seed, &format!("span/unitary/{d}"));
    let mut rc = rng_for(seed, &format!("span/cptp/{d}"));
    let unitary = sample_unitary_chois(&mut ru, d, d4 + 16)?;
    let cptp = sample_cptp_chois(&mut rc, d, (2 * d4 + 16).max(200))?;
    let mp = measure_prepare_chois(d)?;
    let mut entries = Vec::new();
    for (name, fam, formula) in [
        ("unitary", &unitary, unitary_span_formula(d)),
        ("cptp", &cptp, cptp_span_formula(d)),
        ("mp", &mp, d4),
    ] {
        let measured = span_dimension(fam, tol)?;
        entries.push(SpanEntry {
            family: name.to_string(),
            measured,
            formula,
            matches: measured == formula,
        });
    }
    Ok(SpanReport {
        dim: d,
        entries,
        unitary_fraction: unitary_span_formula(d) as f64 / d4 as f64,
    })
}

/// Largest |overlap| of a unitary Choi with the `σ_iᵀ⊗I` and `I⊗σ_j`
/// directions (`i, j ≥ 1`), in the orthonormal basis.
pub fn marginal_overlap(basis: &WeylBasis, u: &CMatrix) -> Result<f64> {
    if unitarity_deviation(u) > 1e-9 {
        return Err(Error::NotUnitary {
            deviation: unitarity_deviation(u),
        });
    }
    let d = basis.d;
    let (i, o) = single_lab_labels(d);
    let choi = rank_one_choi(u, &i, &o)?;
    let id = CMatrix::identity(d, d) * C64::new(1.0 / (d as f64).sqrt(), 0.0);
    let mut worst = 0.0f64;
    for s in &basis.elements[1..] {
        for dir in [s.transpose().kronecker(&id), id.kronecker(s)] {
            let c = (dir.adjoint() * choi.matrix()).trace();
            worst = worst.max(c.norm());
        }
    }
    Ok(worst)
}
