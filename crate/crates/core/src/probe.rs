//! Probe families: single-lab measure-and-prepare operations, the qubit
//! sixteen-element set, block unitaries, qubit-ancilla superinstruments,
//! phase filters, and JSON-lines persistence.
//!
//! Joint system-ancilla unitaries are `2d × 2d` matrices ordered
//! `system ⊗ ancilla`, so the block `K_mn = (I ⊗ ⟨m|) U (I ⊗ |n⟩)` has entries
//! `K_mn[s, s'] = U[(s, m), (s', n)]`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{clifford_design_qubit, ic_states, weyl_basis, Normalization, WeylBasis};
use crate::choi::{link_chain, outer_choi, rank_one_choi, tester_ordering, validate_comb, CombDirection};
use crate::error::{Error, Result};
use crate::random::{rng_for, unitary_with_first_column};
use crate::tensor::linalg::{rank, singular_values, sqrt_psd_matrix, unitarity_deviation};
use crate::tensor::{matrix_list, LabeledOperator, OperatorJson, SpaceLabel};
use crate::{CMatrix, CVector, C64};

/// The four phases each filter samples.
pub const THETAS: [f64; 4] = [0.0, PI, FRAC_PI_2, -FRAC_PI_2];

/// Default cap on the number of elements a generator may produce.
pub const DEFAULT_FAMILY_CAP: u128 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Qubit16,
    Theorem2Weyl,
    UnitaryOnly,
    MeasurePrepare,
    Custom,
}

/// What was set up in the lab(s) for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SettingDescriptor {
    NamedUnitary {
        name: String,
    },
    /// Prepare the `+1` eigenstate of the Pauli, swap it in, measure the
    /// swapped-out input in the same basis.
    PauliMeasurePrepare {
        basis: String,
    },
    /// Indices into the informationally complete state list of the lab
    /// dimension: the measured effect and the prepared state.
    MeasurePrepare {
        effect: usize,
        preparation: usize,
    },
    /// Weyl-index pairs `(μ, ν)` per lab and one phase per ancilla link.
    Weyl {
        labs: Vec<(usize, usize)>,
        thetas: Vec<f64>,
    },
    Product {
        labs: Vec<SettingDescriptor>,
    },
    Custom {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeElement {
    pub setting_id: u64,
    pub setting: SettingDescriptor,
    pub outcome: u32,
    pub choi: LabeledOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFamily {
    pub provenance: Provenance,
    pub elements: Vec<ProbeElement>,
}

impl ProbeFamily {
    /// Checks that every element acts on the same labels (in any order).
    pub fn new(provenance: Provenance, elements: Vec<ProbeElement>) -> Result<Self> {
        if let Some(first) = elements.first() {
            for e in &elements[1..] {
                first.choi.aligned(&e.choi)?;
            }
        }
        Ok(Self { provenance, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn labels(&self) -> Option<&[SpaceLabel]> {
        self.elements.first().map(|e| e.choi.labels())
    }

    /// Element indices grouped by setting, in setting order.
    pub fn settings(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.elements.iter().enumerate() {
            out.entry(e.setting_id).or_default().push(i);
        }
        out
    }

    pub fn chois(&self) -> Vec<LabeledOperator> {
        self.elements.iter().map(|e| e.choi.clone()).collect()
    }
}

// ---------------------------------------------------------------------------
// block unitaries

#[derive(Debug, Clone, PartialEq)]
pub struct BlockUnitarySpec {
    pub k00: CMatrix,
    pub v: CMatrix,
    pub w: CMatrix,
}

/// `[[K00, √(I−K00K00†)V], [W√(I−K00†K00), −W K00† V]]`, returned in
/// `system ⊗ ancilla` ordering.
pub fn block_unitary(spec: &BlockUnitarySpec, tol: f64) -> Result<CMatrix> {
    let d = spec.k00.nrows();
    if spec.k00.shape() != (d, d) || spec.v.shape() != (d, d) || spec.w.shape() != (d, d) {
        return Err(Error::ShapeMismatch("blocks must all be d x d".into()));
    }
    for (name, m) in [("V", &spec.v), ("W", &spec.w)] {
        let dev = unitarity_deviation(m);
        if dev > tol {
            return Err(Error::InvalidSetting(format!(
                "{name} is not unitary (deviation {dev:e})"
            )));
        }
    }
    let smax = singular_values(&spec.k00).first().copied().unwrap_or(0.0);
    if smax > 1.0 + tol {
        return Err(Error::SingularValueExceedsOne(smax));
    }
    let id = CMatrix::identity(d, d);
    let k = &spec.k00;
    let left = sqrt_psd_matrix(&(&id - k * k.adjoint()), tol.max(1e-12))?;
    let right = sqrt_psd_matrix(&(&id - k.adjoint() * k), tol.max(1e-12))?;
    let blocks = [
        [k.clone(), left * &spec.v],
        [&spec.w * right, -(&spec.w * k.adjoint() * &spec.v)],
    ];
    Ok(CMatrix::from_fn(2 * d, 2 * d, |r, c| {
        let (s, m) = (r / 2, r % 2);
        let (s2, n) = (c / 2, c % 2);
        blocks[m][n][(s, s2)]
    }))
}

/// `K_mn = (I ⊗ ⟨m|) U (I ⊗ |n⟩)` for a qubit ancilla.
pub fn extract_blocks(u: &CMatrix, (m, n): (usize, usize)) -> Result<CMatrix> {
    let side = u.nrows();
    if u.ncols() != side || !side.is_multiple_of(2) || side < 4 {
        return Err(Error::DimMismatch(format!(
            "expected a 2d x 2d unitary, got {side}x{}",
            u.ncols()
        )));
    }
    if m > 1 || n > 1 {
        return Err(Error::IndexOutOfRange(format!("ancilla branch ({m}, {n})")));
    }
    let d = side / 2;
    Ok(CMatrix::from_fn(d, d, |s, s2| u[(s * 2 + m, s2 * 2 + n)]))
}

fn check_normalized(v: &CVector) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n));
    }
    Ok(())
}

/// `C_X = |0⟩⟨0| ⊗ I + (I − |0⟩⟨0|) ⊗ X`: flips the ancilla unless the
/// system is in `|0⟩`.
pub fn controlled_flip(d: usize) -> CMatrix {
    CMatrix::from_fn(2 * d, 2 * d, |r, c| {
        let (s, m) = (r / 2, r % 2);
        let (s2, n) = (c / 2, c % 2);
        let hit = if s != s2 {
            false
        } else if s == 0 {
            m == n
        } else {
            m != n
        };
        if hit {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `(V ⊗ I) C_X (U ⊗ I)` with `U|a⟩ = |0⟩` and `V|0⟩ = |ψ⟩`, so the
/// outcome-0 branch is `K_00 = |ψ⟩⟨a|`.
pub fn theorem1_unitary(a: &CVector, psi: &CVector) -> Result<CMatrix> {
    check_normalized(a)?;
    check_normalized(psi)?;
    if a.len() != psi.len() {
        return Err(Error::DimMismatch("effect and preparation differ in dimension".into()));
    }
    let d = a.len();
    let u = unitary_with_first_column(a).adjoint();
    let v = unitary_with_first_column(psi);
    let id2 = CMatrix::identity(2, 2);
    Ok(v.kronecker(&id2) * controlled_flip(d) * u.kronecker(&id2))
}

fn lab_labels(lab: usize, d: usize) -> ([SpaceLabel; 1], [SpaceLabel; 1]) {
    ([SpaceLabel::input(lab, d)], [SpaceLabel::output(lab, d)])
}

/// Both outcomes of the single-lab measure-and-prepare circuit: outcome 0
/// has Choi `|a⟩⟨a|ᵀ ⊗ |ψ⟩⟨ψ|`, outcome 1 completes the channel.
pub fn theorem1_single_lab(
    a: &CVector,
    psi: &CVector,
    lab: usize,
    setting_id: u64,
    setting: SettingDescriptor,
) -> Result<[ProbeElement; 2]> {
    let u = theorem1_unitary(a, psi)?;
    let (i, o) = lab_labels(lab, a.len());
    let make = |m: usize| -> Result<ProbeElement> {
        Ok(ProbeElement {
            setting_id,
            setting: setting.clone(),
            outcome: m as u32,
            choi: rank_one_choi(&extract_blocks(&u, (m, 0))?, &i, &o)?,
        })
    };
    Ok([make(0)?, make(1)?])
}

// ---------------------------------------------------------------------------
// fixed single-lab families

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn m2(a: [C64; 4]) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &a)
}

/// `{I, X, Y, Z, Rx(π/2), Ry(π/2), Rz(π/2), H, Rz(π/2)X, Rx(π/2)Y}`.
pub fn qubit16_unitaries() -> Vec<(&'static str, CMatrix)> {
    let s = 1.0 / 2f64.sqrt();
    let (o, l) = (c(0.0, 0.0), c(1.0, 0.0));
    let x = m2([o, l, l, o]);
    let y = m2([o, c(0.0, -1.0), c(0.0, 1.0), o]);
    let z = m2([l, o, o, -l]);
    let id = CMatrix::identity(2, 2);
    let rot = |p: &CMatrix| (&id - p * c(0.0, 1.0)) * c(s, 0.0);
    let (rx, ry, rz) = (rot(&x), rot(&y), rot(&z));
    let h = m2([c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]);
    vec![
        ("I", id.clone()),
        ("X", x.clone()),
        ("Y", y.clone()),
        ("Z", z),
        ("Rx(pi/2)", rx.clone()),
        ("Ry(pi/2)", ry),
        ("Rz(pi/2)", rz.clone()),
        ("H", h),
        ("Rz(pi/2)X", rz * x),
        ("Rx(pi/2)Y", rx * y),
    ]
}

fn pauli_eigenstates(basis: &str) -> (CVector, CVector) {
    let s = 1.0 / 2f64.sqrt();
    let v = |a: C64, b: C64| CVector::from_vec(vec![a, b]);
    match basis {
        "X" => (v(c(s, 0.0), c(s, 0.0)), v(c(s, 0.0), c(-s, 0.0))),
        "Y" => (v(c(s, 0.0), c(0.0, s)), v(c(s, 0.0), c(0.0, -s))),
        _ => (v(c(1.0, 0.0), c(0.0, 0.0)), v(c(0.0, 0.0), c(1.0, 0.0))),
    }
}

/// Ten unitaries (one deterministic setting each) plus three Pauli
/// measure-and-prepare settings with two outcomes each, on lab 1.
pub fn qubit16_family() -> ProbeFamily {
    let (i, o) = lab_labels(1, 2);
    let mut elements = Vec::with_capacity(16);
    for (k, (name, u)) in qubit16_unitaries().into_iter().enumerate() {
        elements.push(ProbeElement {
            setting_id: k as u64,
            setting: SettingDescriptor::NamedUnitary { name: name.to_string() },
            outcome: 0,
            choi: rank_one_choi(&u, &i, &o).expect("2x2 map"),
        });
    }
    for (k, basis) in ["X", "Y", "Z"].into_iter().enumerate() {
        let (plus, minus) = pauli_eigenstates(basis);
        for (outcome, effect) in [plus.clone(), minus].iter().enumerate() {
            elements.push(ProbeElement {
                setting_id: 10 + k as u64,
                setting: SettingDescriptor::PauliMeasurePrepare {
                    basis: basis.to_string(),
                },
                outcome: outcome as u32,
                choi: rank_one_choi(&(&plus * effect.adjoint()), &i, &o).expect("2x2 map"),
            });
        }
    }
    ProbeFamily {
        provenance: Provenance::Qubit16,
        elements,
    }
}

/// The 24 single-qubit Clifford unitaries, one deterministic setting each.
pub fn unitary_only_single() -> ProbeFamily {
    let (i, o) = lab_labels(1, 2);
    let elements = clifford_design_qubit()
        .elements
        .iter()
        .enumerate()
        .map(|(k, u)| ProbeElement {
            setting_id: k as u64,
            setting: SettingDescriptor::NamedUnitary { name: format!("C{k}") },
            outcome: 0,
            choi: rank_one_choi(u, &i, &o).expect("2x2 map"),
        })
        .collect();
    ProbeFamily {
        provenance: Provenance::UnitaryOnly,
        elements,
    }
}

/// Single-lab measure-and-prepare circuits over all pairs of informationally
/// complete states, both outcomes each: `2d⁴` elements.
pub fn measure_prepare_single(d: usize) -> Result<ProbeFamily> {
    let states = ic_states(d);
    let mut elements = Vec::with_capacity(2 * states.len() * states.len());
    for (ia, a) in states.iter().enumerate() {
        for (ip, psi) in states.iter().enumerate() {
            let setting_id = (ia * states.len() + ip) as u64;
            let setting = SettingDescriptor::MeasurePrepare {
                effect: ia,
                preparation: ip,
            };
            elements.extend(theorem1_single_lab(a, psi, 1, setting_id, setting)?);
        }
    }
    Ok(ProbeFamily {
        provenance: Provenance::MeasurePrepare,
        elements,
    })
}

fn relabel_to_lab(op: &LabeledOperator, lab: usize) -> Result<LabeledOperator> {
    let labels = op
        .labels()
        .iter()
        .map(|l| SpaceLabel::new(lab, l.role, l.dim))
        .collect();
    op.relabel(labels)
}

/// Independent single-lab families on labs `1..=n`. Settings and outcomes
/// are numbered in mixed radix with lab 1 most significant.
pub fn product_family(per_lab: &[ProbeFamily], provenance: Provenance, cap: u128) -> Result<ProbeFamily> {
    if per_lab.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let grouped: Vec<Vec<Vec<usize>>> = per_lab.iter().map(|f| f.settings().into_values().collect()).collect();
    let requested: u128 = per_lab.iter().map(|f| f.len() as u128).product();
    if requested > cap {
        return Err(Error::OutOfBudget { requested, cap });
    }
    let n_settings: Vec<usize> = grouped.iter().map(|g| g.len()).collect();
    let total_settings: usize = n_settings.iter().product();
    let per_setting: Vec<Result<Vec<ProbeElement>>> = (0..total_settings)
        .into_par_iter()
        .map(|sid| {
            let mut rem = sid;
            let mut choice = vec![0; per_lab.len()];
            for lab in (0..per_lab.len()).rev() {
                choice[lab] = rem % n_settings[lab];
                rem /= n_settings[lab];
            }
            let members: Vec<&Vec<usize>> = choice.iter().enumerate().map(|(l, &s)| &grouped[l][s]).collect();
            let n_out: usize = members.iter().map(|m| m.len()).product();
            let setting = SettingDescriptor::Product {
                labs: members
                    .iter()
                    .enumerate()
                    .map(|(l, m)| per_lab[l].elements[m[0]].setting.clone())
                    .collect(),
            };
            let mut out = Vec::with_capacity(n_out);
            for oid in 0..n_out {
                let mut rem = oid;
                let mut pick = vec![0; per_lab.len()];
                for lab in (0..per_lab.len()).rev() {
                    pick[lab] = rem % members[lab].len();
                    rem /= members[lab].len();
                }
                let mut choi = LabeledOperator::scalar(c(1.0, 0.0));
                for (lab, &p) in pick.iter().enumerate() {
                    let e = &per_lab[lab].elements[members[lab][p]];
                    choi = choi.tensor(&relabel_to_lab(&e.choi, lab + 1)?)?;
                }
                out.push(ProbeElement {
                    setting_id: sid as u64,
                    setting: setting.clone(),
                    outcome: oid as u32,
                    choi: choi.canonical(),
                });
            }
            Ok(out)
        })
        .collect();
    let mut elements = Vec::with_capacity(requested as usize);
    for chunk in per_setting {
        elements.extend(chunk?);
    }
    Ok(ProbeFamily { provenance, elements })
}

fn single_or_product(single: ProbeFamily, n_labs: usize, cap: u128) -> Result<ProbeFamily> {
    if n_labs == 0 {
        return Err(Error::InvalidSetting("need at least one lab".into()));
    }
    if n_labs == 1 {
        return Ok(single);
    }
    let provenance = single.provenance;
    product_family(&vec![single; n_labs], provenance, cap)
}

/// Sixteen-element set on each of `n_labs` labs.
pub fn qubit16_labs(n_labs: usize, cap: u128) -> Result<ProbeFamily> {
    single_or_product(qubit16_family(), n_labs, cap)
}

/// Clifford unitaries on each of `n_labs` labs; not informationally complete.
pub fn unitary_only_family(n_labs: usize, cap: u128) -> Result<ProbeFamily> {
    single_or_product(unitary_only_single(), n_labs, cap)
}

pub fn measure_prepare_family(n_labs: usize, d: usize, cap: u128) -> Result<ProbeFamily> {
    single_or_product(measure_prepare_single(d)?, n_labs, cap)
}

// ---------------------------------------------------------------------------
// qubit-ancilla superinstruments

/// Ancilla prepared in `psi`, passed through each lab's joint unitary with
/// the phase gate `diag(1, e^{iθ_n})` after lab `n < N`, and projected on
/// `|outcome⟩` at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct AncillaProbeSetting {
    pub psi: CVector,
    pub lab_unitaries: Vec<CMatrix>,
    pub thetas: Vec<f64>,
    pub outcome: u32,
}

impl AncillaProbeSetting {
    pub fn new(lab_unitaries: Vec<CMatrix>, thetas: Vec<f64>, outcome: u32) -> Self {
        Self {
            psi: CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]),
            lab_unitaries,
            thetas,
            outcome,
        }
    }

    fn validate(&self) -> Result<usize> {
        let n = self.lab_unitaries.len();
        if n == 0 {
            return Err(Error::InvalidSetting("no labs".into()));
        }
        if self.thetas.len() != n - 1 {
            return Err(Error::InvalidSetting(format!("{n} labs need {} phases", n - 1)));
        }
        if self.outcome > 1 {
            return Err(Error::InvalidSetting(format!("ancilla outcome {}", self.outcome)));
        }
        if self.psi.len() != 2 || (self.psi.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidSetting("ancilla state must be a normalized qubit".into()));
        }
        let side = self.lab_unitaries[0].nrows();
        if !side.is_multiple_of(2) || side < 4 {
            return Err(Error::InvalidSetting("joint unitaries must be 2d x 2d".into()));
        }
        for (k, u) in self.lab_unitaries.iter().enumerate() {
            if u.shape() != (side, side) {
                return Err(Error::InvalidSetting(format!(
                    "lab {} unitary has the wrong shape",
                    k + 1
                )));
            }
            let dev = unitarity_deviation(u);
            if dev > 1e-10 {
                return Err(Error::InvalidSetting(format!(
                    "lab {} unitary deviates by {dev:e}",
                    k + 1
                )));
            }
        }
        Ok(side / 2)
    }
}

pub fn phase_gate(theta: f64) -> CMatrix {
    m2([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), C64::from_polar(1.0, theta)])
}

/// Link-product contraction `|ψ⟩⟨ψ| ⋆ [U_1'] ⋆ … ⋆ [U_N'] ⋆ |m⟩⟨m|` over the
/// ancilla wires, with `U_n' = (I ⊗ R_{θ_n}) U_n`. Result on
/// `I_1, O_1, …, I_N, O_N`.
pub fn ancilla_superinstrument(setting: &AncillaProbeSetting) -> Result<LabeledOperator> {
    let d = setting.validate()?;
    let n = setting.lab_unitaries.len();
    let mut ops = Vec::with_capacity(n + 2);
    ops.push(LabeledOperator::new(
        vec![SpaceLabel::ancilla(0, 2)],
        &setting.psi * setting.psi.adjoint(),
    )?);
    let id = CMatrix::identity(d, d);
    for (k, u) in setting.lab_unitaries.iter().enumerate() {
        let lab = k + 1;
        let u = match setting.thetas.get(k) {
            Some(&theta) => id.kronecker(&phase_gate(theta)) * u,
            None => u.clone(),
        };
        ops.push(rank_one_choi(
            &u,
            &[SpaceLabel::input(lab, d), SpaceLabel::ancilla(lab - 1, 2)],
            &[SpaceLabel::output(lab, d), SpaceLabel::ancilla(lab, 2)],
        )?);
    }
    let mut effect = CMatrix::zeros(2, 2);
    effect[(setting.outcome as usize, setting.outcome as usize)] = c(1.0, 0.0);
    ops.push(LabeledOperator::new(vec![SpaceLabel::ancilla(n, 2)], effect)?);
    Ok(link_chain(&ops)?.canonical())
}

/// `¼(T(0) − T(π) − i T(π/2) + i T(−π/2))`, the `e^{iθ}` Fourier coefficient.
pub fn phase_filter(samples: &[(f64, LabeledOperator)]) -> Result<LabeledOperator> {
    let find = |theta: f64, name: &'static str| {
        samples
            .iter()
            .find(|(t, _)| {
                let diff = (t - theta).rem_euclid(2.0 * PI);
                diff < 1e-9 || 2.0 * PI - diff < 1e-9
            })
            .map(|(_, op)| op)
            .ok_or(Error::MissingSample(name))
    };
    let t0 = find(0.0, "0")?;
    let tpi = find(PI, "pi")?;
    let tp = find(FRAC_PI_2, "pi/2")?;
    let tm = find(-FRAC_PI_2, "-pi/2")?;
    let out = t0.sub(tpi)?.sub(&tp.scale(c(0.0, 1.0)))?.add(&tm.scale(c(0.0, 1.0)))?;
    Ok(out.scale(c(0.25, 0.0)))
}

/// Apply `phase_filter` successively over `links` phases of a function of
/// the phase vector.
pub fn nested_phase_filter<F>(links: usize, f: &F) -> Result<LabeledOperator>
where
    F: Fn(&[f64]) -> Result<LabeledOperator>,
{
    fn go<F: Fn(&[f64]) -> Result<LabeledOperator>>(
        prefix: &mut Vec<f64>,
        links: usize,
        f: &F,
    ) -> Result<LabeledOperator> {
        if prefix.len() == links {
            return f(prefix);
        }
        let mut samples = Vec::with_capacity(4);
        for theta in THETAS {
            prefix.push(theta);
            samples.push((theta, go(prefix, links, f)?));
            prefix.pop();
        }
        phase_filter(&samples)
    }
    go(&mut Vec::with_capacity(links), links, f)
}

/// The component a full set of nested filters isolates: ancilla path
/// `(1,…,1)` in the ket and `(0,…,0)` in the bra, i.e.
/// `⊗_n |K⁽ⁿ⁾_{α_n α_{n−1}}⟩⟨K⁽ⁿ⁾_{0 0}|` with the first lab's input branch 0
/// and the last lab's output branch `outcome`.
pub fn isolated_term(lab_unitaries: &[CMatrix], outcome: u32) -> Result<LabeledOperator> {
    let n = lab_unitaries.len();
    let d = lab_unitaries.first().ok_or(Error::EmptyFamily)?.nrows() / 2;
    let m = outcome as usize;
    let mut out = LabeledOperator::scalar(c(1.0, 0.0));
    for (k, u) in lab_unitaries.iter().enumerate() {
        let in_branch = usize::from(k > 0);
        let out_branch = if k + 1 == n { m } else { 1 };
        let bra_out = if k + 1 == n { m } else { 0 };
        let ket = extract_blocks(u, (out_branch, in_branch))?;
        let bra = extract_blocks(u, (bra_out, 0))?;
        let (i, o) = lab_labels(k + 1, d);
        out = out.tensor(&outer_choi(&ket, &bra, &i, &o)?)?;
    }
    Ok(out.canonical())
}

/// Joint unitaries of one Weyl-recipe setting: `K00 = σ_ν/√2` at each lab,
/// with `W = σ_μ` for labs before the last and `V = σ_μ` at the last lab.
pub fn weyl_lab_unitaries(basis: &WeylBasis, labs: &[(usize, usize)]) -> Result<Vec<CMatrix>> {
    if basis.normalization != Normalization::WeylUnitary {
        return Err(Error::InvalidSetting(
            "Weyl recipe needs the unitary normalization".into(),
        ));
    }
    let d = basis.d;
    let id = CMatrix::identity(d, d);
    let s = c(1.0 / 2f64.sqrt(), 0.0);
    labs.iter()
        .enumerate()
        .map(|(k, &(mu, nu))| {
            if mu >= basis.len() || nu >= basis.len() {
                return Err(Error::IndexOutOfRange(format!("Weyl index ({mu}, {nu})")));
            }
            let last = k + 1 == labs.len() && labs.len() > 1;
            let (v, w) = if last {
                (basis.elements[mu].clone(), id.clone())
            } else {
                (id.clone(), basis.elements[mu].clone())
            };
            block_unitary(
                &BlockUnitarySpec {
                    k00: &basis.elements[nu] * s,
                    v,
                    w,
                },
                1e-10,
            )
        })
        .collect()
}

/// Knobs for the Weyl-recipe family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Options {
    pub cap: u128,
    /// Keep only this many Weyl-index tuples (each with its full phase grid),
    /// drawn without replacement from a seeded stream.
    pub subsample: Option<(usize, u64)>,
}

impl Default for Theorem2Options {
    fn default() -> Self {
        Self {
            cap: DEFAULT_FAMILY_CAP,
            subsample: None,
        }
    }
}

/// `d^{4N} · 4^{N−1} · 2`.
pub fn theorem2_size(n_labs: usize, d: usize) -> u128 {
    (d as u128).pow(4 * n_labs as u32) * 4u128.pow(n_labs.saturating_sub(1) as u32) * 2
}

/// Weyl-index tuples the family enumerates, in order; each tuple is one
/// `(μ, ν)` pair per lab.
pub fn theorem2_tuples(n_labs: usize, d: usize, subsample: Option<(usize, u64)>) -> Vec<Vec<(usize, usize)>> {
    let per_lab = d.pow(4);
    let total = per_lab.pow(n_labs as u32);
    let decode = |mut t: usize| {
        let mut labs = vec![(0, 0); n_labs];
        for k in (0..n_labs).rev() {
            let pair = t % per_lab;
            t /= per_lab;
            labs[k] = (pair / (d * d), pair % (d * d));
        }
        labs
    };
    match subsample {
        Some((count, seed)) if count < total => {
            let mut r = rng_for(seed, &format!("theorem2/subsample/{n_labs}/{d}"));
            let mut picked = sample(&mut r, total, count).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(decode).collect()
        }
        _ => (0..total).map(decode).collect(),
    }
}

fn theta_grid(links: usize) -> Vec<Vec<f64>> {
    let count = 4usize.pow(links as u32);
    (0..count)
        .map(|mut t| {
            let mut thetas = vec![0.0; links];
            for k in (0..links).rev() {
                thetas[k] = THETAS[t % 4];
                t /= 4;
            }
            thetas
        })
        .collect()
}

/// All elements of one Weyl tuple: every phase combination, both outcomes.
/// Setting ids are `tuple_index · 4^{N−1} + phase_index`.
pub fn theorem2_tuple_elements(
    basis: &WeylBasis,
    labs: &[(usize, usize)],
    tuple_index: u64,
) -> Result<Vec<ProbeElement>> {
    let unitaries = weyl_lab_unitaries(basis, labs)?;
    let grid = theta_grid(labs.len() - 1);
    let mut out = Vec::with_capacity(grid.len() * 2);
    for (p, thetas) in grid.iter().enumerate() {
        let setting_id = tuple_index * grid.len() as u64 + p as u64;
        let setting = SettingDescriptor::Weyl {
            labs: labs.to_vec(),
            thetas: thetas.clone(),
        };
        for m in 0..2 {
            let s = AncillaProbeSetting::new(unitaries.clone(), thetas.clone(), m);
            out.push(ProbeElement {
                setting_id,
                setting: setting.clone(),
                outcome: m,
                choi: ancilla_superinstrument(&s)?,
            });
        }
    }
    Ok(out)
}

/// Weyl-recipe qubit-ancilla family on `n_labs` labs of dimension `d`.
/// A single lab carries no ancilla link to filter on, so `n_labs = 1` uses
/// the measure-and-prepare circuits instead (`2d⁴` elements).
pub fn theorem2_family(n_labs: usize, d: usize, opts: &Theorem2Options) -> Result<ProbeFamily> {
    if n_labs == 0 || d < 2 {
        return Err(Error::InvalidSetting("need n_labs >= 1 and d >= 2".into()));
    }
    if n_labs == 1 {
        let requested = 2 * (d as u128).pow(4);
        if requested > opts.cap {
            return Err(Error::OutOfBudget {
                requested,
                cap: opts.cap,
            });
        }
        let mut f = measure_prepare_single(d)?;
        f.provenance = Provenance::Theorem2Weyl;
        return Ok(f);
    }
    let tuples = theorem2_tuples(n_labs, d, opts.subsample);
    let requested = tuples.len() as u128 * 4u128.pow(n_labs as u32 - 1) * 2;
    if requested > opts.cap {
        return Err(Error::OutOfBudget {
            requested,
            cap: opts.cap,
        });
    }
    let basis = weyl_basis(d, Normalization::WeylUnitary);
    let per_lab = d.pow(4);
    let chunks: Vec<Result<Vec<ProbeElement>>> = tuples
        .par_iter()
        .map(|labs| {
            let index = labs
                .iter()
                .fold(0u64, |acc, &(mu, nu)| acc * per_lab as u64 + (mu * d * d + nu) as u64);
            theorem2_tuple_elements(&basis, labs, index)
        })
        .collect();
    let mut elements = Vec::with_capacity(requested as usize);
    for c in chunks {
        elements.extend(c?);
    }
    Ok(ProbeFamily {
        provenance: Provenance::Theorem2Weyl,
        elements,
    })
}

/// Largest deviation between the nested phase filter of a Weyl tuple and
/// the isolated-term oracle, over both outcomes.
pub fn filter_deviation(basis: &WeylBasis, labs: &[(usize, usize)]) -> Result<f64> {
    let unitaries = weyl_lab_unitaries(basis, labs)?;
    let links = labs.len() - 1;
    let mut worst = 0.0f64;
    for m in 0..2 {
        let filtered = nested_phase_filter(links, &|thetas: &[f64]| {
            ancilla_superinstrument(&AncillaProbeSetting::new(unitaries.clone(), thetas.to_vec(), m))
        })?;
        worst = worst.max(filtered.max_abs_diff(&isolated_term(&unitaries, m)?)?);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// checks

/// Rank of `t` reshaped across `left_labs | rest` (labs given by index).
pub fn operator_schmidt_rank(t: &LabeledOperator, left_labs: &[usize], tol: f64) -> Result<usize> {
    let left: Vec<SpaceLabel> = t
        .labels()
        .iter()
        .filter(|l| left_labs.contains(&l.lab))
        .copied()
        .collect();
    if left.is_empty() || left.len() == t.labels().len() {
        return Err(Error::BadCut(format!("labs {left_labs:?} leave one side empty")));
    }
    for lab in left_labs {
        if !t.labels().iter().any(|l| l.lab == *lab) {
            return Err(Error::BadCut(format!("lab {lab} is not carried by the operator")));
        }
    }
    Ok(rank(&t.realign(&left)?, tol))
}

/// All cuts `{1..k} | {k+1..N}` of the time-ordered labs.
pub fn contiguous_cuts(n_labs: usize) -> Vec<Vec<usize>> {
    (1..n_labs).map(|k| (1..=k).collect()).collect()
}

/// All nontrivial bipartitions, each listed once (the side without the
/// last lab).
pub fn all_cuts(n_labs: usize) -> Vec<Vec<usize>> {
    (1..(1usize << (n_labs - 1)))
        .map(|mask| (1..=n_labs).filter(|l| mask & (1 << (l - 1)) != 0).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub elements: usize,
    pub settings: usize,
    pub min_eigenvalue: f64,
    pub max_comb_violation: f64,
    pub passed: bool,
}

/// PSD check on every element and Tester-direction comb check on every
/// per-setting outcome sum.
pub fn check_family(family: &ProbeFamily, tol: f64) -> Result<FamilyCheck> {
    let labels = family.labels().ok_or(Error::EmptyFamily)?.to_vec();
    let d = labels[0].dim;
    let labs: Vec<usize> = {
        let mut v: Vec<usize> = labels.iter().map(|l| l.lab).collect();
        v.dedup();
        v
    };
    let ordering: Vec<_> = tester_ordering(labs.len(), d)
        .into_iter()
        .zip(&labs)
        .map(|(mut s, &lab)| {
            s.received = s.received.map(|l| SpaceLabel::input(lab, l.dim));
            s.emitted = s.emitted.map(|l| SpaceLabel::output(lab, l.dim));
            s
        })
        .collect();
    let min_eig = family
        .elements
        .par_iter()
        .map(|e| e.choi.min_eigenvalue())
        .reduce(|| f64::INFINITY, f64::min);
    let settings = family.settings();
    let groups: Vec<&Vec<usize>> = settings.values().collect();
    let violations = groups
        .par_iter()
        .map(|idx| {
            let mut sum = family.elements[idx[0]].choi.canonical();
            for &i in &idx[1..] {
                sum = sum.add(&family.elements[i].choi)?;
            }
            let rep = validate_comb(&sum, &ordering, CombDirection::Tester, tol)?;
            Ok(rep.max_violation())
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_comb = violations.into_iter().fold(0.0, f64::max);
    Ok(FamilyCheck {
        elements: family.len(),
        settings: settings.len(),
        min_eigenvalue: min_eig,
        max_comb_violation: max_comb,
        passed: min_eig >= -tol && max_comb <= tol,
    })
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct ElementLine {
    provenance: Provenance,
    setting_id: u64,
    setting: SettingDescriptor,
    outcome: u32,
    #[serde(flatten)]
    op: OperatorJson,
}

/// One JSON object per line: provenance, setting id and descriptor,
/// outcome, labels and row-major entries.
pub fn write_jsonl<W: Write>(family: &ProbeFamily, mut out: W) -> Result<()> {
    for e in &family.elements {
        let line = ElementLine {
            provenance: family.provenance,
            setting_id: e.setting_id,
            setting: e.setting.clone(),
            outcome: e.outcome,
            op: OperatorJson::from(&e.choi),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_jsonl`]; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<ProbeFamily> {
    let mut provenance = None;
    let mut elements = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        let parsed: ElementLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match provenance {
            None => provenance = Some(parsed.provenance),
            Some(p) if p != parsed.provenance => return Err(parse_err("provenance differs from earlier lines".into())),
            _ => {}
        }
        let choi = LabeledOperator::try_from(parsed.op).map_err(|e| parse_err(e.to_string()))?;
        elements.push(ProbeElement {
            setting_id: parsed.setting_id,
            setting: parsed.setting,
            outcome: parsed.outcome,
            choi,
        });
    }
    let provenance = provenance.ok_or(Error::EmptyFamily)?;
    ProbeFamily::new(provenance, elements)
}

/// Circuit description of one ancilla-mediated setting; gates are left as
/// matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitManifest {
    pub setting_id: u64,
    pub ancilla_prep: String,
    #[serde(with = "matrix_list")]
    pub labs: Vec<CMatrix>,
    pub phase_gates: Vec<f64>,
    pub measure: String,
}

pub fn circuit_manifest(setting_id: u64, lab_unitaries: Vec<CMatrix>, thetas: Vec<f64>) -> CircuitManifest {
    CircuitManifest {
        setting_id,
        ancilla_prep: "|0>".into(),
        labs: lab_unitaries,
        phase_gates: thetas,
        measure: "Z on ancilla".into(),
    }
}

/// Manifests for every setting of a Weyl-recipe family (`n_labs ≥ 2`) or of
/// the single-lab measure-and-prepare circuits (`n_labs = 1`).
pub fn theorem2_manifests(n_labs: usize, d: usize, opts: &Theorem2Options) -> Result<Vec<CircuitManifest>> {
    if n_labs == 1 {
        let states = ic_states(d);
        let mut out = Vec::new();
        for (ia, a) in states.iter().enumerate() {
            for (ip, psi) in states.iter().enumerate() {
                let id = (ia * states.len() + ip) as u64;
                out.push(circuit_manifest(id, vec![theorem1_unitary(a, psi)?], vec![]));
            }
        }
        return Ok(out);
    }
    let tuples = theorem2_tuples(n_labs, d, opts.subsample);
    let links = n_labs - 1;
    let requested = tuples.len() as u128 * 4u128.pow(links as u32);
    if requested > opts.cap {
        return Err(Error::OutOfBudget {
            requested,
            cap: opts.cap,
        });
    }
    let basis = weyl_basis(d, Normalization::WeylUnitary);
    let per_lab = (d as u64).pow(4);
    let grid = theta_grid(links);
    let mut out = Vec::with_capacity(requested as usize);
    for labs in &tuples {
        let index = labs
            .iter()
            .fold(0u64, |acc, &(mu, nu)| acc * per_lab + (mu * d * d + nu) as u64);
        let unitaries = weyl_lab_unitaries(&basis, labs)?;
        for (p, thetas) in grid.iter().enumerate() {
            out.push(circuit_manifest(
                index * grid.len() as u64 + p as u64,
                unitaries.clone(),
                thetas.clone(),
            ));
        }
    }
    Ok(out)
}
