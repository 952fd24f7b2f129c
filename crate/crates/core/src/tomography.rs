//! Frame operator, dual frame, linear-inversion reconstruction, functional
//! estimation and reconstruction metrics.
//!
//! Probe Chois are vectorized as-is; the Born rule `p_a = Tr[Wᵀ T_a]` equals
//! `⟨T_a | vec(Wᵀ)⟩` for Hermitian `T_a`, so `Σ_a p_a |D_a⟩` reconstructs
//! `vec(Wᵀ)` and the transpose is undone once at the end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::choi::{process_ordering, unvec_matrix, validate_comb, vec_matrix, CombDirection};
use crate::error::{Error, Result};
use crate::probe::{ProbeFamily, Provenance};
use crate::process::ExperimentRecord;
use crate::tensor::linalg::{eigh, hermitian_part, operator_norm, pinv_hermitian, spectral_map, trace_norm};
use crate::tensor::{LabeledOperator, SpaceLabel};
use crate::{CMatrix, C64};

/// Relative eigenvalue threshold for the frame pseudoinverse.
pub const PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOptions {
    pub tol: f64,
    /// Regularizer `λ` in `(F + λ I)⁻¹`; zero reproduces the exact dual frame.
    pub tikhonov: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            tol: PINV_TOL,
            tikhonov: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub provenance: Provenance,
    pub labels: Vec<SpaceLabel>,
    /// `(setting_id, outcome)` of each column.
    pub keys: Vec<(u64, u32)>,
    /// Columns `vec(T_a)`.
    pub tmat: CMatrix,
    /// `F = Σ_a |T_a⟩⟨T_a|`.
    pub frame: CMatrix,
    pub rank: usize,
    pub condition_number: f64,
    pub options: FrameOptions,
    /// Columns `|D_a⟩ = F⁺ |T_a⟩`.
    pub duals: CMatrix,
}

impl FrameBundle {
    pub fn dim(&self) -> usize {
        self.frame.nrows()
    }

    pub fn is_ic(&self) -> bool {
        self.rank == self.dim()
    }

    fn side(&self) -> usize {
        self.labels.iter().map(|l| l.dim).product()
    }
}

pub fn build_frame(family: &ProbeFamily, options: FrameOptions) -> Result<FrameBundle> {
    let first = family.elements.first().ok_or(Error::EmptyFamily)?;
    let labels = first.choi.labels().to_vec();
    let side = first.choi.side();
    let dim = side * side;
    let mut tmat = CMatrix::zeros(dim, family.len());
    let mut keys = Vec::with_capacity(family.len());
    for (k, e) in family.elements.iter().enumerate() {
        let t = first.choi.aligned(&e.choi)?;
        tmat.set_column(k, &vec_matrix(t.matrix()));
        keys.push((e.setting_id, e.outcome));
    }
    let frame = &tmat * tmat.adjoint();
    let (rank, inv, values) = if options.tikhonov > 0.0 {
        let reg = &frame + CMatrix::identity(dim, dim) * C64::new(options.tikhonov, 0.0);
        let (_, inv, _) = pinv_hermitian(&reg, options.tol);
        let (rank, _, values) = pinv_hermitian(&frame, options.tol);
        (rank, inv, values)
    } else {
        pinv_hermitian(&frame, options.tol)
    };
    let top = values.iter().copied().fold(0.0, f64::max);
    let retained: Vec<f64> = values.iter().copied().filter(|v| *v > options.tol * top).collect();
    let low = retained.iter().copied().fold(f64::INFINITY, f64::min);
    let condition_number = if retained.is_empty() { f64::INFINITY } else { top / low };
    let duals = &inv * &tmat;
    Ok(FrameBundle {
        provenance: family.provenance,
        labels,
        keys,
        tmat,
        frame,
        rank,
        condition_number,
        options,
        duals,
    })
}

/// `‖Σ_a |D_a⟩⟨T_a| − I‖_op`.
pub fn dual_identity_check(bundle: &FrameBundle) -> Result<f64> {
    if !bundle.is_ic() {
        return Err(Error::NotIc {
            rank: bundle.rank,
            dim: bundle.dim(),
        });
    }
    let n = bundle.dim();
    let resolved = &bundle.duals * bundle.tmat.adjoint();
    Ok(operator_norm(&(resolved - CMatrix::identity(n, n))))
}

/// Per-element data in column order: exact probabilities, or per-setting
/// relative frequencies `count / shots_total`.
pub fn data_vector(bundle: &FrameBundle, data: &[ExperimentRecord]) -> Result<Vec<f64>> {
    let map: BTreeMap<(u64, u32), f64> = data
        .iter()
        .filter_map(|r| r.estimate().map(|p| ((r.setting_id, r.outcome), p)))
        .collect();
    bundle
        .keys
        .iter()
        .map(|&(setting_id, outcome)| {
            map.get(&(setting_id, outcome))
                .copied()
                .ok_or(Error::MissingData { setting_id, outcome })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frobenius_error: f64,
    pub trace_distance: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max_a |p̂_a − Tr[W_estᵀ T_a]|`; zero for exact data on an IC family.
    pub data_misfit: f64,
    /// `‖Σ_a |D_a⟩⟨T_a| − I‖_op`, absent for non-IC families.
    pub dual_identity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub w_est: LabeledOperator,
    pub provenance: Provenance,
    pub frame_rank: usize,
    pub frame_dim: usize,
    pub condition_number: f64,
    pub residuals: Residuals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    /// Largest comb-recursion deviation of the estimate (Process direction).
    pub comb_violation: f64,
    /// `max(0, −λ_min(W_est))`.
    pub psd_violation: f64,
    /// Set when the estimate was post-processed (e.g. projected onto PSD).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_processing: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Clamp negative eigenvalues and restore the trace, after inversion.
    pub psd_projection: bool,
}

fn labs_and_dim(labels: &[SpaceLabel]) -> (usize, usize) {
    let mut labs: Vec<usize> = labels.iter().map(|l| l.lab).collect();
    labs.dedup();
    (labs.len(), labels.first().map_or(0, |l| l.dim))
}

/// `W_est = (unvec Σ_a p̂_a D_a)ᵀ`, Hermitized.
pub fn linear_inversion(
    bundle: &FrameBundle,
    data: &[ExperimentRecord],
    options: InversionOptions,
) -> Result<ReconstructionReport> {
    let p = data_vector(bundle, data)?;
    let pv = nalgebra::DVector::from_iterator(p.len(), p.iter().map(|&x| C64::new(x, 0.0)));
    let v = &bundle.duals * &pv;
    let wt = unvec_matrix(&v, bundle.side());
    let w = hermitian_part(&wt.transpose());
    let mut w_est = LabeledOperator::new(bundle.labels.clone(), w)?.canonical();

    let mut post_processing = None;
    if options.psd_projection {
        let (values, vectors) = eigh(w_est.matrix());
        let trace: f64 = values.iter().sum();
        let clamped: f64 = values.iter().map(|v| v.max(0.0)).sum();
        let scale = if clamped > 0.0 { trace / clamped } else { 1.0 };
        let projected = spectral_map(&values, &vectors, |v| v.max(0.0) * scale);
        w_est = LabeledOperator::new(w_est.labels().to_vec(), projected)?;
        post_processing = Some("psd eigenvalue clamp with trace restored".into());
    }

    // T columns are aligned to bundle.labels; compare in that order
    let w_aligned = LabeledOperator::new(bundle.labels.clone(), CMatrix::identity(bundle.side(), bundle.side()))?
        .aligned(&w_est)?;
    let wt_vec = vec_matrix(&w_aligned.matrix().transpose());
    let predicted = bundle.tmat.adjoint() * wt_vec;
    let data_misfit = predicted
        .iter()
        .zip(&p)
        .map(|(q, x)| (q.re - x).abs())
        .fold(0.0, f64::max);

    let (n_labs, d) = labs_and_dim(w_est.labels());
    let comb_violation = validate_comb(
        &w_est,
        &process_ordering(n_labs, d, false),
        CombDirection::Process,
        f64::INFINITY,
    )
    .map(|r| r.max_violation())
    .unwrap_or(f64::NAN);
    let psd_violation = (-w_est.min_eigenvalue()).max(0.0);
    Ok(ReconstructionReport {
        w_est,
        provenance: bundle.provenance,
        frame_rank: bundle.rank,
        frame_dim: bundle.dim(),
        condition_number: bundle.condition_number,
        residuals: Residuals {
            data_misfit,
            dual_identity: dual_identity_check(bundle).ok(),
        },
        metrics: None,
        comb_violation,
        psd_violation,
        post_processing,
    })
}

impl ReconstructionReport {
    pub fn with_truth(mut self, w_true: &LabeledOperator) -> Result<Self> {
        self.metrics = Some(reconstruction_metrics(w_true, &self.w_est)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    /// `c_a` with `O ≈ Σ_a c_a T_a`, minimal norm.
    pub coeffs: Vec<C64>,
    /// `‖Σ_a c_a T_a − O‖_F / ‖O‖_F`.
    pub residual: f64,
}

/// `Tr[Wᵀ O] = Σ_a c_a p_a` with `c_a = ⟨D_a | O⟩`.
pub fn estimate_functional(
    o: &LabeledOperator,
    bundle: &FrameBundle,
    data: &[ExperimentRecord],
    tol: f64,
) -> Result<FunctionalEstimate> {
    let reference = LabeledOperator::identity(bundle.labels.clone())?;
    let o = reference.aligned(o)?;
    let ov = vec_matrix(o.matrix());
    let coeffs = bundle.duals.adjoint() * &ov;
    let rebuilt = &bundle.tmat * &coeffs;
    let norm = ov.norm();
    let residual = if norm > 0.0 { (rebuilt - &ov).norm() / norm } else { 0.0 };
    if residual > tol {
        return Err(Error::OutsideSpan { residual });
    }
    let p = data_vector(bundle, data)?;
    let value: C64 = coeffs.iter().zip(&p).map(|(c, &x)| c * x).sum();
    Ok(FunctionalEstimate {
        value: value.re,
        coeffs: coeffs.iter().copied().collect(),
        residual,
    })
}

fn normalized_state(w: &LabeledOperator) -> CMatrix {
    let t = w.trace();
    hermitian_part(w.matrix()) / t
}

fn psd_sqrt(a: &CMatrix) -> CMatrix {
    let (values, vectors) = eigh(a);
    spectral_map(&values, &vectors, |v| v.max(0.0).sqrt())
}

/// Frobenius error of the raw operators; trace distance `½‖ρ − σ‖₁` and
/// fidelity `(Tr√(√ρ σ √ρ))²` of `W / Tr W` (negative eigenvalues of the
/// estimate are clamped inside the square roots).
pub fn reconstruction_metrics(w_true: &LabeledOperator, w_est: &LabeledOperator) -> Result<Metrics> {
    let est = w_true.aligned(w_est)?;
    let frobenius_error = (w_true.matrix() - est.matrix()).norm();
    let rho = normalized_state(w_true);
    let sigma = normalized_state(&est);
    let trace_distance = 0.5 * trace_norm(&(&rho - &sigma));
    let sr = psd_sqrt(&rho);
    let inner = hermitian_part(&(&sr * &sigma * &sr));
    let (values, _) = eigh(&inner);
    let root: f64 = values.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok(Metrics {
        frobenius_error,
        trace_distance,
        fidelity: (root * root).min(1.0),
    })
}
