//! Ground-truth process matrices from system-environment dilations, the
//! generalized Born rule, and synthetic experiment data.
//!
//! A process on `n` labs is the chain
//! `ρ_E ⋆ [U_0] ⋆ [U_1] ⋆ … ⋆ [U_n] ⋆ I_E`, where step `t` carries the system
//! from lab `t`'s output (`O_t`) to lab `t+1`'s input (`I_{t+1}`). Lab 0 is
//! the preparation wire and lab `n+1` the final measurement wire; the
//! interior process contracts them with a fixed initial state and a trace.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{weyl_basis, Normalization};
use crate::choi::{
    choi_of_kraus, choi_of_unitary, link_product, process_ordering, validate_comb, CombDirection, CombReport,
};
use crate::error::{Error, Result};
use crate::probe::{ProbeElement, ProbeFamily};
use crate::random::{haar_unitary, rng_for, setting_rng};
use crate::tensor::linalg::{max_abs, min_eigenvalue};
use crate::tensor::{matrix_list, matrix_rows, LabeledOperator, SpaceLabel, DEFAULT_TOL};
use crate::{CMatrix, C64};

/// Probabilities in `[-NEGATIVE_TOL, 0)` are clamped to zero.
pub const NEGATIVE_TOL: f64 = 1e-8;

/// Per-setting normalization tolerance for sampling.
pub const SETTING_NORM_TOL: f64 = 1e-8;

/// One step of the dilation, acting on `system ⊗ environment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Step {
    Unitary {
        #[serde(with = "matrix_rows")]
        u: CMatrix,
    },
    Channel {
        #[serde(with = "matrix_list")]
        kraus: Vec<CMatrix>,
    },
}

impl Step {
    fn kraus(&self) -> Vec<CMatrix> {
        match self {
            Step::Unitary { u } => vec![u.clone()],
            Step::Channel { kraus } => kraus.clone(),
        }
    }

    fn dim(&self) -> Option<(usize, usize)> {
        match self {
            Step::Unitary { u } => Some(u.shape()),
            Step::Channel { kraus } => kraus.first().map(|k| k.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub n_labs: usize,
    pub d_sys: usize,
    pub d_env: usize,
    #[serde(with = "matrix_rows")]
    pub env_state: CMatrix,
    /// `n_labs + 1` steps; step `t` maps `O_t ⊗ E_t` to `I_{t+1} ⊗ E_{t+1}`.
    pub steps: Vec<Step>,
    /// System state fed into lab 0's output wire for the interior process.
    #[serde(with = "matrix_rows")]
    pub initial_state: CMatrix,
}

fn ket0_projector(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(0, 0)] = C64::new(1.0, 0.0);
    m
}

fn check_state(rho: &CMatrix, d: usize, what: &str) -> Result<()> {
    if rho.shape() != (d, d) {
        return Err(Error::InvalidSpec(format!("{what} must be {d}x{d}")));
    }
    if max_abs(&(rho - rho.adjoint())) > 1e-10 {
        return Err(Error::InvalidSpec(format!("{what} is not Hermitian")));
    }
    let min = min_eigenvalue(rho);
    if min < -1e-10 {
        return Err(Error::InvalidSpec(format!("{what} has eigenvalue {min:e}")));
    }
    if (rho.trace() - C64::new(1.0, 0.0)).norm() > 1e-10 {
        return Err(Error::InvalidSpec(format!("{what} does not have unit trace")));
    }
    Ok(())
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_labs == 0 {
            return Err(Error::InvalidSpec("n_labs must be at least 1".into()));
        }
        if self.d_sys < 2 || self.d_env == 0 {
            return Err(Error::InvalidSpec("need d_sys >= 2 and d_env >= 1".into()));
        }
        check_state(&self.env_state, self.d_env, "env_state")?;
        check_state(&self.initial_state, self.d_sys, "initial_state")?;
        if self.steps.len() != self.n_labs + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} steps, got {}",
                self.n_labs + 1,
                self.steps.len()
            )));
        }
        let joint = self.d_sys * self.d_env;
        for (t, step) in self.steps.iter().enumerate() {
            if step.dim() != Some((joint, joint)) {
                return Err(Error::InvalidSpec(format!("step {t} must act on dimension {joint}")));
            }
        }
        Ok(())
    }

    fn step_labels(&self, t: usize) -> (Vec<SpaceLabel>, Vec<SpaceLabel>) {
        let mut input = vec![SpaceLabel::output(t, self.d_sys)];
        let mut output = vec![SpaceLabel::input(t + 1, self.d_sys)];
        if self.d_env > 1 {
            input.push(SpaceLabel::env(t, self.d_env));
            output.push(SpaceLabel::env(t + 1, self.d_env));
        }
        (input, output)
    }

    fn step_choi(&self, t: usize) -> Result<LabeledOperator> {
        let (input, output) = self.step_labels(t);
        let wrap = |e: Error| Error::InvalidSpec(format!("step {t}: {e}"));
        let choi = match &self.steps[t] {
            Step::Unitary { u } => choi_of_unitary(u, &input, &output, 1e-10).map_err(wrap)?,
            Step::Channel { .. } => {
                let c = choi_of_kraus(&self.steps[t].kraus(), &input, &output, 1e-10).map_err(wrap)?;
                if c.kind != crate::choi::ChoiKind::Cptp {
                    return Err(Error::InvalidSpec(format!("step {t} is not trace preserving")));
                }
                c
            }
        };
        Ok(choi.op)
    }
}

/// Named fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Preset {
    IdentityWire,
    MarkovDepolarizing { p: f64 },
    ClassicalMemory,
    HaarEnv { d_env: usize },
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::IdentityWire => write!(f, "IdentityWire"),
            Preset::MarkovDepolarizing { p } => write!(f, "MarkovDepolarizing({p})"),
            Preset::ClassicalMemory => write!(f, "ClassicalMemory"),
            Preset::HaarEnv { d_env } => write!(f, "HaarEnv({d_env})"),
        }
    }
}

/// Accepts `Name` or `Name(param)`; `HaarEnv` defaults to a qubit
/// environment and `MarkovDepolarizing` to `p = 0.1`.
impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let bad = || Error::UnknownPreset(s.to_string());
        match (name, arg) {
            ("IdentityWire", None) => Ok(Preset::IdentityWire),
            ("ClassicalMemory", None) => Ok(Preset::ClassicalMemory),
            ("MarkovDepolarizing", None) => Ok(Preset::MarkovDepolarizing { p: 0.1 }),
            ("MarkovDepolarizing", Some(a)) => Ok(Preset::MarkovDepolarizing {
                p: a.trim().parse().map_err(|_| bad())?,
            }),
            ("HaarEnv", None) => Ok(Preset::HaarEnv { d_env: 2 }),
            ("HaarEnv", Some(a)) => Ok(Preset::HaarEnv {
                d_env: a.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

fn depolarizing_kraus(d: usize, p: f64) -> Vec<CMatrix> {
    let basis = weyl_basis(d, Normalization::WeylUnitary);
    let d2 = (d * d) as f64;
    let mut out = Vec::with_capacity(d * d);
    for (mu, s) in basis.elements.iter().enumerate() {
        let weight = if mu == 0 { 1.0 - p + p / d2 } else { p / d2 };
        if weight > 0.0 {
            out.push(s * C64::new(weight.sqrt(), 0.0));
        }
    }
    out
}

/// Deterministic spec for a named fixture.
pub fn preset_process(preset: Preset, n_labs: usize, d_sys: usize, seed: u64) -> Result<ProcessSpec> {
    if n_labs == 0 || d_sys < 2 {
        return Err(Error::InvalidSpec("need n_labs >= 1 and d_sys >= 2".into()));
    }
    let n_steps = n_labs + 1;
    let initial_state = ket0_projector(d_sys);
    let spec = match preset {
        Preset::IdentityWire => ProcessSpec {
            n_labs,
            d_sys,
            d_env: 1,
            env_state: CMatrix::identity(1, 1),
            steps: vec![
                Step::Unitary {
                    u: CMatrix::identity(d_sys, d_sys)
                };
                n_steps
            ],
            initial_state,
        },
        Preset::MarkovDepolarizing { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("depolarizing strength {p} outside [0, 1]")));
            }
            ProcessSpec {
                n_labs,
                d_sys,
                d_env: 1,
                env_state: CMatrix::identity(1, 1),
                steps: vec![
                    Step::Channel {
                        kraus: depolarizing_kraus(d_sys, p)
                    };
                    n_steps
                ],
                initial_state,
            }
        }
        Preset::ClassicalMemory => {
            let mut r = rng_for(seed, "preset/classical-memory");
            let p0 = ket0_projector(2);
            let p1 = CMatrix::identity(2, 2) - &p0;
            let steps = (0..n_steps)
                .map(|_| {
                    let a = haar_unitary(&mut r, d_sys);
                    let b = haar_unitary(&mut r, d_sys);
                    Step::Unitary {
                        u: a.kronecker(&p0) + b.kronecker(&p1),
                    }
                })
                .collect();
            ProcessSpec {
                n_labs,
                d_sys,
                d_env: 2,
                env_state: CMatrix::identity(2, 2) * C64::new(0.5, 0.0),
                steps,
                initial_state,
            }
        }
        Preset::HaarEnv { d_env } => {
            if d_env == 0 {
                return Err(Error::InvalidSpec("d_env must be at least 1".into()));
            }
            let mut r = rng_for(seed, &format!("preset/haar-env/{d_env}"));
            let steps = (0..n_steps)
                .map(|_| Step::Unitary {
                    u: haar_unitary(&mut r, d_sys * d_env),
                })
                .collect();
            ProcessSpec {
                n_labs,
                d_sys,
                d_env,
                env_state: ket0_projector(d_env),
                steps,
                initial_state,
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessMatrix {
    pub op: LabeledOperator,
    pub n_labs: usize,
    pub d: usize,
    /// Whether the preparation (lab 0) and final (lab `n+1`) wires are open.
    pub boundary: bool,
    pub comb_report: CombReport,
}

impl ProcessMatrix {
    fn from_op(op: LabeledOperator, n_labs: usize, d: usize, boundary: bool) -> Result<Self> {
        let op = op.canonical();
        let comb_report = validate_comb(
            &op,
            &process_ordering(n_labs, d, boundary),
            CombDirection::Process,
            DEFAULT_TOL,
        )?;
        Ok(Self {
            op,
            n_labs,
            d,
            boundary,
            comb_report,
        })
    }

    /// Close the boundary wires: feed `initial` into `O_0` and trace `I_{n+1}`.
    pub fn interior(&self, initial: &CMatrix) -> Result<ProcessMatrix> {
        if !self.boundary {
            return Ok(self.clone());
        }
        let o0 = SpaceLabel::output(0, self.d);
        let last = SpaceLabel::input(self.n_labs + 1, self.d);
        let rho = LabeledOperator::new(vec![o0], initial.clone())?;
        let closed = link_product(&rho, &self.op)?;
        let closed = link_product(&closed, &LabeledOperator::identity(vec![last])?)?;
        ProcessMatrix::from_op(closed, self.n_labs, self.d, false)
    }

    pub fn labels(&self) -> &[SpaceLabel] {
        self.op.labels()
    }
}

/// Full process matrix on `O_0, I_1, O_1, …, I_n, O_n, I_{n+1}`.
pub fn build_process(spec: &ProcessSpec) -> Result<ProcessMatrix> {
    spec.validate()?;
    let mut acc = if spec.d_env > 1 {
        LabeledOperator::new(vec![SpaceLabel::env(0, spec.d_env)], spec.env_state.clone())?
    } else {
        LabeledOperator::scalar(C64::new(1.0, 0.0))
    };
    for t in 0..spec.steps.len() {
        acc = link_product(&acc, &spec.step_choi(t)?)?;
    }
    if spec.d_env > 1 {
        acc = acc.partial_trace(&[SpaceLabel::env(spec.n_labs + 1, spec.d_env)])?;
    }
    ProcessMatrix::from_op(acc, spec.n_labs, spec.d_sys, true)
}

/// Process matrix on the labs `1..=n` only, the tomographic target.
pub fn build_interior(spec: &ProcessSpec) -> Result<ProcessMatrix> {
    build_process(spec)?.interior(&spec.initial_state)
}

/// `Tr[Wᵀ T] = Σ_ij W_ij T_ij`, with `T` aligned to `W`'s label order.
pub fn born_value(w: &LabeledOperator, t: &LabeledOperator) -> Result<C64> {
    let t = w.aligned(t)?;
    Ok(w.matrix().iter().zip(t.matrix().iter()).map(|(a, b)| a * b).sum())
}

/// Generalized Born rule; values in `[-NEGATIVE_TOL, 0)` are clamped to 0.
pub fn born_probability(w: &ProcessMatrix, probe: &ProbeElement) -> Result<f64> {
    born_operator_probability(&w.op, &probe.choi)
}

pub fn born_operator_probability(w: &LabeledOperator, t: &LabeledOperator) -> Result<f64> {
    let p = born_value(w, t)?.re;
    if p < -NEGATIVE_TOL {
        return Err(Error::NegativeProbability(p));
    }
    Ok(p.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub setting_id: u64,
    pub outcome: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    /// Shots spent on this setting; 0 in exact mode.
    pub shots_total: u64,
}

impl ExperimentRecord {
    /// Exact probability, or the relative frequency within the setting.
    pub fn estimate(&self) -> Option<f64> {
        match (self.probability, self.count) {
            (Some(p), _) => Some(p),
            (None, Some(c)) if self.shots_total > 0 => Some(c as f64 / self.shots_total as f64),
            _ => None,
        }
    }
}

/// Multinomial draw by sequential binomials.
fn multinomial(r: &mut rand_chacha::ChaCha8Rng, shots: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = shots;
    let mut mass = 1.0f64;
    let mut out = Vec::with_capacity(probs.len());
    for (k, &p) in probs.iter().enumerate() {
        if k + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = if left == 0 || q == 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("q in [0, 1]").sample(r)
        };
        out.push(c);
        left -= c;
        mass -= p;
    }
    out
}

/// Exact probabilities (`shots == 0`) or multinomial counts per setting.
/// Each setting draws from its own stream `(seed, setting_id)`.
pub fn sample_shots(w: &ProcessMatrix, family: &ProbeFamily, shots: u64, seed: u64) -> Result<Vec<ExperimentRecord>> {
    let settings = family.settings();
    let per_setting: Vec<Result<Vec<ExperimentRecord>>> = settings
        .par_iter()
        .map(|(setting_id, idx)| {
            let probs = idx
                .iter()
                .map(|&i| born_probability(w, &family.elements[i]))
                .collect::<Result<Vec<f64>>>()?;
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > SETTING_NORM_TOL {
                return Err(Error::NotNormalizedSetting {
                    setting_id: *setting_id,
                    total,
                });
            }
            let outcomes = idx.iter().map(|&i| family.elements[i].outcome);
            if shots == 0 {
                return Ok(outcomes
                    .zip(probs)
                    .map(|(outcome, p)| ExperimentRecord {
                        setting_id: *setting_id,
                        outcome,
                        probability: Some(p),
                        count: None,
                        shots_total: 0,
                    })
                    .collect());
            }
            let mut r = setting_rng(seed, *setting_id);
            let counts = multinomial(&mut r, shots, &probs);
            Ok(outcomes
                .zip(counts)
                .map(|(outcome, c)| ExperimentRecord {
                    setting_id: *setting_id,
                    outcome,
                    probability: None,
                    count: Some(c),
                    shots_total: shots,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(family.elements.len());
    for chunk in per_setting {
        out.extend(chunk?);
    }
    Ok(out)
}

/// CSV with header `setting_id,outcome,count,shots`. In exact mode the
/// `count` column carries the probability and `shots` is 0.
pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting_id", "outcome", "count", "shots"])
        .map_err(csv_err)?;
    for r in records {
        let value = match (r.count, r.probability) {
            (Some(c), _) => c.to_string(),
            (None, Some(p)) => format!("{p:e}"),
            (None, None) => String::new(),
        };
        w.write_record([
            r.setting_id.to_string(),
            r.outcome.to_string(),
            value,
            r.shots_total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
