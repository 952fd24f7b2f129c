use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use proctomo::basis::{
    clifford_design_qubit, design_twirl2, haar_twirl2, kpq_operator, moment_matrix, span_bound_reports, weyl_basis,
    Normalization, TwirlSource,
};
use proctomo::probe::{
    ancilla_superinstrument, check_family, contiguous_cuts, filter_deviation, measure_prepare_family,
    operator_schmidt_rank, qubit16_labs, read_jsonl, theorem2_family, theorem2_manifests, theorem2_tuples,
    unitary_only_family, weyl_lab_unitaries, write_jsonl, AncillaProbeSetting, ProbeFamily, Provenance,
    Theorem2Options, THETAS,
};
use proctomo::process::{
    build_process, preset_process, sample_shots, write_records_csv, ExperimentRecord, Preset, ProcessMatrix,
};
use proctomo::random::{derive_seed, ginibre, rng_for};
use proctomo::tomography::{
    build_frame, dual_identity_check, linear_inversion, FrameOptions, InversionOptions, ReconstructionReport,
};
use proctomo::{CMatrix, LabeledOperator, SpaceLabel, C64};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Outcome of a subcommand: artifacts were written and every check either
/// passed (`true`) or at least one failed (`false`).
pub type Status = Result<bool, CliError>;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    Ok(cfg.out.clone())
}

fn theorem2_options(cfg: &RunConfig) -> Theorem2Options {
    Theorem2Options {
        cap: cfg.family.cap as u128,
        subsample: cfg.family.subsample.map(|k| (k, derive_seed(cfg.seed, "family"))),
    }
}

pub fn make_family(cfg: &RunConfig) -> Result<ProbeFamily, CliError> {
    let cap = cfg.family.cap as u128;
    let n = cfg.n_labs;
    let family = match cfg.family.provenance {
        Provenance::Qubit16 => qubit16_labs(n, cap)?,
        Provenance::UnitaryOnly => unitary_only_family(n, cap)?,
        Provenance::MeasurePrepare => measure_prepare_family(n, cfg.d_sys, cap)?,
        Provenance::Theorem2Weyl => theorem2_family(n, cfg.d_sys, &theorem2_options(cfg))?,
        Provenance::Custom => {
            return Err(CliError::Config {
                field: "family.provenance",
                message: "Custom families cannot be generated".into(),
            })
        }
    };
    Ok(family)
}

#[derive(Serialize)]
struct SpanOutput {
    dim: usize,
    unitary: usize,
    cptp: usize,
    mp: usize,
    unitary_fraction: f64,
    entries: Vec<proctomo::basis::SpanEntry>,
    seed: u64,
}

pub fn span(cfg: &RunConfig) -> Status {
    let dir = out_dir(cfg)?;
    let seed = derive_seed(cfg.seed, "span");
    let report = span_bound_reports(cfg.d_sys, seed, cfg.tolerances.rank)?;
    let get = |name: &str| report.measured(name).unwrap_or(0);
    let out = SpanOutput {
        dim: report.dim,
        unitary: get("unitary"),
        cptp: get("cptp"),
        mp: get("mp"),
        unitary_fraction: report.unitary_fraction,
        entries: report.entries.clone(),
        seed,
    };
    write_json(&dir.join("span.json"), &out)?;
    for e in &report.entries {
        println!(
            "{:<8} measured {:>4}  formula {:>4}  {}",
            e.family,
            e.measured,
            e.formula,
            if e.matches { "ok" } else { "MISMATCH" }
        );
    }
    Ok(report.all_match())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    preset: Preset,
    target: &'static str,
    seeds: Seeds,
    family_elements: usize,
    family_settings: usize,
    process_comb_passed: bool,
}

#[derive(Serialize)]
struct Seeds {
    root: u64,
    process: u64,
    shots: u64,
    family: Option<u64>,
}

pub fn simulate(cfg: &RunConfig) -> Status {
    let dir = out_dir(cfg)?;
    let preset = cfg.preset()?;
    let process_seed = derive_seed(cfg.seed, "process");
    let shots_seed = derive_seed(cfg.seed, "shots");
    let spec = preset_process(preset, cfg.n_labs, cfg.d_sys, process_seed)?;
    let full = build_process(&spec)?;
    let w = full.interior(&spec.initial_state)?;
    let family = make_family(cfg)?;
    let records = sample_shots(&w, &family, cfg.shots, shots_seed)?;

    write_json(&dir.join("process_spec.json"), &spec)?;
    write_json(&dir.join("process_full.json"), &full)?;
    write_json(&dir.join("process.json"), &w)?;
    let path = dir.join("family.jsonl");
    let mut f = create(&path)?;
    write_jsonl(&family, &mut f)?;
    f.flush().map_err(io_err(&path))?;
    write_json(&dir.join("records.json"), &records)?;
    let path = dir.join("records.csv");
    let mut f = create(&path)?;
    write_records_csv(&records, &mut f)?;
    f.flush().map_err(io_err(&path))?;

    let passed = full.comb_report.passed() && w.comb_report.passed();
    let run = RunRecord {
        config: cfg,
        preset,
        target: "interior",
        seeds: Seeds {
            root: cfg.seed,
            process: process_seed,
            shots: shots_seed,
            family: cfg.family.subsample.map(|_| derive_seed(cfg.seed, "family")),
        },
        family_elements: family.len(),
        family_settings: family.settings().len(),
        process_comb_passed: passed,
    };
    write_json(&dir.join("run.json"), &run)?;
    println!(
        "simulated {preset} on {} lab(s), d = {}: {} probe elements in {} settings, shots = {}",
        cfg.n_labs, cfg.d_sys, run.family_elements, run.family_settings, cfg.shots
    );
    Ok(passed)
}

pub fn reconstruct(cfg: &RunConfig) -> Status {
    let dir = out_dir(cfg)?;
    let path = dir.join("family.jsonl");
    let family = read_jsonl(BufReader::new(File::open(&path).map_err(io_err(&path))?))?;
    let records: Vec<ExperimentRecord> = read_json(&dir.join("records.json"))?;
    let bundle = build_frame(
        &family,
        FrameOptions {
            tikhonov: cfg.tikhonov,
            ..FrameOptions::default()
        },
    )?;
    let mut report: ReconstructionReport = linear_inversion(
        &bundle,
        &records,
        InversionOptions {
            psd_projection: cfg.psd_projection,
        },
    )?;
    let truth_path = dir.join("process.json");
    if truth_path.exists() {
        let truth: ProcessMatrix = read_json(&truth_path)?;
        report = report.with_truth(&truth.op)?;
    }
    write_json(&dir.join("reconstruction.json"), &report)?;

    let exact = records.iter().all(|r| r.probability.is_some());
    println!(
        "frame rank {}/{}  condition {:.3e}  misfit {:.3e}",
        report.frame_rank, report.frame_dim, report.condition_number, report.residuals.data_misfit
    );
    let mut passed = true;
    if let Some(m) = &report.metrics {
        println!(
            "frobenius {:.3e}  trace distance {:.3e}  fidelity {:.6}",
            m.frobenius_error, m.trace_distance, m.fidelity
        );
        if exact && m.frobenius_error > cfg.tolerances.reconstruction {
            passed = false;
        }
    }
    Ok(passed)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            passed: value <= tol,
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    d_sys: usize,
    n_labs: usize,
    seed: u64,
    checks: Vec<Check>,
    passed: bool,
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn comb_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let presets = [
        Preset::IdentityWire,
        Preset::MarkovDepolarizing { p: 0.1 },
        Preset::ClassicalMemory,
        Preset::HaarEnv { d_env: 2 },
    ];
    for preset in presets {
        let spec = preset_process(preset, cfg.n_labs, cfg.d_sys, derive_seed(cfg.seed, "process"))?;
        let full = build_process(&spec)?;
        let w = full.interior(&spec.initial_state)?;
        let violation = full.comb_report.max_violation().max(w.comb_report.max_violation());
        checks.push(Check::at_most(format!("comb/{preset}"), violation, 1e-9));
        checks.push(Check::at_most(
            format!("psd/{preset}"),
            (-w.op.min_eigenvalue()).max(0.0),
            1e-9,
        ));
    }
    Ok(())
}

fn moment_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let d = cfg.d_sys;
    let tol = cfg.tolerances.check;
    let basis = weyl_basis(d, Normalization::HsOrthonormal);
    let n = basis.len() - 1;
    let scale = C64::new(1.0 / n as f64, 0.0);
    let m = moment_matrix(&basis, TwirlSource::Haar)?;
    checks.push(Check::at_most(
        "moment/haar",
        max_abs(&(m - CMatrix::identity(n * n, n * n) * scale)),
        tol,
    ));
    let mut worst = 0.0f64;
    for p in 1..=n {
        for q in 1..=n {
            let k = kpq_operator(p, q, TwirlSource::Haar, &basis, 1)?;
            let expected = basis.elements[q].map(|z| z.conj()).kronecker(&basis.elements[p]) * scale;
            worst = worst.max(max_abs(&(k.matrix() - expected)));
        }
    }
    checks.push(Check::at_most("kpq/closed-form", worst, tol));
    if d == 2 {
        let design = clifford_design_qubit();
        let md = moment_matrix(&basis, TwirlSource::Design(&design))?;
        checks.push(Check::at_most(
            "moment/clifford",
            max_abs(&(md - CMatrix::identity(n * n, n * n) * scale)),
            tol,
        ));
        let labels = vec![SpaceLabel::input(1, 2), SpaceLabel::output(1, 2)];
        let mut r = rng_for(cfg.seed, "verify/twirl");
        let mut delta = 0.0f64;
        for _ in 0..20 {
            let x = LabeledOperator::new(labels.clone(), ginibre(&mut r, 4, 4))?;
            delta = delta.max(design_twirl2(&design, &x)?.max_abs_diff(&haar_twirl2(&x)?)?);
        }
        checks.push(Check::at_most("twirl/clifford-vs-haar", delta, tol));
    }
    Ok(())
}

fn ancilla_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let n = cfg.n_labs;
    if n < 2 {
        return Ok(());
    }
    let basis = weyl_basis(cfg.d_sys, Normalization::WeylUnitary);
    let tuples = theorem2_tuples(n, cfg.d_sys, Some((16, derive_seed(cfg.seed, "verify/tuples"))));
    let mut filter = 0.0f64;
    let mut rank = 0usize;
    for labs in &tuples {
        filter = filter.max(filter_deviation(&basis, labs)?);
        let unitaries = weyl_lab_unitaries(&basis, labs)?;
        let thetas: Vec<f64> = (0..n - 1).map(|k| THETAS[k % THETAS.len()]).collect();
        for outcome in 0..2 {
            let t = ancilla_superinstrument(&AncillaProbeSetting::new(unitaries.clone(), thetas.clone(), outcome))?;
            for cut in contiguous_cuts(n) {
                rank = rank.max(operator_schmidt_rank(&t, &cut, cfg.tolerances.rank)?);
            }
        }
    }
    checks.push(Check::at_most("filter/isolated-term", filter, 1e-9));
    checks.push(Check::at_most("schmidt/bond-cuts", rank as f64, 4.0));
    Ok(())
}

fn family_checks(cfg: &RunConfig, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let family = make_family(cfg)?;
    let fc = check_family(&family, 1e-9)?;
    checks.push(Check::at_most("family/psd", (-fc.min_eigenvalue).max(0.0), 1e-9));
    checks.push(Check::at_most("family/tester", fc.max_comb_violation, 1e-9));
    let bundle = build_frame(&family, FrameOptions::default())?;
    checks.push(Check::at_most(
        "frame/rank-deficit",
        (bundle.dim() - bundle.rank) as f64,
        0.0,
    ));
    if bundle.is_ic() {
        checks.push(Check::at_most(
            "frame/dual-identity",
            dual_identity_check(&bundle)?,
            1e-8,
        ));
        let spec = preset_process(cfg.preset()?, cfg.n_labs, cfg.d_sys, derive_seed(cfg.seed, "process"))?;
        let w = build_process(&spec)?.interior(&spec.initial_state)?;
        let records = sample_shots(&w, &family, 0, derive_seed(cfg.seed, "shots"))?;
        let report = linear_inversion(&bundle, &records, InversionOptions::default())?.with_truth(&w.op)?;
        let err = report.metrics.map_or(f64::INFINITY, |m| m.frobenius_error);
        checks.push(Check::at_most(
            "reconstruction/exact",
            err,
            cfg.tolerances.reconstruction,
        ));
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Status {
    let dir = out_dir(cfg)?;
    let mut checks = Vec::new();
    comb_checks(cfg, &mut checks)?;
    moment_checks(cfg, &mut checks)?;
    ancilla_checks(cfg, &mut checks)?;
    family_checks(cfg, &mut checks)?;
    for c in &checks {
        println!(
            "{} {:<28} {:.3e} (tol {:.1e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.tol
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    write_json(
        &dir.join("verify.json"),
        &VerifyReport {
            d_sys: cfg.d_sys,
            n_labs: cfg.n_labs,
            seed: cfg.seed,
            checks,
            passed,
        },
    )?;
    Ok(passed)
}

pub fn export_circuits(cfg: &RunConfig) -> Status {
    let dir = out_dir(cfg)?;
    let manifests = theorem2_manifests(cfg.n_labs, cfg.d_sys, &theorem2_options(cfg))?;
    write_json(&dir.join("circuits.json"), &manifests)?;
    println!("{} circuit manifests", manifests.len());
    Ok(true)
}
