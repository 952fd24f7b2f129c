//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Run with `--nocapture` to see the lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proctomo::basis::{
    clifford_design_qubit, design_twirl2, haar_twirl2, kpq_operator, moment_matrix, span_bound_reports, span_dimension,
    weyl_basis, Normalization, TwirlSource,
};
use proctomo::choi::choi_of_unitary;
use proctomo::probe::{
    all_cuts, check_family, contiguous_cuts, filter_deviation, operator_schmidt_rank, qubit16_family, qubit16_labs,
    qubit16_unitaries, theorem1_single_lab, theorem2_family, theorem2_tuples, unitary_only_family, ProbeFamily,
    SettingDescriptor, Theorem2Options, DEFAULT_FAMILY_CAP,
};
use proctomo::process::{born_value, build_interior, preset_process, sample_shots, Preset, ProcessMatrix};
use proctomo::random::{ginibre, haar_state, rng_for};
use proctomo::tomography::{
    build_frame, estimate_functional, linear_inversion, FrameBundle, FrameOptions, InversionOptions,
};
use proctomo::{CMatrix, Error, LabeledOperator, SpaceLabel, C64};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn frame(family: &ProbeFamily) -> FrameBundle {
    build_frame(family, FrameOptions::default()).unwrap()
}

fn interior(preset: Preset, n: usize, seed: u64) -> ProcessMatrix {
    build_interior(&preset_process(preset, n, 2, seed).unwrap()).unwrap()
}

fn exact_error(bundle: &FrameBundle, family: &ProbeFamily, w: &ProcessMatrix) -> f64 {
    let data = sample_shots(w, family, 0, 0).unwrap();
    let report = linear_inversion(bundle, &data, InversionOptions::default())
        .unwrap()
        .with_truth(&w.op)
        .unwrap();
    report.metrics.unwrap().frobenius_error
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let expected = [(2usize, [10usize, 13, 16]), (3, [65, 73, 81])];
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, want) in expected {
        let report = span_bound_reports(d, 11, 1e-8).unwrap();
        let got: Vec<usize> = ["unitary", "cptp", "mp"]
            .iter()
            .map(|f| report.measured(f).unwrap())
            .collect();
        ok &= got == want && report.all_match();
        parts.push(format!("d={d} {got:?}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    outcome(ok, format!("{} in {secs:.2}s", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let family = qubit16_family();
    let bundle = frame(&family);
    let (i, o) = (SpaceLabel::input(1, 2), SpaceLabel::output(1, 2));
    let unitaries: Vec<LabeledOperator> = qubit16_unitaries()
        .iter()
        .map(|(_, u)| choi_of_unitary(u, &[i], &[o], 1e-10).unwrap().op)
        .collect();
    let rank_u = span_dimension(&unitaries, 1e-8).unwrap();
    let ok = family.len() == 16 && bundle.rank == 16 && unitaries.len() == 10 && rank_u == 10;
    outcome(
        ok,
        format!(
            "{} elements, frame rank {}, {} unitaries of rank {rank_u}",
            family.len(),
            bundle.rank,
            unitaries.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng_for(3, "acceptance/theorem1");
    let mut worst = 0.0f64;
    for k in 0..20 {
        let a = haar_state(&mut r, 2);
        let psi = haar_state(&mut r, 2);
        let [e0, _] = theorem1_single_lab(&a, &psi, 1, k, SettingDescriptor::Custom { name: "t1".into() }).unwrap();
        let aa = &a * a.adjoint();
        let pp = &psi * psi.adjoint();
        let oracle = LabeledOperator::new(
            vec![SpaceLabel::input(1, 2), SpaceLabel::output(1, 2)],
            aa.transpose().kronecker(&pp),
        )
        .unwrap();
        worst = worst.max(e0.choi.frobenius_diff(&oracle).unwrap());
    }
    outcome(
        worst <= 1e-10,
        format!("max Frobenius deviation {worst:.2e} over 20 pairs"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let family = theorem2_family(2, 2, &Theorem2Options::default()).unwrap();
    let bundle = frame(&family);
    let basis = weyl_basis(2, Normalization::WeylUnitary);
    let tuples = theorem2_tuples(2, 2, None);
    let filter = tuples
        .iter()
        .map(|labs| filter_deviation(&basis, labs).unwrap())
        .fold(0.0, f64::max);
    let check = check_family(&family, 1e-10).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = family.len() == 2048 && bundle.rank == 256 && filter <= 1e-10 && check.passed && secs < 300.0;
    outcome(
        ok,
        format!(
            "{} elements, frame rank {}, filter deviation {filter:.2e} over {} tuples, min eig {:.2e}, tester {:.2e}, {secs:.1}s",
            family.len(),
            bundle.rank,
            tuples.len(),
            check.min_eigenvalue,
            check.max_comb_violation
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let basis = weyl_basis(2, Normalization::WeylUnitary);
    let tuples = theorem2_tuples(3, 2, Some((256, 5)));
    let worst = tuples
        .iter()
        .map(|labs| filter_deviation(&basis, labs).unwrap())
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && tuples.len() == 256 && secs < 600.0,
        format!(
            "N=3: {} Weyl tuples (16 phase settings each), max deviation {worst:.2e}, {secs:.1}s",
            tuples.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let design = clifford_design_qubit();
    let basis = weyl_basis(2, Normalization::HsOrthonormal);
    let m = moment_matrix(&basis, TwirlSource::Design(&design)).unwrap();
    let dm = max_abs(&(&m - CMatrix::identity(9, 9)));
    let mut dk = 0.0f64;
    let mut dk_derived = 0.0f64;
    for p in 1..4 {
        for q in 1..4 {
            let k = kpq_operator(p, q, TwirlSource::Design(&design), &basis, 1).unwrap();
            let claim = basis.elements[p].transpose().kronecker(&basis.elements[q]);
            dk = dk.max(max_abs(&(k.matrix() - claim)));
            let derived = basis.elements[q].map(|z| z.conj()).kronecker(&basis.elements[p]) / C64::new(3.0, 0.0);
            dk_derived = dk_derived.max(max_abs(&(k.matrix() - derived)));
        }
    }
    let dm_derived = max_abs(&(&m - CMatrix::identity(9, 9) / C64::new(3.0, 0.0)));
    let labels = vec![SpaceLabel::input(1, 2), SpaceLabel::output(1, 2)];
    let mut r = rng_for(6, "acceptance/twirl");
    let mut dt = 0.0f64;
    for _ in 0..20 {
        let x = LabeledOperator::new(labels.clone(), ginibre(&mut r, 4, 4)).unwrap();
        dt = dt.max(
            design_twirl2(&design, &x)
                .unwrap()
                .max_abs_diff(&haar_twirl2(&x).unwrap())
                .unwrap(),
        );
    }
    outcome(
        dm <= 1e-10 && dk <= 1e-10 && dt <= 1e-10,
        format!(
            "M=δδ deviation {dm:.2e}, K_pq=σ_pᵀ⊗σ_q deviation {dk:.2e}, twirl delta {dt:.2e} \
             [M=δδ/3 deviation {dm_derived:.2e}, K_pq=conj(σ_q)⊗σ_p/3 deviation {dk_derived:.2e}]"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_7() -> Outcome {
    let presets = [Preset::HaarEnv { d_env: 2 }, Preset::ClassicalMemory];
    let families = [
        (1usize, qubit16_family(), 1e-8),
        (2, theorem2_family(2, 2, &Theorem2Options::default()).unwrap(), 1e-7),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, family, tol) in &families {
        let bundle = frame(family);
        for preset in presets {
            let w = interior(preset, *n, 17);
            let exact = exact_error(&bundle, family, &w);
            ok &= exact <= *tol;
            let medians: Vec<f64> = [1_000u64, 10_000, 100_000]
                .iter()
                .map(|&shots| {
                    median(
                        (0..10u64)
                            .map(|seed| {
                                let data = sample_shots(&w, family, shots, seed).unwrap();
                                linear_inversion(&bundle, &data, InversionOptions::default())
                                    .unwrap()
                                    .with_truth(&w.op)
                                    .unwrap()
                                    .metrics
                                    .unwrap()
                                    .frobenius_error
                            })
                            .collect(),
                    )
                })
                .collect();
            ok &= medians.windows(2).all(|p| p[1] < p[0]);
            parts.push(format!(
                "N={n} {preset}: exact {exact:.1e}, medians {:.2e}/{:.2e}/{:.2e}",
                medians[0], medians[1], medians[2]
            ));
        }
    }
    outcome(ok, parts.join("; "))
}

/// Bonds of the lab chain `1..=n` crossed by the cut `left | rest`.
fn bonds_crossed(left: &[usize], n: usize) -> u32 {
    (1..n).filter(|&k| left.contains(&k) != left.contains(&(k + 1))).count() as u32
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut bond_max = 0usize;
    let mut general_max = 0usize;
    let ancilla = [
        (2usize, theorem2_family(2, 2, &Theorem2Options::default()).unwrap()),
        (
            3,
            theorem2_family(
                3,
                2,
                &Theorem2Options {
                    cap: DEFAULT_FAMILY_CAP,
                    subsample: Some((16, 8)),
                },
            )
            .unwrap(),
        ),
    ];
    for (n, family) in &ancilla {
        let bonds = contiguous_cuts(*n);
        for cut in all_cuts(*n) {
            let crossed = bonds_crossed(&cut, *n);
            for e in &family.elements {
                let r = operator_schmidt_rank(&e.choi, &cut, 1e-8).unwrap();
                ok &= r <= 4usize.pow(crossed);
                if bonds.contains(&cut) {
                    bond_max = bond_max.max(r);
                } else {
                    general_max = general_max.max(r);
                }
            }
        }
    }
    ok &= bond_max <= 4;
    let mut product_ranks = BTreeMap::new();
    for n in [2usize, 3] {
        let family = qubit16_labs(n, DEFAULT_FAMILY_CAP).unwrap();
        for cut in all_cuts(n) {
            for e in &family.elements {
                *product_ranks
                    .entry(operator_schmidt_rank(&e.choi, &cut, 1e-8).unwrap())
                    .or_insert(0usize) += 1;
            }
        }
    }
    ok &= product_ranks.keys().all(|&r| r == 1);
    outcome(
        ok,
        format!(
            "ancilla probes: max rank {bond_max} across single bonds, {general_max} across two-bond cuts \
             (bound 4^bonds); product probe ranks {product_ranks:?}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let family = qubit16_family();
    let bundle = frame(&family);
    let w = interior(Preset::HaarEnv { d_env: 2 }, 1, 9);
    let data = sample_shots(&w, &family, 0, 0).unwrap();
    let labels = vec![SpaceLabel::input(1, 2), SpaceLabel::output(1, 2)];
    let mut r = rng_for(9, "acceptance/functional");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let g = ginibre(&mut r, 4, 4);
        let o = LabeledOperator::new(labels.clone(), (&g + g.adjoint()) * C64::new(0.5, 0.0)).unwrap();
        let est = estimate_functional(&o, &bundle, &data, 1e-8).unwrap();
        let direct = born_value(&w.op, &o).unwrap().re;
        worst = worst.max((est.value - direct).abs());
    }
    let unitary = unitary_only_family(1, DEFAULT_FAMILY_CAP).unwrap();
    let ubundle = frame(&unitary);
    let udata = sample_shots(&w, &unitary, 0, 0).unwrap();
    let mut mp = CMatrix::zeros(4, 4);
    mp[(0, 0)] = C64::new(1.0, 0.0);
    let mp = LabeledOperator::new(labels, mp).unwrap();
    let rejected = match estimate_functional(&mp, &ubundle, &udata, 1e-8) {
        Err(Error::OutsideSpan { residual }) => Some(residual),
        _ => None,
    };
    outcome(
        worst <= 1e-8 && rejected.is_some(),
        format!("max |estimate − Tr[WᵀO]| {worst:.2e}; measure-and-prepare on unitary bundle: residual {rejected:?}"),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&path).unwrap(),
        );
    }
    out
}

fn pipeline(config: &Path, out: &Path) {
    for cmd in ["simulate", "reconstruct"] {
        let status = Command::new(env!("CARGO_BIN_EXE_proctomo"))
            .args([cmd, "--config"])
            .arg(config)
            .arg("--out")
            .arg(out)
            .env("PROCTOMO_THREADS", "3")
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"n_labs": 2, "preset": "HaarEnv(2)", "seed": 42, "shots": 1000,
            "family": {"provenance": "Theorem2Weyl", "subsample": 32}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    pipeline(&config, &out);
    let first = snapshot(&out);
    std::fs::remove_dir_all(&out).unwrap();
    pipeline(&config, &out);
    let second = snapshot(&out);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    outcome(
        first.len() == second.len() && differing.is_empty() && first.len() >= 7,
        format!("{} artifacts compared, differing: {differing:?}", first.len()),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("span dimensions", criterion_1),
        ("qubit 16-element family", criterion_2),
        ("single-lab measure-and-prepare circuit", criterion_3),
        ("Weyl-recipe family, N=2", criterion_4),
        ("nested filters, N=3", criterion_5),
        ("2-design identities", criterion_6),
        ("end-to-end tomography", criterion_7),
        ("MPO bond bound", criterion_8),
        ("functional estimation", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!(
            "{} criterion {}: {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            k + 1,
            o.detail
        );
        if !o.passed {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
