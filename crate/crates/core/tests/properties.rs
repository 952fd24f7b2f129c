use proctomo::choi::{link_product, unvec_matrix, vec_matrix};
use proctomo::probe::{qubit16_family, read_jsonl, theorem2_family, write_jsonl, Theorem2Options};
use proctomo::process::{
    born_operator_probability, build_interior, preset_process, sample_shots, ExperimentRecord, Preset,
};
use proctomo::random::{ginibre, random_density, rng_for};
use proctomo::tomography::{build_frame, linear_inversion, FrameOptions, InversionOptions};
use proctomo::{CMatrix, LabeledOperator, SpaceLabel, C64};
use proptest::prelude::*;

fn op(seed: u64, tag: &str, labels: Vec<SpaceLabel>) -> LabeledOperator {
    let side = labels.iter().map(|l| l.dim).product();
    LabeledOperator::new(labels, ginibre(&mut rng_for(seed, tag), side, side)).unwrap()
}

fn i(lab: usize, d: usize) -> SpaceLabel {
    SpaceLabel::input(lab, d)
}

fn o(lab: usize, d: usize) -> SpaceLabel {
    SpaceLabel::output(lab, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn link_product_is_associative(seed in any::<u64>(), d in 2usize..4) {
        let a = op(seed, "a", vec![i(1, d), o(1, 2)]);
        let b = op(seed, "b", vec![o(1, 2), i(2, d)]);
        let c = op(seed, "c", vec![i(2, d), o(2, 2)]);
        let left = link_product(&link_product(&a, &b).unwrap(), &c).unwrap();
        let right = link_product(&a, &link_product(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
    }

    #[test]
    fn link_product_commutes_up_to_order(seed in any::<u64>()) {
        let a = op(seed, "a", vec![i(1, 2), o(1, 3)]);
        let b = op(seed, "b", vec![o(1, 3), i(2, 2)]);
        let ab = link_product(&a, &b).unwrap();
        let ba = link_product(&b, &a).unwrap();
        prop_assert!(ab.max_abs_diff(&ba).unwrap() < 1e-10);
    }

    #[test]
    fn full_contraction_is_transpose_trace(seed in any::<u64>()) {
        let a = op(seed, "a", vec![i(1, 2), o(1, 3)]);
        let b = op(seed, "b", vec![o(1, 3), i(1, 2)]);
        let s = link_product(&a, &b).unwrap();
        prop_assert_eq!(s.labels().len(), 0);
        let b_aligned = a.aligned(&b).unwrap();
        let oracle: C64 = (a.matrix().transpose() * b_aligned.matrix()).trace();
        prop_assert!((s.trace() - oracle).norm() < 1e-10);
    }

    #[test]
    fn partial_trace_of_product(seed in any::<u64>(), da in 2usize..4, db in 2usize..4) {
        let a = op(seed, "a", vec![i(1, da)]);
        let b = op(seed, "b", vec![o(1, db)]);
        let ab = a.tensor(&b).unwrap();
        let reduced = ab.partial_trace(&[o(1, db)]).unwrap();
        prop_assert!(reduced.max_abs_diff(&a.scale(b.trace())).unwrap() < 1e-10);
        prop_assert!((ab.trace() - a.trace() * b.trace()).norm() < 1e-10);
    }

    #[test]
    fn partial_transpose_is_an_involution(seed in any::<u64>()) {
        let a = op(seed, "a", vec![i(1, 2), o(1, 3), i(2, 2)]);
        let once = a.partial_transpose(&[o(1, 3)]).unwrap();
        let twice = once.partial_transpose(&[o(1, 3)]).unwrap();
        prop_assert!(twice.max_abs_diff(&a).unwrap() < 1e-14);
        let all = a.partial_transpose(&[i(1, 2), o(1, 3), i(2, 2)]).unwrap();
        prop_assert!(max_abs(&(all.matrix() - a.matrix().transpose())) < 1e-14);
    }

    #[test]
    fn vec_round_trip(seed in any::<u64>(), d in 1usize..6) {
        let m = ginibre(&mut rng_for(seed, "m"), d, d);
        prop_assert_eq!(unvec_matrix(&vec_matrix(&m), d), m.clone());
        // column stacking: component n·d + m is A[m, n]
        let v = vec_matrix(&m);
        for r in 0..d {
            for c in 0..d {
                prop_assert_eq!(v[c * d + r], m[(r, c)]);
            }
        }
    }

    #[test]
    fn born_rule_normalizes_per_setting(seed in any::<u64>(), env in 1usize..3) {
        let spec = preset_process(Preset::HaarEnv { d_env: env }, 1, 2, seed).unwrap();
        let w = build_interior(&spec).unwrap();
        let family = qubit16_family();
        for idx in family.settings().values() {
            let total: f64 = idx
                .iter()
                .map(|&k| born_operator_probability(&w.op, &family.elements[k].choi).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn born_value_ignores_label_order(seed in any::<u64>()) {
        let w = op(seed, "w", vec![i(1, 2), o(1, 2)]);
        let t = op(seed, "t", vec![i(1, 2), o(1, 2)]);
        let swapped = t.permute(&[o(1, 2), i(1, 2)]).unwrap();
        let a = proctomo::process::born_value(&w, &t).unwrap();
        let b = proctomo::process::born_value(&w, &swapped).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn inversion_is_linear_in_data(seed in any::<u64>(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let family = qubit16_family();
        let bundle = build_frame(&family, FrameOptions::default()).unwrap();
        let mut r = rng_for(seed, "data");
        let p1: Vec<f64> = ginibre(&mut r, family.len(), 1).iter().map(|z| z.re).collect();
        let p2: Vec<f64> = ginibre(&mut r, family.len(), 1).iter().map(|z| z.re).collect();
        let records = |p: &[f64]| -> Vec<ExperimentRecord> {
            family
                .elements
                .iter()
                .zip(p)
                .map(|(e, &v)| ExperimentRecord {
                    setting_id: e.setting_id,
                    outcome: e.outcome,
                    probability: Some(v),
                    count: None,
                    shots_total: 0,
                })
                .collect()
        };
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| x * a + y * b).collect();
        let opts = InversionOptions::default();
        let w1 = linear_inversion(&bundle, &records(&p1), opts).unwrap().w_est;
        let w2 = linear_inversion(&bundle, &records(&p2), opts).unwrap().w_est;
        let wm = linear_inversion(&bundle, &records(&mix), opts).unwrap().w_est;
        let expected = w1.scale(C64::new(x, 0.0)).add(&w2.scale(C64::new(y, 0.0))).unwrap();
        prop_assert!(wm.max_abs_diff(&expected).unwrap() < 1e-9);
    }

    #[test]
    fn exact_data_is_reproduced_for_any_state(seed in any::<u64>()) {
        // single-lab process `ρ ⊗ I`
        let rho = random_density(&mut rng_for(seed, "rho"), 2);
        let w_op = LabeledOperator::new(
            vec![i(1, 2), o(1, 2)],
            rho.kronecker(&CMatrix::identity(2, 2)),
        )
        .unwrap();
        let family = qubit16_family();
        let bundle = build_frame(&family, FrameOptions::default()).unwrap();
        let data: Vec<ExperimentRecord> = family
            .elements
            .iter()
            .map(|e| ExperimentRecord {
                setting_id: e.setting_id,
                outcome: e.outcome,
                probability: Some(born_operator_probability(&w_op, &e.choi).unwrap()),
                count: None,
                shots_total: 0,
            })
            .collect();
        let est = linear_inversion(&bundle, &data, InversionOptions::default()).unwrap().w_est;
        prop_assert!(est.max_abs_diff(&w_op).unwrap() < 1e-10);
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn theorem2_family_round_trips_through_jsonl() {
    let family = theorem2_family(2, 2, &Theorem2Options::default()).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&family, &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2048);
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, family);
}

#[test]
fn shot_sampling_is_reproducible_and_conserves_shots() {
    let spec = preset_process(Preset::ClassicalMemory, 1, 2, 0).unwrap();
    let w = build_interior(&spec).unwrap();
    let family = qubit16_family();
    let a = sample_shots(&w, &family, 777, 5).unwrap();
    let b = sample_shots(&w, &family, 777, 5).unwrap();
    assert_eq!(a, b);
    for idx in family.settings().keys() {
        let total: u64 = a
            .iter()
            .filter(|r| r.setting_id == *idx)
            .map(|r| r.count.unwrap())
            .sum();
        assert_eq!(total, 777);
    }
}
