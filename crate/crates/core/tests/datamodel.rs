use std::io::Write;

use proptest::prelude::*;
use twophase::datamodel::{
    generate_population, read_external, read_frame, write_external, write_frame, ExternalRecord, FrameSchema,
    Individual, PopulationConfig, PopulationFrame, SelectionMechanism, W0Source,
};
use twophase::regress::{compute_pve, DesignSpec, MeanModelFit};
use twophase::selection::KnownSelection;
use twophase::simharness::calibrate_gamma;
use twophase::Error;

fn small(mechanism: SelectionMechanism) -> PopulationConfig {
    PopulationConfig { n: 3000, n_e: 1500, n_p: 100, mechanism, ..Default::default() }
}

fn csv_file(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn paper_configuration_has_the_stated_sizes() {
    let sim = generate_population(&PopulationConfig::default(), 11).unwrap();
    let f = &sim.frame;
    assert_eq!((f.n(), f.n_e(), f.n_p()), (10_000, 5_000, 200));
    assert!(f.first_phase().all(|i| i.w1.is_some()));
}

#[test]
fn unit_selection_keeps_everyone() {
    let cfg = PopulationConfig {
        n: 500,
        n_e: 500,
        n_p: 20,
        lambda1: KnownSelection::Constant { p: 1.0 },
        mechanism: SelectionMechanism::Bernoulli,
        ..Default::default()
    };
    let sim = generate_population(&cfg, 1).unwrap();
    assert!(sim.frame.individuals().iter().all(|i| i.r1));
}

#[test]
fn constant_bernoulli_selection_fraction() {
    let c = 0.3;
    let cfg = PopulationConfig {
        n: 20_000,
        n_e: 6000,
        n_p: 50,
        lambda1: KnownSelection::Constant { p: c },
        mechanism: SelectionMechanism::Bernoulli,
        ..Default::default()
    };
    for seed in 0..10 {
        let sim = generate_population(&cfg, seed).unwrap();
        let frac = sim.frame.n_e() as f64 / cfg.n as f64;
        assert!((frac - c).abs() <= 4.0 * (c * (1.0 - c) / cfg.n as f64).sqrt());
    }
}

#[test]
fn calibrated_population_pve_is_on_target() {
    let base = PopulationConfig::default();
    let gamma = calibrate_gamma(0.5, &base.alpha, &base.gamma, base.w0, base.w1, 7).unwrap();
    let cfg = PopulationConfig { gamma, ..base };
    // E(Y | W₀) from the generating coefficients.
    let a = cfg.alpha;
    let truth =
        MeanModelFit::from_coefficients(DesignSpec::linear(vec!["w0_1".into()]), vec![a[0] + a[2] * cfg.w1.mean, a[1]])
            .unwrap();
    for seed in 0..100 {
        let sim = generate_population(&cfg, seed).unwrap();
        let m = sim.y_all.iter().sum::<f64>() / sim.y_all.len() as f64;
        let var_y = sim.y_all.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (sim.y_all.len() - 1) as f64;
        let pve = compute_pve(&truth, &sim.frame, Some(var_y)).unwrap();
        assert!((pve - 0.5).abs() <= 0.05, "seed {seed}: PVE {pve}");
    }
}

#[test]
fn configuration_errors() {
    let too_many = PopulationConfig { n: 100, n_e: 200, ..Default::default() };
    assert!(generate_population(&too_many, 1).is_err());
    let big_pilot = PopulationConfig { n: 100, n_e: 50, n_p: 60, ..Default::default() };
    assert!(generate_population(&big_pilot, 1).is_err());
    let overflow =
        PopulationConfig { n: 100, n_e: 50, n_p: 10, gamma: [800.0, 0.0, 0.0, 0.0, 0.0], ..Default::default() };
    assert!(generate_population(&overflow, 1).is_err());
}

#[test]
fn three_row_file_parses() {
    let f = csv_file(
        "id,w0_1,w1_1,y,r1,r2,pilot\n\
         0,1.5,2.0,3.0,1,1,0\n\
         1,0.5,1.0,,1,0,0\n\
         2,-0.5,,,0,0,0\n",
    );
    let frame = read_frame(f.path(), &FrameSchema::default()).unwrap();
    assert_eq!(frame.n(), 3);
    assert_eq!(frame.n_e(), 2);
    assert_eq!(frame.n_s(), 1);
    assert_eq!(frame.individuals()[0].y, Some(3.0));
}

#[test]
fn second_phase_outside_first_phase_names_the_row() {
    let f = csv_file("id,w0_1,w1_1,y,r1,r2,pilot\n0,1,2,3,1,1,0\n1,1,,4,0,1,0\n");
    match read_frame(f.path(), &FrameSchema::default()) {
        Err(Error::Row { row, .. }) => assert_eq!(row, 2),
        other => panic!("expected row error, got {other:?}"),
    }
}

#[test]
fn malformed_files_are_rejected() {
    let missing = csv_file("id,w0_1,y,r1,r2\n0,1,2,1,0\n");
    assert!(matches!(read_frame(missing.path(), &FrameSchema::default()), Err(Error::Schema(_))));
    let text = csv_file("id,w0_1,w1_1,y,r1,r2,pilot\n0,abc,1,,1,0,0\n");
    assert!(matches!(read_frame(text.path(), &FrameSchema::default()), Err(Error::Row { row: 1, .. })));
    let prob = csv_file("id,w0_1,w1_1,y,r1,r2,pilot,lambda1\n0,1,1,,1,0,0,1.5\n");
    assert!(matches!(read_frame(prob.path(), &FrameSchema::default()), Err(Error::Row { row: 1, .. })));
    let ext = csv_file("id,w0_1,samp_prob\n0,1,0.2\n1,2,0\n");
    assert!(matches!(read_external(ext.path()), Err(Error::Row { row: 2, .. })));
}

#[test]
fn partial_population_files_take_the_stated_size() {
    let f = csv_file("id,w0_1,w1_1,y,r1,r2,pilot\n4,1,2,,1,0,0\n9,1,3,,1,0,0\n");
    let frame = read_frame(f.path(), &FrameSchema { population_size: Some(50) }).unwrap();
    assert_eq!((frame.n(), frame.n_e()), (50, 2));
    assert!(!frame.is_individual_level());
}

#[test]
fn external_sample_round_trip() {
    let records: Vec<ExternalRecord> = (0..20)
        .map(|i| ExternalRecord {
            id: i,
            w0: vec![i as f64 / 7.0, -(i as f64).sqrt()],
            samp_prob: 1.0 / (i + 2) as f64,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext.csv");
    write_external(&path, &records).unwrap();
    assert_eq!(read_external(&path).unwrap(), W0Source::ExternalProbabilitySample { records });
}

fn individual_strategy(k: usize, m: usize) -> impl Strategy<Value = Individual> {
    let finite = || prop_oneof![-1e6f64..1e6, -1e-300f64..1e-300, Just(0.0), Just(-0.0)];
    (
        proptest::collection::vec(finite(), k),
        proptest::collection::vec(finite(), m),
        0u8..4,
        finite(),
        proptest::option::of(1e-9f64..=1.0),
        proptest::option::of(1e-9f64..=1.0),
    )
        .prop_map(move |(w0, w1, phase, y, l1, l2)| {
            // phase: 0 outside, 1 first phase, 2 pilot, 3 second phase.
            let r1 = phase > 0;
            let pilot = phase == 2;
            let r2 = phase == 3;
            Individual {
                id: 0,
                w0,
                w1: r1.then_some(w1),
                y: (pilot || r2).then_some(y),
                r1,
                r2,
                pilot,
                lambda1: l1,
                lambda2: if r1 { l2 } else { None },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_round_trips_bit_exactly(rows in (1usize..3, 1usize..3).prop_flat_map(|(k, m)| {
        proptest::collection::vec(individual_strategy(k, m), 1..40)
    })) {
        let rows: Vec<Individual> = rows.into_iter().enumerate().map(|(i, mut r)| {
            r.id = i as u64 * 3;
            r
        }).collect();
        let frame = PopulationFrame::new(rows, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.csv");
        write_frame(&path, &frame).unwrap();
        let back = read_frame(&path, &FrameSchema { population_size: Some(100) }).unwrap();
        prop_assert_eq!(back.individuals().len(), frame.individuals().len());
        for (a, b) in frame.individuals().iter().zip(back.individuals()) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!((a.r1, a.r2, a.pilot), (b.r1, b.r2, b.pilot));
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.w0), bits(&b.w0));
            prop_assert_eq!(a.w1.as_deref().map(bits), b.w1.as_deref().map(bits));
            prop_assert_eq!(a.y.map(f64::to_bits), b.y.map(f64::to_bits));
            prop_assert_eq!(a.lambda1.map(f64::to_bits), b.lambda1.map(f64::to_bits));
            prop_assert_eq!(a.lambda2.map(f64::to_bits), b.lambda2.map(f64::to_bits));
        }
    }

    #[test]
    fn generated_frames_respect_phase_invariants(seed in 0u64..1000, bernoulli in any::<bool>()) {
        let mech = if bernoulli { SelectionMechanism::Bernoulli } else { SelectionMechanism::TopNe };
        let cfg = small(mech);
        let sim = generate_population(&cfg, seed).unwrap();
        let f = &sim.frame;
        prop_assert!(f.n_s() <= f.n_e() && f.n_e() <= f.n());
        prop_assert!(f.first_phase().all(|i| i.w1.is_some()));
        prop_assert!(f.pilot().all(|i| i.y.is_some() && i.r1));
        prop_assert_eq!(f.n_p(), cfg.n_p);
        if !bernoulli {
            prop_assert_eq!(f.n_e(), cfg.n_e);
        }
        let again = generate_population(&cfg, seed).unwrap();
        prop_assert_eq!(&again.frame, f);
        prop_assert_eq!(again.y_all, sim.y_all);
    }
}
