use nalgebra::DMatrix;
use omnisurf::chanest::*;
use omnisurf::channel::{synthesize_channels, CascadeModel};
use omnisurf::{harness, Error, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64) -> (omnisurf::channel::Scenario, omnisurf::channel::ChannelSet) {
    let s = harness::canonical("two_side").unwrap();
    let ch = synthesize_channels(&s, seed);
    (s, ch)
}

#[test]
fn tiles_are_row_major_rectangles() {
    let g = make_groups(4, 6, 2, 3).unwrap();
    assert_eq!(g.len(), 4);
    assert_eq!(g.groups()[0], vec![0, 1, 2, 6, 7, 8]);
    assert_eq!(g.groups()[3], vec![15, 16, 17, 21, 22, 23]);
    assert_eq!(g.expand(&[1, 0, 0, 1]).unwrap().states()[7], 1);
    assert!(matches!(make_groups(4, 6, 3, 3), Err(Error::Grouping(_))));
    assert!(matches!(Grouping::new(vec![vec![0, 1], vec![1, 2]], 3), Err(Error::Grouping(_))));
    assert!(matches!(Grouping::new(vec![vec![0], vec![2]], 3), Err(Error::Grouping(_))));
    assert!(matches!(g.expand(&[0, 1]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn noiseless_estimate_predicts_every_setting() {
    let (s, ch) = setup(2);
    let model = CascadeModel::omni(&ch, &s.ios.table);
    let g = make_groups(8, 8, 4, 2).unwrap();
    let est = estimate(cascade_probe(&model, &g), &g, 1).unwrap();
    assert_eq!(est.probes, g.len() + 1);
    for code in [0u32, 1, 0b1010_1010, 0xffff, 0x1234] {
        let states: Vec<usize> = (0..g.len()).map(|i| ((code >> i) & 1) as usize).collect();
        let truth = model.effective(g.expand(&states).unwrap().states());
        let got = predict(&est, &states).unwrap();
        assert!((&got - &truth).norm() < 1e-12 * truth.norm());
    }
    assert!(matches!(predict(&est, &vec![2; g.len()]), Err(Error::StateIndex { index: 2, len: 2 })));
}

#[test]
fn averaging_shrinks_the_error() {
    let (s, ch) = setup(4);
    let model = CascadeModel::omni(&ch, &s.ios.table);
    let g = make_groups(8, 8, 4, 4).unwrap();
    let exact = estimate(cascade_probe(&model, &g), &g, 1).unwrap();
    let sigma = exact.base.camax() * 0.1;
    let err = |repeats: usize| {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probe = noisy(cascade_probe(&model, &g), sigma, &mut rng);
            let est = estimate(probe, &g, repeats).unwrap();
            assert_eq!(est.probes, (g.len() + 1) * repeats);
            total += (&est.base - &exact.base).norm_squared();
        }
        total / 20.0
    };
    // Noise power per entry is σ²/repeats.
    let (one, sixteen) = (err(1), err(16));
    let n = exact.base.len() as f64;
    assert!((one / (n * sigma * sigma) - 1.0).abs() < 0.35, "{one}");
    assert!((one / sixteen - 16.0).abs() < 8.0, "{}", one / sixteen);
}

#[test]
fn probe_shape_must_not_change() {
    let g = make_groups(1, 2, 1, 1).unwrap();
    let mut calls = 0;
    let probe = |_: &[usize]| {
        calls += 1;
        Ok(DMatrix::from_element(1, calls, C64::new(1.0, 0.0)))
    };
    assert!(matches!(estimate(probe, &g, 1), Err(Error::Probe(_))));
}

#[test]
fn csv_lists_base_and_deltas() {
    let (s, ch) = setup(0);
    let model = CascadeModel::omni(&ch, &s.ios.table);
    let g = make_groups(8, 8, 8, 4).unwrap();
    let est = estimate(cascade_probe(&model, &g), &g, 1).unwrap();
    let csv = est.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "user,antenna,group,re,im");
    assert_eq!(lines.len(), 1 + 2 * 4 * (g.len() + 1));
    assert!(lines[1].starts_with("0,0,base,"));
    let re: f64 = lines[2].split(',').nth(3).unwrap().parse().unwrap();
    assert!((re - est.deltas[0][(0, 0)].re).abs() <= 1e-15 * re.abs().max(1e-30));
}

proptest! {
    #[test]
    fn linear_in_group_states(seed in 0u64..200, code in 0u32..16) {
        let (s, ch) = setup(seed);
        let model = CascadeModel::omni(&ch, &s.ios.table);
        let g = make_groups(8, 8, 4, 4).unwrap();
        let est = estimate(cascade_probe(&model, &g), &g, 1).unwrap();
        let states: Vec<usize> = (0..4).map(|i| ((code >> i) & 1) as usize).collect();
        let truth = model.effective(g.expand(&states).unwrap().states());
        prop_assert!((predict(&est, &states).unwrap() - &truth).norm() < 1e-12 * truth.norm());
    }
}
