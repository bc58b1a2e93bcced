mod common;

use common::spacing_violation;
use mfqe_core::detector::{
    bin_index, detector_report, predict, refine, satisfies_spacing, train_detector, DetectorConfig, DetectorNet,
    RefineConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Labelled = Vec<(Vec<f64>, Vec<bool>)>;

fn threshold_sequences(count: usize, seed: u64) -> Labelled {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(12..=32);
            let q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let l = q.iter().map(|&v| v > 0.5).collect();
            (q, l)
        })
        .collect()
}

fn on(labels: &[bool]) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i]).collect()
}

#[test]
fn learns_a_threshold_rule_on_held_out_sequences() {
    let train = threshold_sequences(40, 1);
    let test = threshold_sequences(20, 2);
    let mut net = DetectorNet::new(DetectorConfig::default(), 3).unwrap();
    train_detector(&mut net, &train, 4).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (q, l) in &test {
        pred.extend(predict(&net, q).unwrap().into_iter().map(|p| p >= 0.5));
        truth.extend_from_slice(l);
    }
    let s = detector_report(&pred, &truth).unwrap();
    assert!(s.f1 >= 0.9, "{s:?}");
}

#[test]
fn all_negative_labels_push_every_probability_down() {
    let cfg = DetectorConfig { epochs: 20, ..DetectorConfig::default() };
    let data: Labelled = threshold_sequences(10, 5).into_iter().map(|(q, l)| (q, vec![false; l.len()])).collect();
    let mut net = DetectorNet::new(cfg, 6).unwrap();
    train_detector(&mut net, &data, 7).unwrap();
    for (q, _) in &data {
        assert!(predict(&net, q).unwrap().iter().all(|&p| p < 0.5));
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = DetectorConfig { epochs: 3, ..DetectorConfig::default() };
    let data = threshold_sequences(5, 8);
    let run = || {
        let mut net = DetectorNet::new(cfg.clone(), 9).unwrap();
        let losses = train_detector(&mut net, &data, 10).unwrap();
        (losses, predict(&net, &data[0].0).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn binning_clamps_the_top_edge() {
    assert_eq!(bin_index(1.0, 64), 63);
    assert_eq!(bin_index(1.0, 2), 1);
    assert_eq!(bin_index(0.0, 2), 0);
}

#[test]
fn hand_traced_refinements() {
    let c = RefineConfig::default();
    assert_eq!(on(&refine(&[0.9, 0.8, 0.2, 0.1, 0.3, 0.95], &c).unwrap()), [0, 2, 5]);
    assert_eq!(refine(&[0.6, 0.6], &c).unwrap(), [true, false]);
    assert_eq!(on(&refine(&[0.6, 0.7, 0.9, 0.7, 0.6, 0.55, 0.58], &c).unwrap()), [2, 4]);
}

#[test]
fn scores() {
    let s = detector_report(&[true, false, true, false], &[true, false, false, false]).unwrap();
    assert_eq!((s.precision, s.recall), (0.5, 1.0));
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    let none = detector_report(&[false; 3], &[false; 3]).unwrap();
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    assert!(detector_report(&[true], &[true, false]).is_err());
}

fn probs() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5), Just(0.7)], 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn refinement_meets_spacing(p in probs(), d_max in 3usize..=6, threshold in 0.05f64..0.95) {
        let l = refine(&p, &RefineConfig { threshold, d_max }).unwrap();
        prop_assert_eq!(spacing_violation(&l, d_max), None);
        prop_assert!(satisfies_spacing(&l, d_max));
    }

    #[test]
    fn refinement_is_idempotent(p in probs()) {
        let c = RefineConfig::default();
        let once = refine(&p, &c).unwrap();
        let implied: Vec<f64> = once.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
        prop_assert_eq!(refine(&implied, &c).unwrap(), once);
    }

    #[test]
    fn strong_frames_that_fit_survive(p in probs()) {
        // Every kept PQF from stage 2 is still a PQF after stage 3.
        let c = RefineConfig::default();
        let out = refine(&p, &c).unwrap();
        let mut i = 0;
        while i < p.len() {
            if p[i] < c.threshold { i += 1; continue; }
            let start = i;
            while i < p.len() && p[i] >= c.threshold { i += 1; }
            let best = (start..i).fold(start, |b, k| if p[k] > p[b] { k } else { b });
            prop_assert!(out[best]);
        }
    }
}
