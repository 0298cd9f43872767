use orient8::d4::OrientationLabel;
use orient8::dataio::{expand_orientations, generate_phantoms, split_by_patient, Dataset, PhantomSpec, Split};
use orient8::nn::NetworkConfig;
use orient8::pipeline::{evaluate, evaluate_both, predict_direct, train, Method, TrainConfig};
use orient8::{Modality, Slice};
use proptest::prelude::*;

#[test]
fn splits_do_not_share_patients() {
    let vols = generate_phantoms(&PhantomSpec::new(45, 2, 16, Modality::C0, 1)).unwrap();
    let (a, b, c) = split_by_patient(&vols, [0.5, 0.3, 0.2], 9).unwrap();
    let (pa, pb, pc) = (a.patients(), b.patients(), c.patients());
    assert!(pa.is_disjoint(&pb) && pa.is_disjoint(&pc) && pb.is_disjoint(&pc));
    assert_eq!(pa.len() + pb.len() + pc.len(), 45);
    let ex = expand_orientations(&c).unwrap();
    assert_eq!(ex.patients(), pc);
    assert_eq!(ex.label_histogram(), [c.len(); 8]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accuracy_is_trace_over_total(answers in proptest::collection::vec(0u8..8, 8)) {
        let vols = generate_phantoms(&PhantomSpec::new(2, 1, 16, Modality::Lge, 3).noiseless()).unwrap();
        let ds = expand_orientations(&Dataset::from_volumes(&vols, Split::Test)).unwrap();
        // answer depends only on the true label of the view, so it is a fixed map t -> answers[t]
        let clf = |s: &Slice| OrientationLabel::new(answers[s.true_orientation.unwrap().index()]).unwrap();
        for method in [Method::Direct, Method::Voting] {
            let r = evaluate(&clf, &ds, method).unwrap();
            let trace: u64 = (0..8).map(|i| r.confusion[i][i]).sum();
            prop_assert_eq!(r.accuracy, trace as f64 / r.total as f64);
            prop_assert_eq!(r.total as u64, r.confusion.iter().flatten().sum::<u64>());
        }
    }
}

#[test]
fn converged_network_predicts_canonical_phantoms() {
    let vols = generate_phantoms(&PhantomSpec::new(12, 3, 32, Modality::C0, 4)).unwrap();
    let train_ds = expand_orientations(&Dataset::from_volumes(&vols[..9], Split::Train)).unwrap();
    let test = Dataset::from_volumes(&vols[9..], Split::Test);
    let cfg = TrainConfig {
        epochs: 4,
        seed: 4,
        network: NetworkConfig { input_size: 32, seed: 4, ..Default::default() },
        ..Default::default()
    };
    let net = train(&train_ds, None, &cfg).unwrap().network;
    for s in &test.samples {
        assert_eq!(predict_direct(&net, &s.slice).unwrap(), OrientationLabel::IDENTITY);
    }
    let (direct, voting) = evaluate_both(&net, &expand_orientations(&test).unwrap()).unwrap();
    assert!(direct.accuracy >= 0.95, "{direct:?}");
    assert!(voting.accuracy >= 0.95, "{voting:?}");
    assert_eq!(test.patients().len(), 3);
}

#[test]
fn test_time_resize_handles_other_sizes() {
    let vols = generate_phantoms(&PhantomSpec::new(1, 1, 48, Modality::T2, 2)).unwrap();
    let net = orient8::nn::Network::<f32>::new(NetworkConfig { input_size: 32, ..Default::default() }).unwrap();
    let s = &vols[0].slices()[0];
    let a = predict_direct(&net, s).unwrap();
    assert_eq!(a, predict_direct(&net, s).unwrap());
}
