use orient8::d4::{self, OrientationLabel};
use orient8::imgops::apply_orientation;
use orient8::pipeline::{vote, voting_trace};
use orient8::{Modality, Slice};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = OrientationLabel> {
    (0u8..8).prop_map(|v| OrientationLabel::new(v).unwrap())
}

fn slice() -> impl Strategy<Value = Slice> {
    (1usize..=2, 2usize..=9, 2usize..=9).prop_flat_map(|(c, h, w)| {
        proptest::collection::vec(-1.0f32..1.0, c * h * w)
            .prop_map(move |px| Slice::new(px, c, h, w, "P", Modality::T2).unwrap())
    })
}

proptest! {
    #[test]
    fn apply_is_a_homomorphism(s in slice(), i in label(), j in label()) {
        let t = d4::tables();
        let two = apply_orientation(&apply_orientation(&s, j), i);
        let one = apply_orientation(&s, t.compose(i, j));
        prop_assert_eq!(two.pixels(), one.pixels());
        prop_assert_eq!((two.height(), two.width()), (one.height(), one.width()));
    }

    #[test]
    fn true_orientation_tracks_composition(s in slice(), i in label(), j in label()) {
        let t = d4::tables();
        let s = s.with_orientation(j);
        prop_assert_eq!(apply_orientation(&s, i).true_orientation, Some(t.compose(i, j)));
    }

    #[test]
    fn vote_returns_a_majority_label(votes in proptest::array::uniform8(label())) {
        let winner = vote(&votes);
        let count = |l: OrientationLabel| votes.iter().filter(|&&v| v == l).count();
        prop_assert!(OrientationLabel::all().all(|l| count(l) <= count(winner)));
        if count(votes[0]) == count(winner) {
            prop_assert_eq!(winner, votes[0]);
        }
    }

    #[test]
    fn oracle_on_views_recovers_the_stored_label(s in slice(), stored in label()) {
        let observed = apply_orientation(&s.with_orientation(OrientationLabel::IDENTITY), stored);
        let oracle = |v: &Slice| v.true_orientation.unwrap();
        let trace = voting_trace(&oracle, &observed, d4::tables()).unwrap();
        prop_assert!(trace.recovered.iter().all(|&r| r == stored));
        prop_assert_eq!(trace.result, stored);
    }
}

#[test]
fn voting_identity_all_pairs() {
    let t = d4::tables();
    for j in OrientationLabel::all() {
        for k in OrientationLabel::all() {
            assert_eq!(t.invert_label(j, t.compose(j, k)), k);
        }
    }
}

#[test]
fn six_involutions() {
    let t = d4::tables();
    let n = OrientationLabel::all().filter(|&l| t.compose(l, l) == OrientationLabel::IDENTITY).count();
    assert_eq!(n, 6);
    assert_eq!(t.inverse_vector(), [0, 1, 2, 3, 4, 6, 5, 7]);
}
