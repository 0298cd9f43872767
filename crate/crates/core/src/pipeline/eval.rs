use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predict::{predict_voting_probability_sum, voting_trace, OrientationClassifier};
use super::Method;
use crate::d4::{self, OrientationLabel};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 8]; 8],
    /// Recall per true label; 0 for labels absent from the data.
    pub per_class_accuracy: [f64; 8],
}

impl EvalReport {
    fn from_pairs(method: Method, pairs: impl IntoIterator<Item = (OrientationLabel, OrientationLabel)>) -> Self {
        let mut confusion = [[0u64; 8]; 8];
        for (truth, predicted) in pairs {
            confusion[truth.index()][predicted.index()] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..8).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = std::array::from_fn(|i| {
            let row: u64 = confusion[i].iter().sum();
            if row == 0 {
                0.0
            } else {
                confusion[i][i] as f64 / row as f64
            }
        });
        EvalReport {
            method,
            total: total as usize,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            confusion,
            per_class_accuracy,
        }
    }
}

/// Scores `classifier` on every sample of `ds` with one method.
pub fn evaluate<C: OrientationClassifier + ?Sized>(classifier: &C, ds: &Dataset, method: Method) -> Result<EvalReport> {
    let (direct, voting) = evaluate_both(classifier, ds)?;
    Ok(match method {
        Method::Direct => direct,
        Method::Voting => voting,
    })
}

/// Direct and voting reports from a single pass. The direct prediction is
/// the classifier's output on the untransformed view, which voting computes
/// anyway.
pub fn evaluate_both<C: OrientationClassifier + ?Sized>(classifier: &C, ds: &Dataset) -> Result<(EvalReport, EvalReport)> {
    if ds.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let tables = d4::tables();
    let traces = ds
        .samples
        .par_iter()
        .map(|s| voting_trace(classifier, &s.slice, tables).map(|t| (s.label, t)))
        .collect::<Result<Vec<_>>>()?;
    let direct = EvalReport::from_pairs(
        Method::Direct,
        traces.iter().map(|(truth, t)| (*truth, t.view_predictions[0])),
    );
    let voting = EvalReport::from_pairs(Method::Voting, traces.iter().map(|(truth, t)| (*truth, t.result)));
    Ok((direct, voting))
}

/// Voting report where views pool softmax mass instead of hard labels.
pub fn evaluate_probability_sum(net: &Network<f32>, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let tables = d4::tables();
    let pairs = ds
        .samples
        .par_iter()
        .map(|s| predict_voting_probability_sum(net, &s.slice, tables).map(|p| (s.label, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_pairs(Method::Voting, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{detect_marker_orientation, expand_orientations, generate_phantoms, PhantomSpec, Split};
    use crate::imgops::{Modality, Slice};

    fn data() -> Dataset {
        let vols = generate_phantoms(&PhantomSpec::new(2, 2, 32, Modality::C0, 8).noiseless()).unwrap();
        expand_orientations(&Dataset::from_volumes(&vols, Split::Test)).unwrap()
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let ds = data();
        let oracle = |s: &Slice| detect_marker_orientation(s).unwrap();
        let (d, v) = evaluate_both(&oracle, &ds).unwrap();
        assert_eq!(d.total, 32);
        assert_eq!(d.accuracy, 1.0);
        assert_eq!(v.accuracy, 1.0);
        for i in 0..8 {
            assert_eq!(d.confusion[i][i], 4);
            assert_eq!(v.per_class_accuracy[i], 1.0);
        }
    }

    #[test]
    fn constant_classifier() {
        let ds = data();
        let zero = |_: &Slice| OrientationLabel::IDENTITY;
        let d = evaluate(&zero, &ds, Method::Direct).unwrap();
        assert!((d.accuracy - 0.125).abs() < 1e-12);
        assert_eq!(d.confusion[3][0], 4);
        assert_eq!(d.per_class_accuracy[0], 1.0);
        assert_eq!(d.per_class_accuracy[5], 0.0);
        // a constant answer recovers a different label from every view, so
        // the tie goes to the untransformed view's vote
        let v = evaluate(&zero, &ds, Method::Voting).unwrap();
        assert_eq!(v.confusion, d.confusion);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let zero = |_: &Slice| OrientationLabel::IDENTITY;
        let ds = Dataset { samples: vec![], split: Split::Test };
        assert!(evaluate(&zero, &ds, Method::Voting).is_err());
    }
}
