use rayon::prelude::*;

use crate::d4::{OrientationLabel, TransformTables};
use crate::error::Result;
use crate::imgops::{apply_orientation, normalize, resize_bilinear, NormalizedSlice, Slice};
use crate::nn::{Network, PredictionDistribution};

/// Anything that assigns an orientation to a single view.
pub trait OrientationClassifier: Sync {
    fn classify(&self, slice: &Slice) -> Result<OrientationLabel>;
}

impl OrientationClassifier for Network<f32> {
    fn classify(&self, slice: &Slice) -> Result<OrientationLabel> {
        predict_direct(self, slice)
    }
}

impl<F> OrientationClassifier for F
where
    F: Fn(&Slice) -> OrientationLabel + Sync,
{
    fn classify(&self, slice: &Slice) -> Result<OrientationLabel> {
        Ok(self(slice))
    }
}

/// Test-time preprocessing: resize to the network input, then z-score.
pub fn prepare_for_inference(net: &Network<f32>, slice: &Slice) -> Result<NormalizedSlice> {
    let side = net.config().input_size;
    Ok(normalize(&resize_bilinear(slice, side, side)?))
}

fn distribution(net: &Network<f32>, slice: &Slice) -> Result<PredictionDistribution> {
    let input = net.input_tensor(&prepare_for_inference(net, slice)?)?;
    Ok(net.predict_tensor(&input))
}

/// Resize, normalize, classify once and take the argmax (ties go to the
/// smaller label).
pub fn predict_direct(net: &Network<f32>, slice: &Slice) -> Result<OrientationLabel> {
    Ok(distribution(net, slice)?.argmax())
}

/// Majority label of the recovered votes. On a tie the untransformed view's
/// vote wins if it is among the tied labels, otherwise the smallest label.
pub fn vote(recovered: &[OrientationLabel; 8]) -> OrientationLabel {
    let mut counts = [0usize; 8];
    for l in recovered {
        counts[l.index()] += 1;
    }
    let best = *counts.iter().max().expect("8 counts");
    if counts[recovered[0].index()] == best {
        return recovered[0];
    }
    let idx = counts.iter().position(|&c| c == best).expect("max exists");
    OrientationLabel::new(idx as u8).expect("index < 8")
}

/// Intermediate values of one voting prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VotingTrace {
    /// Prediction on view `j = apply_orientation(slice, j)`.
    pub view_predictions: [OrientationLabel; 8],
    /// `invert_label(j, view_predictions[j])`.
    pub recovered: [OrientationLabel; 8],
    pub result: OrientationLabel,
}

/// Classifies the 8 transformed views of `slice`, maps each prediction back
/// through the inverse of the transform that produced the view, and votes.
pub fn voting_trace<C: OrientationClassifier + ?Sized>(
    classifier: &C,
    slice: &Slice,
    tables: &TransformTables,
) -> Result<VotingTrace> {
    let mut view_predictions = [OrientationLabel::IDENTITY; 8];
    let mut recovered = [OrientationLabel::IDENTITY; 8];
    for j in OrientationLabel::all() {
        let view = apply_orientation(slice, j);
        let predicted = classifier.classify(&view)?;
        view_predictions[j.index()] = predicted;
        recovered[j.index()] = tables.invert_label(j, predicted);
    }
    Ok(VotingTrace {
        view_predictions,
        recovered,
        result: vote(&recovered),
    })
}

pub fn predict_voting<C: OrientationClassifier + ?Sized>(
    classifier: &C,
    slice: &Slice,
    tables: &TransformTables,
) -> Result<OrientationLabel> {
    Ok(voting_trace(classifier, slice, tables)?.result)
}

/// Variant that pools softmax mass instead of hard votes: the score of
/// label `t` is the sum over views `j` of `p_j[compose(j, t)]`.
pub fn predict_voting_probability_sum(
    net: &Network<f32>,
    slice: &Slice,
    tables: &TransformTables,
) -> Result<OrientationLabel> {
    let views: Vec<PredictionDistribution> = OrientationLabel::all()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| distribution(net, &apply_orientation(slice, j)))
        .collect::<Result<_>>()?;
    let mut score = [0.0f64; 8];
    for t in OrientationLabel::all() {
        for (j, p) in OrientationLabel::all().zip(&views) {
            score[t.index()] += p.prob(tables.compose(j, t)) as f64;
        }
    }
    let probs = score.map(|s| (s / 8.0) as f32);
    Ok(PredictionDistribution { probs }.argmax())
}

/// Predicts the stored orientation by voting and returns the canonical
/// slice (the inverse transform applied) together with the predicted label.
pub fn reorient<C: OrientationClassifier + ?Sized>(
    classifier: &C,
    slice: &Slice,
    tables: &TransformTables,
) -> Result<(Slice, OrientationLabel)> {
    let predicted = predict_voting(classifier, slice, tables)?;
    Ok((apply_orientation(slice, tables.inverse(predicted)), predicted))
}
