//! Detection scores with and without a ±1 range-bin allowance, specificity,
//! first-detection range, latency statistics, and the report that collects
//! them.
//!
//! Ratios whose denominator is zero are reported as `None`.

mod latency;
mod report;

pub use latency::{bench, LatencyStats};
pub use report::{DriveColumn, EvalReport, ScoreSet};

use crate::error::{Error, Result};
use crate::sim::{LabelVector, RadarGeometry};

fn check_pairs(truth: &[LabelVector], pred: &[LabelVector]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} truth frames vs {} predicted frames",
            truth.len(),
            pred.len()
        )));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::Shape(format!(
                "label lengths differ: {} vs {}",
                t.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// `true` if `v` has a positive at `j − 1`, `j`, or `j + 1` (in range).
#[inline]
fn near(v: &LabelVector, j: usize) -> bool {
    let b = v.bins();
    b[j] || (j > 0 && b[j - 1]) || (j + 1 < b.len() && b[j + 1])
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(R₀, R₁)`: recall of the teacher's positives, exact and within ±1 bin.
pub fn r_scores(truth: &[LabelVector], pred: &[LabelVector]) -> Result<(Option<f64>, Option<f64>)> {
    check_pairs(truth, pred)?;
    let (mut positives, mut hit0, mut hit1) = (0u64, 0u64, 0u64);
    for (y, yhat) in truth.iter().zip(pred) {
        for j in y.positives() {
            positives += 1;
            hit0 += yhat.get(j) as u64;
            hit1 += near(yhat, j) as u64;
        }
    }
    Ok((ratio(hit0, positives), ratio(hit1, positives)))
}

/// `(P₀, P₁)` over frames where the truth has at least one positive; a
/// prediction counts for P₁ when the truth is positive within ±1 bin.
pub fn p_scores(truth: &[LabelVector], pred: &[LabelVector]) -> Result<(Option<f64>, Option<f64>)> {
    check_pairs(truth, pred)?;
    let (mut predicted, mut tp0, mut tp1) = (0u64, 0u64, 0u64);
    for (y, yhat) in truth.iter().zip(pred).filter(|(y, _)| y.any()) {
        for j in yhat.positives() {
            predicted += 1;
            tp0 += y.get(j) as u64;
            tp1 += near(y, j) as u64;
        }
    }
    Ok((ratio(tp0, predicted), ratio(tp1, predicted)))
}

/// `tn / (tn + fp)` per bin over frames where the truth has a positive.
pub fn specificity(truth: &[LabelVector], pred: &[LabelVector]) -> Result<Option<f64>> {
    check_pairs(truth, pred)?;
    let (mut tn, mut fp) = (0u64, 0u64);
    for (y, yhat) in truth.iter().zip(pred).filter(|(y, _)| y.any()) {
        for (&t, &p) in y.bins().iter().zip(yhat.bins()) {
            if !t {
                if p {
                    fp += 1;
                } else {
                    tn += 1;
                }
            }
        }
    }
    Ok(ratio(tn, tn + fp))
}

/// All five ratios over the frames where `truth` is present; absent truth
/// frames are counted as skipped.
pub fn score_frames(truth: &[Option<LabelVector>], pred: &[LabelVector]) -> Result<ScoreSet> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} truth frames vs {} predicted frames",
            truth.len(),
            pred.len()
        )));
    }
    let (t, p): (Vec<LabelVector>, Vec<LabelVector>) = truth
        .iter()
        .zip(pred)
        .filter_map(|(t, p)| t.as_ref().map(|t| (t.clone(), p.clone())))
        .unzip();
    let (r0, r1) = r_scores(&t, &p)?;
    let (p0, p1) = p_scores(&t, &p)?;
    Ok(ScoreSet {
        r0,
        r1,
        p0,
        p1,
        specificity: specificity(&t, &p)?,
        frames_evaluated: t.len(),
        frames_skipped: truth.len() - t.len(),
    })
}

/// Consecutive frames a detection must persist before it counts.
pub const SUSTAIN_FRAMES: usize = 3;

/// Range in meters at which the detector first sustains a true-positive
/// detection of the target (truth positive within ±1 bin) for
/// [`SUSTAIN_FRAMES`] consecutive frames; 0 if it never does. Abstained
/// frames (`None`) break a run.
pub fn first_detection_range(
    truth: &[LabelVector],
    predictions: &[Option<LabelVector>],
    geometry: &RadarGeometry,
) -> Result<f64> {
    if truth.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} truth frames vs {} predicted frames",
            truth.len(),
            predictions.len()
        )));
    }
    let farthest_tp = |i: usize| -> Option<usize> {
        let pred = predictions[i].as_ref()?;
        pred.positives().filter(|&j| near(&truth[i], j)).max()
    };
    let tps: Vec<Option<usize>> = (0..truth.len()).map(farthest_tp).collect();
    for i in 0..tps.len() {
        if i + SUSTAIN_FRAMES > tps.len() {
            break;
        }
        if tps[i..i + SUSTAIN_FRAMES].iter().all(Option::is_some) {
            let j = tps[i].expect("checked");
            return Ok(j as f64 * geometry.range_resolution as f64);
        }
    }
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::from_bools(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn perfect_match_scores_one() {
        let y = vec![lv(&[0, 1, 0, 0]), lv(&[1, 0, 0, 1])];
        assert_eq!(r_scores(&y, &y).unwrap(), (Some(1.0), Some(1.0)));
        assert_eq!(p_scores(&y, &y).unwrap(), (Some(1.0), Some(1.0)));
        assert_eq!(specificity(&y, &y).unwrap(), Some(1.0));
    }

    #[test]
    fn one_bin_offset() {
        let y = [lv(&[0, 1, 0, 0])];
        assert_eq!(r_scores(&y, &[lv(&[0, 0, 1, 0])]).unwrap(), (Some(0.0), Some(1.0)));
        assert_eq!(p_scores(&y, &[lv(&[0, 1, 1, 0])]).unwrap(), (Some(0.5), Some(1.0)));
        let s = specificity(&y, &[lv(&[1, 1, 0, 0])]).unwrap().unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(specificity(&y, &[lv(&[0, 0, 0, 0])]).unwrap(), Some(1.0));
    }

    #[test]
    fn undefined_ratios_are_none() {
        let y = [lv(&[0, 0, 0])];
        assert_eq!(r_scores(&y, &[lv(&[1, 0, 0])]).unwrap(), (None, None));
        assert_eq!(p_scores(&y, &[lv(&[1, 0, 0])]).unwrap(), (None, None));
        assert_eq!(specificity(&y, &[lv(&[1, 0, 0])]).unwrap(), None);
        assert_eq!(p_scores(&[lv(&[0, 1, 0])], &[lv(&[0, 0, 0])]).unwrap(), (None, None));
    }

    #[test]
    fn boundary_bins_use_existing_neighbours() {
        let y = [lv(&[1, 0, 0, 0, 0, 1])];
        let p = [lv(&[0, 1, 0, 0, 1, 0])];
        assert_eq!(r_scores(&y, &p).unwrap(), (Some(0.0), Some(1.0)));
        assert_eq!(p_scores(&y, &p).unwrap(), (Some(0.0), Some(1.0)));
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(r_scores(&[lv(&[1, 0])], &[]).is_err());
        assert!(p_scores(&[lv(&[1, 0])], &[lv(&[1])]).is_err());
    }

    #[test]
    fn absent_truth_frames_are_skipped() {
        let truth = vec![None, Some(lv(&[0, 1, 0])), Some(lv(&[0, 0, 0]))];
        let pred = vec![lv(&[1, 1, 1]), lv(&[0, 1, 0]), lv(&[1, 0, 0])];
        let s = score_frames(&truth, &pred).unwrap();
        assert_eq!(s.frames_evaluated, 2);
        assert_eq!(s.frames_skipped, 1);
        assert_eq!(s.r0, Some(1.0));
        assert_eq!(s.p0, Some(1.0));
    }

    #[test]
    fn first_detection_examples() {
        let g = RadarGeometry::default();
        let truth: Vec<LabelVector> = (0..10).map(|i| LabelVector::from_bins(464, &[460 - 2 * i])).collect();
        let never: Vec<Option<LabelVector>> = vec![Some(LabelVector::zeros(464)); 10];
        assert_eq!(first_detection_range(&truth, &never, &g).unwrap(), 0.0);
        let perfect: Vec<Option<LabelVector>> = truth.iter().cloned().map(Some).collect();
        let r = first_detection_range(&truth, &perfect, &g).unwrap();
        assert!((r - 299.0).abs() < 1e-3);
        // flicker at frame 1 delays the sustained detection to frame 2
        let mut flicker = perfect.clone();
        flicker[1] = None;
        let r = first_detection_range(&truth, &flicker, &g).unwrap();
        assert!((r - 456.0 * 0.65).abs() < 1e-3);
    }
}
