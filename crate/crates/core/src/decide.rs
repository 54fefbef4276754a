//! Video-level verdicts from per-map predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stmap::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPrediction {
    pub map: String,
    /// `(real, fake)`.
    pub probs: [f64; 2],
    pub predicted: Label,
}

impl MapPrediction {
    /// Argmax of `probs`; an exact tie counts as real.
    pub fn new(map: impl Into<String>, probs: [f64; 2]) -> Self {
        let predicted = if probs[1] > probs[0] { Label::Fake } else { Label::Real };
        MapPrediction {
            map: map.into(),
            probs,
            predicted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub real: usize,
    pub fake: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub video: String,
    pub verdict: Label,
    pub votes: Votes,
    pub mean_probs: [f64; 2],
    /// Whether the vote was tied and the mean probabilities decided.
    pub tie_break: bool,
}

/// Majority vote; a tied vote goes to the larger mean probability and an
/// exact tie there to real.
pub fn video_verdict(video: impl Into<String>, preds: &[MapPrediction]) -> Result<VideoVerdict> {
    if preds.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let fake = preds.iter().filter(|p| p.predicted == Label::Fake).count();
    let votes = Votes {
        real: preds.len() - fake,
        fake,
    };
    let n = preds.len() as f64;
    let mean_probs = [
        preds.iter().map(|p| p.probs[0]).sum::<f64>() / n,
        preds.iter().map(|p| p.probs[1]).sum::<f64>() / n,
    ];
    let tie_break = votes.real == votes.fake;
    let verdict = if !tie_break {
        if votes.fake > votes.real {
            Label::Fake
        } else {
            Label::Real
        }
    } else if mean_probs[1] > mean_probs[0] {
        Label::Fake
    } else {
        Label::Real
    };
    Ok(VideoVerdict {
        video: video.into(),
        verdict,
        votes,
        mean_probs,
        tie_break,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(probs: &[[f64; 2]]) -> Vec<MapPrediction> {
        probs.iter().enumerate().map(|(i, &p)| MapPrediction::new(format!("m{i}"), p)).collect()
    }

    #[test]
    fn argmax_tie_is_real() {
        assert_eq!(MapPrediction::new("m", [0.5, 0.5]).predicted, Label::Real);
        assert_eq!(MapPrediction::new("m", [0.4, 0.6]).predicted, Label::Fake);
    }

    #[test]
    fn double_tie_is_real() {
        let v = video_verdict("v", &preds(&[[0.3, 0.7], [0.7, 0.3]])).unwrap();
        assert!(v.tie_break);
        assert_eq!(v.mean_probs, [0.5, 0.5]);
        assert_eq!(v.verdict, Label::Real);
    }

    #[test]
    fn empty_list_rejected() {
        assert!(matches!(video_verdict("v", &[]), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn verdict_invariant_under_permutation_and_duplication(
            raw in proptest::collection::vec(0.0f64..1.0, 1..12),
            seed in any::<u64>(),
        ) {
            let list = preds(&raw.iter().map(|&f| [1.0 - f, f]).collect::<Vec<_>>());
            let base = video_verdict("v", &list).unwrap();
            let mut shuffled = list.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
            prop_assert_eq!(video_verdict("v", &shuffled).unwrap().verdict, base.verdict);
            let doubled: Vec<_> = list.iter().chain(list.iter()).cloned().collect();
            prop_assert_eq!(video_verdict("v", &doubled).unwrap().verdict, base.verdict);
            if list.len() % 2 == 1 {
                prop_assert!(!base.tie_break);
            }
        }
    }
}
