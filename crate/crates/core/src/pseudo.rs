//! Pseudo-labeling and the combined training set.
//!
//! A trained model labels the transliterated training corpus with its
//! argmax predictions; the labeled copy is merged with the original
//! code-mixed training set and shuffled once to form the combined set
//! (CM-TRA). The test split never passes through here.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{merge_datasets, CorpusError, Dataset, Language, OffenseLabel, Origin, Split};
use crate::model::{ClassifierModel, ModelError};
use crate::nn::argmax;
use crate::rng::substream;

/// Anything that can assign per-class probabilities to texts, in the
/// language's canonical label order. The production labeler is
/// [`ClassifierModel`]; tests plug in stubs.
pub trait Labeler {
    fn language(&self) -> Language;
    /// Identifier recorded in the pseudo-label run report.
    fn model_id(&self) -> String;
    fn predict_probs(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ModelError>;
}

impl Labeler for ClassifierModel {
    fn language(&self) -> Language {
        self.language
    }

    fn model_id(&self) -> String {
        format!("classifier-{}-seed{}", self.language, self.config.seed)
    }

    fn predict_probs(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ModelError> {
        let batch: Vec<Vec<usize>> = texts.iter().map(|t| self.encode(t)).collect();
        self.forward(&batch, false)
    }
}

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the test split must never be pseudo-labeled")]
    TestSplit,
    #[error("sample {index} has origin {origin:?}, expected Transliterated")]
    WrongOrigin { index: usize, origin: Origin },
    #[error("threshold {0} is not a probability")]
    BadThreshold(f64),
    #[error("labeler emitted {got} probabilities for a {expected}-class language")]
    ArityMismatch { got: usize, expected: usize },
}

/// Bookkeeping for one pseudo-labeling pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabelRun {
    pub model_id: String,
    pub threshold: Option<f64>,
    pub labeled: usize,
    pub skipped: usize,
    pub histogram: BTreeMap<OffenseLabel, usize>,
}

/// Label every sample with the labeler's argmax prediction. With a
/// threshold set, samples whose top probability falls below it are
/// dropped and counted; without one (the default) everything is kept.
/// Sample order is preserved.
pub fn generate_pseudo_labels(
    labeler: &dyn Labeler,
    transliterated: &Dataset,
    threshold: Option<f64>,
) -> Result<(Dataset, PseudoLabelRun), PseudoError> {
    if labeler.language() != transliterated.language {
        return Err(PseudoError::Corpus(CorpusError::LanguageMismatch {
            expected: labeler.language(),
            got: transliterated.language,
        }));
    }
    if transliterated.split == Split::Test {
        return Err(PseudoError::TestSplit);
    }
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(PseudoError::BadThreshold(t));
        }
    }
    for (index, sample) in transliterated.iter().enumerate() {
        if sample.origin != Origin::Transliterated {
            return Err(PseudoError::WrongOrigin {
                index,
                origin: sample.origin,
            });
        }
    }

    let labelset = transliterated.language.label_set();
    let texts: Vec<&str> = transliterated.iter().map(|s| s.text.as_str()).collect();
    let probs = labeler.predict_probs(&texts)?;

    let mut out = Dataset::new(transliterated.language, transliterated.split);
    let mut histogram: BTreeMap<OffenseLabel, usize> =
        labelset.iter().map(|l| (*l, 0)).collect();
    let mut skipped = 0usize;
    for (sample, p) in transliterated.iter().zip(&probs) {
        if p.len() != labelset.len() {
            return Err(PseudoError::ArityMismatch {
                got: p.len(),
                expected: labelset.len(),
            });
        }
        let best = argmax(p);
        if let Some(t) = threshold {
            if p[best] < t {
                skipped += 1;
                continue;
            }
        }
        let label = labelset[best];
        *histogram.get_mut(&label).expect("label in set") += 1;
        let mut labeled = sample.clone();
        labeled.label = Some(label);
        out.push(labeled)?;
    }
    let run = PseudoLabelRun {
        model_id: labeler.model_id(),
        threshold,
        labeled: out.len(),
        skipped,
        histogram,
    };
    Ok((out, run))
}

/// Merge the gold code-mixed training set with the pseudo-labeled
/// transliterated copy and apply one seeded shuffle. Origin tags survive,
/// so the gold half's distribution stays recoverable.
pub fn build_cm_tra(
    cm_train: &Dataset,
    pseudo_labeled: &Dataset,
    seed: u64,
) -> Result<Dataset, PseudoError> {
    for (index, sample) in cm_train.iter().enumerate() {
        if sample.label.is_none() {
            return Err(PseudoError::Corpus(CorpusError::UnlabeledSample { index }));
        }
        if sample.origin != Origin::CodeMixed {
            return Err(PseudoError::WrongOrigin {
                index,
                origin: sample.origin,
            });
        }
    }
    for (index, sample) in pseudo_labeled.iter().enumerate() {
        if sample.label.is_none() {
            return Err(PseudoError::Corpus(CorpusError::UnlabeledSample { index }));
        }
        if sample.origin != Origin::Transliterated {
            return Err(PseudoError::WrongOrigin {
                index,
                origin: sample.origin,
            });
        }
    }
    let merged = merge_datasets(cm_train, pseudo_labeled)?;
    let mut samples = merged.samples().to_vec();
    samples.shuffle(&mut substream(seed, "cmtra-shuffle"));
    Ok(Dataset::from_samples(merged.language, merged.split, samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{class_distribution, LabeledComment};

    struct StubLabeler {
        language: Language,
        /// Cycled per sample.
        prob_rows: Vec<Vec<f64>>,
    }

    impl Labeler for StubLabeler {
        fn language(&self) -> Language {
            self.language
        }

        fn model_id(&self) -> String {
            "stub".into()
        }

        fn predict_probs(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ModelError> {
            Ok((0..texts.len())
                .map(|i| self.prob_rows[i % self.prob_rows.len()].clone())
                .collect())
        }
    }

    fn tra_dataset(language: Language, n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                LabeledComment::new(
                    format!("sample {i}"),
                    None,
                    language,
                    Origin::Transliterated,
                )
                .unwrap()
            })
            .collect();
        Dataset::from_samples(language, Split::Train, samples).unwrap()
    }

    fn cm_dataset(language: Language, n: usize) -> Dataset {
        let labels = language.label_set();
        let samples = (0..n)
            .map(|i| {
                LabeledComment::new(
                    format!("gold {i}"),
                    Some(labels[i % labels.len()]),
                    language,
                    Origin::CodeMixed,
                )
                .unwrap()
            })
            .collect();
        Dataset::from_samples(language, Split::Train, samples).unwrap()
    }

    #[test]
    fn plain_argmax_labels_everything() {
        let data = tra_dataset(Language::Kannada, 7);
        // Probability mass fully on Other_language (index 1).
        let stub = StubLabeler {
            language: Language::Kannada,
            prob_rows: vec![vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]],
        };
        let (labeled, run) = generate_pseudo_labels(&stub, &data, None).unwrap();
        assert_eq!(labeled.len(), 7);
        assert!(labeled
            .iter()
            .all(|s| s.label == Some(OffenseLabel::OtherLanguage)));
        assert_eq!(run.labeled, 7);
        assert_eq!(run.skipped, 0);
        assert_eq!(run.histogram[&OffenseLabel::OtherLanguage], 7);
        assert_eq!(run.histogram.values().sum::<usize>(), run.labeled);
        // Order preserved.
        assert_eq!(labeled.samples()[3].text, "sample 3");
    }

    #[test]
    fn threshold_drops_low_confidence_samples() {
        let data = tra_dataset(Language::Tamil, 10);
        // Alternating top probabilities 0.9 and 0.3.
        let stub = StubLabeler {
            language: Language::Tamil,
            prob_rows: vec![
                vec![0.9, 0.02, 0.02, 0.02, 0.02, 0.02],
                vec![0.3, 0.14, 0.14, 0.14, 0.14, 0.14],
            ],
        };
        let (labeled, run) = generate_pseudo_labels(&stub, &data, Some(0.5)).unwrap();
        assert_eq!(labeled.len(), 5);
        assert_eq!(run.labeled, 5);
        assert_eq!(run.skipped, 5);
        assert_eq!(run.labeled + run.skipped, data.len());
    }

    #[test]
    fn malayalam_pseudo_labels_exclude_oto() {
        let data = tra_dataset(Language::Malayalam, 12);
        // Uniform probabilities over the 5 permitted classes; ties break
        // to the lowest index.
        let stub = StubLabeler {
            language: Language::Malayalam,
            prob_rows: vec![vec![0.2; 5]],
        };
        let (labeled, _) = generate_pseudo_labels(&stub, &data, None).unwrap();
        for s in labeled.iter() {
            assert!(Language::Malayalam.permits(s.label.unwrap()));
            assert_ne!(s.label.unwrap(), OffenseLabel::OffensiveTargetedInsultOther);
        }
        assert!(labeled
            .iter()
            .all(|s| s.label == Some(OffenseLabel::NotOffensive)));
    }

    #[test]
    fn pseudo_labeling_is_deterministic() {
        let data = tra_dataset(Language::Kannada, 9);
        let stub = StubLabeler {
            language: Language::Kannada,
            prob_rows: vec![vec![0.1, 0.5, 0.1, 0.1, 0.1, 0.1]],
        };
        let a = generate_pseudo_labels(&stub, &data, None).unwrap();
        let b = generate_pseudo_labels(&stub, &data, None).unwrap();
        assert_eq!(a.0.samples(), b.0.samples());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn test_split_and_wrong_origin_are_rejected() {
        let stub = StubLabeler {
            language: Language::Kannada,
            prob_rows: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
        };
        let mut test_split = tra_dataset(Language::Kannada, 2);
        test_split.split = Split::Test;
        assert!(matches!(
            generate_pseudo_labels(&stub, &test_split, None),
            Err(PseudoError::TestSplit)
        ));

        let cm = cm_dataset(Language::Kannada, 2);
        assert!(matches!(
            generate_pseudo_labels(&stub, &cm, None),
            Err(PseudoError::WrongOrigin { index: 0, .. })
        ));

        let tamil = tra_dataset(Language::Tamil, 2);
        assert!(matches!(
            generate_pseudo_labels(&stub, &tamil, None),
            Err(PseudoError::Corpus(CorpusError::LanguageMismatch { .. }))
        ));
    }

    #[test]
    fn cm_tra_doubles_and_preserves_gold_subset() {
        let cm = cm_dataset(Language::Kannada, 30);
        let tra = tra_dataset(Language::Kannada, 30);
        let stub = StubLabeler {
            language: Language::Kannada,
            prob_rows: vec![vec![0.0, 0.0, 0.9, 0.1, 0.0, 0.0]],
        };
        let (pseudo, _) = generate_pseudo_labels(&stub, &tra, None).unwrap();
        let combined = build_cm_tra(&cm, &pseudo, 99).unwrap();
        assert_eq!(combined.len(), 60);

        // The CodeMixed-origin half is the gold training set, sample for
        // sample (order changes under the shuffle).
        let gold_half = combined.filter_origin(Origin::CodeMixed);
        let mut got: Vec<_> = gold_half.samples().to_vec();
        let mut want: Vec<_> = cm.samples().to_vec();
        let key = |s: &LabeledComment| (s.text.clone(), s.label);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
        assert_eq!(
            class_distribution(&gold_half).unwrap(),
            class_distribution(&cm).unwrap()
        );
    }

    #[test]
    fn empty_pseudo_set_yields_shuffled_gold_copy() {
        let cm = cm_dataset(Language::Tamil, 12);
        let empty = Dataset::new(Language::Tamil, Split::Train);
        let combined = build_cm_tra(&cm, &empty, 7).unwrap();
        assert_eq!(combined.len(), cm.len());
        assert_eq!(
            class_distribution(&combined).unwrap(),
            class_distribution(&cm).unwrap()
        );
    }

    #[test]
    fn cm_tra_shuffle_is_seeded() {
        let cm = cm_dataset(Language::Kannada, 20);
        let tra = tra_dataset(Language::Kannada, 20);
        let stub = StubLabeler {
            language: Language::Kannada,
            prob_rows: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
        };
        let (pseudo, _) = generate_pseudo_labels(&stub, &tra, None).unwrap();
        let a = build_cm_tra(&cm, &pseudo, 5).unwrap();
        let b = build_cm_tra(&cm, &pseudo, 5).unwrap();
        let c = build_cm_tra(&cm, &pseudo, 6).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_ne!(a.samples(), c.samples());
    }
}
