//! Labeled-dataset ingestion for the DravidianCodeMix offensive-language splits.
//!
//! The distributed files are two-column UTF-8 TSV, `<text>\t<label>`, one
//! record per line. Texts occasionally contain raw tabs, so records are
//! split on the *last* tab and the label is always the final field.
//! Unknown label strings are hard errors; the handful of spelling
//! variants present in the raw files is frozen in [`OffenseLabel::parse`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six offense classes, in the canonical column order of the
/// published class-distribution tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OffenseLabel {
    NotOffensive,
    OtherLanguage,
    OffensiveTargetedInsultIndividual,
    OffensiveTargetedInsultGroup,
    OffensiveTargetedInsultOther,
    OffensiveUntargeted,
}

impl OffenseLabel {
    /// All six labels in canonical order (NO, OL, OTI, OTG, OTO, OU).
    pub const ALL: [OffenseLabel; 6] = [
        OffenseLabel::NotOffensive,
        OffenseLabel::OtherLanguage,
        OffenseLabel::OffensiveTargetedInsultIndividual,
        OffenseLabel::OffensiveTargetedInsultGroup,
        OffenseLabel::OffensiveTargetedInsultOther,
        OffenseLabel::OffensiveUntargeted,
    ];

    /// Canonical serialized form; `parse` accepts this plus the raw-file aliases.
    pub fn canonical(self) -> &'static str {
        match self {
            OffenseLabel::NotOffensive => "Not_offensive",
            OffenseLabel::OtherLanguage => "Other_language",
            OffenseLabel::OffensiveTargetedInsultIndividual => {
                "Offensive_Targeted_Insult_Individual"
            }
            OffenseLabel::OffensiveTargetedInsultGroup => "Offensive_Targeted_Insult_Group",
            OffenseLabel::OffensiveTargetedInsultOther => "Offensive_Targeted_Insult_Other",
            OffenseLabel::OffensiveUntargeted => "Offensive_Untargeted",
        }
    }

    /// Two/three-letter abbreviation used in summary tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            OffenseLabel::NotOffensive => "NO",
            OffenseLabel::OtherLanguage => "OL",
            OffenseLabel::OffensiveTargetedInsultIndividual => "OTI",
            OffenseLabel::OffensiveTargetedInsultGroup => "OTG",
            OffenseLabel::OffensiveTargetedInsultOther => "OTO",
            OffenseLabel::OffensiveUntargeted => "OU",
        }
    }

    /// Long display name, matching the classification-report row headers.
    pub fn display_name(self) -> &'static str {
        match self {
            OffenseLabel::NotOffensive => "Not Offensive",
            OffenseLabel::OtherLanguage => "Other Language",
            OffenseLabel::OffensiveTargetedInsultIndividual => "Offensive Targeted Individual",
            OffenseLabel::OffensiveTargetedInsultGroup => "Offensive Targeted Group",
            OffenseLabel::OffensiveTargetedInsultOther => "Offensive Targeted Others",
            OffenseLabel::OffensiveUntargeted => "Offensive Untargeted",
        }
    }

    /// Index of this label in [`OffenseLabel::ALL`].
    pub fn canonical_index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).unwrap()
    }

    /// Parse a raw label string.
    ///
    /// Besides the canonical strings, this accepts the alias table frozen
    /// from an enumeration pass over the distributed files: the
    /// `Offensive_Untargetede` trailing-character variant and the
    /// per-language `not-<Language>` forms of the other-language class.
    /// Anything else is an error, never silently coerced.
    pub fn parse(raw: &str) -> Result<OffenseLabel, CorpusError> {
        let trimmed = raw.trim();
        let label = match trimmed {
            "Not_offensive" => OffenseLabel::NotOffensive,
            "Other_language" => OffenseLabel::OtherLanguage,
            "Offensive_Targeted_Insult_Individual" => {
                OffenseLabel::OffensiveTargetedInsultIndividual
            }
            "Offensive_Targeted_Insult_Group" => OffenseLabel::OffensiveTargetedInsultGroup,
            "Offensive_Targeted_Insult_Other" => OffenseLabel::OffensiveTargetedInsultOther,
            "Offensive_Untargeted" => OffenseLabel::OffensiveUntargeted,
            // Frozen aliases observed in the raw files.
            "Offensive_Untargetede" => OffenseLabel::OffensiveUntargeted,
            "not-Kannada" | "not-Tamil" | "not-malayalam" | "not-Malayalam" => {
                OffenseLabel::OtherLanguage
            }
            _ => {
                return Err(CorpusError::LabelParse {
                    found: trimmed.to_string(),
                })
            }
        };
        Ok(label)
    }
}

impl fmt::Display for OffenseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

/// The three corpus languages. Malayalam's label set excludes
/// `Offensive_Targeted_Insult_Other` (five classes); Kannada and Tamil
/// permit all six.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Kannada,
    Malayalam,
    Tamil,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::Kannada, Language::Malayalam, Language::Tamil];

    /// Permitted labels in canonical order.
    pub fn label_set(self) -> &'static [OffenseLabel] {
        const SIX: [OffenseLabel; 6] = OffenseLabel::ALL;
        const FIVE: [OffenseLabel; 5] = [
            OffenseLabel::NotOffensive,
            OffenseLabel::OtherLanguage,
            OffenseLabel::OffensiveTargetedInsultIndividual,
            OffenseLabel::OffensiveTargetedInsultGroup,
            OffenseLabel::OffensiveUntargeted,
        ];
        match self {
            Language::Malayalam => &FIVE,
            Language::Kannada | Language::Tamil => &SIX,
        }
    }

    pub fn num_classes(self) -> usize {
        self.label_set().len()
    }

    pub fn permits(self, label: OffenseLabel) -> bool {
        self.label_set().contains(&label)
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::Kannada => "kannada",
            Language::Malayalam => "malayalam",
            Language::Tamil => "tamil",
        }
    }

    pub fn parse(s: &str) -> Result<Language, CorpusError> {
        match s.to_ascii_lowercase().as_str() {
            "kannada" | "kn" => Ok(Language::Kannada),
            "malayalam" | "ml" => Ok(Language::Malayalam),
            "tamil" | "ta" => Ok(Language::Tamil),
            _ => Err(CorpusError::UnknownLanguage(s.to_string())),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether a sample came from the original code-mixed corpus or from the
/// transliteration pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    CodeMixed,
    Transliterated,
}

impl Origin {
    /// Short tag used as the optional third TSV column.
    pub fn tag(self) -> &'static str {
        match self {
            Origin::CodeMixed => "cm",
            Origin::Transliterated => "tra",
        }
    }

    pub fn parse(s: &str) -> Result<Origin, CorpusError> {
        match s {
            "cm" => Ok(Origin::CodeMixed),
            "tra" => Ok(Origin::Transliterated),
            _ => Err(CorpusError::UnknownOrigin(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unsplit,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
        }
    }
}

/// One text sample with an optional gold or pseudo label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledComment {
    pub text: String,
    pub label: Option<OffenseLabel>,
    pub language: Language,
    pub origin: Origin,
}

impl LabeledComment {
    /// Validates the two record invariants: non-empty trimmed text and a
    /// label (when present) permitted for the language.
    pub fn new(
        text: String,
        label: Option<OffenseLabel>,
        language: Language,
        origin: Origin,
    ) -> Result<LabeledComment, CorpusError> {
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText);
        }
        if let Some(l) = label {
            if !language.permits(l) {
                return Err(CorpusError::LabelSet { label: l, language });
            }
        }
        Ok(LabeledComment {
            text,
            label,
            language,
            origin,
        })
    }
}

/// An ordered collection of samples sharing one language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<LabeledComment>,
    pub language: Language,
    pub split: Split,
}

impl Dataset {
    pub fn new(language: Language, split: Split) -> Dataset {
        Dataset {
            samples: Vec::new(),
            language,
            split,
        }
    }

    pub fn from_samples(
        language: Language,
        split: Split,
        samples: Vec<LabeledComment>,
    ) -> Result<Dataset, CorpusError> {
        for s in &samples {
            if s.language != language {
                return Err(CorpusError::LanguageMismatch {
                    expected: language,
                    got: s.language,
                });
            }
        }
        Ok(Dataset {
            samples,
            language,
            split,
        })
    }

    pub fn push(&mut self, sample: LabeledComment) -> Result<(), CorpusError> {
        if sample.language != self.language {
            return Err(CorpusError::LanguageMismatch {
                expected: self.language,
                got: sample.language,
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[LabeledComment] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledComment> {
        self.samples.iter()
    }

    /// Samples restricted to one origin, order preserved.
    pub fn filter_origin(&self, origin: Origin) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.origin == origin)
                .cloned()
                .collect(),
            language: self.language,
            split: self.split,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown label string {found:?}")]
    LabelParse { found: String },
    #[error("label {label} is not permitted for {language}")]
    LabelSet {
        label: OffenseLabel,
        language: Language,
    },
    #[error("record text is empty after trimming")]
    EmptyText,
    #[error("labeled record has no tab separator")]
    MissingTab,
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("unknown origin tag {0:?} (expected \"cm\" or \"tra\")")]
    UnknownOrigin(String),
    #[error("language mismatch: expected {expected}, got {got}")]
    LanguageMismatch { expected: Language, got: Language },
    #[error("sample {index} is unlabeled")]
    UnlabeledSample { index: usize },
    #[error("{path}:{line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Failed label-set validation: the offending sample indices and labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSetViolations {
    pub language: Language,
    pub entries: Vec<(usize, OffenseLabel)>,
}

impl fmt::Display for LabelSetViolations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} sample(s) carry labels outside the {} label set:",
            self.entries.len(),
            self.language
        )?;
        for (idx, label) in &self.entries {
            write!(f, " [{idx}]={label}")?;
        }
        Ok(())
    }
}

impl std::error::Error for LabelSetViolations {}

/// Header lines recognized (by exact match only) and skipped by the loader.
const KNOWN_HEADERS: [&str; 3] = ["text\tcategory", "Text\tCategory", "text\tlabel"];

/// Parse one TSV record.
///
/// The text is everything before the last tab; the label is the final
/// field. In unlabeled mode the label field, if any, is ignored.
pub fn parse_tsv_record(
    line: &str,
    language: Language,
    labeled: bool,
) -> Result<LabeledComment, CorpusError> {
    if labeled {
        let tab = line.rfind('\t').ok_or(CorpusError::MissingTab)?;
        let text = &line[..tab];
        let label = OffenseLabel::parse(&line[tab + 1..])?;
        LabeledComment::new(text.to_string(), Some(label), language, Origin::CodeMixed)
    } else {
        let text = match line.rfind('\t') {
            Some(tab) => &line[..tab],
            None => line,
        };
        LabeledComment::new(text.to_string(), None, language, Origin::CodeMixed)
    }
}

/// Parse a record carrying the optional third `origin` column
/// (`<text>\t<label>\t<origin>`), as written by [`to_tsv_with_origin`].
/// An empty label field means unlabeled.
pub fn parse_tsv_record_with_origin(
    line: &str,
    language: Language,
) -> Result<LabeledComment, CorpusError> {
    let last = line.rfind('\t').ok_or(CorpusError::MissingTab)?;
    let origin = Origin::parse(&line[last + 1..])?;
    let rest = &line[..last];
    let tab = rest.rfind('\t').ok_or(CorpusError::MissingTab)?;
    let label_field = &rest[tab + 1..];
    let label = if label_field.trim().is_empty() {
        None
    } else {
        Some(OffenseLabel::parse(label_field)?)
    };
    LabeledComment::new(rest[..tab].to_string(), label, language, origin)
}

fn load_lines(
    content: &str,
    path_for_errors: &str,
    mut parse: impl FnMut(&str) -> Result<LabeledComment, CorpusError>,
    language: Language,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let mut dataset = Dataset::new(language, split);
    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if lineno == 0 && KNOWN_HEADERS.contains(&line) {
            continue;
        }
        if line.trim().is_empty() {
            log::warn!("{path_for_errors}:{}: skipping blank line", lineno + 1);
            continue;
        }
        let sample = parse(line).map_err(|e| CorpusError::Record {
            path: path_for_errors.to_string(),
            line: lineno + 1,
            source: Box::new(e),
        })?;
        dataset.push(sample)?;
    }
    Ok(dataset)
}

/// Load one split from a TSV file.
///
/// Blank lines are skipped with a logged warning; a single known header
/// line is auto-detected by exact match. After loading, the dataset is
/// checked against the published reference distributions and any
/// mismatch is logged (the loader reports what the file contains and
/// never reconciles the counts).
pub fn load_split(
    path: impl AsRef<Path>,
    language: Language,
    split: Split,
    labeled: bool,
) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let dataset = load_lines(
        &content,
        &path.display().to_string(),
        |line| parse_tsv_record(line, language, labeled),
        language,
        split,
    )?;
    let mismatches = reference::check_dataset(&dataset);
    let size_differs = mismatches
        .iter()
        .any(|m| matches!(m, reference::ReferenceMismatch::SplitSize { .. }));
    for warning in &mismatches {
        // When the size itself is off (toy files, truncated downloads),
        // the per-class lines add nothing; one size line is enough.
        if size_differs && matches!(warning, reference::ReferenceMismatch::ClassCount { .. }) {
            continue;
        }
        log::warn!("{}: {warning}", path.display());
    }
    Ok(dataset)
}

/// Load a TSV written with the three-column origin form.
pub fn load_tsv_with_origin(
    path: impl AsRef<Path>,
    language: Language,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_lines(
        &content,
        &path.display().to_string(),
        |line| parse_tsv_record_with_origin(line, language),
        language,
        split,
    )
}

/// Serialize to the two-column distribution format. Unlabeled samples are
/// written as `<text>\t`.
pub fn to_tsv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in dataset.iter() {
        out.push_str(&s.text);
        out.push('\t');
        if let Some(l) = s.label {
            out.push_str(l.canonical());
        }
        out.push('\n');
    }
    out
}

/// Serialize with the extra `origin` column (`cm` | `tra`).
pub fn to_tsv_with_origin(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in dataset.iter() {
        out.push_str(&s.text);
        out.push('\t');
        if let Some(l) = s.label {
            out.push_str(l.canonical());
        }
        out.push('\t');
        out.push_str(s.origin.tag());
        out.push('\n');
    }
    out
}

/// Per-class sample counts. Every label permitted for the dataset's
/// language appears, absent classes mapping to 0.
pub fn class_distribution(
    dataset: &Dataset,
) -> Result<BTreeMap<OffenseLabel, usize>, CorpusError> {
    let mut counts: BTreeMap<OffenseLabel, usize> = dataset
        .language
        .label_set()
        .iter()
        .map(|l| (*l, 0))
        .collect();
    for (index, sample) in dataset.iter().enumerate() {
        let label = sample
            .label
            .ok_or(CorpusError::UnlabeledSample { index })?;
        *counts.entry(label).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Check that every present label belongs to the language's permitted set.
pub fn validate_labels(dataset: &Dataset) -> Result<(), LabelSetViolations> {
    let entries: Vec<(usize, OffenseLabel)> = dataset
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.label
                .filter(|l| !dataset.language.permits(*l))
                .map(|l| (i, l))
        })
        .collect();
    if entries.is_empty() {
        Ok(())
    } else {
        Err(LabelSetViolations {
            language: dataset.language,
            entries,
        })
    }
}

/// Concatenate two same-language datasets, `a`'s samples first. Origin
/// tags and sample order are preserved; the result is tagged `Unsplit`
/// unless both inputs share a split.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset, CorpusError> {
    if a.language != b.language {
        return Err(CorpusError::LanguageMismatch {
            expected: a.language,
            got: b.language,
        });
    }
    let split = if a.split == b.split { a.split } else { Split::Unsplit };
    let mut samples = Vec::with_capacity(a.len() + b.len());
    samples.extend_from_slice(a.samples());
    samples.extend_from_slice(b.samples());
    Ok(Dataset {
        samples,
        language: a.language,
        split,
    })
}

pub mod reference {
    //! Published reference distributions of the DravidianCodeMix
    //! offensive-language splits.
    //!
    //! The published tables are internally inconsistent in two places
    //! (the Kannada test split is listed as 778 records but its class
    //! counts sum to 768; Tamil test is listed as 4,392 but its class
    //! counts sum to 4,397). [`check_dataset`] surfaces any disagreement
    //! between a loaded file and these figures; nothing is reconciled.

    use super::{class_distribution, Dataset, Language, OffenseLabel, Split};
    use std::fmt;

    /// Published split sizes (train, dev, test) per language.
    pub fn split_size(language: Language, split: Split) -> Option<usize> {
        let (train, dev, test) = match language {
            Language::Kannada => (6_217, 777, 778),
            Language::Malayalam => (16_010, 1_999, 2_001),
            Language::Tamil => (35_129, 4_388, 4_392),
        };
        match split {
            Split::Train => Some(train),
            Split::Dev => Some(dev),
            Split::Test => Some(test),
            Split::Unsplit => None,
        }
    }

    /// Published class-wise counts for the train and test splits, in
    /// canonical label order. The dev splits have no published breakdown.
    pub fn class_counts(language: Language, split: Split) -> Option<Vec<(OffenseLabel, usize)>> {
        use OffenseLabel::*;
        let six = |counts: [usize; 6]| {
            OffenseLabel::ALL.iter().copied().zip(counts).collect::<Vec<_>>()
        };
        let five = |counts: [usize; 5]| {
            [
                NotOffensive,
                OtherLanguage,
                OffensiveTargetedInsultIndividual,
                OffensiveTargetedInsultGroup,
                OffensiveUntargeted,
            ]
            .iter()
            .copied()
            .zip(counts)
            .collect::<Vec<_>>()
        };
        match (language, split) {
            (Language::Kannada, Split::Train) => Some(six([3_544, 1_522, 487, 329, 123, 212])),
            (Language::Malayalam, Split::Train) => Some(five([14_153, 1_287, 239, 140, 191])),
            (Language::Tamil, Split::Train) => Some(six([25_415, 1_454, 2_343, 2_557, 454, 2_906])),
            (Language::Kannada, Split::Test) => Some(six([417, 185, 75, 44, 14, 33])),
            (Language::Malayalam, Split::Test) => Some(five([1_765, 157, 27, 23, 29])),
            (Language::Tamil, Split::Test) => Some(six([3_190, 165, 315, 288, 71, 368])),
            _ => None,
        }
    }

    /// One disagreement between a loaded dataset and the published figures.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub enum ReferenceMismatch {
        SplitSize {
            language: Language,
            split: Split,
            loaded: usize,
            published: usize,
        },
        ClassCount {
            language: Language,
            split: Split,
            label: OffenseLabel,
            loaded: usize,
            published: usize,
        },
    }

    impl fmt::Display for ReferenceMismatch {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match self {
                ReferenceMismatch::SplitSize {
                    language,
                    split,
                    loaded,
                    published,
                } => write!(
                    f,
                    "{language} {} split has {loaded} records; the published size is {published}",
                    split.name()
                ),
                ReferenceMismatch::ClassCount {
                    language,
                    split,
                    label,
                    loaded,
                    published,
                } => write!(
                    f,
                    "{language} {} split has {loaded} {label} records; the published count is {published}",
                    split.name()
                ),
            }
        }
    }

    /// Compare a loaded dataset against the published reference figures.
    /// Returns one entry per disagreement; unlabeled datasets are only
    /// checked for size.
    pub fn check_dataset(dataset: &Dataset) -> Vec<ReferenceMismatch> {
        let mut out = Vec::new();
        if let Some(published) = split_size(dataset.language, dataset.split) {
            if dataset.len() != published {
                out.push(ReferenceMismatch::SplitSize {
                    language: dataset.language,
                    split: dataset.split,
                    loaded: dataset.len(),
                    published,
                });
            }
        }
        if let Some(published_counts) = class_counts(dataset.language, dataset.split) {
            if let Ok(loaded_counts) = class_distribution(dataset) {
                for (label, published) in published_counts {
                    let loaded = loaded_counts.get(&label).copied().unwrap_or(0);
                    if loaded != published {
                        out.push(ReferenceMismatch::ClassCount {
                            language: dataset.language,
                            split: dataset.split,
                            label,
                            loaded,
                            published,
                        });
                    }
                }
            }
        }
        out
    }
}
