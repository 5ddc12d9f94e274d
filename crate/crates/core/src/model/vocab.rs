//! Whitespace tokenizer and vocabulary. Latin letters are lowercased,
//! native-script text is left untouched. Ids are dense, reserved ids
//! first, then tokens in first-occurrence order.

use std::collections::HashMap;

use crate::translit::{detect_script, Script};

use super::ModelError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<cls>"];

/// Split on whitespace and lowercase the Latin letters of each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            let mut token = String::with_capacity(raw.len());
            for ch in raw.chars() {
                if detect_script(ch) == Script::Latin {
                    token.extend(ch.to_lowercase());
                } else {
                    token.push(ch);
                }
            }
            token
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
    min_freq: usize,
}

impl Vocab {
    /// Build from an iterator of texts. Tokens below `min_freq` map to UNK.
    pub fn from_texts<'a>(
        texts: impl Iterator<Item = &'a str> + Clone,
        min_freq: usize,
    ) -> Result<Vocab, ModelError> {
        if min_freq == 0 {
            return Err(ModelError::Config("min_freq must be at least 1".into()));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        let mut any = false;
        for text in texts {
            any = true;
            for token in tokenize(text) {
                match freq.get_mut(&token) {
                    Some(n) => *n += 1,
                    None => {
                        freq.insert(token.clone(), 1);
                        order.push(token);
                    }
                }
            }
        }
        if !any {
            return Err(ModelError::EmptyCorpus);
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(order.into_iter().filter(|t| freq[t] >= min_freq));
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(id, t)| (t.clone(), id))
            .collect();
        Ok(Vocab {
            token_to_id,
            tokens,
            min_freq,
        })
    }

    /// Rebuild from an id-ordered token list (checkpoint load).
    pub fn from_token_list(tokens: Vec<String>, min_freq: usize) -> Result<Vocab, ModelError> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()] != RESERVED.map(str::to_string)
        {
            return Err(ModelError::Config(
                "token list must start with the reserved <pad>/<unk>/<cls> entries".into(),
            ));
        }
        let token_to_id: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(id, t)| (t.clone(), id))
            .collect();
        if token_to_id.len() != tokens.len() {
            return Err(ModelError::Config("token list contains duplicates".into()));
        }
        Ok(Vocab {
            token_to_id,
            tokens,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of a token; unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Id-ordered token list, reserved entries first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Build a vocabulary over a dataset's texts.
pub fn build_vocab(
    dataset: &crate::corpus::Dataset,
    min_freq: usize,
) -> Result<Vocab, ModelError> {
    Vocab::from_texts(dataset.iter().map(|s| s.text.as_str()), min_freq)
}

/// `[CLS] + token ids`, truncated to `max_len` and padded with PAD.
pub fn encode_text(text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    debug_assert!(max_len >= 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    for token in tokenize(text) {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id(&token));
    }
    ids.resize(max_len, PAD_ID);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, LabeledComment, Language, Origin, Split};

    fn vocab_of(texts: &[&str], min_freq: usize) -> Vocab {
        Vocab::from_texts(texts.iter().copied(), min_freq).unwrap()
    }

    #[test]
    fn tokenizer_lowercases_latin_only() {
        assert_eq!(tokenize("Movie SUPER ಆಯ್ತು"), vec!["movie", "super", "ಆಯ್ತು"]);
        assert_eq!(tokenize("  spaced\tout \n"), vec!["spaced", "out"]);
    }

    #[test]
    fn min_freq_filters_rare_tokens() {
        let v = vocab_of(&["a b", "a"], 2);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn min_freq_one_keeps_every_distinct_token() {
        let v = vocab_of(&["x y z", "y"], 1);
        assert_eq!(v.len(), 3 + 3);
    }

    #[test]
    fn vocab_size_matches_frequency_tally() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, "vocab-oracle");
        let words = ["padam", "super", "hit", "flop", "scene", "mass"];
        let texts: Vec<String> = (0..40)
            .map(|_| {
                (0..rng.gen_range(1..6))
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let ds = Dataset::from_samples(
            Language::Tamil,
            Split::Unsplit,
            texts
                .iter()
                .map(|t| {
                    LabeledComment::new(t.clone(), None, Language::Tamil, Origin::CodeMixed)
                        .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let v = build_vocab(&ds, 2).unwrap();
        // Independent hash-map tally over the same texts.
        let mut tally: std::collections::HashMap<String, usize> = Default::default();
        for t in &texts {
            for tok in tokenize(t) {
                *tally.entry(tok).or_insert(0) += 1;
            }
        }
        let expected = tally.values().filter(|&&n| n >= 2).count() + 3;
        assert_eq!(v.len(), expected);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let ds = Dataset::new(Language::Tamil, Split::Unsplit);
        assert!(matches!(build_vocab(&ds, 1), Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn encode_pads_and_leads_with_cls() {
        let v = vocab_of(&["a b c"], 1);
        let ids = encode_text("", &v, 6);
        assert_eq!(ids[0], CLS_ID);
        assert!(ids[1..].iter().all(|&i| i == PAD_ID));
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn encode_truncates_to_max_len() {
        let v = vocab_of(&["w"], 1);
        let long = vec!["w"; 200].join(" ");
        let ids = encode_text(&long, &v, 128);
        assert_eq!(ids.len(), 128);
        assert_eq!(ids[0], CLS_ID);
        assert!(ids[1..].iter().all(|&i| i == v.id("w")));
    }

    #[test]
    fn unseen_tokens_become_unk() {
        let v = vocab_of(&["known"], 1);
        let ids = encode_text("known unknown", &v, 4);
        assert_eq!(ids, vec![CLS_ID, v.id("known"), UNK_ID, PAD_ID]);
    }

    #[test]
    fn token_list_round_trip() {
        let v = vocab_of(&["one two three"], 1);
        let rebuilt = Vocab::from_token_list(v.tokens().to_vec(), v.min_freq()).unwrap();
        assert_eq!(rebuilt, v);
    }
}
