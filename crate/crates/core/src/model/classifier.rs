//! Classifier architecture and its forward/backward passes.
//!
//! Pipeline per sample: token embeddings + sinusoidal positional
//! encoding, `num_layers` post-norm encoder layers (multi-head attention
//! with residual + layer norm, then the position-wise FFN with residual +
//! layer norm), a BiLSTM over the encoded sequence (or the pooled CLS
//! state directly when the head is disabled), feature dropout in train
//! mode, and an affine + softmax classifier.
//!
//! Trailing PAD ids are stripped before encoding: attention over PAD keys
//! is masked out and nothing downstream reads PAD positions, so running
//! on the non-pad prefix computes the same function.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Language, OffenseLabel};
use crate::nn::{
    dropout_mask, softmax, AttentionParams, FfnParams, LayerNormParams, LstmParams, Matrix,
    NnError, PROB_FLOOR,
};
use crate::nn::{argmax, positional_encoding};
use crate::rng::substream;

use super::vocab::{encode_text, Vocab, PAD_ID};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub d_ff: usize,
    pub lstm_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub use_bilstm_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults; the classifier head and regularization follow
    /// the experiment table (256 LSTM units, dropout 0.4, max length 128).
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            num_heads: 4,
            num_layers: 2,
            d_ff: 256,
            lstm_hidden: 256,
            num_classes: 6,
            dropout: 0.4,
            max_len: 128,
            use_bilstm_head: true,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Full-width shape preset (1024-dim embeddings, 16 heads) for shape
    /// tests; far too slow to train on a desk machine.
    pub fn paper_shape() -> Self {
        ModelConfig {
            d_model: 1024,
            num_heads: 16,
            num_layers: 1,
            d_ff: 2048,
            ..ModelConfig::default()
        }
    }

    /// Small dims for fast tests.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            d_model: 8,
            num_heads: 2,
            num_layers: 1,
            d_ff: 16,
            lstm_hidden: 4,
            num_classes,
            dropout: 0.0,
            max_len: 16,
            use_bilstm_head: true,
            seed: 42,
        }
    }

    pub fn validate(&self, language: Language) -> Result<(), ModelError> {
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} must be divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(ModelError::Config(
                "d_model must be even for the sinusoidal positional encoding".into(),
            ));
        }
        if self.num_layers == 0 {
            return Err(ModelError::Config("num_layers must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(ModelError::Config("max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.num_classes != language.num_classes() {
            return Err(ModelError::Config(format!(
                "num_classes {} does not match the {} label set of {}",
                self.num_classes,
                language,
                language.num_classes()
            )));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        if self.use_bilstm_head {
            2 * self.lstm_hidden
        } else {
            self.d_model
        }
    }
}

/// One post-norm encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FfnParams,
    pub norm2: LayerNormParams,
}

/// All trainable tensors, shared between the model and its gradient
/// buffers so both enumerate in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTensors {
    pub embedding: Matrix,
    pub layers: Vec<EncoderLayer>,
    pub lstm: Option<(LstmParams, LstmParams)>,
    pub cls_w: Matrix,
    pub cls_b: Matrix,
}

impl ModelTensors {
    fn zeros_like(other: &ModelTensors) -> ModelTensors {
        let zero = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let zero_ln = |p: &LayerNormParams| LayerNormParams {
            gamma: zero(&p.gamma),
            beta: zero(&p.beta),
        };
        let zero_lstm = |p: &LstmParams| LstmParams {
            w_i: zero(&p.w_i),
            w_f: zero(&p.w_f),
            w_o: zero(&p.w_o),
            w_c: zero(&p.w_c),
            b_i: zero(&p.b_i),
            b_f: zero(&p.b_f),
            b_o: zero(&p.b_o),
            b_c: zero(&p.b_c),
            hidden_size: p.hidden_size,
            input_size: p.input_size,
        };
        ModelTensors {
            embedding: zero(&other.embedding),
            layers: other
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    attn: AttentionParams {
                        num_heads: l.attn.num_heads,
                        d_model: l.attn.d_model,
                        w_q: l.attn.w_q.iter().map(zero).collect(),
                        w_k: l.attn.w_k.iter().map(zero).collect(),
                        w_v: l.attn.w_v.iter().map(zero).collect(),
                        w_o: zero(&l.attn.w_o),
                    },
                    norm1: zero_ln(&l.norm1),
                    ffn: FfnParams {
                        w1: zero(&l.ffn.w1),
                        b1: zero(&l.ffn.b1),
                        w2: zero(&l.ffn.w2),
                        b2: zero(&l.ffn.b2),
                    },
                    norm2: zero_ln(&l.norm2),
                })
                .collect(),
            lstm: other.lstm.as_ref().map(|(f, b)| (zero_lstm(f), zero_lstm(b))),
            cls_w: zero(&other.cls_w),
            cls_b: zero(&other.cls_b),
        }
    }

    /// Visit every tensor in the fixed enumeration order used by the
    /// optimizer, checkpoints, and parameter flattening.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a Matrix)) {
        f("embedding".into(), &self.embedding);
        for (i, layer) in self.layers.iter().enumerate() {
            for (h, m) in layer.attn.w_q.iter().enumerate() {
                f(format!("encoder.{i}.attn.wq.{h}"), m);
            }
            for (h, m) in layer.attn.w_k.iter().enumerate() {
                f(format!("encoder.{i}.attn.wk.{h}"), m);
            }
            for (h, m) in layer.attn.w_v.iter().enumerate() {
                f(format!("encoder.{i}.attn.wv.{h}"), m);
            }
            f(format!("encoder.{i}.attn.wo"), &layer.attn.w_o);
            f(format!("encoder.{i}.norm1.gamma"), &layer.norm1.gamma);
            f(format!("encoder.{i}.norm1.beta"), &layer.norm1.beta);
            f(format!("encoder.{i}.ffn.w1"), &layer.ffn.w1);
            f(format!("encoder.{i}.ffn.b1"), &layer.ffn.b1);
            f(format!("encoder.{i}.ffn.w2"), &layer.ffn.w2);
            f(format!("encoder.{i}.ffn.b2"), &layer.ffn.b2);
            f(format!("encoder.{i}.norm2.gamma"), &layer.norm2.gamma);
            f(format!("encoder.{i}.norm2.beta"), &layer.norm2.beta);
        }
        if let Some((fwd, bwd)) = &self.lstm {
            for (dir, p) in [("fwd", fwd), ("bwd", bwd)] {
                f(format!("lstm.{dir}.w_i"), &p.w_i);
                f(format!("lstm.{dir}.w_f"), &p.w_f);
                f(format!("lstm.{dir}.w_o"), &p.w_o);
                f(format!("lstm.{dir}.w_c"), &p.w_c);
                f(format!("lstm.{dir}.b_i"), &p.b_i);
                f(format!("lstm.{dir}.b_f"), &p.b_f);
                f(format!("lstm.{dir}.b_o"), &p.b_o);
                f(format!("lstm.{dir}.b_c"), &p.b_c);
            }
        }
        f("classifier.weight".into(), &self.cls_w);
        f("classifier.bias".into(), &self.cls_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Matrix)) {
        f("embedding".into(), &mut self.embedding);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (h, m) in layer.attn.w_q.iter_mut().enumerate() {
                f(format!("encoder.{i}.attn.wq.{h}"), m);
            }
            for (h, m) in layer.attn.w_k.iter_mut().enumerate() {
                f(format!("encoder.{i}.attn.wk.{h}"), m);
            }
            for (h, m) in layer.attn.w_v.iter_mut().enumerate() {
                f(format!("encoder.{i}.attn.wv.{h}"), m);
            }
            f(format!("encoder.{i}.attn.wo"), &mut layer.attn.w_o);
            f(format!("encoder.{i}.norm1.gamma"), &mut layer.norm1.gamma);
            f(format!("encoder.{i}.norm1.beta"), &mut layer.norm1.beta);
            f(format!("encoder.{i}.ffn.w1"), &mut layer.ffn.w1);
            f(format!("encoder.{i}.ffn.b1"), &mut layer.ffn.b1);
            f(format!("encoder.{i}.ffn.w2"), &mut layer.ffn.w2);
            f(format!("encoder.{i}.ffn.b2"), &mut layer.ffn.b2);
            f(format!("encoder.{i}.norm2.gamma"), &mut layer.norm2.gamma);
            f(format!("encoder.{i}.norm2.beta"), &mut layer.norm2.beta);
        }
        if let Some((fwd, bwd)) = &mut self.lstm {
            for (dir, p) in [("fwd", fwd), ("bwd", bwd)] {
                f(format!("lstm.{dir}.w_i"), &mut p.w_i);
                f(format!("lstm.{dir}.w_f"), &mut p.w_f);
                f(format!("lstm.{dir}.w_o"), &mut p.w_o);
                f(format!("lstm.{dir}.w_c"), &mut p.w_c);
                f(format!("lstm.{dir}.b_i"), &mut p.b_i);
                f(format!("lstm.{dir}.b_f"), &mut p.b_f);
                f(format!("lstm.{dir}.b_o"), &mut p.b_o);
                f(format!("lstm.{dir}.b_c"), &mut p.b_c);
            }
        }
        f("classifier.weight".into(), &mut self.cls_w);
        f("classifier.bias".into(), &mut self.cls_b);
    }
}

/// Encoded sequence states plus the pooled CLS representation (row 0 of
/// the final layer's states).
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub sequence_states: Matrix,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub language: Language,
    pub params: ModelTensors,
    /// Precomputed (max_len × d_model) positional encoding; not trainable.
    pe: Matrix,
}

impl ClassifierModel {
    /// Initialize with Xavier-uniform weights drawn from the seed's
    /// "init" substream; layer-norm scales start at one, biases at zero.
    pub fn new(vocab: Vocab, config: ModelConfig, language: Language) -> Result<ClassifierModel, ModelError> {
        config.validate(language)?;
        Self::build(vocab, config, language)
    }

    /// Like [`ClassifierModel::new`] but allows `num_classes` to differ
    /// from the language's label set, so the numeric core can be
    /// exercised at arbitrary output arities. [`ClassifierModel::predict`]
    /// refuses such a model.
    pub fn new_detached(
        vocab: Vocab,
        config: ModelConfig,
        language: Language,
    ) -> Result<ClassifierModel, ModelError> {
        let mut check = config;
        check.num_classes = language.num_classes();
        check.validate(language)?;
        Self::build(vocab, config, language)
    }

    fn build(vocab: Vocab, config: ModelConfig, language: Language) -> Result<ClassifierModel, ModelError> {
        let mut rng = substream(config.seed, "init");
        let embedding = Matrix::xavier_uniform(vocab.len(), config.d_model, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| -> Result<EncoderLayer, NnError> {
                Ok(EncoderLayer {
                    attn: AttentionParams::new(config.num_heads, config.d_model, &mut rng)?,
                    norm1: LayerNormParams::new(config.d_model),
                    ffn: FfnParams::new(config.d_model, config.d_ff, &mut rng),
                    norm2: LayerNormParams::new(config.d_model),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let lstm = if config.use_bilstm_head {
            Some((
                LstmParams::new(config.d_model, config.lstm_hidden, &mut rng),
                LstmParams::new(config.d_model, config.lstm_hidden, &mut rng),
            ))
        } else {
            None
        };
        let cls_w = Matrix::xavier_uniform(config.feature_dim(), config.num_classes, &mut rng);
        let cls_b = Matrix::zeros(1, config.num_classes);
        let pe = positional_encoding(config.max_len, config.d_model)?;
        Ok(ClassifierModel {
            vocab,
            config,
            language,
            params: ModelTensors {
                embedding,
                layers,
                lstm,
                cls_w,
                cls_b,
            },
            pe,
        })
    }

    pub fn labels(&self) -> &'static [OffenseLabel] {
        self.language.label_set()
    }

    /// Class index of a label within this model's output ordering.
    pub fn class_index(&self, label: OffenseLabel) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        encode_text(text, &self.vocab, self.config.max_len)
    }

    /// Schedule group per tensor, bottom (0) to top: embedding, encoder
    /// layers, BiLSTM, classifier.
    pub fn schedule_group(&self, name: &str) -> usize {
        if name == "embedding" {
            0
        } else if let Some(rest) = name.strip_prefix("encoder.") {
            let idx: usize = rest.split('.').next().unwrap_or("0").parse().unwrap_or(0);
            1 + idx
        } else if name.starts_with("lstm.") {
            1 + self.config.num_layers
        } else {
            1 + self.config.num_layers + usize::from(self.config.use_bilstm_head)
        }
    }

    pub fn num_schedule_groups(&self) -> usize {
        2 + self.config.num_layers + usize::from(self.config.use_bilstm_head)
    }

    /// Strip trailing PAD ids, keeping at least one position.
    fn prefix_len(&self, ids: &[usize]) -> usize {
        let mut len = ids.len();
        while len > 1 && ids[len - 1] == PAD_ID {
            len -= 1;
        }
        len
    }

    pub(crate) fn forward_cached(
        &self,
        ids: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SampleCache, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Nn(NnError::EmptySequence));
        }
        for &id in ids {
            if id >= self.vocab.len() {
                return Err(ModelError::TokenId {
                    id,
                    vocab_len: self.vocab.len(),
                });
            }
        }
        let seq_len = self.prefix_len(ids).min(self.config.max_len);
        let ids = &ids[..seq_len];
        let d = self.config.d_model;

        let mut x = Matrix::zeros(seq_len, d);
        for (t, &id) in ids.iter().enumerate() {
            let emb = self.params.embedding.row(id);
            let pe = self.pe.row(t);
            let row = x.row_mut(t);
            for k in 0..d {
                row[k] = emb[k] + pe[k];
            }
        }

        let mut layers = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let cache = encoder_layer_forward(&x, layer)?;
            x = cache.norm2_out.clone();
            layers.push(cache);
        }
        let states = x;

        let (lstm, feature_pre) = if let Some((fwd, bwd)) = &self.params.lstm {
            let rows: Vec<&[f64]> = (0..seq_len).map(|t| states.row(t)).collect();
            let fwd_steps = run_lstm_direction(&rows, fwd, Direction::Forward)?;
            let bwd_steps = run_lstm_direction(&rows, bwd, Direction::Backward)?;
            let mut feature = last_hidden(&fwd_steps);
            feature.extend(last_hidden(&bwd_steps));
            (
                Some(LstmCaches {
                    fwd: fwd_steps,
                    bwd: bwd_steps,
                }),
                feature,
            )
        } else {
            (None, states.row(0).to_vec())
        };

        let (feature, mask) = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let mask = dropout_mask(feature_pre.len(), self.config.dropout, rng);
                let dropped = feature_pre
                    .iter()
                    .zip(&mask)
                    .map(|(f, m)| f * m)
                    .collect();
                (dropped, Some(mask))
            }
            _ => (feature_pre.clone(), None),
        };

        let mut logits = vec![0.0; self.config.num_classes];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut acc = self.params.cls_b.get(0, c);
            for (f, feat) in feature.iter().enumerate() {
                acc += feat * self.params.cls_w.get(f, c);
            }
            *logit = acc;
        }
        let probs = softmax(&logits);

        Ok(SampleCache {
            ids: ids.to_vec(),
            layers,
            states,
            lstm,
            dropout: mask,
            feature,
            probs,
        })
    }

    /// Per-sample class probabilities. Evaluation mode is deterministic;
    /// train mode draws dropout masks from the model seed's "dropout"
    /// substream (training threads its own epoch streams instead).
    pub fn forward(
        &self,
        batch: &[Vec<usize>],
        train_mode: bool,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut rng = substream(self.config.seed, "dropout");
        batch
            .iter()
            .map(|ids| {
                let rng = if train_mode { Some(&mut rng) } else { None };
                Ok(self.forward_cached(ids, rng)?.probs)
            })
            .collect()
    }

    /// Encoded sequence states and pooled CLS vector for one id sequence.
    pub fn encoder_output(&self, ids: &[usize]) -> Result<EncoderOutput, ModelError> {
        let cache = self.forward_cached(ids, None)?;
        let pooled = cache.states.row(0).to_vec();
        Ok(EncoderOutput {
            sequence_states: cache.states,
            pooled,
        })
    }

    /// Predicted label and probability vector per text; ties break toward
    /// the lowest canonical label index.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<(OffenseLabel, Vec<f64>)>, ModelError> {
        if self.config.num_classes != self.language.num_classes() {
            return Err(ModelError::Config(format!(
                "a detached {}-class model cannot map predictions onto the {} label set",
                self.config.num_classes, self.language
            )));
        }
        texts
            .iter()
            .map(|text| {
                let ids = self.encode(text);
                let cache = self.forward_cached(&ids, None)?;
                let label = self.labels()[argmax(&cache.probs)];
                Ok((label, cache.probs))
            })
            .collect()
    }

    /// Evaluation-mode loss of one sample and its analytic gradient with
    /// respect to every parameter, flattened in visit order.
    pub fn loss_gradient(&self, ids: &[usize], target: usize) -> Result<(f64, Vec<f64>), ModelError> {
        let cache = self.forward_cached(ids, None)?;
        let loss = self.sample_loss(&cache, target)?;
        let mut grads = self.zero_grads();
        self.backward(&cache, target, 1.0, &mut grads)?;
        Ok((loss, Self::flatten_grads(&grads)))
    }

    /// Cross-entropy of one cached forward pass.
    pub(crate) fn sample_loss(&self, cache: &SampleCache, target: usize) -> Result<f64, ModelError> {
        Ok(crate::nn::cross_entropy_loss(&cache.probs, target)?)
    }

    /// Accumulate `scale` × the loss gradient of one sample into `grads`.
    pub(crate) fn backward(
        &self,
        cache: &SampleCache,
        target: usize,
        scale: f64,
        grads: &mut ModelTensors,
    ) -> Result<(), ModelError> {
        let num_classes = self.config.num_classes;
        if target >= num_classes {
            return Err(ModelError::Nn(NnError::Index {
                index: target,
                len: num_classes,
            }));
        }
        // d loss / d logits for loss = −ln(p_t + floor):
        // (p_t / (p_t + floor)) · (p_j − δ_tj).
        let pt = cache.probs[target];
        let damp = pt / (pt + PROB_FLOOR);
        let dlogits: Vec<f64> = cache
            .probs
            .iter()
            .enumerate()
            .map(|(j, &p)| scale * damp * (p - f64::from(u8::from(j == target))))
            .collect();

        // Classifier affine.
        let feat_dim = cache.feature.len();
        let mut dfeature = vec![0.0; feat_dim];
        for (f, d) in dfeature.iter_mut().enumerate() {
            let w_row = self.params.cls_w.row(f);
            let g_row = grads.cls_w.row_mut(f);
            let feat = cache.feature[f];
            let mut acc = 0.0;
            for c in 0..num_classes {
                g_row[c] += feat * dlogits[c];
                acc += w_row[c] * dlogits[c];
            }
            *d = acc;
        }
        for (c, d) in dlogits.iter().enumerate() {
            grads.cls_b.row_mut(0)[c] += d;
        }

        // Feature dropout.
        if let Some(mask) = &cache.dropout {
            for (d, m) in dfeature.iter_mut().zip(mask) {
                *d *= m;
            }
        }

        // Head: BiLSTM (or pooled CLS straight through).
        let seq_len = cache.ids.len();
        let mut dstates = Matrix::zeros(seq_len, self.config.d_model);
        match (&cache.lstm, &self.params.lstm) {
            (Some(caches), Some((fwd, bwd))) => {
                let hidden = self.config.lstm_hidden;
                let (grad_fwd, grad_bwd) = grads.lstm.as_mut().expect("grad buffer shape");
                lstm_direction_backward(
                    &caches.fwd,
                    &dfeature[..hidden],
                    fwd,
                    grad_fwd,
                    Direction::Forward,
                    &mut dstates,
                );
                lstm_direction_backward(
                    &caches.bwd,
                    &dfeature[hidden..],
                    bwd,
                    grad_bwd,
                    Direction::Backward,
                    &mut dstates,
                );
            }
            (None, None) => {
                for (k, d) in dfeature.iter().enumerate() {
                    dstates.row_mut(0)[k] += d;
                }
            }
            _ => unreachable!("cache and params disagree on the BiLSTM head"),
        }

        // Encoder stack, top layer first.
        let mut dy = dstates;
        for (layer, layer_cache, layer_grads) in self
            .params
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(&mut grads.layers)
            .map(|((p, c), g)| (p, c, g))
            .rev()
        {
            dy = encoder_layer_backward(layer, layer_cache, layer_grads, &dy)?;
        }

        // Embedding scatter-add; the positional encoding is constant.
        for (t, &id) in cache.ids.iter().enumerate() {
            let src = dy.row(t);
            let dst = grads.embedding.row_mut(id);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    /// All parameters flattened in visit order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.params.visit(&mut |_, m| out.extend_from_slice(m.data()));
        out
    }

    /// Overwrite all parameters from a flat vector in visit order.
    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected: usize = {
            let mut n = 0;
            self.params.visit(&mut |_, m| n += m.len());
            n
        };
        if flat.len() != expected {
            return Err(ModelError::Config(format!(
                "expected {expected} parameter values, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.params.visit_mut(&mut |_, m| {
            let next = offset + m.len();
            m.data_mut().copy_from_slice(&flat[offset..next]);
            offset = next;
        });
        Ok(())
    }

    /// Gradients flattened in the same order as [`flatten_params`].
    pub(crate) fn flatten_grads(grads: &ModelTensors) -> Vec<f64> {
        let mut out = Vec::new();
        grads.visit(&mut |_, m| out.extend_from_slice(m.data()));
        out
    }

    pub(crate) fn zero_grads(&self) -> ModelTensors {
        ModelTensors::zeros_like(&self.params)
    }
}

pub(crate) struct SampleCache {
    pub ids: Vec<usize>,
    pub layers: Vec<LayerCache>,
    /// Final encoder states (seq × d_model).
    pub states: Matrix,
    pub lstm: Option<LstmCaches>,
    pub dropout: Option<Vec<f64>>,
    pub feature: Vec<f64>,
    pub probs: Vec<f64>,
}

pub(crate) struct LstmCaches {
    pub fwd: Vec<crate::nn::LstmStepCache>,
    pub bwd: Vec<crate::nn::LstmStepCache>,
}

pub(crate) struct NormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

pub(crate) struct HeadCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub attn: Matrix,
}

pub(crate) struct LayerCache {
    pub x_in: Matrix,
    pub heads: Vec<HeadCache>,
    pub concat: Matrix,
    pub norm1: NormCache,
    pub norm1_out: Matrix,
    pub ffn_hidden: Matrix,
    pub norm2: NormCache,
    pub norm2_out: Matrix,
}

fn layer_norm_forward(x: &Matrix, params: &LayerNormParams) -> (Matrix, NormCache) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = cols as f64;
    let mut out = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + crate::nn::LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for (c, v) in row.iter().enumerate() {
            let xh = (v - mean) * is;
            xhat.set(r, c, xh);
            out.set(r, c, xh * params.gamma.get(0, c) + params.beta.get(0, c));
        }
    }
    (out, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    params: &LayerNormParams,
    dgamma: &mut Matrix,
    dbeta: &mut Matrix,
) -> Matrix {
    let (rows, cols) = (dy.rows(), dy.cols());
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let dy_row = dy.row(r);
        let xhat_row = cache.xhat.row(r);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..cols {
            dgamma.row_mut(0)[c] += dy_row[c] * xhat_row[c];
            dbeta.row_mut(0)[c] += dy_row[c];
            let dxhat = dy_row[c] * params.gamma.get(0, c);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat_row[c];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let is = cache.inv_std[r];
        for c in 0..cols {
            let dxhat = dy_row[c] * params.gamma.get(0, c);
            dx.set(
                r,
                c,
                is * (dxhat - mean_dxhat - xhat_row[c] * mean_dxhat_xhat),
            );
        }
    }
    dx
}

fn encoder_layer_forward(x: &Matrix, layer: &EncoderLayer) -> Result<LayerCache, NnError> {
    let seq = x.rows();
    let num_heads = layer.attn.num_heads;
    let d_k = layer.attn.d_k();
    let scale = 1.0 / (d_k as f64).sqrt();

    let mut heads = Vec::with_capacity(num_heads);
    let mut concat = Matrix::zeros(seq, num_heads * d_k);
    for h in 0..num_heads {
        let q = x.matmul(&layer.attn.w_q[h])?;
        let k = x.matmul(&layer.attn.w_k[h])?;
        let v = x.matmul(&layer.attn.w_v[h])?;
        let mut scores = q.matmul_transpose_b(&k)?;
        scores.scale(scale);
        for r in 0..seq {
            let soft = softmax(scores.row(r));
            scores.row_mut(r).copy_from_slice(&soft);
        }
        let out = scores.matmul(&v)?;
        for r in 0..seq {
            concat.row_mut(r)[h * d_k..(h + 1) * d_k].copy_from_slice(out.row(r));
        }
        heads.push(HeadCache {
            q,
            k,
            v,
            attn: scores,
        });
    }
    let attn_out = concat.matmul(&layer.attn.w_o)?;

    let mut res1 = attn_out;
    res1.add_assign(x)?;
    let (norm1_out, norm1) = layer_norm_forward(&res1, &layer.norm1);

    let mut ffn_hidden = norm1_out.matmul(&layer.ffn.w1)?;
    for r in 0..seq {
        let row = ffn_hidden.row_mut(r);
        for (h, b) in row.iter_mut().zip(layer.ffn.b1.data()) {
            *h = (*h + b).max(0.0);
        }
    }
    let mut ffn_out = ffn_hidden.matmul(&layer.ffn.w2)?;
    for r in 0..seq {
        let row = ffn_out.row_mut(r);
        for (o, b) in row.iter_mut().zip(layer.ffn.b2.data()) {
            *o += b;
        }
    }

    let mut res2 = ffn_out;
    res2.add_assign(&norm1_out)?;
    let (norm2_out, norm2) = layer_norm_forward(&res2, &layer.norm2);
    debug_assert!(norm2_out.is_finite_all());

    Ok(LayerCache {
        x_in: x.clone(),
        heads,
        concat,
        norm1,
        norm1_out,
        ffn_hidden,
        norm2,
        norm2_out,
    })
}

/// Backward through one encoder layer; returns d(input).
fn encoder_layer_backward(
    layer: &EncoderLayer,
    cache: &LayerCache,
    grads: &mut EncoderLayer,
    dy: &Matrix,
) -> Result<Matrix, NnError> {
    let seq = dy.rows();
    let d_k = layer.attn.d_k();
    let scale = 1.0 / (d_k as f64).sqrt();

    // norm2 ← res2 = norm1_out + ffn_out.
    let dres2 = layer_norm_backward(
        dy,
        &cache.norm2,
        &layer.norm2,
        &mut grads.norm2.gamma,
        &mut grads.norm2.beta,
    );

    // FFN path: ffn_out = relu(norm1_out·W1 + b1)·W2 + b2.
    let mut dnorm1_out = dres2.clone();
    // dW2 += hiddenᵀ · dres2; dhidden = dres2 · W2ᵀ.
    grads.ffn.w2.add_assign(&cache.ffn_hidden.transpose().matmul(&dres2)?)?;
    for r in 0..seq {
        for (c, v) in dres2.row(r).iter().enumerate() {
            grads.ffn.b2.row_mut(0)[c] += v;
        }
    }
    let mut dhidden = dres2.matmul_transpose_b(&layer.ffn.w2)?;
    // ReLU gate.
    for r in 0..seq {
        let gate = cache.ffn_hidden.row(r);
        for (dh, g) in dhidden.row_mut(r).iter_mut().zip(gate) {
            if *g <= 0.0 {
                *dh = 0.0;
            }
        }
    }
    grads.ffn.w1.add_assign(&cache.norm1_out.transpose().matmul(&dhidden)?)?;
    for r in 0..seq {
        for (c, v) in dhidden.row(r).iter().enumerate() {
            grads.ffn.b1.row_mut(0)[c] += v;
        }
    }
    dnorm1_out.add_assign(&dhidden.matmul_transpose_b(&layer.ffn.w1)?)?;

    // norm1 ← res1 = x_in + attn_out.
    let dres1 = layer_norm_backward(
        &dnorm1_out,
        &cache.norm1,
        &layer.norm1,
        &mut grads.norm1.gamma,
        &mut grads.norm1.beta,
    );
    let mut dx = dres1.clone();

    // Attention output projection.
    grads.attn.w_o.add_assign(&cache.concat.transpose().matmul(&dres1)?)?;
    let dconcat = dres1.matmul_transpose_b(&layer.attn.w_o)?;

    for (h, head) in cache.heads.iter().enumerate() {
        let mut dhead = Matrix::zeros(seq, d_k);
        for r in 0..seq {
            dhead
                .row_mut(r)
                .copy_from_slice(&dconcat.row(r)[h * d_k..(h + 1) * d_k]);
        }
        // O = A·V.
        let dv = head.attn.transpose().matmul(&dhead)?;
        let da = dhead.matmul_transpose_b(&head.v)?;
        // Softmax rows: ds_j = a_j (da_j − Σ_k a_k da_k).
        let mut ds = Matrix::zeros(seq, seq);
        for r in 0..seq {
            let a = head.attn.row(r);
            let da_row = da.row(r);
            let inner: f64 = a.iter().zip(da_row).map(|(x, y)| x * y).sum();
            for c in 0..seq {
                ds.set(r, c, a[c] * (da_row[c] - inner));
            }
        }
        ds.scale(scale);
        let dq = ds.matmul(&head.k)?;
        let dk = ds.transpose().matmul(&head.q)?;

        grads.attn.w_q[h].add_assign(&cache.x_in.transpose().matmul(&dq)?)?;
        grads.attn.w_k[h].add_assign(&cache.x_in.transpose().matmul(&dk)?)?;
        grads.attn.w_v[h].add_assign(&cache.x_in.transpose().matmul(&dv)?)?;
        dx.add_assign(&dq.matmul_transpose_b(&layer.attn.w_q[h])?)?;
        dx.add_assign(&dk.matmul_transpose_b(&layer.attn.w_k[h])?)?;
        dx.add_assign(&dv.matmul_transpose_b(&layer.attn.w_v[h])?)?;
    }
    Ok(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Sequence position processed at step `s` of `len` steps.
    fn position(self, s: usize, len: usize) -> usize {
        match self {
            Direction::Forward => s,
            Direction::Backward => len - 1 - s,
        }
    }
}

fn run_lstm_direction(
    rows: &[&[f64]],
    params: &LstmParams,
    dir: Direction,
) -> Result<Vec<crate::nn::LstmStepCache>, ModelError> {
    let mut state = crate::nn::LstmState::zeros(params.hidden_size);
    let mut steps = Vec::with_capacity(rows.len());
    for s in 0..rows.len() {
        let pos = dir.position(s, rows.len());
        let (next, cache) = crate::nn::lstm_cell_step_cached(rows[pos], &state, params)?;
        state = next;
        steps.push(cache);
    }
    Ok(steps)
}

fn last_hidden(steps: &[crate::nn::LstmStepCache]) -> Vec<f64> {
    let last = steps.last().expect("non-empty sequence");
    last.o
        .iter()
        .zip(&last.tanh_c)
        .map(|(o, t)| o * t)
        .collect()
}

/// BPTT through one direction; `d_last_h` is the loss gradient at the
/// direction's final hidden state. Input gradients are scattered into
/// `dstates` rows by sequence position.
fn lstm_direction_backward(
    steps: &[crate::nn::LstmStepCache],
    d_last_h: &[f64],
    params: &LstmParams,
    grads: &mut LstmParams,
    dir: Direction,
    dstates: &mut Matrix,
) {
    let hidden = params.hidden_size;
    let input = params.input_size;
    let len = steps.len();
    let mut dh = d_last_h.to_vec();
    let mut dc = vec![0.0; hidden];
    for s in (0..len).rev() {
        let cache = &steps[s];
        let mut di_pre = vec![0.0; hidden];
        let mut df_pre = vec![0.0; hidden];
        let mut do_pre = vec![0.0; hidden];
        let mut dg_pre = vec![0.0; hidden];
        for k in 0..hidden {
            let o = cache.o[k];
            let tanh_c = cache.tanh_c[k];
            do_pre[k] = dh[k] * tanh_c * o * (1.0 - o);
            let dck = dc[k] + dh[k] * o * (1.0 - tanh_c * tanh_c);
            let i = cache.i[k];
            let f = cache.f[k];
            let g = cache.g[k];
            di_pre[k] = dck * g * i * (1.0 - i);
            df_pre[k] = dck * cache.c_prev[k] * f * (1.0 - f);
            dg_pre[k] = dck * i * (1.0 - g * g);
            dc[k] = dck * f;
        }
        // Parameter gradients: dW += zᵀ ⊗ dpre, db += dpre.
        let z = &cache.z;
        let gate_grads: [(&mut Matrix, &mut Matrix, &Vec<f64>); 4] = [
            (&mut grads.w_i, &mut grads.b_i, &di_pre),
            (&mut grads.w_f, &mut grads.b_f, &df_pre),
            (&mut grads.w_o, &mut grads.b_o, &do_pre),
            (&mut grads.w_c, &mut grads.b_c, &dg_pre),
        ];
        let mut dz = vec![0.0; hidden + input];
        let weights = [&params.w_i, &params.w_f, &params.w_o, &params.w_c];
        for ((gw, gb, dpre), w) in gate_grads.into_iter().zip(weights) {
            for (r, &zr) in z.iter().enumerate() {
                let grow = gw.row_mut(r);
                let wrow = w.row(r);
                let mut acc = 0.0;
                for k in 0..hidden {
                    grow[k] += zr * dpre[k];
                    acc += wrow[k] * dpre[k];
                }
                dz[r] += acc;
            }
            for (k, d) in dpre.iter().enumerate() {
                gb.row_mut(0)[k] += d;
            }
        }
        // Split dz into the recurrent and input parts.
        dh.copy_from_slice(&dz[..hidden]);
        let pos = dir.position(s, len);
        let dst = dstates.row_mut(pos);
        for (d, v) in dst.iter_mut().zip(&dz[hidden..]) {
            *d += v;
        }
    }
}
