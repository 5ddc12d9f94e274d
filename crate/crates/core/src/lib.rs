//! Offensive-language classification for code-mixed Dravidian text.
//!
//! The pipeline in here goes: load a labeled code-mixed corpus
//! ([`corpus`]), transliterate its Latin-script spans into the native
//! script ([`translit`]), train a from-scratch transformer+BiLSTM
//! classifier ([`model`], built on the numeric kernels in [`nn`]),
//! pseudo-label the transliterated corpus and fuse it with the original
//! into a combined training set ([`pseudo`]), and score predictions with
//! the usual classification-report metrics ([`eval`]).

pub mod corpus;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pseudo;
pub mod rng;
pub mod synth;
pub mod translit;
