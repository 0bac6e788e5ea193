//! Title tokenization, vocabulary and the stacked biLSTM encoder.

mod checkpoint;
mod lstm;
mod tokenize;
mod vocab;

pub use lstm::{
    lstm_cell, BiLstmGrads, BiLstmParams, Bidirectional, CellCache, CellStep, EncoderCache, EncoderConfig,
    EncoderOutput, LstmWeights, N_LAYERS,
};
pub use tokenize::{normalize_phrase, normalize_token, tokenize};
pub use vocab::{TokenSequence, Vocabulary, DEFAULT_VOCAB_CAP, MAX_TOKENS, PAD_ID, UNK_ID};
