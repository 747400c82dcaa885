//! Neural building blocks: embeddings, character CNN, Bi-LSTM, text-aware
//! attention, self-attention pooling and linear projections.

mod attention;
mod embedding;
mod linear;
mod lstm;

pub use attention::{Attended, Pooled, SelfAttentionPool, TextAwareAttention};
pub use embedding::{
    embed_tokens, CharCnn, CharVocab, EmbeddingTable, WordVectors, PAD_CHAR, UNK_CHAR, UNK_INDEX,
    UNK_WORD,
};
pub use linear::Linear;
pub use lstm::{BiLstm, LstmDirection};

#[cfg(test)]
mod tests;
