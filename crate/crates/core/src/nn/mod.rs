//! Trainable building blocks: embeddings, recurrent cells, the context
//! encoder, affine heads and dropout, plus their parameter store.

mod dropout;
mod linear;
mod params;
mod recurrent;
mod transformer;
pub mod vocab;

pub use dropout::{dropout, dropout_mask, Mode};
pub use linear::{Embedding, Linear, Mlp3};
pub use params::{Checkpoint, CheckpointEntry, Init, ParamStore};
pub use recurrent::{BiLstm, Gru, LstmCell};
pub use transformer::{sinusoidal_positions, EncoderOutput, EncoderShape, Pooling, TransformerEncoder};
pub use vocab::{CharVocabulary, TokenVocabulary};
