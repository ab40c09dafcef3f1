//! Convolutional multi-label text classification with residual and CRBM
//! label heads.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod synth;
pub mod text;
pub mod training;

pub use encoder::{EncodedSentence, Encoder, EncoderConfig, SentenceInput};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport, Parameterized};
pub use heads::{CrbmHead, CrbmInference, Head, LogisticHead, PlainHead, ResidualHead, Shortcuts, StackedHead};
pub use metrics::{MetricReport, RankedPrediction};
pub use model::{Model, ModelGrads, ModelKind, ModelSpec};
pub use numeric::{AdamConfig, Matrix, ParamTensor, SeededRng};
pub use synth::{GroundTruth, SynthConfig};
pub use text::{Document, EmbeddingTable, LabelVocab, TokenizedDoc, Vocabulary};
pub use training::{EpochReport, Stage, TrainConfig, TrainInputs, TrainOutcome};
