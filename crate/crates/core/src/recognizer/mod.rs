//! Word recognizer: CNN front end, four-direction 2-D LSTM, CTC loss and
//! decoding, plus a small RMSProp training loop.

mod charset;
mod cnn;
mod ctc;
mod decode;
mod mdlstm;
mod model;
mod optim;
mod params;
mod tensor;
mod train;

use thiserror::Error;

use crate::archive::ArchiveError;
use crate::preproc::PreprocError;

pub use charset::{CharSet, IAM_CHARSET_SIZE};
pub use cnn::{cnn_backward, cnn_forward, CnnCache, Noise};
pub use ctc::{ctc_loss, ctc_required_steps, CtcOutput};
pub use decode::{beam_decode, greedy_decode, BeamResult};
pub use mdlstm::{mdlstm_backward, mdlstm_forward, MdLstmCache};
pub use model::{
    forward, forward_train, loss_and_grad, prepare_word, recognize_word, Decoder, ForwardCache, PreparedWord,
    Recognition,
};
pub use optim::{learning_rate_at, RmsProp};
pub use params::{ConvSpec, Dense, LstmParams, ModelConfig, ModelParams, DIRECTIONS};
pub use tensor::{Scalar, Tensor};
pub use train::{corpus_cer, fit, train_step, EpochLog, FitReport, StepReport, TrainConfig, TrainItem, TrainState};

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label of length {label_len} needs {required} timesteps but only {timesteps} are available")]
    InfeasibleLabel {
        label_len: usize,
        required: usize,
        timesteps: usize,
    },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("charset error: {0}")]
    Charset(String),
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("word preparation failed: {0}")]
    Preproc(#[from] PreprocError),
}
