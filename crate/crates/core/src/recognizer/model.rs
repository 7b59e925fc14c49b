//! End-to-end network pass and single-word recognition.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cnn::{cnn_backward, cnn_forward, CnnCache, Noise};
use super::ctc::ctc_loss;
use super::decode::{beam_decode, greedy_decode};
use super::mdlstm::{mdlstm_backward, mdlstm_forward, MdLstmCache};
use super::{CharSet, ModelParams, RecognizerError, Scalar, Tensor};
use crate::preproc::{self, CanvasSpec, GrayImage, PreprocError};

/// Crops whose background median is darker than this, or whose ink covers
/// more than [`IAM_MAX_INK_FRACTION`] of the area, get the IAM-style conversion.
pub const IAM_MIN_BACKGROUND: u8 = 240;
pub const IAM_MAX_INK_FRACTION: f64 = 0.35;

pub struct ForwardCache<T> {
    cnn: CnnCache<T>,
    lstm: MdLstmCache<T>,
}

/// Inference pass: `[height, width]` input to `[timesteps, classes]` logits.
pub fn forward<T: Scalar>(params: &ModelParams<T>, input: &Tensor<T>) -> Result<Tensor<T>, RecognizerError> {
    let (features, _) = cnn_forward::<T, ChaCha8Rng>(input, params, None)?;
    Ok(mdlstm_forward(&features, params)?.0)
}

pub fn forward_train<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    noise: Option<Noise<'_, R>>,
) -> Result<(Tensor<T>, ForwardCache<T>), RecognizerError> {
    let (features, cnn) = cnn_forward(input, params, noise)?;
    let (logits, lstm) = mdlstm_forward(&features, params)?;
    Ok((logits, ForwardCache { cnn, lstm }))
}

/// CTC loss of `label` for one input. Parameter gradients are added to
/// `grads`; the input gradient is returned alongside the loss.
pub fn loss_and_grad<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    label: &[usize],
    noise: Option<Noise<'_, R>>,
    grads: &mut ModelParams<T>,
) -> Result<(f64, Tensor<T>), RecognizerError> {
    let (logits, cache) = forward_train(params, input, noise)?;
    let ctc = ctc_loss(&logits, label, params.config.classes - 1)?;
    let d_features = mdlstm_backward(&ctc.grad, &cache.lstm, params, grads);
    let d_input = cnn_backward(&d_features, &cache.cnn, params, grads);
    Ok((ctc.loss, d_input))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone)]
pub struct PreparedWord {
    /// Canvas-sized image actually fed to the network.
    pub canvas: GrayImage,
    pub input: Tensor<f32>,
    pub iam_converted: bool,
    pub shear: f64,
}

/// Word-crop preparation shared by recognition and training: IAM-style
/// conversion when the crop looks unlike the training data, deslant, canvas
/// fit and standardisation.
pub fn prepare_word(img: &GrayImage, canvas: &CanvasSpec) -> Result<PreparedWord, PreprocError> {
    if preproc::otsu_threshold(img).is_none() {
        return Err(PreprocError::NoInk);
    }
    let iam_converted =
        preproc::median(img) < IAM_MIN_BACKGROUND || preproc::ink_fraction(img) > IAM_MAX_INK_FRACTION;
    let base = if iam_converted {
        preproc::to_iam_style(img)?
    } else {
        img.clone()
    };
    let d = preproc::deslant(&base);
    let fitted = preproc::fit_to_canvas(&d.image, canvas);
    Ok(PreparedWord {
        input: preproc::normalize(&fitted),
        canvas: fitted,
        iam_converted,
        shear: d.shear,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub text: String,
    /// Natural-log probability of `text` under the model.
    pub log_prob: f64,
    /// The crop had no ink; `text` is empty and `log_prob` is 0.
    pub no_ink: bool,
}

pub fn recognize_word(
    img: &GrayImage,
    params: &ModelParams<f32>,
    charset: &CharSet,
    decoder: Decoder,
) -> Result<Recognition, RecognizerError> {
    let cfg = &params.config;
    if charset.classes() != cfg.classes {
        return Err(RecognizerError::Charset(format!(
            "charset has {} classes but the model outputs {}",
            charset.classes(),
            cfg.classes
        )));
    }
    let canvas = CanvasSpec {
        width: cfg.input_width as u32,
        height: cfg.input_height as u32,
        fill: 255,
    };
    let prepared = match prepare_word(img, &canvas) {
        Ok(p) => p,
        Err(PreprocError::NoInk) => {
            return Ok(Recognition {
                text: String::new(),
                log_prob: 0.0,
                no_ink: true,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let logits = forward(params, &prepared.input)?;
    let blank = charset.blank();
    let labels = match decoder {
        Decoder::Greedy => greedy_decode(&logits, blank),
        Decoder::Beam(w) => beam_decode(&logits, blank, w).labels,
    };
    let log_prob = -ctc_loss(&logits, &labels, blank)?.loss;
    Ok(Recognition {
        text: charset.decode(&labels),
        log_prob,
        no_ink: false,
    })
}
