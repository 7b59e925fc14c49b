//! Network configuration, parameter storage and the model file format.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RecognizerError, Scalar, Tensor};
use crate::archive::Archive;

/// One convolution block: `kernel×kernel` conv with `channels` outputs and
/// ReLU, optionally followed by 2×2 max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv: Vec<ConvSpec>,
    /// Width of both per-column fully connected layers.
    pub fc_features: usize,
    pub lstm_hidden: usize,
    /// Output classes including the CTC blank.
    pub classes: usize,
}

impl Default for ModelConfig {
    /// 128×32 input → 32 timesteps × 512 features → MD-LSTM(256) → 80 classes.
    fn default() -> Self {
        let kernels = [7, 5, 5, 3, 3, 3, 3, 3];
        let channels = [16, 32, 64, 64, 64, 64, 64, 64];
        ModelConfig {
            input_height: 32,
            input_width: 128,
            conv: kernels
                .iter()
                .zip(channels)
                .enumerate()
                .map(|(i, (&kernel, channels))| ConvSpec {
                    kernel,
                    channels,
                    pool: i < 2,
                })
                .collect(),
            fc_features: 512,
            lstm_hidden: 256,
            classes: 80,
        }
    }
}

impl ModelConfig {
    /// Same layer structure with every width scaled down; for fast
    /// experiments on small fixtures.
    pub fn compact(channels: usize, fc_features: usize, lstm_hidden: usize, classes: usize) -> Self {
        let base = Self::default();
        ModelConfig {
            conv: base
                .conv
                .iter()
                .map(|c| ConvSpec {
                    channels: (c.channels * channels / 64).max(1),
                    ..*c
                })
                .collect(),
            fc_features,
            lstm_hidden,
            classes,
            ..base
        }
    }

    fn pools(&self) -> usize {
        self.conv.iter().filter(|c| c.pool).count()
    }

    /// Rows of the feature grid after the conv stack.
    pub fn grid_height(&self) -> usize {
        self.input_height >> self.pools()
    }

    /// Columns of the feature grid = CTC timesteps.
    pub fn timesteps(&self) -> usize {
        self.input_width >> self.pools()
    }

    pub fn conv_out_channels(&self) -> usize {
        self.conv.last().map_or(1, |c| c.channels)
    }

    /// Per-cell input width of the MD-LSTM grid view.
    pub fn lstm_input(&self) -> usize {
        self.fc_features / self.grid_height()
    }

    pub fn validate(&self) -> Result<(), RecognizerError> {
        let err = |m: String| Err(RecognizerError::ShapeMismatch(m));
        if self.conv.is_empty() {
            return err("model needs at least one conv block".into());
        }
        let div = 1usize << self.pools();
        if self.input_height % div != 0 || self.input_width % div != 0 || self.grid_height() == 0 {
            return err(format!(
                "input {}x{} not divisible by pooling factor {div}",
                self.input_width, self.input_height
            ));
        }
        if self.conv.iter().any(|c| c.kernel % 2 == 0 || c.channels == 0) {
            return err("conv kernels must be odd and channels positive".into());
        }
        if self.fc_features == 0 || self.fc_features % self.grid_height() != 0 {
            return err(format!(
                "fc_features {} must be a positive multiple of the grid height {}",
                self.fc_features,
                self.grid_height()
            ));
        }
        if self.lstm_hidden == 0 || self.classes < 2 {
            return err("lstm_hidden must be positive and classes at least 2".into());
        }
        Ok(())
    }

    fn to_tensor(&self) -> Tensor<f32> {
        let mut v = vec![
            1.0,
            self.input_height as f32,
            self.input_width as f32,
            self.conv.len() as f32,
        ];
        for c in &self.conv {
            v.extend([c.kernel as f32, c.channels as f32, if c.pool { 1.0 } else { 0.0 }]);
        }
        v.extend([self.fc_features as f32, self.lstm_hidden as f32, self.classes as f32]);
        Tensor::from_vec(&[v.len()], v).expect("non-empty")
    }

    fn from_tensor(t: &Tensor<f32>) -> Result<Self, RecognizerError> {
        let d = t.data();
        let bad = || RecognizerError::ModelFile("malformed config tensor".into());
        let get = |i: usize| d.get(i).map(|&v| v as usize).ok_or_else(bad);
        if get(0)? != 1 {
            return Err(RecognizerError::ModelFile(format!("unsupported model version {}", d[0])));
        }
        let n = get(3)?;
        let mut conv = Vec::with_capacity(n);
        for i in 0..n {
            conv.push(ConvSpec {
                kernel: get(4 + 3 * i)?,
                channels: get(5 + 3 * i)?,
                pool: get(6 + 3 * i)? != 0,
            });
        }
        let base = 4 + 3 * n;
        let cfg = ModelConfig {
            input_height: get(1)?,
            input_width: get(2)?,
            conv,
            fc_features: get(base)?,
            lstm_hidden: get(base + 1)?,
            classes: get(base + 2)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Weight matrix `[inputs, outputs]` and bias `[outputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// One scan direction of the 2-D LSTM. Gate blocks, each `hidden` wide, are
/// ordered input, forget-x, forget-y, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = f32> {
    /// `[inputs, 5·hidden]`
    pub wx: Tensor<T>,
    /// `[2·hidden, 5·hidden]`; rows `0..hidden` act on the x-predecessor's
    /// hidden state, rows `hidden..2·hidden` on the y-predecessor's.
    pub ur: Tensor<T>,
    pub b: Tensor<T>,
}

/// Scan directions `(step_x, step_y)`, in storage order.
pub const DIRECTIONS: [(i8, i8); 4] = [(1, 1), (-1, 1), (1, -1), (-1, -1)];
const DIRECTION_NAMES: [&str; 4] = ["lr_tb", "rl_tb", "lr_bt", "rl_bt"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    /// Conv weights are `[kernel·kernel·in_channels, out_channels]` with rows
    /// ordered `(ky, kx, in_channel)`.
    pub conv: Vec<Dense<T>>,
    pub fc: [Dense<T>; 2],
    pub lstm: [LstmParams<T>; 4],
    pub out: Dense<T>,
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases except the
    /// forget gates which start at 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, RecognizerError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::new();
        let mut cin = 1;
        for c in &config.conv {
            let k2 = c.kernel * c.kernel;
            let limit = glorot(k2 * cin, k2 * c.channels);
            conv.push(Dense {
                w: Tensor::uniform(&[k2 * cin, c.channels], limit, &mut rng),
                b: Tensor::zeros(&[c.channels]),
            });
            cin = c.channels;
        }
        let f0 = config.grid_height() * config.conv_out_channels();
        let f = config.fc_features;
        let fc = [
            Dense {
                w: Tensor::uniform(&[f0, f], glorot(f0, f), &mut rng),
                b: Tensor::zeros(&[f]),
            },
            Dense {
                w: Tensor::uniform(&[f, f], glorot(f, f), &mut rng),
                b: Tensor::zeros(&[f]),
            },
        ];
        let (ci, h) = (config.lstm_input(), config.lstm_hidden);
        let lstm = std::array::from_fn(|_| {
            let mut b = Tensor::zeros(&[5 * h]);
            for v in &mut b.data_mut()[h..3 * h] {
                *v = T::ONE;
            }
            LstmParams {
                wx: Tensor::uniform(&[ci, 5 * h], glorot(ci, 5 * h), &mut rng),
                ur: Tensor::uniform(&[2 * h, 5 * h], glorot(2 * h, 5 * h), &mut rng),
                b,
            }
        });
        let out = Dense {
            w: Tensor::uniform(&[h, config.classes], glorot(h, config.classes), &mut rng),
            b: Tensor::zeros(&[config.classes]),
        };
        Ok(ModelParams {
            config,
            conv,
            fc,
            lstm,
            out,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<T>| Tensor::zeros(t.dims());
        let zd = |d: &Dense<T>| Dense { w: z(&d.w), b: z(&d.b) };
        ModelParams {
            config: self.config.clone(),
            conv: self.conv.iter().map(zd).collect(),
            fc: [zd(&self.fc[0]), zd(&self.fc[1])],
            lstm: std::array::from_fn(|i| LstmParams {
                wx: z(&self.lstm[i].wx),
                ur: z(&self.lstm[i].ur),
                b: z(&self.lstm[i].b),
            }),
            out: zd(&self.out),
        }
    }

    /// Canonical tensor names; the same order as [`Self::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.conv.len() {
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
        }
        for i in 0..2 {
            names.push(format!("fc{}.weight", i + 1));
            names.push(format!("fc{}.bias", i + 1));
        }
        for d in DIRECTION_NAMES {
            names.push(format!("lstm.{d}.wx"));
            names.push(format!("lstm.{d}.ur"));
            names.push(format!("lstm.{d}.bias"));
        }
        names.push("out.weight".into());
        names.push("out.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for c in &self.conv {
            v.push(&c.w);
            v.push(&c.b);
        }
        for f in &self.fc {
            v.push(&f.w);
            v.push(&f.b);
        }
        for l in &self.lstm {
            v.push(&l.wx);
            v.push(&l.ur);
            v.push(&l.b);
        }
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for c in &mut self.conv {
            v.push(&mut c.w);
            v.push(&mut c.b);
        }
        for f in &mut self.fc {
            v.push(&mut f.w);
            v.push(&mut f.b);
        }
        for l in &mut self.lstm {
            v.push(&mut l.wx);
            v.push(&mut l.ur);
            v.push(&mut l.b);
        }
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let cd = |d: &Dense<T>| Dense { w: d.w.cast(), b: d.b.cast() };
        ModelParams {
            config: self.config.clone(),
            conv: self.conv.iter().map(cd).collect(),
            fc: [cd(&self.fc[0]), cd(&self.fc[1])],
            lstm: std::array::from_fn(|i| LstmParams {
                wx: self.lstm[i].wx.cast(),
                ur: self.lstm[i].ur.cast(),
                b: self.lstm[i].b.cast(),
            }),
            out: cd(&self.out),
        }
    }

    /// Checks every tensor against the shapes implied by the config.
    pub fn check_shapes(&self) -> Result<(), RecognizerError> {
        let expected = ModelParams::<T>::init(self.config.clone(), 0)?;
        if self.conv.len() != expected.conv.len() {
            return Err(RecognizerError::ShapeMismatch("conv block count".into()));
        }
        for ((name, got), want) in self.names().iter().zip(self.tensors()).zip(expected.tensors()) {
            got.expect_dims(want.dims(), name)?;
        }
        Ok(())
    }
}

impl ModelParams<f32> {
    /// Model file: the `SGM1` container with a `config` tensor first, then
    /// every parameter tensor under its canonical name.
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.push("config", self.config.to_tensor());
        for (name, t) in self.names().into_iter().zip(self.tensors()) {
            a.push(name, t.clone());
        }
        a
    }

    pub fn from_archive(archive: &Archive) -> Result<Self, RecognizerError> {
        let config = ModelConfig::from_tensor(archive.require("config")?)?;
        let mut params = ModelParams::<f32>::init(config, 0)?;
        let names = params.names();
        let expected: Vec<&str> = std::iter::once("config").chain(names.iter().map(String::as_str)).collect();
        let found: Vec<&str> = archive.names().collect();
        if found != expected {
            return Err(RecognizerError::ModelFile(format!(
                "tensor manifest mismatch: expected {} tensors in canonical order, found {:?}",
                expected.len(),
                found
            )));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = archive.require(name)?;
            t.expect_dims(slot.dims(), name)?;
            *slot = t.clone();
        }
        if !params.all_finite() {
            return Err(RecognizerError::ModelFile("non-finite parameter values".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), RecognizerError> {
        Ok(self.to_archive().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RecognizerError> {
        Self::from_archive(&Archive::read(path)?)
    }
}
