//! Central finite-difference checks of every backward pass, in f64. Each
//! check returns the worst relative error seen, or the first coordinate
//! exceeding its tolerance.

use inkscribe::recognizer::{
    cnn_backward, cnn_forward, ctc_loss, loss_and_grad, mdlstm_backward, mdlstm_forward, ConvSpec, ModelConfig,
    ModelParams, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const CTC_TOL: f64 = 1e-4;
pub const LAYER_TOL: f64 = 1e-3;
const H: f64 = 1e-6;

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero components,
/// where both values are rounding noise, from dominating.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_height: 8,
        input_width: 16,
        conv: vec![
            ConvSpec {
                kernel: 3,
                channels: 2,
                pool: true,
            },
            ConvSpec {
                kernel: 3,
                channels: 3,
                pool: true,
            },
            ConvSpec {
                kernel: 1,
                channels: 2,
                pool: false,
            },
        ],
        fc_features: 4,
        lstm_hidden: 3,
        classes: 3,
    }
}

fn random_params(seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f32>::init(tiny_config(), seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    // non-zero biases so every term of the backward pass is exercised
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn random_tensor(dims: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks `analytic` against central differences of `f` over `count`
/// randomly chosen coordinates of the flattened parameter `values`.
fn check_coords(
    label: &str,
    values: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    rng: &mut ChaCha8Rng,
    count: usize,
    tol: f64,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let picks: Vec<usize> = if values.len() <= count {
        (0..values.len()).collect()
    } else {
        (0..count).map(|_| rng.random_range(0..values.len())).collect()
    };
    for i in picks {
        let orig = values[i];
        values[i] = orig + H;
        let up = f(values);
        values[i] = orig - H;
        let down = f(values);
        values[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let e = rel_err(analytic[i], numeric, 1e-6);
        worst = worst.max(e);
        if e >= tol {
            f(values);
            return Err(format!("{label}[{i}]: analytic {} numeric {numeric} rel {e:.2e}", analytic[i]));
        }
    }
    // closures write `values` into shared state; leave it unperturbed
    f(values);
    Ok(worst)
}

pub fn ctc_check() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, k) = (6, 4);
        let len = rng.random_range(0..=3);
        let label: Vec<usize> = (0..len).map(|_| rng.random_range(0..k - 1)).collect();
        let mut logits = random_tensor(&[t, k], &mut rng, 2.0);
        let analytic = ctc_loss(&logits, &label, k - 1).unwrap().grad.into_data();
        let mut values = logits.data().to_vec();
        worst = worst.max(check_coords(
            "ctc",
            &mut values,
            &analytic,
            |v| {
                logits.data_mut().copy_from_slice(v);
                ctc_loss(&logits, &label, k - 1).unwrap().loss
            },
            &mut rng,
            usize::MAX,
            CTC_TOL,
        )?);
    }
    Ok(worst)
}

/// Sum of `weights ⊙ output`, whose gradient w.r.t. the output is `weights`.
fn mdlstm_objective(features: &Tensor<f64>, p: &ModelParams<f64>, weights: &Tensor<f64>) -> f64 {
    dot(&mdlstm_forward(features, p).unwrap().0, weights)
}

pub fn mdlstm_check() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p = random_params(seed);
        let cfg = p.config.clone();
        let mut features = random_tensor(&[cfg.timesteps(), cfg.fc_features], &mut rng, 1.0);
        let (out, cache) = mdlstm_forward(&features, &p).unwrap();
        let weights = random_tensor(out.dims(), &mut rng, 1.0);
        let mut grads = p.zeros_like();
        let d_features = mdlstm_backward(&weights, &cache, &p, &mut grads);

        let mut values = features.data().to_vec();
        worst = worst.max(check_coords(
            "lstm input",
            &mut values,
            d_features.data(),
            |v| {
                features.data_mut().copy_from_slice(v);
                mdlstm_objective(&features, &p, &weights)
            },
            &mut rng,
            usize::MAX,
            LAYER_TOL,
        )?);

        let names = p.names();
        for (ti, name) in names.iter().enumerate() {
            if !(name.starts_with("lstm") || name.starts_with("out")) {
                continue;
            }
            let analytic = grads.tensors()[ti].data().to_vec();
            let mut q = p.clone();
            let mut values = q.tensors()[ti].data().to_vec();
            worst = worst.max(check_coords(
                name,
                &mut values,
                &analytic,
                |v| {
                    q.tensors_mut()[ti].data_mut().copy_from_slice(v);
                    mdlstm_objective(&features, &q, &weights)
                },
                &mut rng,
                30,
                LAYER_TOL,
            )?);
        }
    }
    Ok(worst)
}

fn cnn_objective(image: &Tensor<f64>, p: &ModelParams<f64>, weights: &Tensor<f64>) -> f64 {
    dot(&cnn_forward::<f64, ChaCha8Rng>(image, p, None).unwrap().0, weights)
}

pub fn cnn_check() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let p = random_params(seed);
        let cfg = p.config.clone();
        let mut image = random_tensor(&[cfg.input_height, cfg.input_width], &mut rng, 1.0);
        let (out, cache) = cnn_forward::<f64, ChaCha8Rng>(&image, &p, None).unwrap();
        let weights = random_tensor(out.dims(), &mut rng, 1.0);
        let mut grads = p.zeros_like();
        let d_image = cnn_backward(&weights, &cache, &p, &mut grads);

        let mut values = image.data().to_vec();
        worst = worst.max(check_coords(
            "image",
            &mut values,
            d_image.data(),
            |v| {
                image.data_mut().copy_from_slice(v);
                cnn_objective(&image, &p, &weights)
            },
            &mut rng,
            40,
            LAYER_TOL,
        )?);

        for (ti, name) in p.names().iter().enumerate() {
            if !(name.starts_with("conv") || name.starts_with("fc")) {
                continue;
            }
            let analytic = grads.tensors()[ti].data().to_vec();
            let mut q = p.clone();
            let mut values = q.tensors()[ti].data().to_vec();
            worst = worst.max(check_coords(
                name,
                &mut values,
                &analytic,
                |v| {
                    q.tensors_mut()[ti].data_mut().copy_from_slice(v);
                    cnn_objective(&image, &q, &weights)
                },
                &mut rng,
                20,
                LAYER_TOL,
            )?);
        }
    }
    Ok(worst)
}

pub fn end_to_end_check() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let p = random_params(seed);
        let cfg = p.config.clone();
        let image = random_tensor(&[cfg.input_height, cfg.input_width], &mut rng, 1.0);
        let label: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..2)).collect();
        let loss_of = |q: &ModelParams<f64>| {
            let mut scratch = q.zeros_like();
            loss_and_grad::<f64, ChaCha8Rng>(q, &image, &label, None, &mut scratch).unwrap().0
        };
        let mut grads = p.zeros_like();
        loss_and_grad::<f64, ChaCha8Rng>(&p, &image, &label, None, &mut grads).unwrap();
        for (ti, name) in p.names().iter().enumerate() {
            let analytic = grads.tensors()[ti].data().to_vec();
            let mut q = p.clone();
            let mut values = q.tensors()[ti].data().to_vec();
            worst = worst.max(check_coords(
                name,
                &mut values,
                &analytic,
                |v| {
                    q.tensors_mut()[ti].data_mut().copy_from_slice(v);
                    loss_of(&q)
                },
                &mut rng,
                8,
                LAYER_TOL,
            )?);
        }
    }
    Ok(worst)
}
