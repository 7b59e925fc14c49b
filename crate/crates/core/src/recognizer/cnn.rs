//! Convolutional front end: conv/ReLU/pool blocks, optional Gaussian noise,
//! then two per-column fully connected layers.
//!
//! Activations are stored height × width × channels. The output is one row
//! per image column of the final grid (a CTC timestep), holding
//! `fc_features` values.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{Dense, ModelParams};
use super::tensor::mat;
use super::{RecognizerError, Scalar, Tensor};

struct ConvCache<T> {
    h: usize,
    w: usize,
    cin: usize,
    cols: Vec<T>,
    /// Post-ReLU output, `h·w × cout`.
    act: Vec<T>,
    /// For pooled blocks: argmax source index into `act` per pooled element.
    pool_src: Option<Vec<usize>>,
}

pub struct CnnCache<T> {
    convs: Vec<ConvCache<T>>,
    grid_h: usize,
    grid_w: usize,
    grid_c: usize,
    /// Column features fed to the first dense layer, `grid_w × grid_h·grid_c`.
    columns: Vec<T>,
    /// First dense layer after ReLU.
    hidden: Vec<T>,
}

/// Gaussian noise injected after the conv stack during training.
pub struct Noise<'a, R: Rng> {
    pub sigma: f64,
    pub rng: &'a mut R,
}

fn im2col<T: Scalar>(input: &[T], h: usize, w: usize, cin: usize, k: usize) -> Vec<T> {
    let p = k / 2;
    let kk = k * k * cin;
    let mut cols = vec![T::ZERO; h * w * kk];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * kk..(y * w + x + 1) * kk];
            for ky in 0..k {
                let iy = y as isize + ky as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - p as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * cin;
                    let dst = (ky * k + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(dcols: &[T], h: usize, w: usize, cin: usize, k: usize) -> Vec<T> {
    let p = k / 2;
    let kk = k * k * cin;
    let mut out = vec![T::ZERO; h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let row = &dcols[(y * w + x) * kk..(y * w + x + 1) * kk];
            for ky in 0..k {
                let iy = y as isize + ky as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - p as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * cin;
                    let src = (ky * k + kx) * cin;
                    for c in 0..cin {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}

fn add_bias<T: Scalar>(out: &mut [T], b: &[T]) {
    for row in out.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

fn max_pool<T: Scalar>(act: &[T], h: usize, w: usize, c: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::ZERO; oh * ow * c];
    let mut src = vec![0usize; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * y) * w + 2 * x) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if act[i] > act[best_i] {
                        best_i = i;
                    }
                }
                let o = (y * ow + x) * c + ch;
                out[o] = act[best_i];
                src[o] = best_i;
            }
        }
    }
    (out, src)
}

/// Runs the CNN on a `[height, width]` image tensor and returns the
/// `[timesteps, fc_features]` sequence features with the cache needed by
/// [`cnn_backward`].
pub fn cnn_forward<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    params: &ModelParams<T>,
    noise: Option<Noise<'_, R>>,
) -> Result<(Tensor<T>, CnnCache<T>), RecognizerError> {
    let cfg = &params.config;
    image.expect_dims(&[cfg.input_height, cfg.input_width], "cnn input")?;
    if params.conv.len() != cfg.conv.len() {
        return Err(RecognizerError::ShapeMismatch("conv parameter count".into()));
    }

    let (mut h, mut w, mut cin) = (cfg.input_height, cfg.input_width, 1usize);
    let mut x: Vec<T> = image.data().to_vec();
    let mut convs = Vec::with_capacity(cfg.conv.len());
    for (spec, p) in cfg.conv.iter().zip(&params.conv) {
        let kk = spec.kernel * spec.kernel * cin;
        p.w.expect_dims(&[kk, spec.channels], "conv weight")?;
        p.b.expect_dims(&[spec.channels], "conv bias")?;
        let cols = im2col(&x, h, w, cin, spec.kernel);
        let mut act = vec![T::ZERO; h * w * spec.channels];
        mat::mm(h * w, kk, spec.channels, &cols, p.w.data(), &mut act, false);
        add_bias(&mut act, p.b.data());
        relu(&mut act);
        let (next, pool_src, nh, nw) = if spec.pool {
            let (pooled, src) = max_pool(&act, h, w, spec.channels);
            (pooled, Some(src), h / 2, w / 2)
        } else {
            (act.clone(), None, h, w)
        };
        convs.push(ConvCache {
            h,
            w,
            cin,
            cols,
            act,
            pool_src,
        });
        x = next;
        h = nh;
        w = nw;
        cin = spec.channels;
    }

    if let Some(noise) = noise {
        if noise.sigma > 0.0 {
            for v in &mut x {
                let z: f64 = StandardNormal.sample(noise.rng);
                *v += T::from_f64(z * noise.sigma);
            }
        }
    }

    // column-major regrouping: column x gathers rows y and channels c as y·C + c
    let (gh, gw, gc) = (h, w, cin);
    let f0 = gh * gc;
    let mut columns = vec![T::ZERO; gw * f0];
    for y in 0..gh {
        for xx in 0..gw {
            let src = (y * gw + xx) * gc;
            let dst = xx * f0 + y * gc;
            columns[dst..dst + gc].copy_from_slice(&x[src..src + gc]);
        }
    }

    let f = cfg.fc_features;
    let [fc1, fc2] = &params.fc;
    fc1.w.expect_dims(&[f0, f], "fc1 weight")?;
    fc2.w.expect_dims(&[f, f], "fc2 weight")?;
    let mut hidden = vec![T::ZERO; gw * f];
    dense_forward(fc1, &columns, gw, &mut hidden);
    relu(&mut hidden);
    let mut out = vec![T::ZERO; gw * f];
    dense_forward(fc2, &hidden, gw, &mut out);

    Ok((
        Tensor::from_vec(&[gw, f], out)?,
        CnnCache {
            convs,
            grid_h: gh,
            grid_w: gw,
            grid_c: gc,
            columns,
            hidden,
        },
    ))
}

fn dense_forward<T: Scalar>(d: &Dense<T>, x: &[T], rows: usize, out: &mut [T]) {
    let (nin, nout) = (d.w.dims()[0], d.w.dims()[1]);
    mat::mm(rows, nin, nout, x, d.w.data(), out, false);
    add_bias(out, d.b.data());
}

/// Accumulates parameter gradients into `grads` and returns `dx`.
fn dense_backward<T: Scalar>(d: &Dense<T>, g: &mut Dense<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
    let (nin, nout) = (d.w.dims()[0], d.w.dims()[1]);
    mat::mm_at(nin, rows, nout, x, dy, g.w.data_mut(), true);
    let gb = g.b.data_mut();
    for row in dy.chunks_exact(nout) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut dx = vec![T::ZERO; rows * nin];
    mat::mm_bt(rows, nout, nin, dy, d.w.data(), &mut dx, false);
    dx
}

/// Backpropagates `d_features` (`[timesteps, fc_features]`), accumulating
/// into `grads`, and returns the gradient with respect to the input image.
pub fn cnn_backward<T: Scalar>(
    d_features: &Tensor<T>,
    cache: &CnnCache<T>,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
) -> Tensor<T> {
    let cfg = &params.config;
    let (gh, gw, gc) = (cache.grid_h, cache.grid_w, cache.grid_c);
    let mut d_hidden = dense_backward(&params.fc[1], &mut grads.fc[1], &cache.hidden, d_features.data(), gw);
    for (d, &a) in d_hidden.iter_mut().zip(&cache.hidden) {
        if a <= T::ZERO {
            *d = T::ZERO;
        }
    }
    let d_columns = dense_backward(&params.fc[0], &mut grads.fc[0], &cache.columns, &d_hidden, gw);

    let f0 = gh * gc;
    let mut dx = vec![T::ZERO; gh * gw * gc];
    for y in 0..gh {
        for xx in 0..gw {
            let dst = (y * gw + xx) * gc;
            let src = xx * f0 + y * gc;
            dx[dst..dst + gc].copy_from_slice(&d_columns[src..src + gc]);
        }
    }

    for (i, (spec, layer)) in cfg.conv.iter().zip(&cache.convs).enumerate().rev() {
        let cout = spec.channels;
        let (h, w) = (layer.h, layer.w);
        let mut d_act = match &layer.pool_src {
            Some(src) => {
                let mut d = vec![T::ZERO; h * w * cout];
                for (o, &s) in src.iter().enumerate() {
                    d[s] += dx[o];
                }
                d
            }
            None => dx,
        };
        for (d, &a) in d_act.iter_mut().zip(&layer.act) {
            if a <= T::ZERO {
                *d = T::ZERO;
            }
        }
        let kk = spec.kernel * spec.kernel * layer.cin;
        let g = &mut grads.conv[i];
        mat::mm_at(kk, h * w, cout, &layer.cols, &d_act, g.w.data_mut(), true);
        let gb = g.b.data_mut();
        for row in d_act.chunks_exact(cout) {
            for (a, &v) in gb.iter_mut().zip(row) {
                *a += v;
            }
        }
        let mut dcols = vec![T::ZERO; h * w * kk];
        mat::mm_bt(h * w, cout, kk, &d_act, params.conv[i].w.data(), &mut dcols, false);
        dx = col2im(&dcols, h, w, layer.cin, spec.kernel);
    }
    Tensor::from_vec(&[cfg.input_height, cfg.input_width], dx).expect("input dims")
}
