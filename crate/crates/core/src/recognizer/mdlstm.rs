//! Four-direction 2-D LSTM over the feature grid, collapsed to per-column
//! class logits.
//!
//! The `[timesteps, fc_features]` CNN output is read as a grid of
//! `timesteps` columns by `grid_height` rows with `fc_features / grid_height`
//! inputs per cell, so cell `(x, y)` is the slice
//! `features[x][y·C .. (y+1)·C]`. Cells are numbered `n = x·rows + y`, which
//! makes the input matrix a plain reinterpretation of the feature buffer.
//!
//! Each direction scans the grid so both spatial predecessors are finished
//! before a cell runs:
//!
//! ```text
//! a   = x·Wx + [h(x−dx, y), h(x, y−dy)]·Ur + b
//! i, fx, fy, o = σ(a_i, a_fx, a_fy, a_o);  g = tanh(a_g)
//! c   = i·g + fx·c(x−dx, y) + fy·c(x, y−dy)
//! h   = o·tanh(c)
//! ```
//!
//! Missing predecessors at the grid border contribute zero state. The four
//! direction outputs are summed, summed again over rows, and projected to
//! the class logits.

use super::params::ModelParams;
use super::tensor::mat;
use super::{RecognizerError, Scalar, Tensor, DIRECTIONS};

struct DirCache<T> {
    /// Activated gates per cell, `N × 5H` in order i, fx, fy, o, g.
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    /// Concatenated predecessor hidden states, `N × 2H`.
    hp: Vec<T>,
}

pub struct MdLstmCache<T> {
    cols: usize,
    rows: usize,
    inputs: Vec<T>,
    dirs: Vec<DirCache<T>>,
    /// Row-summed hidden states, `cols × H`.
    pooled: Vec<T>,
}

/// Cells in scan order for a direction.
fn scan_order(cols: usize, rows: usize, (dx, dy): (i8, i8)) -> impl Iterator<Item = (usize, usize)> {
    (0..cols).flat_map(move |i| {
        let x = if dx > 0 { i } else { cols - 1 - i };
        (0..rows).map(move |j| (x, if dy > 0 { j } else { rows - 1 - j }))
    })
}

fn pred(v: usize, step: i8, len: usize) -> Option<usize> {
    let p = v as isize - step as isize;
    (p >= 0 && (p as usize) < len).then_some(p as usize)
}

/// Runs the 2-D LSTM on `[timesteps, fc_features]` features and returns
/// `[timesteps, classes]` raw logits.
pub fn mdlstm_forward<T: Scalar>(
    features: &Tensor<T>,
    params: &ModelParams<T>,
) -> Result<(Tensor<T>, MdLstmCache<T>), RecognizerError> {
    let cfg = &params.config;
    let (cols, rows) = (cfg.timesteps(), cfg.grid_height());
    features.expect_dims(&[cols, cfg.fc_features], "lstm input")?;
    let (ci, h, k) = (cfg.lstm_input(), cfg.lstm_hidden, cfg.classes);
    params.out.w.expect_dims(&[h, k], "output weight")?;
    let n = cols * rows;
    let g5 = 5 * h;
    let inputs = features.data().to_vec();

    let mut hsum = vec![T::ZERO; n * h];
    let mut dirs = Vec::with_capacity(4);
    for (d, &dir) in DIRECTIONS.iter().enumerate() {
        let p = &params.lstm[d];
        p.wx.expect_dims(&[ci, g5], "lstm wx")?;
        p.ur.expect_dims(&[2 * h, g5], "lstm ur")?;
        p.b.expect_dims(&[g5], "lstm bias")?;
        let mut gates = vec![T::ZERO; n * g5];
        mat::mm(n, ci, g5, &inputs, p.wx.data(), &mut gates, false);
        let mut c = vec![T::ZERO; n * h];
        let mut hid = vec![T::ZERO; n * h];
        let mut tanh_c = vec![T::ZERO; n * h];
        let mut hp = vec![T::ZERO; n * 2 * h];
        for (x, y) in scan_order(cols, rows, dir) {
            let cell = x * rows + y;
            let px = pred(x, dir.0, cols).map(|px| px * rows + y);
            let py = pred(y, dir.1, rows).map(|py| x * rows + py);
            {
                let hp_cell = &mut hp[cell * 2 * h..(cell + 1) * 2 * h];
                if let Some(px) = px {
                    hp_cell[..h].copy_from_slice(&hid[px * h..(px + 1) * h]);
                }
                if let Some(py) = py {
                    hp_cell[h..].copy_from_slice(&hid[py * h..(py + 1) * h]);
                }
            }
            let a = &mut gates[cell * g5..(cell + 1) * g5];
            for (v, &b) in a.iter_mut().zip(p.b.data()) {
                *v += b;
            }
            if px.is_some() || py.is_some() {
                mat::mm(1, 2 * h, g5, &hp[cell * 2 * h..(cell + 1) * 2 * h], p.ur.data(), a, true);
            }
            for v in &mut a[..4 * h] {
                *v = v.sigmoid();
            }
            for v in &mut a[4 * h..] {
                *v = v.tanh();
            }
            for j in 0..h {
                let mut cv = a[j] * a[4 * h + j];
                if let Some(px) = px {
                    cv += a[h + j] * c[px * h + j];
                }
                if let Some(py) = py {
                    cv += a[2 * h + j] * c[py * h + j];
                }
                let t = cv.tanh();
                c[cell * h + j] = cv;
                tanh_c[cell * h + j] = t;
                hid[cell * h + j] = a[3 * h + j] * t;
            }
        }
        for (s, &v) in hsum.iter_mut().zip(&hid) {
            *s += v;
        }
        dirs.push(DirCache { gates, c, tanh_c, hp });
    }

    let mut pooled = vec![T::ZERO; cols * h];
    for x in 0..cols {
        for y in 0..rows {
            let src = &hsum[(x * rows + y) * h..(x * rows + y + 1) * h];
            for (p, &v) in pooled[x * h..(x + 1) * h].iter_mut().zip(src) {
                *p += v;
            }
        }
    }
    let mut logits = vec![T::ZERO; cols * k];
    mat::mm(cols, h, k, &pooled, params.out.w.data(), &mut logits, false);
    for row in logits.chunks_exact_mut(k) {
        for (v, &b) in row.iter_mut().zip(params.out.b.data()) {
            *v += b;
        }
    }
    Ok((
        Tensor::from_vec(&[cols, k], logits)?,
        MdLstmCache {
            cols,
            rows,
            inputs,
            dirs,
            pooled,
        },
    ))
}

/// Backpropagates `d_logits`, accumulating parameter gradients into
/// `grads`, and returns the gradient with respect to the features.
pub fn mdlstm_backward<T: Scalar>(
    d_logits: &Tensor<T>,
    cache: &MdLstmCache<T>,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
) -> Tensor<T> {
    let cfg = &params.config;
    let (cols, rows) = (cache.cols, cache.rows);
    let (ci, h, k) = (cfg.lstm_input(), cfg.lstm_hidden, cfg.classes);
    let n = cols * rows;
    let g5 = 5 * h;
    let dl = d_logits.data();

    mat::mm_at(h, cols, k, &cache.pooled, dl, grads.out.w.data_mut(), true);
    for row in dl.chunks_exact(k) {
        for (a, &v) in grads.out.b.data_mut().iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut d_pooled = vec![T::ZERO; cols * h];
    mat::mm_bt(cols, k, h, dl, params.out.w.data(), &mut d_pooled, false);

    let mut d_inputs = vec![T::ZERO; n * ci];
    for (d, &dir) in DIRECTIONS.iter().enumerate() {
        let dc_ = &cache.dirs[d];
        let mut dh_acc = vec![T::ZERO; n * h];
        let mut dc_acc = vec![T::ZERO; n * h];
        let mut da = vec![T::ZERO; n * g5];
        let mut dhp = vec![T::ZERO; 2 * h];
        let order: Vec<_> = scan_order(cols, rows, dir).collect();
        for &(x, y) in order.iter().rev() {
            let cell = x * rows + y;
            let px = pred(x, dir.0, cols).map(|px| px * rows + y);
            let py = pred(y, dir.1, rows).map(|py| x * rows + py);
            let a = &dc_.gates[cell * g5..(cell + 1) * g5];
            let dac = &mut da[cell * g5..(cell + 1) * g5];
            for j in 0..h {
                let dh = d_pooled[x * h + j] + dh_acc[cell * h + j];
                let (i, fx, fy, o, g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j], a[4 * h + j]);
                let t = dc_.tanh_c[cell * h + j];
                let dc = dc_acc[cell * h + j] + dh * o * (T::ONE - t * t);
                let cpx = px.map_or(T::ZERO, |p| dc_.c[p * h + j]);
                let cpy = py.map_or(T::ZERO, |p| dc_.c[p * h + j]);
                if let Some(p) = px {
                    dc_acc[p * h + j] += dc * fx;
                }
                if let Some(p) = py {
                    dc_acc[p * h + j] += dc * fy;
                }
                dac[j] = dc * g * i * (T::ONE - i);
                dac[h + j] = dc * cpx * fx * (T::ONE - fx);
                dac[2 * h + j] = dc * cpy * fy * (T::ONE - fy);
                dac[3 * h + j] = dh * t * o * (T::ONE - o);
                dac[4 * h + j] = dc * i * (T::ONE - g * g);
            }
            if px.is_some() || py.is_some() {
                mat::mm_bt(1, g5, 2 * h, dac, params.lstm[d].ur.data(), &mut dhp, false);
                if let Some(p) = px {
                    for j in 0..h {
                        dh_acc[p * h + j] += dhp[j];
                    }
                }
                if let Some(p) = py {
                    for j in 0..h {
                        dh_acc[p * h + j] += dhp[h + j];
                    }
                }
            }
        }
        let g = &mut grads.lstm[d];
        mat::mm_at(2 * h, n, g5, &dc_.hp, &da, g.ur.data_mut(), true);
        mat::mm_at(ci, n, g5, &cache.inputs, &da, g.wx.data_mut(), true);
        for row in da.chunks_exact(g5) {
            for (acc, &v) in g.b.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        mat::mm_bt(n, g5, ci, &da, params.lstm[d].wx.data(), &mut d_inputs, true);
    }
    Tensor::from_vec(&[cols, cfg.fc_features], d_inputs).expect("feature dims")
}
