//! Bidirectional LSTM layer with full backpropagation through time.
//!
//! Inputs are `(batch, features, steps)`, the same channel-major layout the
//! convolutional layers use. Gate order inside the stacked weights is
//! input, forget, cell, output.

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
}

pub(crate) struct DirCache {
    /// Activated gates per processing step, `batch x 4H` each.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_c: Vec<f64>,
    hs: Vec<f64>,
}

pub(crate) struct LstmCache {
    /// Time-major input, row `t * batch + b`.
    x_seq: Vec<f64>,
    batch: usize,
    input: usize,
    len: usize,
    fwd: DirCache,
    bwd: DirCache,
    return_sequences: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn time_of(step: usize, len: usize, reverse: bool) -> usize {
    if reverse {
        len - 1 - step
    } else {
        step
    }
}

fn run_direction(
    params: &ParamSet,
    p: &LstmParams,
    x_seq: &[f64],
    (batch, input, len): (usize, usize, usize),
    hidden: usize,
    reverse: bool,
) -> DirCache {
    let g4 = 4 * hidden;
    let w_ih = params.get(p.w_ih).data();
    let w_hh = params.get(p.w_hh).data();
    let bias = params.get(p.bias).data();
    let mut pre = vec![0.0; len * batch * g4];
    gemm(len * batch, input, g4, 1.0, x_seq, false, w_ih, true, 0.0, &mut pre);

    let bh = batch * hidden;
    let mut cache = DirCache {
        gates: vec![0.0; len * batch * g4],
        cells: vec![0.0; len * bh],
        tanh_c: vec![0.0; len * bh],
        hs: vec![0.0; len * bh],
    };
    let zero = vec![0.0; bh];
    for s in 0..len {
        let t = time_of(s, len, reverse);
        let mut z = pre[t * batch * g4..(t + 1) * batch * g4].to_vec();
        for row in z.chunks_mut(g4) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let (h_prev, c_prev) = if s == 0 {
            (&zero[..], &zero[..])
        } else {
            (&cache.hs[(s - 1) * bh..s * bh], &cache.cells[(s - 1) * bh..s * bh])
        };
        gemm(batch, hidden, g4, 1.0, h_prev, false, w_hh, true, 1.0, &mut z);
        let mut c_new = vec![0.0; bh];
        let mut tc_new = vec![0.0; bh];
        let mut h_new = vec![0.0; bh];
        for b in 0..batch {
            let zr = &mut z[b * g4..(b + 1) * g4];
            for j in 0..hidden {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[hidden + j]);
                let g = zr[2 * hidden + j].tanh();
                let o = sigmoid(zr[3 * hidden + j]);
                zr[j] = i;
                zr[hidden + j] = f;
                zr[2 * hidden + j] = g;
                zr[3 * hidden + j] = o;
                let c = f * c_prev[b * hidden + j] + i * g;
                let tc = c.tanh();
                c_new[b * hidden + j] = c;
                tc_new[b * hidden + j] = tc;
                h_new[b * hidden + j] = o * tc;
            }
        }
        cache.gates[s * batch * g4..(s + 1) * batch * g4].copy_from_slice(&z);
        cache.cells[s * bh..(s + 1) * bh].copy_from_slice(&c_new);
        cache.tanh_c[s * bh..(s + 1) * bh].copy_from_slice(&tc_new);
        cache.hs[s * bh..(s + 1) * bh].copy_from_slice(&h_new);
    }
    cache
}

pub(crate) fn bilstm_forward(
    params: &ParamSet,
    x: &Tensor,
    fwd: &LstmParams,
    bwd: &LstmParams,
    hidden: usize,
    return_sequences: bool,
) -> (Tensor, LstmCache) {
    let s = x.shape();
    let (batch, input, len) = (s[0], s[1], s[2]);
    let xd = x.data();
    let mut x_seq = vec![0.0; len * batch * input];
    for b in 0..batch {
        for d in 0..input {
            for t in 0..len {
                x_seq[(t * batch + b) * input + d] = xd[(b * input + d) * len + t];
            }
        }
    }
    let dims = (batch, input, len);
    let fc = run_direction(params, fwd, &x_seq, dims, hidden, false);
    let bc = run_direction(params, bwd, &x_seq, dims, hidden, true);
    let bh = batch * hidden;
    let out = if return_sequences {
        let mut out = vec![0.0; batch * 2 * hidden * len];
        for (dir, cache, reverse) in [(0, &fc, false), (1, &bc, true)] {
            for step in 0..len {
                let t = time_of(step, len, reverse);
                for b in 0..batch {
                    for j in 0..hidden {
                        out[(b * 2 * hidden + dir * hidden + j) * len + t] = cache.hs[step * bh + b * hidden + j];
                    }
                }
            }
        }
        Tensor::new(vec![batch, 2 * hidden, len], out).expect("lstm sequence shape")
    } else {
        let mut out = vec![0.0; batch * 2 * hidden];
        let last = (len - 1) * bh;
        for b in 0..batch {
            for j in 0..hidden {
                out[b * 2 * hidden + j] = fc.hs[last + b * hidden + j];
                out[b * 2 * hidden + hidden + j] = bc.hs[last + b * hidden + j];
            }
        }
        Tensor::new(vec![batch, 2 * hidden], out).expect("lstm final-state shape")
    };
    (out, LstmCache { x_seq, batch, input, len, fwd: fc, bwd: bc, return_sequences })
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &ParamSet,
    p: &LstmParams,
    cache: &DirCache,
    dh_out: &[f64],
    x_seq: &[f64],
    (batch, input, len): (usize, usize, usize),
    hidden: usize,
    reverse: bool,
    grads: &mut ParamSet,
    dx_seq: Option<&mut [f64]>,
) {
    let g4 = 4 * hidden;
    let bh = batch * hidden;
    let w_hh = params.get(p.w_hh).data();
    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];
    let mut dz_all = vec![0.0; len * batch * g4];
    let mut dz = vec![0.0; batch * g4];
    for s in (0..len).rev() {
        let t = time_of(s, len, reverse);
        let gates = &cache.gates[s * batch * g4..(s + 1) * batch * g4];
        for b in 0..batch {
            for j in 0..hidden {
                let k = b * hidden + j;
                let gi = gates[b * g4 + j];
                let gf = gates[b * g4 + hidden + j];
                let gg = gates[b * g4 + 2 * hidden + j];
                let go = gates[b * g4 + 3 * hidden + j];
                let tc = cache.tanh_c[s * bh + k];
                let c_prev = if s == 0 { 0.0 } else { cache.cells[(s - 1) * bh + k] };
                let dh = dh_out[s * bh + k] + dh_next[k];
                let dc = dc_next[k] + dh * go * (1.0 - tc * tc);
                let d_o = dh * tc;
                let d_i = dc * gg;
                let d_g = dc * gi;
                let d_f = dc * c_prev;
                dc_next[k] = dc * gf;
                dz[b * g4 + j] = d_i * gi * (1.0 - gi);
                dz[b * g4 + hidden + j] = d_f * gf * (1.0 - gf);
                dz[b * g4 + 2 * hidden + j] = d_g * (1.0 - gg * gg);
                dz[b * g4 + 3 * hidden + j] = d_o * go * (1.0 - go);
            }
        }
        if s > 0 {
            let h_prev = &cache.hs[(s - 1) * bh..s * bh];
            gemm(g4, batch, hidden, 1.0, &dz, true, h_prev, false, 1.0, grads.get_mut(p.w_hh).data_mut());
        }
        let db = grads.get_mut(p.bias).data_mut();
        for row in dz.chunks(g4) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        gemm(batch, g4, hidden, 1.0, &dz, false, w_hh, false, 0.0, &mut dh_next);
        dz_all[t * batch * g4..(t + 1) * batch * g4].copy_from_slice(&dz);
    }
    gemm(g4, len * batch, input, 1.0, &dz_all, true, x_seq, false, 1.0, grads.get_mut(p.w_ih).data_mut());
    if let Some(dx_seq) = dx_seq {
        gemm(len * batch, g4, input, 1.0, &dz_all, false, params.get(p.w_ih).data(), false, 1.0, dx_seq);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bilstm_backward(
    params: &ParamSet,
    cache: LstmCache,
    dy: &Tensor,
    fwd: &LstmParams,
    bwd: &LstmParams,
    hidden: usize,
    grads: &mut ParamSet,
    need_dx: bool,
) -> Option<Tensor> {
    let LstmCache { x_seq, batch, input, len, fwd: fc, bwd: bc, return_sequences } = cache;
    let bh = batch * hidden;
    let dyd = dy.data();
    let mut dx_seq = need_dx.then(|| vec![0.0; len * batch * input]);
    for (dir, p, dcache, reverse) in [(0, fwd, &fc, false), (1, bwd, &bc, true)] {
        let mut dh_out = vec![0.0; len * bh];
        if return_sequences {
            for s in 0..len {
                let t = time_of(s, len, reverse);
                for b in 0..batch {
                    for j in 0..hidden {
                        dh_out[s * bh + b * hidden + j] = dyd[(b * 2 * hidden + dir * hidden + j) * len + t];
                    }
                }
            }
        } else {
            let last = (len - 1) * bh;
            for b in 0..batch {
                for j in 0..hidden {
                    dh_out[last + b * hidden + j] = dyd[b * 2 * hidden + dir * hidden + j];
                }
            }
        }
        backprop_direction(
            params,
            p,
            dcache,
            &dh_out,
            &x_seq,
            (batch, input, len),
            hidden,
            reverse,
            grads,
            dx_seq.as_deref_mut(),
        );
    }
    dx_seq.map(|seq| {
        let mut dx = vec![0.0; batch * input * len];
        for t in 0..len {
            for b in 0..batch {
                for d in 0..input {
                    dx[(b * input + d) * len + t] = seq[(t * batch + b) * input + d];
                }
            }
        }
        Tensor::new(vec![batch, input, len], dx).expect("lstm dx shape")
    })
}
