//! Fused single-layer LSTM over a whole sequence.

use crate::elementwise::sigmoid;
use crate::op::{Contributions, Op};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

/// Activations kept from the forward sweep.
pub(crate) struct LstmSaved {
    /// `[T, 4H]` post-activation gates in order `i, f, g, o`.
    gates: Vec<f64>,
    /// `[T, H]` `tanh(c_t)`.
    tanh_c: Vec<f64>,
}

impl<'t> Var<'t> {
    /// Runs an LSTM over `self` (`[T, I]`) from state `(h0, c0)` (`[H]` each).
    ///
    /// Weights are `w_ih: [I, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]` with gate
    /// blocks ordered input, forget, cell, output. Returns `[T, 2H]` whose row
    /// `t` is `h_t` followed by `c_t`.
    pub fn lstm(self, h0: Var<'t>, c0: Var<'t>, w_ih: Var<'t>, w_hh: Var<'t>, bias: Var<'t>) -> Var<'t> {
        for v in [h0, c0, w_ih, w_hh, bias] {
            self.same_tape(v);
        }
        let (x, h0v, c0v, wi, wh, bv) = (self.value(), h0.value(), c0.value(), w_ih.value(), w_hh.value(), bias.value());
        assert_eq!(x.rank(), 2, "lstm input must be [time, features], got {:?}", x.shape());
        let (steps, n_in) = (x.shape()[0], x.shape()[1]);
        let hid = h0v.numel();
        assert_eq!(c0v.numel(), hid, "lstm c0 size");
        assert_eq!(wi.shape(), [n_in, 4 * hid], "lstm w_ih shape");
        assert_eq!(wh.shape(), [hid, 4 * hid], "lstm w_hh shape");
        assert_eq!(bv.numel(), 4 * hid, "lstm bias shape");
        let g4 = 4 * hid;

        let mut gates = vec![0.0; steps * g4];
        let mut tanh_c = vec![0.0; steps * hid];
        let mut out = vec![0.0; steps * 2 * hid];
        let mut h = h0v.data().to_vec();
        let mut c = c0v.data().to_vec();
        let mut z = vec![0.0; g4];
        for t in 0..steps {
            z.copy_from_slice(bv.data());
            for (p, &xp) in x.data()[t * n_in..(t + 1) * n_in].iter().enumerate() {
                if xp != 0.0 {
                    axpy(&mut z, xp, &wi.data()[p * g4..(p + 1) * g4]);
                }
            }
            for (p, &hp) in h.iter().enumerate() {
                axpy(&mut z, hp, &wh.data()[p * g4..(p + 1) * g4]);
            }
            let gt = &mut gates[t * g4..(t + 1) * g4];
            for j in 0..hid {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hid + j]);
                let g = z[2 * hid + j].tanh();
                let o = sigmoid(z[3 * hid + j]);
                gt[j] = i;
                gt[hid + j] = f;
                gt[2 * hid + j] = g;
                gt[3 * hid + j] = o;
                c[j] = f * c[j] + i * g;
                let tc = c[j].tanh();
                tanh_c[t * hid + j] = tc;
                h[j] = o * tc;
            }
            out[t * 2 * hid..t * 2 * hid + hid].copy_from_slice(&h);
            out[t * 2 * hid + hid..(t + 1) * 2 * hid].copy_from_slice(&c);
        }
        let ids = [self.id, h0.id, c0.id, w_ih.id, w_hh.id, bias.id];
        self.tape.push(
            Tensor::new(vec![steps, 2 * hid], out),
            Op::Lstm { inputs: ids, saved: Box::new(LstmSaved { gates, tanh_c }) },
        )
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn lstm_backward(
    g: &[f64],
    vals: &[&Tensor],
    saved: &LstmSaved,
    ids: &[NodeId; 6],
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let (x, h0, c0, wi, wh) = (vals[0], vals[1], vals[2], vals[3], vals[4]);
    let (steps, n_in) = (x.shape()[0], x.shape()[1]);
    let hid = h0.numel();
    let g4 = 4 * hid;

    let mut dx = vec![0.0; steps * n_in];
    let mut dwi = vec![0.0; n_in * g4];
    let mut dwh = vec![0.0; hid * g4];
    let mut db = vec![0.0; g4];
    let mut dh_next = vec![0.0; hid];
    let mut dc_next = vec![0.0; hid];
    let mut dz = vec![0.0; g4];

    // cells[t] = c_{t-1}, hs[t] = h_{t-1}
    let mut cells = vec![0.0; (steps + 1) * hid];
    cells[..hid].copy_from_slice(c0.data());
    let mut hs = vec![0.0; (steps + 1) * hid];
    hs[..hid].copy_from_slice(h0.data());
    for t in 0..steps {
        let gt = &saved.gates[t * g4..(t + 1) * g4];
        for j in 0..hid {
            let c = gt[hid + j] * cells[t * hid + j] + gt[j] * gt[2 * hid + j];
            cells[(t + 1) * hid + j] = c;
            hs[(t + 1) * hid + j] = gt[3 * hid + j] * saved.tanh_c[t * hid + j];
        }
    }

    for t in (0..steps).rev() {
        let gt = &saved.gates[t * g4..(t + 1) * g4];
        let grow = &g[t * 2 * hid..(t + 1) * 2 * hid];
        for j in 0..hid {
            let (i, f, gg, o) = (gt[j], gt[hid + j], gt[2 * hid + j], gt[3 * hid + j]);
            let tc = saved.tanh_c[t * hid + j];
            let dh = grow[j] + dh_next[j];
            let dc = grow[hid + j] + dc_next[j] + dh * o * (1.0 - tc * tc);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[hid + j] = dc * cells[t * hid + j] * f * (1.0 - f);
            dz[2 * hid + j] = dc * i * (1.0 - gg * gg);
            dz[3 * hid + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        for (p, dhp) in dh_next.iter_mut().enumerate() {
            *dhp = dot(&dz, &wh.data()[p * g4..(p + 1) * g4]);
        }
        let xt = &x.data()[t * n_in..(t + 1) * n_in];
        for p in 0..n_in {
            dx[t * n_in + p] = dot(&dz, &wi.data()[p * g4..(p + 1) * g4]);
            if xt[p] != 0.0 {
                axpy(&mut dwi[p * g4..(p + 1) * g4], xt[p], &dz);
            }
        }
        let hprev = &hs[t * hid..(t + 1) * hid];
        for p in 0..hid {
            axpy(&mut dwh[p * g4..(p + 1) * g4], hprev[p], &dz);
        }
        axpy(&mut db, 1.0, &dz);
    }

    let grads = [dx, dh_next, dc_next, dwi, dwh, db];
    ids.iter().copied().zip(grads).filter(|(id, _)| wants(*id)).collect()
}
