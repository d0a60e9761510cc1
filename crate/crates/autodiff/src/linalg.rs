//! Matrix products and causal dilated convolution.

use crate::op::{Contributions, Op};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

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

/// `c[m,n] += a[m,k] · b[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(ci, aip, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

impl<'t> Var<'t> {
    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        assert!(a.rank() == 2 && b.rank() == 2, "matmul expects rank 2, got {:?} and {:?}", a.shape(), b.shape());
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        assert_eq!(k, b.shape()[0], "matmul inner dims {:?} x {:?}", a.shape(), b.shape());
        let mut c = vec![0.0; m * n];
        gemm_nn(a.data(), b.data(), &mut c, m, k, n);
        self.tape.push(Tensor::new(vec![m, n], c), Op::MatMul { a: self.id, b: rhs.id })
    }

    /// Causal dilated 1-D convolution with stride 1.
    ///
    /// `self` is `[c_in, time]`, `weight` is `[c_out, c_in, kernel]` and
    /// `bias` is `[c_out]`. The input is left padded with
    /// `(kernel - 1) * dilation` zeros so the output keeps the input length and
    /// output sample `t` depends on inputs `<= t` only:
    /// `out[o, t] = bias[o] + Σ_{i,k} weight[o, i, k] · x[i, t - (kernel-1-k)·dilation]`.
    pub fn conv1d(self, weight: Var<'t>, bias: Option<Var<'t>>, dilation: usize) -> Var<'t> {
        self.same_tape(weight);
        assert!(dilation >= 1, "dilation must be >= 1");
        let (x, w) = (self.value(), weight.value());
        assert_eq!(x.rank(), 2, "conv1d input must be [channels, time], got {:?}", x.shape());
        assert_eq!(w.rank(), 3, "conv1d weight must be [out, in, kernel], got {:?}", w.shape());
        let (cin, t) = (x.shape()[0], x.shape()[1]);
        let (cout, wcin, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(cin, wcin, "conv1d channel mismatch: input {cin}, weight {wcin}");
        let mut out = vec![0.0; cout * t];
        if let Some(b) = bias {
            self.same_tape(b);
            let bv = b.value();
            assert_eq!(bv.shape(), [cout], "conv1d bias must be [{cout}]");
            for o in 0..cout {
                out[o * t..(o + 1) * t].fill(bv.data()[o]);
            }
        }
        let (xd, wd) = (x.data(), w.data());
        for o in 0..cout {
            let orow = &mut out[o * t..(o + 1) * t];
            for i in 0..cin {
                let xrow = &xd[i * t..(i + 1) * t];
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if shift >= t {
                        continue;
                    }
                    let wv = wd[(o * cin + i) * kernel + k];
                    axpy(&mut orow[shift..], wv, &xrow[..t - shift]);
                }
            }
        }
        self.tape.push(
            Tensor::new(vec![cout, t], out),
            Op::Conv1d { x: self.id, w: weight.id, bias: bias.map(|b| b.id), dilation },
        )
    }
}

pub(crate) fn matmul_backward(
    g: &[f64],
    a: &Tensor,
    b: &Tensor,
    ia: NodeId,
    ib: NodeId,
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut res = Vec::with_capacity(2);
    if wants(ia) {
        // dA = G · Bᵀ
        let mut da = vec![0.0; m * k];
        for i in 0..m {
            let gi = &g[i * n..(i + 1) * n];
            for p in 0..k {
                da[i * k + p] = dot(gi, &b.data()[p * n..(p + 1) * n]);
            }
        }
        res.push((ia, da));
    }
    if wants(ib) {
        // dB = Aᵀ · G
        let mut db = vec![0.0; k * n];
        for i in 0..m {
            let gi = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a.data()[i * k + p];
                if aip != 0.0 {
                    axpy(&mut db[p * n..(p + 1) * n], aip, gi);
                }
            }
        }
        res.push((ib, db));
    }
    res
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    g: &[f64],
    x: &Tensor,
    w: &Tensor,
    ix: NodeId,
    iw: NodeId,
    ibias: Option<NodeId>,
    dilation: usize,
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let (cin, t) = (x.shape()[0], x.shape()[1]);
    let (cout, kernel) = (w.shape()[0], w.shape()[2]);
    let (xd, wd) = (x.data(), w.data());
    let mut res = Vec::with_capacity(3);
    if wants(ix) {
        let mut dx = vec![0.0; cin * t];
        for o in 0..cout {
            let grow = &g[o * t..(o + 1) * t];
            for i in 0..cin {
                let dxrow = &mut dx[i * t..(i + 1) * t];
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if shift >= t {
                        continue;
                    }
                    axpy(&mut dxrow[..t - shift], wd[(o * cin + i) * kernel + k], &grow[shift..]);
                }
            }
        }
        res.push((ix, dx));
    }
    if wants(iw) {
        let mut dw = vec![0.0; cout * cin * kernel];
        for o in 0..cout {
            let grow = &g[o * t..(o + 1) * t];
            for i in 0..cin {
                let xrow = &xd[i * t..(i + 1) * t];
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if shift >= t {
                        continue;
                    }
                    dw[(o * cin + i) * kernel + k] = dot(&grow[shift..], &xrow[..t - shift]);
                }
            }
        }
        res.push((iw, dw));
    }
    if let Some(ib) = ibias.filter(|&ib| wants(ib)) {
        let db = (0..cout).map(|o| g[o * t..(o + 1) * t].iter().sum()).collect();
        res.push((ib, db));
    }
    res
}
