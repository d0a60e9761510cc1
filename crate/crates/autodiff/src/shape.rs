//! Reductions, reshaping, slicing, padding, framing and pooling.

use crate::op::Op;
use crate::tape::Var;
use crate::tensor::{norm_axis, numel, split_at_axis, Tensor};

impl<'t> Var<'t> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum { x: self.id })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(self, axis: isize) -> Var<'t> {
        let v = self.value();
        let axis = norm_axis(axis, v.rank());
        let (outer, len, inner) = split_at_axis(v.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = v.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += s;
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        self.tape.push(Tensor::new(shape, out), Op::SumAxis { x: self.id, axis })
    }

    pub fn mean_axis(self, axis: isize) -> Var<'t> {
        let len = {
            let v = self.value();
            v.shape()[norm_axis(axis, v.rank())]
        };
        self.sum_axis(axis).scale(1.0 / len as f64)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'t> {
        let v = (*self.value()).clone().reshaped(shape);
        self.tape.push(v, Op::Reshape { x: self.id })
    }

    /// Appends a unit axis at `axis`.
    pub fn unsqueeze(self, axis: usize) -> Var<'t> {
        let mut shape = self.shape();
        shape.insert(axis, 1);
        self.reshape(shape)
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(self) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.rank(), 2, "transpose expects rank 2, got {:?}", v.shape());
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let d = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.tape.push(Tensor::new(vec![c, r], out), Op::Transpose { x: self.id })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: isize, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        let axis = norm_axis(axis, v.rank());
        let (outer, len, inner) = split_at_axis(v.shape(), axis);
        assert!(start <= end && end <= len, "slice {start}..{end} out of range for axis of {len}");
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&v.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = w;
        self.tape.push(Tensor::new(shape, out), Op::Slice { x: self.id, axis, start, end })
    }

    /// Row `i` of the leading axis, with that axis removed.
    pub fn select(self, i: usize) -> Var<'t> {
        let mut shape = self.shape();
        let s = self.slice(0, i, i + 1);
        shape.remove(0);
        s.reshape(shape)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(xs: &[Var<'t>], axis: isize) -> Var<'t> {
        assert!(!xs.is_empty(), "concat of zero tensors");
        let tape = xs[0].tape;
        let vals: Vec<_> = xs.iter().map(|x| {
            xs[0].same_tape(*x);
            x.value()
        }).collect();
        let rank = vals[0].rank();
        let axis = norm_axis(axis, rank);
        let mut shape = vals[0].shape().to_vec();
        shape[axis] = 0;
        for v in &vals {
            for d in 0..rank {
                if d != axis {
                    assert_eq!(v.shape()[d], vals[0].shape()[d], "concat extent mismatch on axis {d}");
                }
            }
            shape[axis] += v.shape()[axis];
        }
        let (outer, _, inner) = split_at_axis(vals[0].shape(), axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in &vals {
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        tape.push(Tensor::new(shape, out), Op::Concat { xs: xs.iter().map(|x| x.id).collect(), axis })
    }

    /// Tiles the tensor `times` times along `axis`.
    pub fn repeat(self, axis: isize, times: usize) -> Var<'t> {
        let v = self.value();
        let axis = norm_axis(axis, v.rank());
        let (outer, len, inner) = split_at_axis(v.shape(), axis);
        let chunk = len * inner;
        let mut out = Vec::with_capacity(outer * chunk * times);
        for o in 0..outer {
            for _ in 0..times {
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = v.shape().to_vec();
        shape[axis] *= times;
        self.tape.push(Tensor::new(shape, out), Op::Repeat { x: self.id, axis, times })
    }

    /// Zero padding along `axis`.
    pub fn pad(self, axis: isize, before: usize, after: usize) -> Var<'t> {
        let v = self.value();
        let axis = norm_axis(axis, v.rank());
        let (outer, len, inner) = split_at_axis(v.shape(), axis);
        let new_len = len + before + after;
        let mut out = vec![0.0; outer * new_len * inner];
        for o in 0..outer {
            out[(o * new_len + before) * inner..(o * new_len + before + len) * inner]
                .copy_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = new_len;
        self.tape.push(Tensor::new(shape, out), Op::Pad { x: self.id, axis, before, after })
    }

    /// Overlapping frames of a rank-1 signal: `[num_frames, win]` with
    /// `num_frames = (len - win) / hop + 1`.
    pub fn frames(self, win: usize, hop: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.rank(), 1, "frames expects a rank-1 signal");
        let len = v.numel();
        assert!(win >= 1 && hop >= 1 && len >= win, "cannot frame {len} samples with win {win}");
        let n = (len - win) / hop + 1;
        let mut out = Vec::with_capacity(n * win);
        for f in 0..n {
            out.extend_from_slice(&v.data()[f * hop..f * hop + win]);
        }
        self.tape.push(Tensor::new(vec![n, win], out), Op::Frames { x: self.id, win, hop })
    }

    /// Non-overlapping max over blocks of the last axis. A trailing partial
    /// block is zero padded.
    pub fn max_pool1d(self, block: usize) -> Var<'t> {
        assert!(block >= 1);
        let v = self.value();
        let shape = v.shape();
        let t = *shape.last().expect("max_pool1d on rank-0 tensor");
        let rows = v.numel() / t.max(1);
        let nb = t.div_ceil(block);
        let mut out = Vec::with_capacity(rows * nb);
        let mut argmax = Vec::with_capacity(rows * nb);
        for r in 0..rows {
            let row = &v.data()[r * t..(r + 1) * t];
            for b in 0..nb {
                let lo = b * block;
                let hi = (lo + block).min(t);
                let (mut best, mut idx) = (f64::NEG_INFINITY, usize::MAX);
                for (k, &x) in row[lo..hi].iter().enumerate() {
                    if x > best {
                        best = x;
                        idx = r * t + lo + k;
                    }
                }
                if hi - lo < block && best < 0.0 {
                    // padded zeros win
                    best = 0.0;
                    idx = usize::MAX;
                }
                out.push(best);
                argmax.push(idx);
            }
        }
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = nb;
        self.tape.push(Tensor::new(oshape, out), Op::MaxPool { x: self.id, argmax })
    }

    /// Non-overlapping mean over blocks of the last axis. A trailing partial
    /// block is zero padded (its sum is still divided by `block`).
    pub fn avg_pool1d(self, block: usize) -> Var<'t> {
        assert!(block >= 1);
        let v = self.value();
        let shape = v.shape();
        let t = *shape.last().expect("avg_pool1d on rank-0 tensor");
        let rows = v.numel() / t.max(1);
        let nb = t.div_ceil(block);
        let mut out = Vec::with_capacity(rows * nb);
        for r in 0..rows {
            let row = &v.data()[r * t..(r + 1) * t];
            for b in 0..nb {
                let hi = ((b + 1) * block).min(t);
                out.push(row[b * block..hi].iter().sum::<f64>() / block as f64);
            }
        }
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = nb;
        self.tape.push(Tensor::new(oshape, out), Op::AvgPool { x: self.id, block })
    }

    /// Zero-order hold along the last axis: `out[.., t] = x[.., t / block]`
    /// for `t < out_len`.
    pub fn upsample_nearest(self, block: usize, out_len: usize) -> Var<'t> {
        let v = self.value();
        let shape = v.shape();
        let nb = *shape.last().expect("upsample on rank-0 tensor");
        assert!(out_len <= nb * block, "upsample of {nb} blocks x {block} cannot reach {out_len}");
        let rows = v.numel() / nb.max(1);
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for t in 0..out_len {
                out.push(v.data()[r * nb + t / block]);
            }
        }
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = out_len;
        self.tape.push(Tensor::new(oshape, out), Op::Upsample { x: self.id, block })
    }
}

pub(crate) fn sum_axis_backward(g: &[f64], in_shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(in_shape, axis);
    let mut dx = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for l in 0..len {
            dx[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    dx
}

pub(crate) fn transpose_backward(g: &[f64], in_shape: &[usize]) -> Vec<f64> {
    let (r, c) = (in_shape[0], in_shape[1]);
    let mut dx = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            dx[i * c + j] = g[j * r + i];
        }
    }
    dx
}

pub(crate) fn slice_backward(g: &[f64], in_shape: &[usize], axis: usize, start: usize, end: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(in_shape, axis);
    let w = end - start;
    let mut dx = vec![0.0; outer * len * inner];
    for o in 0..outer {
        dx[(o * len + start) * inner..(o * len + end) * inner].copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
    }
    dx
}

pub(crate) fn concat_backward(g: &[f64], shapes: &[&[usize]], axis: usize) -> Vec<Vec<f64>> {
    let (outer, _, inner) = split_at_axis(shapes[0], axis);
    let mut parts: Vec<Vec<f64>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (p, s) in parts.iter_mut().zip(shapes) {
            let len = s[axis] * inner;
            p.extend_from_slice(&g[pos..pos + len]);
            pos += len;
        }
    }
    parts
}

pub(crate) fn repeat_backward(g: &[f64], in_shape: &[usize], axis: usize, times: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(in_shape, axis);
    let chunk = len * inner;
    let mut dx = vec![0.0; outer * chunk];
    for o in 0..outer {
        for t in 0..times {
            let src = &g[(o * times + t) * chunk..(o * times + t + 1) * chunk];
            for (d, s) in dx[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    dx
}

pub(crate) fn pad_backward(g: &[f64], in_shape: &[usize], axis: usize, before: usize, after: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(in_shape, axis);
    let new_len = len + before + after;
    let mut dx = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        dx.extend_from_slice(&g[(o * new_len + before) * inner..(o * new_len + before + len) * inner]);
    }
    dx
}

pub(crate) fn frames_backward(g: &[f64], len: usize, win: usize, hop: usize) -> Vec<f64> {
    let mut dx = vec![0.0; len];
    for (f, frame) in g.chunks(win).enumerate() {
        for (d, s) in dx[f * hop..f * hop + win].iter_mut().zip(frame) {
            *d += s;
        }
    }
    dx
}

pub(crate) fn avg_pool_backward(g: &[f64], in_shape: &[usize], block: usize) -> Vec<f64> {
    let t = *in_shape.last().unwrap();
    let rows = numel(in_shape) / t.max(1);
    let nb = t.div_ceil(block);
    let mut dx = vec![0.0; rows * t];
    for r in 0..rows {
        for k in 0..t {
            dx[r * t + k] = g[r * nb + k / block] / block as f64;
        }
    }
    dx
}

pub(crate) fn upsample_backward(g: &[f64], in_shape: &[usize], out_shape: &[usize], block: usize) -> Vec<f64> {
    let nb = *in_shape.last().unwrap();
    let out_len = *out_shape.last().unwrap();
    let rows = numel(in_shape) / nb.max(1);
    let mut dx = vec![0.0; rows * nb];
    for r in 0..rows {
        for t in 0..out_len {
            dx[r * nb + t / block] += g[r * out_len + t];
        }
    }
    dx
}
