//! Broadcasting arithmetic and pointwise functions.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::op::{Binary, Contributions, Op, Unary};
use crate::tape::{NodeId, Var};
use crate::tensor::{broadcast_shape, Broadcast, Tensor};

fn binary<'t>(kind: Binary, a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.same_tape(b);
    let (av, bv) = (a.value(), b.value());
    let shape = broadcast_shape(av.shape(), bv.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape()));
    let ma = Broadcast::new(av.shape(), &shape);
    let mb = Broadcast::new(bv.shape(), &shape);
    let (ad, bd) = (av.data(), bv.data());
    let n = shape.iter().product();
    let f: fn(f64, f64) -> f64 = match kind {
        Binary::Add => |x, y| x + y,
        Binary::Sub => |x, y| x - y,
        Binary::Mul => |x, y| x * y,
        Binary::Div => |x, y| x / y,
    };
    let data: Vec<f64> = match (&ma, &mb) {
        (Broadcast::Identity, Broadcast::Identity) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        (Broadcast::Identity, Broadcast::Scalar) => ad.iter().map(|&x| f(x, bd[0])).collect(),
        (Broadcast::Scalar, Broadcast::Identity) => bd.iter().map(|&y| f(ad[0], y)).collect(),
        _ => (0..n).map(|i| f(ad[ma.index(i)], bd[mb.index(i)])).collect(),
    };
    a.tape.push(Tensor::new(shape, data), Op::Binary { kind, a: a.id, b: b.id })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn binary_backward(
    kind: Binary,
    g: &[f64],
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    ia: NodeId,
    ib: NodeId,
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let ma = Broadcast::new(a.shape(), out.shape());
    let mb = Broadcast::new(b.shape(), out.shape());
    let (ad, bd) = (a.data(), b.data());
    let mut res = Vec::with_capacity(2);
    if wants(ia) {
        let ga: Vec<f64> = match kind {
            Binary::Add | Binary::Sub => g.to_vec(),
            Binary::Mul => g.iter().enumerate().map(|(i, gi)| gi * bd[mb.index(i)]).collect(),
            Binary::Div => g.iter().enumerate().map(|(i, gi)| gi / bd[mb.index(i)]).collect(),
        };
        res.push((ia, ma.reduce(&ga, a.numel())));
    }
    if wants(ib) {
        let gb: Vec<f64> = match kind {
            Binary::Add => g.to_vec(),
            Binary::Sub => g.iter().map(|gi| -gi).collect(),
            Binary::Mul => g.iter().enumerate().map(|(i, gi)| gi * ad[ma.index(i)]).collect(),
            // d(a/b)/db = -a/b^2 = -out/b
            Binary::Div => g
                .iter()
                .enumerate()
                .map(|(i, gi)| -gi * out.data()[i] / bd[mb.index(i)])
                .collect(),
        };
        res.push((ib, mb.reduce(&gb, b.numel())));
    }
    res
}

fn unary(kind: Unary, x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let f: Box<dyn Fn(f64) -> f64> = match kind {
        Unary::Neg => Box::new(|v| -v),
        Unary::Affine { scale, shift } => Box::new(move |v| scale * v + shift),
        Unary::Powi(n) => Box::new(move |v: f64| v.powi(n)),
        Unary::Tanh => Box::new(f64::tanh),
        Unary::Sigmoid => Box::new(sigmoid),
        Unary::Sin => Box::new(f64::sin),
        Unary::Exp => Box::new(f64::exp),
        Unary::Log => Box::new(f64::ln),
        Unary::Abs => Box::new(f64::abs),
        Unary::Sqrt => Box::new(f64::sqrt),
        Unary::Clamp { lo, hi } => Box::new(move |v: f64| v.clamp(lo, hi)),
    };
    x.tape.push(xv.map(f), Op::Unary { kind, x: x.id })
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn unary_backward(kind: Unary, g: &[f64], x: &Tensor, out: &Tensor) -> Vec<f64> {
    let (xd, yd) = (x.data(), out.data());
    let d = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        g.iter().zip(xd).zip(yd).map(|((gi, &xi), &yi)| gi * f(xi, yi)).collect()
    };
    match kind {
        Unary::Neg => g.iter().map(|v| -v).collect(),
        Unary::Affine { scale, .. } => g.iter().map(|v| v * scale).collect(),
        Unary::Powi(0) => vec![0.0; g.len()],
        Unary::Powi(n) => d(&|xi, _| n as f64 * xi.powi(n - 1)),
        Unary::Tanh => d(&|_, y| 1.0 - y * y),
        Unary::Sigmoid => d(&|_, y| y * (1.0 - y)),
        Unary::Sin => d(&|xi, _| xi.cos()),
        Unary::Exp => d(&|_, y| y),
        Unary::Log => d(&|xi, _| 1.0 / xi),
        Unary::Abs => d(&|xi, _| if xi > 0.0 { 1.0 } else if xi < 0.0 { -1.0 } else { 0.0 }),
        Unary::Sqrt => d(&|_, y| 0.5 / y),
        Unary::Clamp { lo, hi } => d(&|xi, _| if xi >= lo && xi <= hi { 1.0 } else { 0.0 }),
    }
}

impl<'t> Var<'t> {
    /// `scale * self + shift` with constant `scale` and `shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        unary(Unary::Affine { scale, shift }, self)
    }
    pub fn scale(self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }
    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.affine(1.0, s)
    }
    pub fn powi(self, n: i32) -> Var<'t> {
        unary(Unary::Powi(n), self)
    }
    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }
    pub fn tanh(self) -> Var<'t> {
        unary(Unary::Tanh, self)
    }
    pub fn sigmoid(self) -> Var<'t> {
        unary(Unary::Sigmoid, self)
    }
    pub fn sin(self) -> Var<'t> {
        unary(Unary::Sin, self)
    }
    /// `sin(x + π/2)`.
    pub fn cos(self) -> Var<'t> {
        self.add_scalar(std::f64::consts::FRAC_PI_2).sin()
    }
    pub fn exp(self) -> Var<'t> {
        unary(Unary::Exp, self)
    }
    pub fn ln(self) -> Var<'t> {
        unary(Unary::Log, self)
    }
    pub fn abs(self) -> Var<'t> {
        unary(Unary::Abs, self)
    }
    pub fn sqrt(self) -> Var<'t> {
        unary(Unary::Sqrt, self)
    }
    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        unary(Unary::Clamp { lo, hi }, self)
    }
}

macro_rules! impl_binary {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                binary($kind, self, rhs)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                binary($kind, self, self.tape.scalar(rhs))
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                binary($kind, rhs.tape.scalar(self), rhs)
            }
        }
    };
}

impl_binary!(Add, add, Binary::Add);
impl_binary!(Sub, sub, Binary::Sub);
impl_binary!(Mul, mul, Binary::Mul);
impl_binary!(Div, div, Binary::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        unary(Unary::Neg, self)
    }
}
