#!/usr/bin/env python3
"""Offline fit of the tanh initializations shipped in crates/core/data/.

Produces:
  rational_tanh.json  order [6,5] rational coefficients
  siren_tanh.json     sinusoidal MLP weights (first-layer omega 30, hidden 1)

Both fits are least squares on 4096 uniformly spaced points in [-4, 4].
The Rust build only loads these files; it never refits.

Usage: python3 tools/fit_tanh.py [--out crates/core/data] [--seed 0]
"""

import argparse
import json
import math
import pathlib

import numpy as np
from scipy.optimize import least_squares

NUM_POINTS = 4096
FIT_LO, FIT_HI = -4.0, 4.0
CHECK_LO, CHECK_HI = -3.0, 3.0


def rational_eval(params, x):
    num = np.polyval(params[:7][::-1], x)
    den = 1.0 + x * np.polyval(params[7:][::-1], x)
    return num / den


def fit_rational(x, y):
    # Linearized start: a(x) - y * (b1 x + ... + b5 x^5) = y
    cols = [x**i for i in range(7)] + [-y * x**j for j in range(1, 6)]
    design = np.stack(cols, axis=1)
    start, *_ = np.linalg.lstsq(design, y, rcond=None)
    res = least_squares(lambda p: rational_eval(p, x) - y, start, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return res.x


def fit_siren(x, y, width, hidden_layers, seed):
    import torch

    torch.manual_seed(seed)
    dtype = torch.float64
    dims = [1] + [width] * hidden_layers + [1]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = math.sqrt(1.0 / fan_in)
        w = torch.empty(fan_in, fan_out, dtype=dtype).uniform_(-bound, bound)
        b = torch.empty(fan_out, dtype=dtype).uniform_(-bound, bound)
        layers.append((w.requires_grad_(), b.requires_grad_()))
    params = [t for pair in layers for t in pair]

    def forward(inp):
        h = inp
        for i, (w, b) in enumerate(layers):
            z = h @ w + b
            if i == 0:
                h = torch.sin(30.0 * z)
            elif i < len(layers) - 1:
                h = torch.sin(z)
            else:
                h = z
        return h

    xt = torch.tensor(x, dtype=dtype).unsqueeze(1)
    yt = torch.tensor(y, dtype=dtype).unsqueeze(1)
    opt = torch.optim.Adam(params, lr=1e-3)
    for step in range(6000):
        opt.zero_grad()
        loss = torch.mean((forward(xt) - yt) ** 2)
        loss.backward()
        opt.step()
        if step == 4000:
            for g in opt.param_groups:
                g["lr"] = 2e-4
    lbfgs = torch.optim.LBFGS(params, lr=0.5, max_iter=2000, tolerance_grad=1e-14, tolerance_change=1e-16,
                              history_size=50, line_search_fn="strong_wolfe")

    def closure():
        lbfgs.zero_grad()
        loss = torch.mean((forward(xt) - yt) ** 2)
        loss.backward()
        return loss

    lbfgs.step(closure)
    return [(w.detach().numpy(), b.detach().numpy()) for w, b in layers], forward


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="crates/core/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--hidden-layers", type=int, default=3)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    x = np.linspace(FIT_LO, FIT_HI, NUM_POINTS)
    y = np.tanh(x)
    check = np.linspace(CHECK_LO, CHECK_HI, 6001)

    coeffs = fit_rational(x, y)
    err = np.max(np.abs(rational_eval(coeffs, check) - np.tanh(check)))
    print(f"rational [6,5]: max |R - tanh| on [-3,3] = {err:.3e}")
    wide = np.linspace(-8, 8, 4001)
    print(f"rational on [-8,8]: min {rational_eval(coeffs, wide).min():.4f} max {rational_eval(coeffs, wide).max():.4f}")
    (out / "rational_tanh.json").write_text(json.dumps({
        "format": "rational-v1",
        "order": [6, 5],
        "numerator": [float(v) for v in coeffs[:7]],
        "denominator": [float(v) for v in coeffs[7:]],
        "fit_range": [FIT_LO, FIT_HI],
        "fit_points": NUM_POINTS,
    }, indent=2) + "\n")

    layers, forward = fit_siren(x, y, args.width, args.hidden_layers, args.seed)
    import torch
    with torch.no_grad():
        pred = forward(torch.tensor(check).unsqueeze(1)).squeeze(1).numpy()
    err = np.max(np.abs(pred - np.tanh(check)))
    print(f"siren {args.hidden_layers}x{args.width}: max |f - tanh| on [-3,3] = {err:.3e}")
    (out / "siren_tanh.json").write_text(json.dumps({
        "format": "siren-v1",
        "omega_first": 30.0,
        "omega_hidden": 1.0,
        "layers": [
            {"shape": [int(w.shape[0]), int(w.shape[1])], "weight": w.reshape(-1).tolist(), "bias": b.tolist()}
            for w, b in layers
        ],
        "fit_range": [FIT_LO, FIT_HI],
        "fit_points": NUM_POINTS,
    }) + "\n")


if __name__ == "__main__":
    main()
