#!/usr/bin/env python3
"""Evaluates the shipped tanh fits with numpy on a check grid in [-3, 3].

The output is an oracle for the Rust evaluation of the same coefficients:
it is computed by an independent route (numpy polynomial and matrix code)
straight from crates/core/data/*.json.

Usage: python3 tools/tanh_oracle.py [--data crates/core/data] [--out crates/core/tests/data/tanh_oracle.json]
"""

import argparse
import json
import pathlib

import numpy as np

CHECK_LO, CHECK_HI, CHECK_POINTS = -3.0, 3.0, 601


def rational(path, x):
    f = json.loads(path.read_text())
    num = np.polyval(np.array(f["numerator"])[::-1], x)
    den = 1.0 + x * np.polyval(np.array(f["denominator"])[::-1], x)
    return num / den


def siren(path, x):
    f = json.loads(path.read_text())
    h = x[:, None]
    layers = f["layers"]
    for i, layer in enumerate(layers):
        w = np.array(layer["weight"]).reshape(layer["shape"])
        z = h @ w + np.array(layer["bias"])
        if i == 0:
            h = np.sin(f["omega_first"] * z)
        elif i < len(layers) - 1:
            h = np.sin(f["omega_hidden"] * z)
        else:
            h = z
    return h[:, 0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="crates/core/data")
    ap.add_argument("--out", default="crates/core/tests/data/tanh_oracle.json")
    args = ap.parse_args()
    data = pathlib.Path(args.data)
    x = np.linspace(CHECK_LO, CHECK_HI, CHECK_POINTS)
    r = rational(data / "rational_tanh.json", x)
    s = siren(data / "siren_tanh.json", x)
    print(f"rational max |R - tanh| = {np.max(np.abs(r - np.tanh(x))):.3e}")
    print(f"siren max |f - tanh| = {np.max(np.abs(s - np.tanh(x))):.3e}")
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"x": x.tolist(), "rational": r.tolist(), "siren": s.tolist()}) + "\n")


if __name__ == "__main__":
    main()
