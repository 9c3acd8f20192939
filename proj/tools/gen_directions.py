#!/usr/bin/env python3
"""Generate antipodally symmetric gradient direction sets by electrostatic repulsion.

Each point repels every other point and every other point's antipode
(Jones et al. 1999). The output files under data/directions/ are bundled
into the library at build time; rerunning this script reproduces them
exactly for a fixed seed.
"""
import argparse
import pathlib

import numpy as np


def energy_grad(p):
    diff_minus = p[:, None, :] - p[None, :, :]
    diff_plus = p[:, None, :] + p[None, :, :]
    n = len(p)
    eye = np.eye(n, dtype=bool)
    d_minus = np.linalg.norm(diff_minus, axis=2)
    d_plus = np.linalg.norm(diff_plus, axis=2)
    d_minus[eye] = np.inf
    d_plus[eye] = np.inf
    energy = 0.5 * (np.sum(1.0 / d_minus) + np.sum(1.0 / d_plus))
    grad = -np.sum(diff_minus / d_minus[..., None] ** 3, axis=1)
    grad -= np.sum(diff_plus / d_plus[..., None] ** 3, axis=1)
    return energy, grad


def optimise(n, seed, iters=20000):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    step = 0.01
    energy, grad = energy_grad(p)
    for _ in range(iters):
        tangent = grad - np.sum(grad * p, axis=1, keepdims=True) * p
        trial = p - step * tangent
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        e_trial, g_trial = energy_grad(trial)
        if e_trial < energy:
            p, energy, grad = trial, e_trial, g_trial
            step *= 1.1
        else:
            step *= 0.5
        if step < 1e-12:
            break
    # canonical hemisphere: first nonzero component positive along z, then x
    for i in range(n):
        if p[i, 2] < 0 or (abs(p[i, 2]) < 1e-12 and p[i, 0] < 0):
            p[i] = -p[i]
    return p, energy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "directions"))
    ap.add_argument("--seed", type=int, default=1999)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n in (7, 15, 25, 36, 46, 64):
        p, energy = optimise(n, args.seed + n)
        with open(out / f"jones{n}.txt", "w") as fh:
            fh.write(f"# {n} directions, electrostatic repulsion with antipodal symmetry (Jones et al. 1999)\n")
            fh.write(f"# generated by tools/gen_directions.py --seed {args.seed}; final energy {energy:.10f}\n")
            for row in p:
                fh.write(f"{row[0]: .10f} {row[1]: .10f} {row[2]: .10f}\n")


if __name__ == "__main__":
    main()
