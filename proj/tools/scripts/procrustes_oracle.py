#!/usr/bin/env python3
# Copyright 2026 The restpose Authors
# SPDX-License-Identifier: Apache-2.0
"""Write a seeded (pred, gt) joint pair with its similarity-Procrustes error, via numpy."""
import json
import sys

import numpy as np


def procrustes_error(pred, gt):
    mp, mg = pred.mean(0), gt.mean(0)
    p, g = pred - mp, gt - mg
    u, s, vt = np.linalg.svd(g.T @ p)
    d = np.eye(3)
    d[2, 2] = np.sign(np.linalg.det(u @ vt))
    rot = u @ d @ vt
    scale = np.trace(np.diag(s) @ d) / (p ** 2).sum()
    aligned = scale * p @ rot.T + mg
    return float(np.linalg.norm(aligned - gt, axis=1).mean())


def main():
    rng = np.random.default_rng(20260101)
    gt = rng.normal(0.0, 300.0, size=(14, 3))
    pred = 0.9 * gt @ np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).T
    pred += rng.normal(0.0, 40.0, size=(14, 3)) + np.array([15.0, -20.0, 5.0])
    out = {"pred": pred.tolist(), "gt": gt.tolist(), "reconstruction_error": procrustes_error(pred, gt),
           "mpjpe": float(np.linalg.norm(pred - gt, axis=1).mean())}
    with open(sys.argv[1], "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
