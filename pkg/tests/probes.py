"""Shared helpers for the full-characterization probes."""

import numpy as np

from iofeas.forward import solve_forward
from iofeas.geometry import make_primitive
from iofeas.hypothesis import HypothesisParams, eval_A, eval_b
from iofeas.losses import pred_loss, sub_loss

TIE_TOL = 1e-3


def random_simplex_theta(rng, n, p, K, scale=0.3):
    A = rng.normal(size=(K + 1, n, p))
    A[1:] *= scale
    b = rng.normal(size=(K + 1, n))
    b[1:] *= scale
    return HypothesisParams(A, b), make_primitive("simplex", p)


def probe(theta, Z, obj, s, norm, step=0.1):
    """Losses at the recovered optimum and at an off-face perturbation of it.

    The region is the hull of the columns of ``A(s) + b(s)``; the optimum is
    required to be a unique vertex (else ``None``).  The perturbation points
    away from the vertex centroid, which leaves the hull.
    """
    fw = solve_forward(theta, Z, obj, s)
    if fw.status != "optimal":
        return None
    cols = eval_A(theta, s).T + eval_b(theta, s)
    vals = np.sort(cols @ obj(s))
    if vals[1] - vals[0] < TIE_TOL:
        return None
    x = fw.x_star
    d = x - cols.mean(axis=0)
    if np.linalg.norm(d) < 1e-6:
        return None
    xp = x + step * d / np.linalg.norm(d)
    return (pred_loss(theta, Z, obj, norm, x, s)["loss"], sub_loss(theta, Z, obj, norm, x, s)["loss"],
            pred_loss(theta, Z, obj, norm, xp, s)["loss"], sub_loss(theta, Z, obj, norm, xp, s)["loss"])
