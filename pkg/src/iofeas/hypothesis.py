"""Affine-in-signal hypothesis parameters ``theta = ({A_k}, {b_k})``.

``A(s) = A_0 + sum_k s_k A_k`` and ``b(s) = b_0 + sum_k s_k b_k``.  Two
restricted structures are supported besides the free one: a nonnegative
scalar ``alpha`` standing in for ``A(s) = alpha * I``, and a signed
incidence matrix whose columns are switched on by binary selectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

FREE = "free"
SCALAR_ALPHA = "scalar_alpha"
SIGNED_INCIDENCE = "signed_incidence"
STRUCTURES = (FREE, SCALAR_ALPHA, SIGNED_INCIDENCE)


@dataclass(frozen=True, eq=False)
class HypothesisParams:
    """Parameters of the constraint hypothesis.

    Attributes
    ----------
    A : ndarray, shape (K+1, n, p)
    b : ndarray, shape (K+1, n)
    structure : str
        One of ``free``, ``scalar_alpha``, ``signed_incidence``.
    a_free, b_free : tuple of bool, length K+1
        Which ``A_k`` / ``b_k`` the trainers may change.  Fixed entries keep
        their stored value (zero unless set otherwise).
    alpha : float, optional
        Scale for ``scalar_alpha``.
    incidence : ndarray, shape (n, m), optional
        Candidate signed columns for ``signed_incidence``.
    selector : ndarray of {0, 1}, shape (m,), optional
        Which candidate columns are present.
    """

    A: np.ndarray
    b: np.ndarray
    structure: str = FREE
    a_free: tuple = ()
    b_free: tuple = ()
    alpha: float | None = None
    incidence: np.ndarray | None = None
    selector: np.ndarray | None = None
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 3 or b.ndim != 2:
            raise ValueError("A must be (K+1, n, p) and b must be (K+1, n)")
        if A.shape[0] != b.shape[0] or A.shape[1] != b.shape[1]:
            raise ValueError(f"A {A.shape} and b {b.shape} disagree on K+1 or n")
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        k1 = A.shape[0]
        object.__setattr__(self, "a_free", tuple(self.a_free) if self.a_free else (True,) * k1)
        object.__setattr__(self, "b_free", tuple(self.b_free) if self.b_free else (True,) * k1)
        if len(self.a_free) != k1 or len(self.b_free) != k1:
            raise ValueError("a_free / b_free must have length K+1")
        if self.structure == SCALAR_ALPHA:
            if self.alpha is None or self.alpha < 0:
                raise ValueError("scalar_alpha needs alpha >= 0")
            if A.shape[1] != A.shape[2]:
                raise ValueError("scalar_alpha needs n == p")
        if self.structure == SIGNED_INCIDENCE:
            inc = np.asarray(self.incidence, dtype=float)
            sel = np.asarray(self.selector, dtype=float)
            if inc.shape != (A.shape[1], A.shape[2]) or sel.shape != (A.shape[2],):
                raise ValueError("incidence must be (n, p) and selector (p,)")
            if not np.all(np.isin(inc, (-1.0, 0.0, 1.0))):
                raise ValueError("incidence entries must be in {-1, 0, 1}")
            if not (np.all((inc == 1).sum(0) == 1) and np.all((inc == -1).sum(0) == 1)):
                raise ValueError("each incidence column needs exactly one +1 and one -1")
            if not np.all(np.isin(sel, (0.0, 1.0))):
                raise ValueError("selector must be binary")
            object.__setattr__(self, "incidence", inc)
            object.__setattr__(self, "selector", sel)

    @property
    def K(self):
        return self.A.shape[0] - 1

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def p(self):
        return self.A.shape[2]

    def with_A(self, A):
        return replace(self, A=np.asarray(A, dtype=float))

    def with_b(self, b):
        return replace(self, b=np.asarray(b, dtype=float))

    # -- serialization -------------------------------------------------
    def to_dict(self):
        d = {
            "n": self.n, "p": self.p, "K": self.K,
            "structure": self.structure,
            "A": self.A.tolist(), "b": self.b.tolist(),
            "a_free": list(self.a_free), "b_free": list(self.b_free),
            "seed": self.seed,
            "provenance": dict(self.provenance),
        }
        if self.alpha is not None:
            d["alpha"] = float(self.alpha)
        if self.incidence is not None:
            d["incidence"] = self.incidence.tolist()
            d["selector"] = self.selector.tolist()
        return d

    def to_json(self, **kw):
        # repr-based float encoding in json is round-trip exact (17 sig. digits)
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(
            A=np.asarray(d["A"], dtype=float),
            b=np.asarray(d["b"], dtype=float),
            structure=d.get("structure", FREE),
            a_free=tuple(bool(v) for v in d.get("a_free", ())),
            b_free=tuple(bool(v) for v in d.get("b_free", ())),
            alpha=d.get("alpha"),
            incidence=None if d.get("incidence") is None else np.asarray(d["incidence"], dtype=float),
            selector=None if d.get("selector") is None else np.asarray(d["selector"], dtype=float),
            seed=d.get("seed"),
            provenance=dict(d.get("provenance", {})),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _signal(theta, s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (theta.K,):
        raise ValueError(f"signal of length {s.size} does not match K={theta.K}")
    return np.concatenate([[1.0], s])


def eval_A(theta, s):
    """``A_theta(s)`` as an ``n x p`` matrix."""
    s1 = _signal(theta, s)
    if theta.structure == SCALAR_ALPHA:
        return theta.alpha * np.eye(theta.n)
    if theta.structure == SIGNED_INCIDENCE:
        return theta.incidence * theta.selector[None, :]
    return np.tensordot(s1, theta.A, axes=1)


def eval_b(theta, s):
    """``b_theta(s)`` as a length-``n`` vector."""
    s1 = _signal(theta, s)
    return s1 @ theta.b


def eval_A_batch(theta, S):
    """``A_theta(s_i)`` for every row of ``S``; shape ``(N, n, p)``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if theta.structure != FREE:
        return np.broadcast_to(eval_A(theta, S[0]), (S.shape[0], theta.n, theta.p)).copy()
    S1 = np.hstack([np.ones((S.shape[0], 1)), S])
    return np.einsum("ik,knp->inp", S1, theta.A)


def eval_b_batch(theta, S):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    S1 = np.hstack([np.ones((S.shape[0], 1)), S])
    return S1 @ theta.b


def init_params(shape, structure=FREE, seed=0, a_free=None, b_free=None, scale=1.0, **payload):
    """Deterministic initial parameters.

    Free structure draws every trainable ``A_k`` entry iid uniform on
    ``[-scale, scale]``; all ``b_k`` start at zero.  ``scalar_alpha``
    starts at ``alpha = 1``.  ``signed_incidence`` needs ``incidence`` and
    optionally ``selector`` (default all ones) in ``payload``.
    """
    n, p, K = (int(v) for v in shape)
    if n < 1 or p < 1 or K < 0:
        raise ValueError("need n, p >= 1 and K >= 0")
    a_free = tuple(a_free) if a_free is not None else (True,) * (K + 1)
    b_free = tuple(b_free) if b_free is not None else (True,) * (K + 1)
    A = np.zeros((K + 1, n, p))
    b = np.zeros((K + 1, n))
    if structure == FREE:
        rng = np.random.default_rng(seed)
        draw = rng.uniform(-scale, scale, size=A.shape)
        mask = np.asarray(a_free, dtype=bool)
        A[mask] = draw[mask]
        return HypothesisParams(A, b, FREE, a_free, b_free, seed=seed)
    if structure == SCALAR_ALPHA:
        return HypothesisParams(A, b, SCALAR_ALPHA, (False,) * (K + 1), b_free, alpha=1.0, seed=seed)
    if structure == SIGNED_INCIDENCE:
        inc = np.asarray(payload["incidence"], dtype=float)
        sel = np.asarray(payload.get("selector", np.ones(inc.shape[1])), dtype=float)
        return HypothesisParams(A, b, SIGNED_INCIDENCE, (False,) * (K + 1), b_free,
                                incidence=inc, selector=sel, seed=seed)
    raise ValueError(f"unknown structure {structure!r}")


def constant_mask(K):
    """Mask that leaves only the intercept term trainable."""
    return (True,) + (False,) * K
