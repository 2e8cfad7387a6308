"""Exact transducer loss over the (t, u) alignment lattice.

All lattice math runs in log-space with log-sum-exp; -inf stands for
probability zero and propagates without NaN. Conventions: frames t = 1..T
(0-based index 0..T-1 in arrays), label positions u = 0..U where u counts
emitted labels; blank is symbol 0; every alignment ends with a blank emitted
at (T, U).

The gradient with respect to the pre-softmax logits is computed analytically
from alpha/beta occupancies (no autodiff through the DP); a brute-force
path-enumeration oracle provides the independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError, NumericError
from . import tensor as tl

NEG_INF = -np.inf

# path enumeration is exponential; C(T-1+U, U) paths
ORACLE_SIZE_BOUND = 14


@dataclass
class PosteriorGrid:
    """Per-cell output distributions for one utterance: [T, U+1, V+1]."""
    log_probs: np.ndarray
    T: int
    U: int
    V: int

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "PosteriorGrid":
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 3:
            raise DimensionError(f"logits must be [T, U+1, V+1], got {logits.shape}")
        T, U1, V1 = logits.shape
        m = logits.max(axis=-1, keepdims=True)
        lse = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
        return cls(log_probs=logits - lse, T=T, U=U1 - 1, V=V1 - 1)

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "PosteriorGrid":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 3:
            raise DimensionError(f"probs must be [T, U+1, V+1], got {probs.shape}")
        with np.errstate(divide="ignore"):
            lp = np.log(probs)
        T, U1, V1 = probs.shape
        return cls(log_probs=lp, T=T, U=U1 - 1, V=V1 - 1)


@dataclass
class Lattice:
    """Forward/backward table for one utterance."""
    T: int
    U: int
    log_probs: np.ndarray      # [T, U+1, V+1]
    labels: np.ndarray         # [U], values in 1..V
    log_alpha: np.ndarray | None = None   # [T, U+1]
    log_beta: np.ndarray | None = None    # [T, U+1]

    @property
    def log_total_from_alpha(self) -> float:
        # final blank emitted at (T, U)
        return float(self.log_alpha[self.T - 1, self.U]
                     + self.log_probs[self.T - 1, self.U, 0])

    @property
    def log_total_from_beta(self) -> float:
        return float(self.log_beta[0, 0])


def _validate(grid: PosteriorGrid, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if grid.T < 1:
        raise InputError("T must be >= 1")
    if labels.ndim != 1 or labels.shape[0] != grid.U:
        raise InputError(f"labels must have length U={grid.U}, got {labels.shape}")
    if labels.size and (labels.min() < 1 or labels.max() > grid.V):
        raise InputError(f"label ids must lie in 1..{grid.V} (0 is blank)")
    return labels


def _label_logp(grid: PosteriorGrid, labels: np.ndarray) -> np.ndarray:
    """log p^{y_{u+1}}(t, u) for u = 0..U-1, shape [T, U]."""
    if grid.U == 0:
        return np.zeros((grid.T, 0))
    return grid.log_probs[:, np.arange(grid.U), labels]


def forward_alpha(grid: PosteriorGrid, labels) -> Lattice:
    """Fill the forward table: alpha(1,0) = 1, recursion along anti-diagonals."""
    labels = _validate(grid, labels)
    T, U = grid.T, grid.U
    blk = grid.log_probs[:, :, 0]
    lab = _label_logp(grid, labels)
    a = np.full((T, U + 1), NEG_INF)
    a[0, 0] = 0.0
    for t in range(1, T):
        a[t, 0] = a[t - 1, 0] + blk[t - 1, 0]
    for u in range(1, U + 1):
        a[0, u] = a[0, u - 1] + lab[0, u - 1]
    for t in range(1, T):
        for u in range(1, U + 1):
            a[t, u] = np.logaddexp(a[t - 1, u] + blk[t - 1, u],
                                   a[t, u - 1] + lab[t, u - 1])
    return Lattice(T=T, U=U, log_probs=grid.log_probs, labels=labels, log_alpha=a)


def backward_beta(grid: PosteriorGrid, labels) -> Lattice:
    """Fill the backward table: beta(T,U) = p_blk(T,U)."""
    labels = _validate(grid, labels)
    T, U = grid.T, grid.U
    blk = grid.log_probs[:, :, 0]
    lab = _label_logp(grid, labels)
    b = np.full((T, U + 1), NEG_INF)
    b[T - 1, U] = blk[T - 1, U]
    for t in range(T - 2, -1, -1):
        b[t, U] = blk[t, U] + b[t + 1, U]
    for u in range(U - 1, -1, -1):
        b[T - 1, u] = lab[T - 1, u] + b[T - 1, u + 1]
    for t in range(T - 2, -1, -1):
        for u in range(U - 1, -1, -1):
            b[t, u] = np.logaddexp(blk[t, u] + b[t + 1, u],
                                   lab[t, u] + b[t, u + 1])
    return Lattice(T=T, U=U, log_probs=grid.log_probs, labels=labels, log_beta=b)


def fill_lattice(grid: PosteriorGrid, labels) -> Lattice:
    lat = forward_alpha(grid, labels)
    lat.log_beta = backward_beta(grid, labels).log_beta
    return lat


def log_total_probability(grid: PosteriorGrid, labels) -> float:
    return forward_alpha(grid, labels).log_total_from_alpha


def rnnt_loss(logits: np.ndarray, labels):
    """Negative log-likelihood and its exact gradient w.r.t. the logits.

    Returns (loss, d_logits) with loss = -ln P(Y|X). The gradient uses the
    occupancy formula: for each cell, d/dz_k = p_k * (alpha*beta - alpha*cont_k)/P
    where cont_k is the continuation beta for blank / the next label and zero
    for every other symbol.
    """
    grid = PosteriorGrid.from_logits(np.asarray(logits, dtype=np.float64))
    return rnnt_loss_from_grid(grid, labels)


def rnnt_loss_from_grid(grid: PosteriorGrid, labels):
    labels = _validate(grid, labels)
    lat = fill_lattice(grid, labels)
    log_p_total = lat.log_total_from_beta
    if not np.isfinite(log_p_total):
        raise NumericError("total path probability underflowed to zero "
                           "(impossible alignment)")
    T, U, V = grid.T, grid.U, grid.V
    a, b = lat.log_alpha, lat.log_beta
    probs = np.exp(grid.log_probs)

    # occupancy gamma(t,u) = alpha*beta / P
    occ = np.exp(a + b - log_p_total)
    d = probs * occ[:, :, None]

    # continuation term: blank moves to (t+1, u); final blank at (T,U) exits
    cont_blk = np.full((T, U + 1), NEG_INF)
    cont_blk[:T - 1, :] = b[1:, :]
    cont_blk[T - 1, U] = 0.0
    with np.errstate(invalid="ignore"):
        d[:, :, 0] -= np.exp(a + grid.log_probs[:, :, 0] + cont_blk - log_p_total)
    if U > 0:
        lab_lp = _label_logp(grid, labels)             # [T, U]
        cont_lab = b[:, 1:]                            # beta(t, u+1)
        sub = np.exp(a[:, :U] + lab_lp + cont_lab - log_p_total)
        for u in range(U):
            d[:, u, labels[u]] -= sub[:, u]
    loss = -log_p_total
    return loss, d


def rnnt_loss_graph(logits: tl.GraphValue, labels) -> tl.GraphValue:
    """Graph node wrapping the analytic loss: scalar forward, exact backward."""
    loss, d = rnnt_loss(logits.value, labels)
    return tl.GraphValue(np.float64(loss), parents=(logits,),
                         backward_fn=lambda g: (float(g) * d,), op="rnnt_loss")


def oracle_loss(grid: PosteriorGrid, labels) -> float:
    """Exhaustive path enumeration: -ln of the exact sum over all alignments.

    Enumerates every monotonic blank/label path ending with a blank at (T, U)
    in the linear domain; refuses instances with T + U above the size bound.
    """
    labels = _validate(grid, labels)
    T, U = grid.T, grid.U
    if T + U > ORACLE_SIZE_BOUND:
        raise InputError(f"oracle_loss refuses T+U={T + U} > {ORACLE_SIZE_BOUND}")
    probs = np.exp(grid.log_probs)
    total = 0.0
    # stack entries: (t, u, accumulated probability)
    stack = [(0, 0, 1.0)]
    while stack:
        t, u, p = stack.pop()
        if t == T - 1 and u == U:
            total += p * probs[t, u, 0]
        elif t == T - 1:
            stack.append((t, u + 1, p * probs[t, u, labels[u]]))
        else:
            stack.append((t + 1, u, p * probs[t, u, 0]))
            if u < U:
                stack.append((t, u + 1, p * probs[t, u, labels[u]]))
    if total <= 0.0:
        raise NumericError("oracle: zero total probability")
    return -float(np.log(total))


def count_paths(T: int, U: int) -> int:
    """Number of monotonic alignments: C(T-1+U, U)."""
    from math import comb
    return comb(T - 1 + U, U)


def anti_diagonal_totals(lat: Lattice) -> np.ndarray:
    """log Sum alpha*beta over each anti-diagonal t+u = n (1-based n = 2..T+U+... ).

    Every anti-diagonal that intersects the valid rectangle yields the same
    value, the total path probability.
    """
    if lat.log_alpha is None or lat.log_beta is None:
        raise InputError("lattice must have both alpha and beta filled")
    T, U = lat.T, lat.U
    s = lat.log_alpha + lat.log_beta
    out = []
    for n in range(0, T + U):     # n = (t-1)+(u) in 0-based terms
        terms = [s[t, n - t] for t in range(max(0, n - U), min(T, n + 1))]
        m = max(terms)
        out.append(m + np.log(sum(np.exp(x - m) for x in terms)) if np.isfinite(m) else NEG_INF)
    return np.asarray(out)
