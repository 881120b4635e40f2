"""2AFC study aggregation: win-count matrices and Thurstone-model global scores.

The probabilistic model is the unit-variance paired-comparison form,
P(i beats j) = Phi(q_i - q_j). Maximum likelihood scores are found by
projected gradient ascent on the log-likelihood with the CDF clamped away
from 0/1, anchored by sum(q) = 0. Higher q means more preferred.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .exceptions import (ConvergenceError, DisconnectedGraphError, ShapeError,
                         StoreError)

CDF_CLAMP = 1e-6
GRAD_TOL = 1e-8
MAX_ITERS = 100_000


@dataclass
class PreferenceMatrix:
    """methods[i] beat methods[j] exactly counts[i, j] times."""

    methods: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        m = len(self.methods)
        if self.counts.shape != (m, m):
            raise ShapeError(f"counts must be {m}x{m}, got {self.counts.shape}")
        if np.any(np.diag(self.counts) != 0):
            raise ShapeError("diagonal of the preference matrix must be zero")
        if np.any(self.counts < 0):
            raise ShapeError("preference counts must be nonnegative")
        if len(set(self.methods)) != m:
            raise ShapeError("method names must be unique")


@dataclass
class GlobalScores:
    methods: list[str]
    q: np.ndarray
    log_likelihood: float
    iterations: int
    grad_norm: float

    def ranking(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.q)
        return [(self.methods[i], float(self.q[i])) for i in order]


def build_matrix(votes, methods: list[str] | None = None) -> PreferenceMatrix:
    """Accumulate (method_i, method_j, winner) votes into a win-count matrix."""
    votes = list(votes)
    if methods is None:
        seen: list[str] = []
        for a, b, _ in votes:
            for name in (a, b):
                if name not in seen:
                    seen.append(name)
        methods = seen
    index = {name: k for k, name in enumerate(methods)}
    counts = np.zeros((len(methods), len(methods)), dtype=np.int64)
    for a, b, winner in votes:
        if a not in index or b not in index:
            raise StoreError(f"vote references unknown method: {a!r} vs {b!r}")
        if a == b:
            raise StoreError(f"self-comparison for method {a!r}")
        if winner == a:
            counts[index[a], index[b]] += 1
        elif winner == b:
            counts[index[b], index[a]] += 1
        else:
            raise StoreError(f"winner {winner!r} is neither {a!r} nor {b!r}")
    return PreferenceMatrix(methods=list(methods), counts=counts)


def _components(matrix: PreferenceMatrix) -> list[set[str]]:
    m = len(matrix.methods)
    adjacency = (matrix.counts + matrix.counts.T) > 0
    unvisited = set(range(m))
    comps = []
    while unvisited:
        frontier = [unvisited.pop()]
        comp = set(frontier)
        while frontier:
            node = frontier.pop()
            for other in list(unvisited):
                if adjacency[node, other]:
                    unvisited.discard(other)
                    comp.add(other)
                    frontier.append(other)
        comps.append({matrix.methods[i] for i in comp})
    return comps


def _log_likelihood_and_grad(counts: np.ndarray, q: np.ndarray):
    diffs = q[:, None] - q[None, :]
    cdf = ndtr(diffs)
    clamped_low = cdf < CDF_CLAMP
    clamped_high = cdf > 1.0 - CDF_CLAMP
    p = np.clip(cdf, CDF_CLAMP, 1.0 - CDF_CLAMP)
    mask = counts > 0
    ll = float((counts[mask] * np.log(p[mask])).sum())
    pdf = np.exp(-0.5 * diffs ** 2) / math.sqrt(2.0 * math.pi)
    ratio = np.where(clamped_low | clamped_high, 0.0, pdf / p)
    weighted = counts * ratio
    grad = weighted.sum(axis=1) - weighted.sum(axis=0)
    return ll, grad


def thurstone_scores(matrix: PreferenceMatrix) -> GlobalScores:
    """Maximum-likelihood global scores under the unit-variance model.

    Projected gradient ascent with spectral (Barzilai-Borwein) step sizes;
    stops when the gradient norm drops below 1e-8. A plain backtracking step
    stalls here: near the optimum the likelihood improvement per step falls
    below float64 resolution while the gradient is still ~1e-6. The
    likelihood only sees score differences, so the sum(q)=0 projection just
    pins the gauge.
    """
    m = len(matrix.methods)
    if m < 2:
        raise ShapeError("need at least two methods")
    appearances = (matrix.counts + matrix.counts.T).sum(axis=1)
    missing = [matrix.methods[i] for i in range(m) if appearances[i] == 0]
    if missing:
        raise DisconnectedGraphError([{name} for name in missing] +
                                     [set(matrix.methods) - set(missing)])
    comps = _components(matrix)
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)

    counts = matrix.counts.astype(np.float64)
    q = np.zeros(m)
    ll, grad = _log_likelihood_and_grad(counts, q)
    step = 1.0 / max(counts.sum(), 1.0)
    prev_q = prev_grad = None
    gnorm = float(np.linalg.norm(grad))
    for iteration in range(1, MAX_ITERS + 1):
        if gnorm < GRAD_TOL:
            return GlobalScores(methods=list(matrix.methods), q=q,
                                log_likelihood=ll, iterations=iteration - 1,
                                grad_norm=gnorm)
        if prev_q is not None:
            s = q - prev_q
            y = grad - prev_grad
            curvature = -float(s @ y)  # positive while the surface is concave
            if np.isfinite(curvature) and curvature > 0:
                step = float(np.clip((s @ s) / curvature, 1e-12, 1e6))
        prev_q, prev_grad = q, grad
        q = q + step * grad
        q = q - q.mean()
        ll, grad = _log_likelihood_and_grad(counts, q)
        gnorm = float(np.linalg.norm(grad))
    raise ConvergenceError(
        f"no convergence after {MAX_ITERS} iterations (grad norm {gnorm:.3e})")


def export_report(scores: GlobalScores, matrix: PreferenceMatrix, out_dir) -> dict:
    """Write scores.csv (method, q, descending) and report.json; returns the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "q"])
        for method, value in scores.ranking():
            writer.writerow([method, f"{value:.10g}"])
    report = {
        "methods": list(matrix.methods),
        "counts": matrix.counts.tolist(),
        "scores": {name: float(val) for name, val in zip(scores.methods, scores.q)},
        "log_likelihood": scores.log_likelihood,
        "iterations": scores.iterations,
        "grad_norm": scores.grad_norm,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def read_votes_csv(path) -> list[tuple[str, str, str]]:
    """Parse a votes file with method_i,method_j,winner rows (header optional)."""
    votes = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row[:3]] == [
                    "method_i", "method_j", "winner"]:
                continue
            if len(row) < 3:
                raise StoreError(f"{path}:{lineno}: expected method_i,method_j,winner")
            votes.append((row[0].strip(), row[1].strip(), row[2].strip()))
    return votes
