"""Small (mu/mu_w, lambda)-CMA-ES on the unit box.

Rank-one and rank-mu covariance updates with cumulative step-size
adaptation. Candidates are reflected into [0, 1]^n before evaluation and the
reflected points drive the update, so the mean never leaves the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def reflect_unit(y: np.ndarray) -> np.ndarray:
    """Fold arbitrary coordinates into [0, 1] by mirror reflection."""
    r = np.mod(y, 2.0)
    return np.where(r > 1.0, 2.0 - r, r)


@dataclass
class CmaResult:
    x_best: np.ndarray  # in [0, 1]^n
    f_best: float
    theta_star: np.ndarray  # denormalized
    loss_history: list  # best-so-far after each generation
    generation_best: list = field(default_factory=list)
    evaluations: int = 0
    sigma_history: list = field(default_factory=list)


def _finite(v) -> float:
    try:
        v = float(v)
    except (TypeError, ValueError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def cmaes_minimize(objective: Callable, bounds, popsize: int = 12, iters: int = 80, seed: int = 0,
                   x0=None, sigma0: float = 0.3, evaluator: Callable | None = None,
                   ftarget: float | None = None, tolx: float = 1e-14) -> CmaResult:
    """Minimize ``objective(theta)`` over the box ``bounds`` (list of (lo, hi)).

    ``evaluator(fn, list_of_thetas)`` may evaluate a generation in parallel;
    results are taken in candidate order. Non-finite losses count as +inf.
    ``ftarget`` stops early once the best loss is at or below it; ``tolx``
    stops once the search spread ``sigma * max(D)`` in the unit box falls below it.
    """
    b = np.asarray(bounds, float)
    if b.ndim != 2 or b.shape[1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("bounds must be finite (lo, hi) pairs with lo < hi")
    if popsize < 2 or iters < 1:
        raise ValueError("popsize must be >= 2 and iters >= 1")
    lo, span = b[:, 0], b[:, 1] - b[:, 0]
    n = len(b)
    rng = np.random.default_rng(seed)

    def denorm(x):
        return lo + span * x

    lam = popsize
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chin = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    mean = np.full(n, 0.5) if x0 is None else np.clip(np.asarray(x0, float), 0.0, 1.0)
    sigma = float(sigma0)
    C = np.eye(n)
    pc = np.zeros(n)
    ps = np.zeros(n)
    B = np.eye(n)
    D = np.ones(n)
    evaluate = evaluator or (lambda fn, xs: [fn(x) for x in xs])

    f_best = _finite(evaluate(objective, [denorm(mean)])[0])
    x_best = mean.copy()
    n_eval = 1
    history, gen_best, sigmas = [], [], []
    for g in range(iters):
        z = rng.standard_normal((lam, n))
        y = z @ (B * D).T
        xs = reflect_unit(mean + sigma * y)
        fs = np.array([_finite(v) for v in evaluate(objective, [denorm(x) for x in xs])])
        n_eval += lam
        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < f_best:
            f_best = float(fs[order[0]])
            x_best = xs[order[0]].copy()
        gen_best.append(float(fs[order[0]]))
        history.append(f_best)
        # update from the repaired points
        sel = xs[order[:mu]]
        old = mean
        mean = w @ sel
        ysel = (sel - old) / sigma
        yw = w @ ysel
        invsqrt = B @ np.diag(1.0 / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (invsqrt @ yw)
        hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * (g + 1))) / chin < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * yw
        rank_mu = (ysel.T * w) @ ysel
        C = ((1 - c1 - cmu) * C + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C) + cmu * rank_mu)
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chin - 1))
        sigma = min(sigma, 1.0)
        sigmas.append(sigma)
        C = np.triu(C) + np.triu(C, 1).T
        evals, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(evals, 1e-30))
        if ftarget is not None and f_best <= ftarget:
            break
        if sigma * D.max() < tolx:
            break
    return CmaResult(x_best, f_best, denorm(x_best), history, gen_best, n_eval, sigmas)
