"""Differential evolution, DE/rand/1/bin with synchronous generations.

Trial vectors of a whole generation are built from the current population
before any of them is evaluated, so the result does not depend on how the
evaluations are distributed over workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class DEParams:
    popsize: int = 15
    mutation: float = 0.7
    crossover: float = 0.9
    max_generations: int = 60
    tol: float = 1e-9
    patience: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.popsize < 4:
            raise ValueError("popsize must be >= 4 for rand/1 mutation")
        if not 0 < self.mutation <= 2 or not 0 <= self.crossover <= 1:
            raise ValueError("mutation in (0, 2] and crossover in [0, 1] required")


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    generations: int
    evaluations: int
    history: list[float] = field(default_factory=list)
    extra: object = None


def differential_evolution(func: Callable[[np.ndarray], tuple[float, object]],
                           bounds: Sequence[tuple[float, float]], params: DEParams | None = None
                           ) -> DEResult:
    """Minimise ``func`` over a box.

    Args:
        func: Maps a parameter vector to ``(objective, payload)``. Failed
            evaluations should return ``(inf, None)``. The payload of the best
            member is returned in ``DEResult.extra``.
        bounds: ``(low, high)`` per dimension. Dimensions with low == high stay fixed.
        params: Optimiser settings.

    Returns:
        The best member found.
    """
    params = params or DEParams()
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if np.any(hi < lo):
        raise ValueError("every bound needs low <= high")
    dim = lo.size
    rng = np.random.default_rng(params.seed)
    span = hi - lo
    degenerate = bool(np.all(span == 0))
    npop = 1 if degenerate else params.popsize

    # stratified initial population (one sample per stratum and dimension)
    strata = (np.argsort(rng.random((npop, dim)), axis=0) + rng.random((npop, dim))) / npop
    pop = lo + strata * span

    pool = ThreadPoolExecutor(params.workers) if params.workers > 1 else None

    def evaluate(members: np.ndarray) -> list[tuple[float, object]]:
        if pool is None:
            return [func(m) for m in members]
        return list(pool.map(func, members))

    try:
        results = evaluate(pop)
        fit = np.array([r[0] for r in results], dtype=float)
        payloads = [r[1] for r in results]
        nevals = npop
        history = [float(fit.min())]
        gen = 1
        if not degenerate:
            while gen < params.max_generations:
                trials = np.empty_like(pop)
                for k in range(npop):
                    choices = [m for m in range(npop) if m != k]
                    r1, r2, r3 = rng.choice(choices, 3, replace=False)
                    mutant = pop[r1] + params.mutation * (pop[r2] - pop[r3])
                    # bounce back into the box
                    below = mutant < lo
                    above = mutant > hi
                    mutant[below] = lo[below] + rng.random(below.sum()) * (pop[k][below] - lo[below])
                    mutant[above] = hi[above] - rng.random(above.sum()) * (hi[above] - pop[k][above])
                    cross = rng.random(dim) < params.crossover
                    cross[rng.integers(dim)] = True
                    trials[k] = np.where(cross, mutant, pop[k])
                results = evaluate(trials)
                nevals += npop
                for k, (val, payload) in enumerate(results):
                    if val <= fit[k]:
                        pop[k] = trials[k]
                        fit[k] = val
                        payloads[k] = payload
                gen += 1
                history.append(float(fit.min()))
                log.debug("DE generation %d best %.6g", gen, history[-1])
                if len(history) > params.patience:
                    old = history[-params.patience - 1]
                    if np.isfinite(old) and old - history[-1] < params.tol:
                        break
    finally:
        if pool is not None:
            pool.shutdown()
    best = int(np.argmin(fit))
    return DEResult(pop[best].copy(), float(fit[best]), gen, nevals, history, payloads[best])
