"""Monte Carlo estimate container and exactly-associative accumulation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

N_BATCHES = 32


def _grow_partials(partials: list, x: float) -> list:
    # Shewchuk: non-overlapping partials whose exact sum is the running total
    out = []
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo:
            out.append(lo)
        x = hi
    out.append(x)
    return out


@dataclass
class Accumulator:
    """Running (n, sum, sum of squares) kept as exact float expansions.

    ``merge`` is associative and commutative bit for bit because the stored
    expansions represent the exact real sums; ``total``/``total_sq`` round
    them once.
    """
    n: int = 0
    s: list = field(default_factory=list)
    ss: list = field(default_factory=list)

    def add(self, x: float):
        x = float(x)
        self.n += 1
        self.s = _grow_partials(self.s, x)
        self.ss = _grow_partials(self.ss, x * x)
        return self

    def extend(self, xs):
        for x in np.asarray(xs, dtype=float).ravel():
            self.add(x)
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        out = Accumulator(self.n + other.n, list(self.s), list(self.ss))
        for p in other.s:
            out.s = _grow_partials(out.s, p)
        for p in other.ss:
            out.ss = _grow_partials(out.ss, p)
        return out

    @property
    def total(self) -> float:
        return math.fsum(self.s)

    @property
    def total_sq(self) -> float:
        return math.fsum(self.ss)

    def key(self):
        return (self.n, self.total, self.total_sq)

    def mean(self) -> float:
        return self.total / self.n if self.n else math.nan

    def stderr(self) -> float:
        if self.n < 2:
            return math.nan
        m = self.mean()
        var = max(self.total_sq / self.n - m * m, 0.0) * self.n / (self.n - 1)
        return math.sqrt(var / self.n)


@dataclass
class Estimate:
    value: float
    stderr: float
    n: int
    method: str
    seed: int

    def __post_init__(self):
        if not (self.stderr >= 0 or math.isnan(self.stderr)):
            raise ValueError("stderr must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def ci95(self):
        return (self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr)

    def as_dict(self):
        return asdict(self)


def batch_means_stderr(x, n_batches: int = N_BATCHES) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return math.nan
    if n < 2 * n_batches:
        return float(x.std(ddof=1) / math.sqrt(n))
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    means = np.array([x[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
    sizes = np.diff(edges)
    # equal-size batches up to one element; weight by size for the grand mean
    gm = np.average(means, weights=sizes)
    var = np.sum(sizes * (means - gm) ** 2) / (n_batches - 1)
    return float(math.sqrt(var / n))


def mean_estimate(x, method: str, seed: int, batch: bool = True) -> Estimate:
    x = np.asarray(x, dtype=float)
    se = batch_means_stderr(x) if batch else float(x.std(ddof=1) / math.sqrt(x.size))
    return Estimate(float(x.mean()), float(se), int(x.size), method, int(seed))


def binomial_estimate(k: int, n: int, method: str, seed: int) -> Estimate:
    p = k / n
    return Estimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), n, method, seed)
