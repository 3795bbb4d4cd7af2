"""Partition the time range into stages.

* :func:`solve_three_interval` thresholds the endpoint-similarity curves.
* :func:`solve_n_interval` chooses ``n - 1`` cuts on a grid minimising the
  within-interval cost of random time pairs, exactly, by dynamic programming.
* :func:`baseline_uniform_t` and :func:`baseline_uniform_logsnr` are the
  equal-time and equal-log-SNR reference partitions.
"""

from __future__ import annotations

import dataclasses
import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from stagecut.errors import DegeneratePartitionError, InfeasibleError
from stagecut.schedule import VpSchedule, snr, t_of_snr
from stagecut.similarity import EndpointStore, PairStore

METHODS = ("optimal-denoiser-3", "optimal-denoiser-n", "uniform-t", "uniform-logsnr")
OBJECTIVES = ("within-dissimilarity", "within-similarity-literal")
MIN_SUPPORT = 10


@dataclasses.dataclass(frozen=True)
class GridSpec:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if not pts:
            raise ValueError("grid must contain at least one point")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] <= 0 or pts[-1] > 1:
            raise ValueError(f"grid points must lie in (0, 1], got [{pts[0]}, {pts[-1]}]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, count: int, t_min: float = 1e-3) -> "GridSpec":
        """`count` evenly spaced points strictly inside ``(t_min, 1)``."""
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        return cls(tuple(np.linspace(t_min, 1.0, count + 2)[1:-1]))

    @classmethod
    def stepped(cls, start: float = 0.001, step: float = 0.025) -> "GridSpec":
        """``start, start + step, ...`` below 1, with 1 appended."""
        count = math.floor((1.0 - start) / step + 1e-9) + 1
        pts = [round(start + i * step, 12) for i in range(count)]
        pts = [p for p in pts if p < 1.0] + [1.0]
        return cls(tuple(pts))

    def interior(self) -> np.ndarray:
        """Points usable as cuts, i.e. strictly below 1."""
        arr = np.asarray(self.points)
        return arr[arr < 1.0]

    def __len__(self) -> int:
        return len(self.points)


@dataclasses.dataclass(frozen=True)
class Partition:
    cuts: tuple[float, ...]
    method: str
    config_echo: dict = dataclasses.field(default_factory=dict)
    objective_value: float | None = None
    achieved_means: tuple[float, float] | None = None

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if not cuts:
            raise ValueError("a partition needs at least one cut")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DegeneratePartitionError(f"cuts not strictly increasing: {cuts}")
        if not (0 < cuts[0] and cuts[-1] < 1):
            raise DegeneratePartitionError(f"cuts must lie strictly inside (0, 1): {cuts}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "cuts", cuts)

    @property
    def n_intervals(self) -> int:
        return len(self.cuts) + 1

    def to_json(self) -> dict:
        out = {"method": self.method, "cuts": list(self.cuts), "n_intervals": self.n_intervals}
        if self.objective_value is not None:
            out["objective_value"] = self.objective_value
        if self.achieved_means is not None:
            out["achieved_means"] = list(self.achieved_means)
        out["config"] = self.config_echo
        return out


# -- three intervals -----------------------------------------------------------


def threshold_times(
    store: EndpointStore, alpha: float, grid: GridSpec, *, min_support: int = MIN_SUPPORT
) -> tuple[float, float, float, float]:
    """Largest feasible lower cut and smallest feasible upper cut.

    Returns ``(t1, t2, mean0, mean1)``: ``t1`` is the largest grid time whose
    samples with ``t <= t1`` have mean ``s0 >= alpha``; ``t2`` is the smallest
    grid time whose samples with ``t >= t2`` have mean ``s1 >= alpha``. A grid
    time needs at least `min_support` samples on its side to qualify. The
    ordering of ``t1`` and ``t2`` is not checked here.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if len(store) == 0:
        raise ValueError("empty sample store")
    order = np.argsort(store.t, kind="stable")
    t = store.t[order]
    s0 = store.s0[order]
    s1 = store.s1[order]
    # cuts live strictly inside (0, 1), so tau = 1 is never a candidate
    taus = grid.interior()
    if taus.size == 0:
        raise ValueError("grid has no point below 1")
    K = t.shape[0]

    # lower side: samples with t <= tau form a prefix
    cum0 = np.concatenate([[0.0], np.cumsum(s0)])
    n_le = np.searchsorted(t, taus, side="right")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_le = cum0[n_le] / n_le
    ok0 = (n_le >= min_support) & (mean_le >= alpha)

    # upper side: samples with t >= tau form a suffix
    cum1 = np.concatenate([[0.0], np.cumsum(s1)])
    first = np.searchsorted(t, taus, side="left")
    n_ge = K - first
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_ge = (cum1[K] - cum1[first]) / n_ge
    ok1 = (n_ge >= min_support) & (mean_ge >= alpha)

    if not ok0.any():
        raise InfeasibleError(
            f"lower side: no grid time reaches alpha={alpha}; "
            f"best mean {_best_mean(mean_le, n_le >= min_support):.6g}"
        )
    if not ok1.any():
        raise InfeasibleError(
            f"upper side: no grid time reaches alpha={alpha}; "
            f"best mean {_best_mean(mean_ge, n_ge >= min_support):.6g}"
        )
    i1 = int(np.nonzero(ok0)[0][-1])
    i2 = int(np.nonzero(ok1)[0][0])
    return float(taus[i1]), float(taus[i2]), float(mean_le[i1]), float(mean_ge[i2])


def _best_mean(means: np.ndarray, supported: np.ndarray) -> float:
    return float(means[supported].max()) if supported.any() else float("nan")


def solve_three_interval(
    store: EndpointStore, alpha: float, grid: GridSpec, *, min_support: int = MIN_SUPPORT
) -> Partition:
    t1, t2, m0, m1 = threshold_times(store, alpha, grid, min_support=min_support)
    if not t1 < t2:
        raise DegeneratePartitionError(f"t1={t1} is not below t2={t2}")
    return Partition(
        cuts=(t1, t2),
        method="optimal-denoiser-3",
        achieved_means=(m0, m1),
        config_echo={"alpha": alpha, "min_support": min_support, "grid_size": len(grid)},
    )


# -- n intervals ---------------------------------------------------------------


def _exact_costs(s: np.ndarray, objective: str) -> tuple[list[int], int]:
    """Per-sample costs as integers over one power-of-two denominator."""
    ratios = [float(v).as_integer_ratio() for v in s]
    denom = max([den for _, den in ratios], default=1)
    scaled = [num * (denom // den) for num, den in ratios]
    if objective == "within-dissimilarity":
        return [denom - v for v in scaled], denom
    return scaled, denom


def solve_n_interval(
    store: PairStore, n: int, grid: GridSpec, objective: str = "within-dissimilarity"
) -> Partition:
    """Cuts minimising the summed cost of pairs that share an interval.

    Intervals are ``[0, c_1), [c_1, c_2), ..., [c_{n-1}, 1]`` with cuts drawn
    from the grid points below 1. A pair costs ``1 - s`` under the default
    objective and ``s`` under the literal one. The search is exact: costs are
    summed as integers, and among optimal cut vectors the lexicographically
    smallest is returned.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    cand = grid.interior()
    if len(cand) < n - 1:
        raise ValueError(f"grid offers {len(cand)} cut candidates, need {n - 1} for n={n}")
    m = len(cand)
    cells = m + 1
    # cell(t) = number of candidates <= t; cutting at cand[j] splits cells <= j from cells > j
    ca = np.searchsorted(cand, store.t_a, side="right")
    cb = np.searchsorted(cand, store.t_b, side="right")
    costs, denom = _exact_costs(store.s, objective)

    mat = np.zeros((cells, cells), dtype=object)
    for p, q, c in zip(ca.tolist(), cb.tolist(), costs):
        mat[p, q] += c
    pref = np.zeros((cells + 1, cells + 1), dtype=object)
    pref[1:, 1:] = mat.cumsum(axis=0).cumsum(axis=1)

    def within(a: int, b: int) -> int:
        # cost of pairs with both cells in [a, b]
        return pref[b + 1, b + 1] - pref[a, b + 1] - pref[b + 1, a] + pref[a, a]

    # best[r][a]: minimum cost covering cells a..cells-1 with r intervals (None: impossible)
    best: list[list[int | None]] = [[None] * (cells + 1) for _ in range(n + 1)]
    best[0][cells] = 0
    for r in range(1, n + 1):
        for a in range(cells - 1, -1, -1):
            cur = None
            # first interval a..b, remaining r-1 intervals cover b+1..end
            for b in range(a, cells):
                rest = best[r - 1][b + 1]
                if rest is None:
                    continue
                val = within(a, b) + rest
                if cur is None or val < cur:
                    cur = val
            best[r][a] = cur
    total = best[n][0]

    # forward reconstruction, earliest boundary first, gives the lexicographic minimum
    cut_idx = []
    a = 0
    acc = 0
    for r in range(n, 1, -1):
        for b in range(a, cells):
            rest = best[r - 1][b + 1]
            if rest is not None and acc + within(a, b) + rest == total:
                acc += within(a, b)
                cut_idx.append(b)
                a = b + 1
                break
    cuts = tuple(float(cand[j]) for j in cut_idx)
    value = total / denom
    return Partition(
        cuts=cuts,
        method="optimal-denoiser-n",
        objective_value=float(value),
        config_echo={"n": n, "objective": objective, "grid_size": len(grid)},
    )


def partition_cost(store: PairStore, cuts: Sequence[float], objective: str = "within-dissimilarity"):
    """Exact objective of given cuts, as a :class:`fractions.Fraction`."""
    cuts = np.asarray(cuts, dtype=np.float64)
    ia = np.searchsorted(cuts, store.t_a, side="right")
    ib = np.searchsorted(cuts, store.t_b, side="right")
    total = Fraction(0)
    for same, s in zip(ia == ib, store.s):
        if same:
            total += (1 - Fraction(float(s))) if objective == "within-dissimilarity" else Fraction(float(s))
    return total


# -- baselines -----------------------------------------------------------------


def snap_to_grid(target: float, grid: GridSpec) -> float:
    """Nearest cut candidate; ties go to the smaller point."""
    cand = grid.interior()
    if cand.size == 0:
        raise ValueError("grid has no point below 1")
    dist = np.abs(cand - target)
    return float(cand[int(np.argmin(dist))])


def baseline_uniform_t(n: int, grid: GridSpec) -> Partition:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    cuts = tuple(snap_to_grid(i / n, grid) for i in range(1, n))
    return Partition(cuts=cuts, method="uniform-t", config_echo={"n": n, "grid_size": len(grid)})


def logsnr_boundaries(n: int, sched: VpSchedule) -> list[float]:
    """Interior times splitting the log-SNR range into `n` equal parts, in increasing t."""
    hi = math.log(snr(sched, sched.t_min))
    lo = math.log(snr(sched, 1.0))
    targets = [hi - i * (hi - lo) / n for i in range(1, n)]
    return [t_of_snr(sched, math.exp(v)) for v in targets]


def baseline_uniform_logsnr(n: int, sched: VpSchedule, grid: GridSpec) -> Partition:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    cuts = tuple(snap_to_grid(t, grid) for t in logsnr_boundaries(n, sched))
    return Partition(
        cuts=cuts,
        method="uniform-logsnr",
        config_echo={"n": n, "grid_size": len(grid), "schedule": dataclasses.asdict(sched)},
    )
