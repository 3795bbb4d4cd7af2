"""Monte-Carlo estimates of functional similarity between optimal denoisers.

Two denoiser evaluations are compared on a shared clean point ``y`` and noise
draw ``eps``: the agreement score is the fraction of coordinates on which the
two noise predictions differ by at most ``eta``.

The endpoint study compares each random time against both ends of the time
range. The pair study compares two random times. Draws for sample ``k`` come
from counter-based streams keyed by ``(seed, k, slot)``, so a store does not
depend on the thread count or evaluation order. Samples are evaluated in
fixed, index-aligned chunks, so every sample sees the same BLAS call shapes
whatever the thread count.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os
from pathlib import Path

import numpy as np

from stagecut import rng
from stagecut.dataset import Dataset
from stagecut.denoiser import eps_batch
from stagecut.schedule import NoiseSchedule, VeSchedule, VpSchedule

DEFAULT_ETA = 2.0 / 256.0
DEFAULT_K = 50_000
DEFAULT_CHUNK = 32


@dataclasses.dataclass(frozen=True)
class SimilarityConfig:
    eta: float = DEFAULT_ETA
    k_samples: int = DEFAULT_K
    seed: int = 0
    t_lo: float = 1e-3
    t_hi: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.k_samples < 1:
            raise ValueError(f"k_samples must be >= 1, got {self.k_samples}")
        if not 0 < self.t_lo < self.t_hi <= 1:
            raise ValueError(f"need 0 < t_lo < t_hi <= 1, got [{self.t_lo}, {self.t_hi}]")

    @classmethod
    def for_schedule(cls, schedule: NoiseSchedule, **kwargs) -> "SimilarityConfig":
        """Config whose time range starts at the schedule's ``t_min``."""
        if isinstance(schedule, VpSchedule):
            kwargs.setdefault("t_lo", schedule.t_min)
        return cls(**kwargs)


@dataclasses.dataclass(frozen=True)
class EndpointSample:
    k: int
    t: float
    s0: float
    s1: float


@dataclasses.dataclass(frozen=True)
class PairSample:
    k: int
    t_a: float
    t_b: float
    s: float


def coord_agreement(a, b, eta: float) -> float:
    """Fraction of coordinates with ``|a_i - b_i| <= eta``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    return float(np.count_nonzero(np.abs(a - b) <= eta)) / a.size


def _row_agreement(a: np.ndarray, b: np.ndarray, eta: float) -> np.ndarray:
    return np.count_nonzero(np.abs(a - b) <= eta, axis=1) / a.shape[1]


# -- draws -------------------------------------------------------------------


def _time(seed: int, k: int, slot: rng.Slot, lo: float, hi: float) -> float:
    u = rng.uniform(rng.StreamKey(seed, k, slot), 1)[0]
    return lo + (hi - lo) * u


def draw_clean_and_noise(d: Dataset, seed: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    i = rng.index(rng.StreamKey(seed, k, rng.Slot.DATA_INDEX), d.size)
    eps = rng.standard_normal(rng.StreamKey(seed, k, rng.Slot.NOISE_VECTOR), d.dim)
    return d.points[i], eps


def _draw_endpoint(d: Dataset, cfg: SimilarityConfig, k: int):
    y, eps = draw_clean_and_noise(d, cfg.seed, k)
    return y, eps, _time(cfg.seed, k, rng.Slot.TIME_A, cfg.t_lo, cfg.t_hi)


def _draw_pair(d: Dataset, cfg: SimilarityConfig, k: int):
    y, eps = draw_clean_and_noise(d, cfg.seed, k)
    t_a = _time(cfg.seed, k, rng.Slot.TIME_A, cfg.t_lo, cfg.t_hi)
    t_b = _time(cfg.seed, k, rng.Slot.TIME_B, cfg.t_lo, cfg.t_hi)
    return y, eps, t_a, t_b


# -- evaluation --------------------------------------------------------------


def denoise_at(d: Dataset, sched: NoiseSchedule, y: np.ndarray, eps: np.ndarray, t) -> np.ndarray:
    """Optimal noise prediction at ``x_t = s_t y + s_t sigma_t eps``, row by row."""
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(sched.s(t), dtype=np.float64).reshape(-1)
    sigma = np.asarray(sched.sigma(t), dtype=np.float64).reshape(-1)
    y = np.atleast_2d(y)
    eps = np.atleast_2d(eps)
    x = s[:, None] * y + (s * sigma)[:, None] * eps
    return eps_batch(d, x, s, sigma)


def evaluate_endpoints(
    d: Dataset, sched: NoiseSchedule, eta: float, y, eps, t, t_lo: float, t_hi: float
) -> tuple[np.ndarray, np.ndarray]:
    """Agreement of the prediction at `t` with those at `t_lo` and `t_hi`.

    `y`, `eps` are ``(B, n)`` and `t` is ``(B,)``; returns ``(s0, s1)``.
    """
    y = np.atleast_2d(y)
    eps = np.atleast_2d(eps)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    rows = t.shape[0]
    times = np.concatenate([t, np.full(rows, t_lo), np.full(rows, t_hi)])
    pred = denoise_at(d, sched, np.tile(y, (3, 1)), np.tile(eps, (3, 1)), times)
    mid, lo, hi = pred[:rows], pred[rows : 2 * rows], pred[2 * rows :]
    return _row_agreement(mid, lo, eta), _row_agreement(mid, hi, eta)


def evaluate_pairs(
    d: Dataset, sched: NoiseSchedule, eta: float, y, eps, t_a, t_b
) -> np.ndarray:
    y = np.atleast_2d(y)
    eps = np.atleast_2d(eps)
    t_a = np.atleast_1d(np.asarray(t_a, dtype=np.float64))
    t_b = np.atleast_1d(np.asarray(t_b, dtype=np.float64))
    rows = t_a.shape[0]
    pred = denoise_at(d, sched, np.tile(y, (2, 1)), np.tile(eps, (2, 1)), np.concatenate([t_a, t_b]))
    return _row_agreement(pred[:rows], pred[rows:], eta)


def _check_index(cfg: SimilarityConfig, k: int) -> None:
    if not 0 <= k < cfg.k_samples:
        raise IndexError(f"sample index {k} outside [0, {cfg.k_samples})")


def endpoint_sample(d: Dataset, sched: NoiseSchedule, cfg: SimilarityConfig, k: int) -> EndpointSample:
    _check_index(cfg, k)
    return _endpoint_chunk(d, sched, cfg, range(k, k + 1))[0]


def pair_sample(d: Dataset, sched: NoiseSchedule, cfg: SimilarityConfig, k: int) -> PairSample:
    _check_index(cfg, k)
    return _pair_chunk(d, sched, cfg, range(k, k + 1))[0]


def _endpoint_chunk(d, sched, cfg, ks: range) -> list[EndpointSample]:
    draws = [_draw_endpoint(d, cfg, k) for k in ks]
    y = np.stack([dr[0] for dr in draws])
    eps = np.stack([dr[1] for dr in draws])
    t = np.array([dr[2] for dr in draws])
    s0, s1 = evaluate_endpoints(d, sched, cfg.eta, y, eps, t, cfg.t_lo, cfg.t_hi)
    return [
        EndpointSample(k=k, t=float(t[j]), s0=float(s0[j]), s1=float(s1[j]))
        for j, k in enumerate(ks)
    ]


def _pair_chunk(d, sched, cfg, ks: range) -> list[PairSample]:
    draws = [_draw_pair(d, cfg, k) for k in ks]
    y = np.stack([dr[0] for dr in draws])
    eps = np.stack([dr[1] for dr in draws])
    t_a = np.array([dr[2] for dr in draws])
    t_b = np.array([dr[3] for dr in draws])
    s = evaluate_pairs(d, sched, cfg.eta, y, eps, t_a, t_b)
    return [
        PairSample(k=k, t_a=float(t_a[j]), t_b=float(t_b[j]), s=float(s[j]))
        for j, k in enumerate(ks)
    ]


# -- stores ------------------------------------------------------------------


def _schedule_echo(sched: NoiseSchedule) -> dict:
    kind = "vp" if isinstance(sched, VpSchedule) else "ve"
    return {"kind": kind, **dataclasses.asdict(sched)}


@dataclasses.dataclass(frozen=True, eq=False)
class EndpointStore:
    k: np.ndarray
    t: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    meta: dict = dataclasses.field(default_factory=dict)

    header = ("k", "t", "s0", "s1")

    @classmethod
    def from_samples(cls, samples, meta=None) -> "EndpointStore":
        samples = sorted(samples, key=lambda smp: smp.k)
        return cls(
            k=np.array([smp.k for smp in samples], dtype=np.int64),
            t=np.array([smp.t for smp in samples]),
            s0=np.array([smp.s0 for smp in samples]),
            s1=np.array([smp.s1 for smp in samples]),
            meta=dict(meta or {}),
        )

    def __len__(self) -> int:
        return self.k.shape[0]

    def samples(self) -> list[EndpointSample]:
        return [
            EndpointSample(int(k), float(t), float(a), float(b))
            for k, t, a, b in zip(self.k, self.t, self.s0, self.s1)
        ]

    def columns(self):
        return (self.k, self.t, self.s0, self.s1)

    def to_csv(self, path) -> None:
        _write_store(path, self.header, self.columns(), self.meta)

    @classmethod
    def from_csv(cls, path) -> "EndpointStore":
        cols, meta = _read_store(path, cls.header)
        return cls(*cols, meta=meta)


@dataclasses.dataclass(frozen=True, eq=False)
class PairStore:
    k: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    s: np.ndarray
    meta: dict = dataclasses.field(default_factory=dict)

    header = ("k", "t_a", "t_b", "s")

    @classmethod
    def from_samples(cls, samples, meta=None) -> "PairStore":
        samples = sorted(samples, key=lambda smp: smp.k)
        return cls(
            k=np.array([smp.k for smp in samples], dtype=np.int64),
            t_a=np.array([smp.t_a for smp in samples]),
            t_b=np.array([smp.t_b for smp in samples]),
            s=np.array([smp.s for smp in samples]),
            meta=dict(meta or {}),
        )

    def __len__(self) -> int:
        return self.k.shape[0]

    def samples(self) -> list[PairSample]:
        return [
            PairSample(int(k), float(a), float(b), float(s))
            for k, a, b, s in zip(self.k, self.t_a, self.t_b, self.s)
        ]

    def columns(self):
        return (self.k, self.t_a, self.t_b, self.s)

    def to_csv(self, path) -> None:
        _write_store(path, self.header, self.columns(), self.meta)

    @classmethod
    def from_csv(cls, path) -> "PairStore":
        cols, meta = _read_store(path, cls.header)
        return cls(*cols, meta=meta)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_store(path, header, columns, meta) -> None:
    k = columns[0]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in range(k.shape[0]):
            vals = [str(int(k[row]))] + [format(float(c[row]), ".17g") for c in columns[1:]]
            fh.write(",".join(vals) + "\n")
    if meta:
        with open(sidecar_path(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _read_store(path, header):
    with open(path) as fh:
        first = fh.readline().strip()
        if tuple(first.split(",")) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    if raw.size == 0:
        raw = np.empty((0, len(header)))
    cols = [raw[:, 0].astype(np.int64)] + [raw[:, j].copy() for j in range(1, len(header))]
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        with open(side) as fh:
            meta = json.load(fh)
    return cols, meta


def _study_meta(mode: str, d: Dataset, sched: NoiseSchedule, cfg: SimilarityConfig, chunk: int) -> dict:
    return {
        "mode": mode,
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "chunk_size": chunk,
        "schedule": _schedule_echo(sched),
        "dataset": {"source": d.source, **d.fingerprint()},
    }


def _run(chunk_fn, d, sched, cfg, threads, chunk):
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    blocks = [range(a, min(a + chunk, cfg.k_samples)) for a in range(0, cfg.k_samples, chunk)]
    threads = threads or os.cpu_count() or 1
    if threads == 1:
        parts = [chunk_fn(d, sched, cfg, b) for b in blocks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: chunk_fn(d, sched, cfg, b), blocks))
    return [smp for part in parts for smp in part]


def run_endpoint_study(
    d: Dataset,
    sched: NoiseSchedule,
    cfg: SimilarityConfig,
    *,
    threads: int | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> EndpointStore:
    """Draw and score ``cfg.k_samples`` endpoint samples."""
    samples = _run(_endpoint_chunk, d, sched, cfg, threads, chunk)
    return EndpointStore.from_samples(samples, _study_meta("endpoint", d, sched, cfg, chunk))


def run_pair_study(
    d: Dataset,
    sched: NoiseSchedule,
    cfg: SimilarityConfig,
    *,
    threads: int | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> PairStore:
    samples = _run(_pair_chunk, d, sched, cfg, threads, chunk)
    return PairStore.from_samples(samples, _study_meta("pair", d, sched, cfg, chunk))


def schedule_from_echo(echo: dict) -> NoiseSchedule:
    echo = dict(echo)
    kind = echo.pop("kind")
    return VpSchedule(**echo) if kind == "vp" else VeSchedule(**echo)
