"""
Small dense block products ``c += a @ b``.

Every kernel accumulates straight into ``c`` one rank-1 update at a time with
k ascending, i.e. ``c[i, j] = (((c[i, j] + a[i, 0] b[0, j]) + a[i, 1] b[1, j]) + ...)``.
Tiling over m and n touches disjoint elements and k-tiles are always visited in
ascending order, so every parametrization produces the same bits.
"""
import hashlib
import json
import logging
import platform
import threading
import time
from itertools import product
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ShapeMismatch
from app.models.kernel import KernelChoice, KernelParams, LocalConfig
from app.services import metrics

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]


def _tiles(extent: int, tile: int) -> List[slice]:
    return [slice(start, min(start + tile, extent)) for start in range(0, extent, tile)]


def _check_shapes(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Dims:
    if a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
        raise ShapeMismatch("kernel operands must be 2D")
    m, k = a.shape
    if b.shape[0] != k or c.shape != (m, b.shape[1]):
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape} into {c.shape}")
    return m, b.shape[1], k


def _update_tile(a: np.ndarray, b: np.ndarray, c: np.ndarray, unroll: int, scratch: np.ndarray) -> None:
    rows, depth = a.shape
    cols = b.shape[1]
    for p0 in range(0, depth, unroll):
        p1 = min(p0 + unroll, depth)
        products = scratch[: p1 - p0, :rows, :cols]
        np.multiply(a[:, p0:p1].T[:, :, None], b[p0:p1, None, :], out=products)
        for q in range(p1 - p0):
            np.add(c, products[q], out=c)


def smm(a: np.ndarray, b: np.ndarray, c: np.ndarray, params: Optional[KernelParams] = None) -> np.ndarray:
    m, n, k = _check_shapes(a, b, c)
    if m == 0 or n == 0 or k == 0:
        return c
    params = (params or KernelParams()).clipped(m, n, k)
    unroll = min(params.unroll_hint, params.tile_k)
    scratch = np.empty((unroll, params.tile_m, params.tile_n), dtype=np.float64)
    ranges = {"m": _tiles(m, params.tile_m), "n": _tiles(n, params.tile_n), "k": _tiles(k, params.tile_k)}
    outer, middle, inner = params.loop_order
    for s0 in ranges[outer]:
        for s1 in ranges[middle]:
            for s2 in ranges[inner]:
                tile = {outer: s0, middle: s1, inner: s2}
                _update_tile(a[tile["m"], tile["k"]], b[tile["k"], tile["n"]], c[tile["m"], tile["n"]], unroll, scratch)
    return c


def reference_smm(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Untiled fixed-order reference: one rank-1 update per k."""
    _check_shapes(a, b, c)
    for p in range(a.shape[1]):
        np.add(c, np.multiply.outer(a[:, p], b[p, :]), out=c)
    return c


def default_candidates(m: int, n: int, k: int) -> List[KernelParams]:
    def tile_options(extent: int) -> List[int]:
        return sorted({extent, max(1, (extent + 1) // 2), min(extent, 8)}, reverse=True)

    grid = []
    for tm, tn, tk in product(tile_options(m), tile_options(n), tile_options(k)):
        for unroll in (1, 4):
            grid.append(KernelParams(tile_m=tm, tile_n=tn, tile_k=tk, loop_order="mnk", unroll_hint=unroll))
    return grid


def host_fingerprint() -> str:
    raw = "|".join([platform.machine(), platform.processor(), platform.python_version(), np.__version__])
    return hashlib.sha1(raw.encode()).hexdigest()[:16]


class Autotuner:
    """
    Picks kernel parameters per (m, n, k) by timing a candidate grid and keeps
    the winners in an internally synchronized cache.
    """
    def __init__(
        self,
        trials: Optional[int] = None,
        seed: Optional[int] = None,
        timer: Callable[[], float] = time.perf_counter,
    ):
        self.trials = trials or settings.AUTOTUNE_TRIALS
        self.seed = settings.AUTOTUNE_SEED if seed is None else seed
        self.timer = timer
        self.measurements = 0
        self._cache: Dict[Dims, KernelParams] = {}
        self._lock = threading.Lock()

    # --- Tuning ---
    def autotune(
        self,
        m: int,
        n: int,
        k: int,
        candidate_grid: Optional[Sequence[KernelParams]] = None,
        trials: Optional[int] = None,
    ) -> KernelParams:
        key = (m, n, k)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        candidates = list(candidate_grid) if candidate_grid else default_candidates(m, n, k)
        if len(candidates) == 1:
            best = candidates[0]
        else:
            best = self._measure(m, n, k, candidates, trials or self.trials)
        with self._lock:
            self._cache.setdefault(key, best)
            return self._cache[key]

    def _measure(self, m: int, n: int, k: int, candidates: List[KernelParams], trials: int) -> KernelParams:
        rng = np.random.default_rng(self.seed)
        a = rng.uniform(-1.0, 1.0, (m, k))
        b = rng.uniform(-1.0, 1.0, (k, n))
        flops = 2.0 * m * n * k
        best, best_rate = candidates[0], -1.0
        for params in candidates:
            samples = []
            for _ in range(trials):
                c = np.zeros((m, n))
                start = self.timer()
                smm(a, b, c, params)
                samples.append(max(self.timer() - start, 1e-12))
            self.measurements += trials
            rate = flops / float(np.median(samples))
            if rate > best_rate:
                best, best_rate = params, rate
        metrics.increment_autotune_measurements(trials * len(candidates))
        logger.info("Tuned (%d,%d,%d): %s at %.2f GFLOP/s", m, n, k, best, best_rate / 1e9)
        return best

    # --- Dispatch ---
    def dispatch(self, m: int, n: int, k: int, config: Optional[LocalConfig] = None) -> KernelChoice:
        if max(m, n, k) > settings.SMALL_KERNEL_MAX_DIM:
            tile = settings.LARGE_KERNEL_TILE
            return KernelChoice(
                path="large", params=KernelParams(tile_m=tile, tile_n=tile, tile_k=tile, loop_order="mnk", unroll_hint=8)
            )
        if config is not None and config.kernel is not None:
            return KernelChoice(path="small", params=config.kernel)
        with self._lock:
            cached = self._cache.get((m, n, k))
        if cached is None and config is not None and config.autotune:
            cached = self.autotune(m, n, k)
        return KernelChoice(path="small", params=cached or KernelParams().clipped(m, n, k))

    # --- Cache ---
    def entries(self) -> Dict[str, KernelParams]:
        with self._lock:
            return {f"{m},{n},{k}": params for (m, n, k), params in sorted(self._cache.items())}

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
        self.measurements = 0

    def save(self, path: Union[str, Path]) -> None:
        payload = {
            "fingerprint": host_fingerprint(),
            "entries": {key: params.model_dump() for key, params in self.entries().items()},
        }
        Path(path).write_text(json.dumps(payload, indent=4))
        logger.info("Saved %d tuned kernels to %s", len(payload["entries"]), path)

    def load(self, path: Union[str, Path]) -> int:
        path = Path(path)
        if not path.exists():
            logger.info("Tuning cache %s not found, starting empty", path)
            return 0
        try:
            payload = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            logger.warning("Unreadable tuning cache %s: %s", path, e)
            return 0
        if payload.get("fingerprint") != host_fingerprint():
            logger.warning("Tuning cache %s was written on another host, ignoring it", path)
            return 0
        loaded = 0
        with self._lock:
            for key, params in payload.get("entries", {}).items():
                m, n, k = (int(x) for x in key.split(","))
                self._cache[(m, n, k)] = KernelParams(**params)
                loaded += 1
        logger.info("Loaded %d tuned kernels from %s", loaded, path)
        return loaded

    def prewarm(self, shapes: Iterable[Dims]) -> None:
        for m, n, k in shapes:
            if max(m, n, k) <= settings.SMALL_KERNEL_MAX_DIM:
                self.autotune(m, n, k)


autotuner = Autotuner()


def autotune(m: int, n: int, k: int, candidate_grid: Optional[Sequence[KernelParams]] = None,
             trials: Optional[int] = None) -> KernelParams:
    return autotuner.autotune(m, n, k, candidate_grid, trials)


def dispatch(m: int, n: int, k: int, config: Optional[LocalConfig] = None) -> KernelChoice:
    return autotuner.dispatch(m, n, k, config)
