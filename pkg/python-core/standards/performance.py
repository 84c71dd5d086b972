"""
Caches and Timers

- LRUCache: bounded, thread-safe store for shape-only geometry
  (anchor grids keyed by feature size and stride)
- memoize: LRUCache-backed decorator for pure integer functions
- PerformanceProfiler / profile: wall time per named section, for DEBUG logs

Complexity Guarantees:
- LRUCache.get / put: O(1) amortized, O(capacity) memory
- profile overhead: two perf_counter calls per call
"""

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from functools import wraps
from typing import Callable, Dict, Generic, Hashable, List, Optional, TypeVar

from .errors import InvalidArgumentError
from .formal_specs import verify_complexity

T = TypeVar('T')
K = TypeVar('K', bound=Hashable)
V = TypeVar('V')


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    def __str__(self) -> str:
        rate = self.hits / self.lookups if self.lookups else 0.0
        return f"{self.hits} hits / {self.lookups} lookups ({rate:.0%}), {self.evictions} evicted"


class LRUCache(Generic[K, V]):
    """
    Least-recently-used mapping with a fixed capacity.

    Evaluation workers share module-level caches, so every access holds a
    lock. Cached values are handed out as-is and must not be mutated.
    """

    def __init__(self, capacity: int = 128):
        if capacity < 1:
            raise InvalidArgumentError(f"cache capacity must be ≥ 1, got {capacity}")
        self.capacity = capacity
        self._entries: "OrderedDict[K, V]" = OrderedDict()
        self._lock = threading.Lock()
        self.stats = CacheStats()

    @verify_complexity(time="O(1)", space="O(1)")
    def get(self, key: K) -> Optional[V]:
        with self._lock:
            try:
                self._entries.move_to_end(key)
            except KeyError:
                self.stats.misses += 1
                return None
            self.stats.hits += 1
            return self._entries[key]

    @verify_complexity(time="O(1)", space="O(1)")
    def put(self, key: K, value: V) -> None:
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
                self.stats.evictions += 1

    def get_or_compute(self, key: K, compute: Callable[[], V]) -> V:
        """Cached value for `key`; on a miss `compute()` runs outside the lock."""
        value = self.get(key)
        if value is None:
            value = compute()
            self.put(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)


def memoize(maxsize: int = 128):
    """
    Cache a pure function's results by its (hashable) arguments.

    Exceptions are not cached; the wrapped function exposes `cache`.

    Example:
        @memoize(maxsize=8192)
        def kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int: ...
    """
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        cache: LRUCache = LRUCache(capacity=maxsize)

        @wraps(func)
        def wrapper(*args, **kwargs) -> T:
            key = (args, tuple(sorted(kwargs.items())))
            return cache.get_or_compute(key, lambda: func(*args, **kwargs))

        wrapper.cache = cache  # type: ignore[attr-defined]
        return wrapper
    return decorator


@dataclass
class SectionTiming:
    """Accumulated wall time of one profiled section."""
    name: str
    calls: int = 0
    total: float = 0.0
    slowest: float = 0.0

    def add(self, seconds: float) -> None:
        self.calls += 1
        self.total += seconds
        self.slowest = max(self.slowest, seconds)

    def __str__(self) -> str:
        mean = self.total / self.calls if self.calls else 0.0
        return f"{self.name}: {self.calls} calls, mean {mean * 1e3:.1f} ms, slowest {self.slowest * 1e3:.1f} ms"


class PerformanceProfiler:
    """
    Process-wide registry of SectionTiming records.

    Diagnostics only: timings never reach reports, metrics or checkpoints.
    """

    _sections: Dict[str, SectionTiming] = {}
    _lock = threading.Lock()

    @classmethod
    def record(cls, name: str, seconds: float) -> None:
        with cls._lock:
            cls._sections.setdefault(name, SectionTiming(name)).add(seconds)

    @classmethod
    def get_metrics(cls, name: str) -> Optional[SectionTiming]:
        return cls._sections.get(name)

    @classmethod
    def summary(cls) -> List[str]:
        """One line per section, slowest total first."""
        with cls._lock:
            ordered = sorted(cls._sections.values(), key=lambda s: s.total, reverse=True)
        return [str(s) for s in ordered]

    @classmethod
    def clear(cls) -> None:
        with cls._lock:
            cls._sections.clear()


def profile(name: Optional[str] = None):
    """
    Record each call's wall time under `name` (default: the function name).

    Example:
        @profile("train_step")
        def train_step(...): ...
    """
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        label = name or func.__name__

        @wraps(func)
        def wrapper(*args, **kwargs) -> T:
            started = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                PerformanceProfiler.record(label, time.perf_counter() - started)
        return wrapper
    return decorator
