"""
Shared standards for sa3-desk.

- Result types for I/O and configuration failures
- Exception hierarchy for numerical and contract failures
- Contract and complexity decorators
- Bounded caches and a timing profiler
- Frozen domain types (boxes, scenes, manifests, detections)
"""

from .result_types import Result, Success, Failure, Ok, Err, Fault, FaultKind, fault
from .errors import (
    SA3Error,
    InvalidArgumentError,
    ContractViolationError,
    EmptyBoxError,
    NumericalError,
)
from .formal_specs import verify_complexity, requires, ensures, ComplexityClass, ComplexitySpec
from .performance import LRUCache, memoize, PerformanceProfiler, CacheStats, SectionTiming, profile
from .type_definitions import (
    Box,
    GTInstance,
    DomainLabel,
    Split,
    ImageLabelVector,
    SceneRecord,
    DatasetManifest,
    Detection,
)

__all__ = [
    'Result', 'Success', 'Failure', 'Ok', 'Err', 'Fault', 'FaultKind', 'fault',
    'SA3Error', 'InvalidArgumentError', 'ContractViolationError', 'EmptyBoxError', 'NumericalError',
    'verify_complexity', 'requires', 'ensures', 'ComplexityClass', 'ComplexitySpec',
    'LRUCache', 'memoize', 'PerformanceProfiler', 'CacheStats', 'SectionTiming', 'profile',
    'Box', 'GTInstance', 'DomainLabel', 'Split', 'ImageLabelVector', 'SceneRecord',
    'DatasetManifest', 'Detection',
]
