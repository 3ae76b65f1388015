"""
Pipeline Configuration

Flat key/value configuration shared by every stage: 72 superpixels, 40
landmarks and 20 library images per descriptor unless told otherwise.
"""

import json
import os
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any, Dict, Mapping, Optional, Tuple

from src.core.errors import InvalidConfig

OVERLAP_MODES = ('iou', 'intersection')
DEFAULT_L_SWEEP = (10, 20, 30, 40, 50)


@dataclass(frozen=True)
class Config:
    """Value object holding every tunable of the pipeline."""
    R: int = 72
    K: int = 40
    L: int = 20
    codebook_k: int = 16
    compactness: float = 10.0
    iterations: int = 10
    min_keypoints: int = 5
    max_keypoints: int = 500
    seed: int = 0
    overlap_mode: str = 'iou'
    use_bb: bool = True
    ls: Tuple[int, ...] = field(default=DEFAULT_L_SWEEP)
    threads: int = 0

    _POSITIVE = ('R', 'K', 'L', 'codebook_k', 'iterations', 'min_keypoints', 'max_keypoints')

    def validate(self) -> 'Config':
        """Check invariants; returns self so calls can be chained."""
        for key in self._POSITIVE:
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InvalidConfig(f"{key} must be a positive integer, got {value!r}")
        if self.R < 2:
            raise InvalidConfig(f"R must be at least 2, got {self.R}")
        if self.codebook_k < 2:
            raise InvalidConfig(f"codebook_k must be at least 2, got {self.codebook_k}")
        if not self.compactness > 0:
            raise InvalidConfig(f"compactness must be positive, got {self.compactness!r}")
        if self.overlap_mode not in OVERLAP_MODES:
            raise InvalidConfig(
                f"overlap_mode must be one of {', '.join(OVERLAP_MODES)}, got {self.overlap_mode!r}")
        if not self.ls or any(not isinstance(v, int) or v < 1 for v in self.ls):
            raise InvalidConfig(f"ls must be a non-empty list of positive integers, got {self.ls!r}")
        if not isinstance(self.threads, int) or self.threads < 0:
            raise InvalidConfig(f"threads must be >= 0, got {self.threads!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise InvalidConfig(f"seed must be a non-negative integer, got {self.seed!r}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['ls'] = list(self.ls)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'

    def merged(self, overrides: Mapping[str, Any]) -> 'Config':
        """Return a copy with every non-None override applied."""
        known = {f.name for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise InvalidConfig(f"unknown configuration key: {key}")
            changes[key] = tuple(value) if key == 'ls' else value
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Config':
        return cls().merged(data)

    @classmethod
    def from_file(cls, path: str) -> 'Config':
        """Load a flat JSON configuration file."""
        try:
            with open(path, 'r', encoding='utf-8') as file:
                data = json.load(file)
        except FileNotFoundError:
            raise InvalidConfig(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise InvalidConfig(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)


def thread_count(config: Config, environ: Optional[Mapping[str, str]] = None) -> int:
    """
    Resolve the worker count.

    An explicit `threads` setting wins; otherwise VPR_THREADS is consulted.
    Zero means one worker per CPU.
    """
    environ = os.environ if environ is None else environ
    threads = config.threads
    if threads == 0 and environ.get('VPR_THREADS'):
        try:
            threads = int(environ['VPR_THREADS'])
        except ValueError:
            raise InvalidConfig(f"VPR_THREADS must be an integer, got {environ['VPR_THREADS']!r}") from None
        if threads < 0:
            raise InvalidConfig(f"VPR_THREADS must be >= 0, got {threads}")
    if threads == 0:
        threads = os.cpu_count() or 1
    return threads
