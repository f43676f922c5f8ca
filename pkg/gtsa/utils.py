# Copyright 2026, the gtsa authors, All Rights Reserved
from typing import Any, Iterable, MutableMapping, Sequence, Tuple, TypeVar
from collections import OrderedDict
from pathlib import Path
import csv

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def derive_seed(master_seed: int, index: int) -> int:
    # splitmix64 finalizer applied to master + (index + 1) * gamma
    z = (master_seed + (index + 1) * _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def floats_to_hex(values: np.ndarray) -> Tuple[str, ...]:
    return tuple(float(v).hex() for v in np.asarray(values, dtype=np.float64).ravel())


def hex_to_floats(values: Sequence[str], shape: Sequence[int]) -> np.ndarray:
    flat = np.array([float.fromhex(v) for v in values], dtype=np.float64)
    return flat.reshape(tuple(shape))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow(format_csv_value(value) for value in row)


def format_csv_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


_KT = TypeVar('_KT')
_VT = TypeVar('_VT')


class LruDict(OrderedDict, MutableMapping[_KT, _VT]):
    def __init__(self, max_elements: int):
        super().__init__()
        self.max_elements = max_elements

    def __getitem__(self, key: _KT) -> _VT:
        result: _VT = super().__getitem__(key)
        try:
            self.move_to_end(key)
        except KeyError:
            # Mid-pop: the entry is already gone from the internal map
            pass
        return result

    def __setitem__(self, key: _KT, value: _VT) -> None:
        super().__setitem__(key, value)
        self.move_to_end(key)
        if len(self) > self.max_elements:
            self.popitem(last=False)

    def get(self, k: _KT, default: Any = None) -> Any:
        try:
            return self[k]
        except KeyError:
            return default
