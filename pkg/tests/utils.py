# Copyright 2026, the gtsa authors, All Rights Reserved
from typing import Callable, List, Optional

import numpy as np

from gtsa.config import GTSAConfig
from gtsa.graph_dataset import GraphSample, SampleMeta
from gtsa.grid_model import GridCase, load_case


def bundled_case(alias: str) -> GridCase:
    return load_case(GTSAConfig.CASES_PATH / GTSAConfig.CASE_ALIASES[alias])


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """ Central differences of f() with respect to every entry of array, perturbed in place """
    result = np.zeros_like(array)
    for index in np.ndindex(*array.shape):
        original = array[index]
        array[index] = original + h
        upper = f()
        array[index] = original - h
        lower = f()
        array[index] = original
        result[index] = (upper - lower) / (2 * h)
    return result


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def random_edges(rng: np.random.Generator, n: int, extra: int = 2) -> np.ndarray:
    """ A random spanning tree plus a few extra distinct edges """
    pairs = {(int(rng.integers(i)), i) for i in range(1, n)}
    for _ in range(extra):
        i, j = sorted(int(v) for v in rng.choice(n, size=2, replace=False)) if n > 1 else (0, 0)
        if i != j:
            pairs.add((i, j))
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def random_sample(rng: np.random.Generator, n: int, label: Optional[int] = None,
                  meta: SampleMeta = SampleMeta()) -> GraphSample:
    return GraphSample(
        n=n,
        edges=random_edges(rng, n),
        features=rng.normal(size=(n, 2)),
        label=label,
        meta=meta,
    )


def toy_dataset(rng: np.random.Generator, count: int) -> List[GraphSample]:
    """ Linearly separable graphs: active power is positive exactly on stable graphs """
    samples = []
    for index in range(count):
        label = index % 2
        n = int(rng.integers(3, 8))
        sign = 1.0 if label == 1 else -1.0
        features = np.column_stack([sign * rng.uniform(2.0, 3.0, size=n), rng.uniform(-1.0, 1.0, size=n)])
        samples.append(GraphSample(n=n, edges=random_edges(rng, n), features=features, label=label))
    return samples
