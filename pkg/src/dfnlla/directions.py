"""Dense sequence of unit search directions built from orthonormal bases.

Each basis is seeded by one unscrambled Sobol point ``u`` mapped to
``(2u - 1) / ||2u - 1||`` and completed with a Householder reflector.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc


def complete_basis(d) -> np.ndarray:
    """Orthonormal matrix whose first column is exactly ``d``."""
    d = np.asarray(d, dtype=float).ravel()
    if d.size == 0 or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("complete_basis needs a unit vector")
    n = d.size
    # Reflector H = I - 2 w w^T with H e_1 = s d; sign s avoids cancellation.
    s = 1.0 if d[0] <= 0 else -1.0
    v = s * d
    v[0] -= 1.0
    nv = np.linalg.norm(v)
    if nv == 0.0:
        basis = np.eye(n)
    else:
        w = v / nv
        basis = np.eye(n) - 2.0 * np.outer(w, w)
        basis[:, 0] *= s
    basis[:, 0] = d
    return basis


class SobolDirectionStream:
    """Cycles through the columns of successive Sobol-seeded orthonormal bases."""

    _chunk_log2 = 10

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.sobol_index = 1  # index 0 (the origin) is never used
        self._points = np.empty((0, dimension))
        self.current_basis = None
        self.cursor = dimension  # forces a basis on the first call
        self.bases_generated = 0

    def _point(self, i: int) -> np.ndarray:
        while i >= self._points.shape[0]:
            m = max(self._chunk_log2, int(np.log2(max(1, self._points.shape[0]))) + 1)
            engine = qmc.Sobol(self.dimension, scramble=False)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._points = engine.random_base2(m)
        return self._points[i]

    def next_sobol_unit(self) -> np.ndarray:
        while True:
            raw = 2.0 * self._point(self.sobol_index) - 1.0
            self.sobol_index += 1
            norm = np.linalg.norm(raw)
            if norm > 0.0:
                return raw / norm

    def next_basis(self) -> np.ndarray:
        self.current_basis = complete_basis(self.next_sobol_unit())
        self.cursor = 0
        self.bases_generated += 1
        return self.current_basis

    def next_direction(self) -> np.ndarray:
        if self.cursor >= self.dimension:
            self.next_basis()
        d = self.current_basis[:, self.cursor].copy()
        self.cursor += 1
        return d
