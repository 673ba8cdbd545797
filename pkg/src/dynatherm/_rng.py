"""Keyed counter-based random streams.

Every stream is a Philox generator whose 128-bit key packs a 64-bit master
seed and a 64-bit stream index, so realization ``r`` of a run always sees the
same numbers no matter how many realizations are requested or in which order
they are executed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream-index offsets for auxiliary streams; realization streams use 0..2**62.
BOOTSTRAP_STREAM = 1 << 62
RECOMPILE_STREAM = (1 << 62) + (1 << 60)
NOISE_STREAM = (1 << 62) + (2 << 60)


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Return the generator keyed by ``(seed, index)``."""
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def box_muller(gen: np.random.Generator, n_pairs: int) -> np.ndarray:
    """Draw ``n_pairs`` pairs of independent standard normals.

    Returns an array of shape ``(n_pairs, 2)``. Uses the basic Box-Muller
    transform on uniforms from ``gen`` so the Gaussian law does not depend on
    numpy's internal normal sampler.
    """
    u = gen.random((n_pairs, 2))
    # map [0, 1) -> (0, 1] so the log is finite
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    phi = 2.0 * np.pi * u[:, 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
