"""Quasi-random Sobol sampling and the box helpers built on top of it.

The generator is the standard unscrambled Sobol construction driven by the
Joe-Kuo d(6) direction numbers shipped in ``data/joe-kuo-d128.txt``.  The data
file uses the canonical table layout: a header line ``d s a m_i`` followed by
one row per dimension ``d >= 2`` holding the primitive-polynomial degree
``s``, the interior coefficient bits ``a`` and the ``s`` initial odd integers
``m_1 .. m_s``.  Dimension 1 is the van der Corput sequence in base 2 and
needs no table row.
"""

from __future__ import annotations

import importlib.resources
from functools import lru_cache

import numpy as np

N_BITS = 32
_SCALE = float(1 << N_BITS)
MAX_DIMENSION = 128

_TABLE_RESOURCE = "joe-kuo-d128.txt"


@lru_cache(maxsize=1)
def _load_table() -> list[tuple[int, int, tuple[int, ...]]]:
    """Parse the direction-number table into (degree, a, m-values) rows."""
    text = (
        importlib.resources.files("assent.data")
        .joinpath(_TABLE_RESOURCE)
        .read_text(encoding="ascii")
    )
    rows = []
    for line in text.splitlines()[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        d, s, a = int(parts[0]), int(parts[1]), int(parts[2])
        ms = tuple(int(m) for m in parts[3:])
        if len(ms) != s:
            raise ValueError(f"direction table row {d} has {len(ms)} m-values, expected {s}")
        rows.append((s, a, ms))
    return rows


def _direction_vectors(dimension: int) -> np.ndarray:
    """Direction numbers ``v[dim, bit]`` as 32-bit integers scaled by 2^(32-k)."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if dimension > MAX_DIMENSION:
        raise ValueError(
            f"dimension {dimension} exceeds the shipped direction-number table "
            f"({MAX_DIMENSION} dimensions)"
        )
    table = _load_table()
    v = np.zeros((dimension, N_BITS), dtype=np.uint64)
    # dimension 1: m_k = 1 for all k
    v[0, :] = [1 << (N_BITS - k) for k in range(1, N_BITS + 1)]
    for dim in range(2, dimension + 1):
        s, a, m_init = table[dim - 2]
        m = list(m_init)
        for k in range(s, N_BITS):
            # m_k = 2 a_1 m_{k-1} ^ ... ^ 2^{s-1} a_{s-1} m_{k-s+1} ^ 2^s m_{k-s} ^ m_{k-s}
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                a_i = (a >> (s - 1 - i)) & 1
                if a_i:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(1, N_BITS + 1):
            v[dim - 1, k - 1] = np.uint64(m[k - 1] << (N_BITS - k))
    return v


def _gray(n: int) -> int:
    return n ^ (n >> 1)


class SobolStream:
    """Mutable cursor over the standard Sobol sequence in [0,1)^dimension.

    Single consumer per stream; independent streams can run concurrently.
    Streams with equal (dimension, next_index) produce identical outputs.
    """

    def __init__(self, dimension: int, start_index: int = 0):
        self.dimension = int(dimension)
        self._v = _direction_vectors(self.dimension)
        self.next_index = 0
        self._state = np.zeros(self.dimension, dtype=np.uint64)
        if start_index:
            self.jump_to(start_index)

    def jump_to(self, index: int) -> None:
        """Position the stream so the next emitted point has this index."""
        if index < 0:
            raise ValueError("index must be >= 0")
        state = np.zeros(self.dimension, dtype=np.uint64)
        if index > 0:
            g = _gray(index - 1)
            bit = 0
            while g:
                if g & 1:
                    state ^= self._v[:, bit]
                g >>= 1
                bit += 1
        self._state = state
        self.next_index = index

    def next_points(self, n: int) -> np.ndarray:
        """Return the next ``n`` points as an (n, dimension) array and advance."""
        if n < 1:
            raise ValueError("n must be >= 1")
        out = np.empty((n, self.dimension), dtype=float)
        state = self._state
        for i in range(n):
            idx = self.next_index + i
            if idx == 0:
                state = np.zeros(self.dimension, dtype=np.uint64)
            else:
                # Antonov-Saleev: flip the direction number indexed by the
                # lowest zero bit of (idx - 1)
                c = 0
                m = idx - 1
                while m & 1:
                    m >>= 1
                    c += 1
                state = state ^ self._v[:, c]
            out[i] = state.astype(float) / _SCALE
        self._state = state
        self.next_index += n
        return out


def scale_to_box(point: np.ndarray, box: list[tuple[float, float]]) -> np.ndarray:
    """Affine map of a unit-cube point onto per-dimension (lower, upper) intervals."""
    u = np.asarray(point, dtype=float)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    if np.any(lo >= hi):
        raise ValueError("box requires lower < upper in every dimension")
    return lo + u * (hi - lo)


def box_around(
    nominal: np.ndarray,
    fraction: float,
    global_bounds: list[tuple[float, float]],
) -> list[tuple[float, float]]:
    """Multiplicative box [nominal*(1-f), nominal*(1+f)] clipped to global bounds.

    A zero nominal coordinate degenerates the multiplicative box, so it falls
    back to an interval of half-width fraction*(global width)/2 centred at 0,
    again clipped to the global bounds.
    """
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    x = np.asarray(nominal, dtype=float)
    out = []
    for xi, (g_lo, g_hi) in zip(x, global_bounds):
        if xi == 0.0:
            half = fraction * (g_hi - g_lo) / 2.0
            lo, hi = -half, half
        else:
            a, b = xi * (1.0 - fraction), xi * (1.0 + fraction)
            lo, hi = min(a, b), max(a, b)
        lo, hi = max(lo, g_lo), min(hi, g_hi)
        if lo > hi:
            raise ValueError("box does not intersect the global bounds")
        out.append((lo, hi))
    return out


def sobol_catalog(stream: SobolStream, lower: float, upper: float, count: int) -> tuple[float, ...]:
    """Discretize a continuous range into a sorted catalog of Sobol samples.

    Duplicate values are impossible for count <= 2^32 since the underlying
    integer states are distinct, but sorting may reorder the raw sequence.
    """
    if stream.dimension != 1:
        raise ValueError("catalog sampling uses a 1-D stream")
    u = stream.next_points(count)[:, 0]
    vals = lower + u * (upper - lower)
    return tuple(sorted(float(v) for v in vals))
