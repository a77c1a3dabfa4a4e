"""Dense linear-algebra helpers and a portable counter-based PRNG.

Vectors are 1-D float64 numpy arrays, matrices 2-D row-major float64
arrays.  The helpers validate shapes/finiteness once at the boundary so
the numerical code can assume well-formed arrays.

Randomness comes from an in-repo SplitMix64 generator rather than the
platform default: the stream is a pure function of a 64-bit seed and a
64-bit counter, so identical seeds reproduce identical results on any
platform and any numpy version, and bulk draws vectorize.  Generators
are not shared between concurrent tasks; derive one per task with
``Rng.spawn(stream_id)``.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_SPAWN_SALT = 0x5851F42D4C957F2D

_GAMMA_U64 = np.uint64(_GAMMA)
_MUL1_U64 = np.uint64(_MUL1)
_MUL2_U64 = np.uint64(_MUL2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

_INV_2_53 = 1.0 / float(1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z ^= z >> 30
    z = (z * _MUL1) & _MASK
    z ^= z >> 27
    z = (z * _MUL2) & _MASK
    z ^= z >> 31
    return z


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 multiplication wraps mod 2^64, matching the scalar path.
    z = z ^ (z >> _S30)
    z = z * _MUL1_U64
    z = z ^ (z >> _S27)
    z = z * _MUL2_U64
    return z ^ (z >> _S31)


class Rng:
    """Deterministic SplitMix64 stream.

    Output k of seed s is ``mix64(s + (k+1)*GAMMA mod 2^64)``; scalar and
    bulk draws advance the same counter and produce identical streams.
    """

    __slots__ = ("_seed", "_state")

    def __init__(self, seed: int):
        self._seed = int(seed) & _MASK
        self._state = self._seed

    @property
    def seed(self) -> int:
        return self._seed

    def spawn(self, stream_id: int) -> "Rng":
        """Child generator decorrelated from this one and from other ids.

        Derivation uses only the parent's seed, never its position, so the
        same (seed, stream_id) pair always names the same stream.
        """
        child = mix64(self._seed ^ mix64((int(stream_id) & _MASK) ^ _SPAWN_SALT))
        return Rng(child)

    # -- raw 64-bit draws ------------------------------------------------

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return mix64(self._state)

    def next_u64s(self, size: int) -> np.ndarray:
        if size < 0:
            raise ValueError(f"size must be >= 0, got {size}")
        ks = np.arange(1, size + 1, dtype=np.uint64)
        out = _mix64_array(np.uint64(self._state) + _GAMMA_U64 * ks)
        self._state = (self._state + size * _GAMMA) & _MASK
        return out

    # -- uniforms ---------------------------------------------------------

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        u = (self.next_u64() >> 11) * _INV_2_53
        return lo + (hi - lo) * u

    def uniforms(self, size: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        u = (self.next_u64s(size) >> _S11).astype(np.float64) * _INV_2_53
        return lo + (hi - lo) * u

    # -- gaussians ---------------------------------------------------------

    def gaussian(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Box-Muller draw; consumes exactly two 64-bit outputs per value."""
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        u1 = 1.0 - (self.next_u64() >> 11) * _INV_2_53  # in (0, 1]
        u2 = (self.next_u64() >> 11) * _INV_2_53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mean + std * float(z)

    def gaussians(self, size: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        raw = (self.next_u64s(2 * size) >> _S11).astype(np.float64) * _INV_2_53
        u1 = 1.0 - raw[0::2]
        u2 = raw[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mean + std * z

    # -- integers and permutations -----------------------------------------

    def randint(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is < n/2^64, negligible here."""
        if n <= 0:
            raise ValueError(f"randint requires n >= 1, got {n}")
        return self.next_u64() % n

    def randints(self, size: int, n: int) -> np.ndarray:
        if n <= 0:
            raise ValueError(f"randint requires n >= 1, got {n}")
        return (self.next_u64s(size) % np.uint64(n)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n) by stable argsort of n uniform keys."""
        return np.argsort(self.uniforms(n), kind="stable")


# -- array validation and small dense ops ---------------------------------


def as_vec(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_mat(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def dot(a, b) -> float:
    va, vb = as_vec(a, "a"), as_vec(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dot shape mismatch: {va.shape} vs {vb.shape}")
    return float(np.dot(va, vb))


def matvec(m, v) -> np.ndarray:
    mm, vv = as_mat(m, "m"), as_vec(v, "v")
    if mm.shape[1] != vv.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: matrix is {mm.shape[0]}x{mm.shape[1]}, "
            f"vector has length {vv.shape[0]}"
        )
    return mm @ vv
