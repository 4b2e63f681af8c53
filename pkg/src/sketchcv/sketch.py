"""Feature-hashing and random-projection sketches of real vectors.

Both schemes compress a vector in R^p down to k numbers while preserving
squared norms and inner products in expectation.  A pair of sketches of two
vectors, together with the (known) squared norms of the originals, yields the
three normalized sufficient statistics ``(w1, w2, w3)`` that the inner-product
estimators consume: unbiased estimates of the two squared norms and of the
inner product.

Randomness is driven by counter-based Philox streams keyed on a
``(seed, stream)`` pair, so any trial of a larger experiment can derive its
own independent stream and replay it exactly regardless of execution order or
thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_HASH = "fh"
RANDOM_PROJECTION = "rp"

#: 61-bit Mersenne prime used by the 2-wise universal hash family.
MERSENNE_P61 = (1 << 61) - 1

_MASK64 = (1 << 64) - 1


class InvalidAngle(ValueError):
    """Requested vector-pair angle lies outside [0, pi]."""


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: bijective 64-bit avalanche."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def hash64(*parts: int) -> int:
    """Deterministic 64-bit hash of a sequence of integers.

    Used to derive independent RNG stream ids from structured coordinates
    (cell index, trial index, ...).  Pure integer arithmetic, so the result
    is identical on every platform.
    """
    state = 0x243F6A8885A308D3
    for part in parts:
        state = _mix64(state ^ _mix64(int(part) & _MASK64))
    return state


@dataclass(frozen=True)
class SeededRng:
    """Counter-based random stream identified by a ``(seed, stream)`` pair.

    The same pair always reproduces the same byte stream.  Derived streams
    (:meth:`derive`) are independent of each other and of execution order,
    which makes parallel trial execution reproducible.

    Normal variates come from numpy's ziggurat sampler running on the Philox
    counter-based generator; this choice is fixed so that seeded tests pin
    exact values.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at the start of this stream."""
        key = [self.seed & _MASK64, self.stream & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, *parts: int) -> "SeededRng":
        """Child stream obtained by hashing ``parts`` into the stream id."""
        return SeededRng(self.seed, hash64(self.stream, *parts))


def _mulmod_p61(a: int, idx: np.ndarray) -> np.ndarray:
    """``(a * idx) mod (2^61 - 1)`` for 32-bit indices, without overflow.

    Splits ``a`` into 32-bit halves so every intermediate product fits in
    uint64; the high half is reduced using ``2^61 = 1 (mod P)``.
    """
    a = np.uint64(a)
    idx = idx.astype(np.uint64, copy=False)
    a_lo = a & np.uint64(0xFFFFFFFF)
    a_hi = a >> np.uint64(32)
    lo = a_lo * idx
    hi = a_hi * idx
    hi_red = (hi >> np.uint64(29)) + ((hi & np.uint64((1 << 29) - 1)) << np.uint64(32))
    p = np.uint64(MERSENNE_P61)
    return (lo % p + hi_red % p) % p


@dataclass(frozen=True)
class HashPair:
    """A bucket hash and a sign hash from a 2-wise universal family.

    Buckets come from ``((a*t + b) mod P) mod k`` with ``P = 2^61 - 1``;
    signs map an independent affine hash to +/-1 by parity.  Column indices
    must fit in 32 bits.
    """

    bucket_a: int
    bucket_b: int
    sign_a: int
    sign_b: int
    k: int

    @classmethod
    def draw(cls, rng: np.random.Generator, k: int) -> "HashPair":
        """Draw fresh hash coefficients for a sketch of size ``k``."""
        if k < 1:
            raise ValueError("sketch size k must be >= 1")
        a1, a2 = (int(v) for v in rng.integers(1, MERSENNE_P61, size=2, dtype=np.uint64))
        b1, b2 = (int(v) for v in rng.integers(0, MERSENNE_P61, size=2, dtype=np.uint64))
        return cls(a1, b1, a2, b2, k)

    def bucket(self, idx: np.ndarray) -> np.ndarray:
        """Bucket in ``[0, k)`` for each column index."""
        h = (_mulmod_p61(self.bucket_a, np.asarray(idx)) + np.uint64(self.bucket_b)) % np.uint64(
            MERSENNE_P61
        )
        return (h % np.uint64(self.k)).astype(np.int64)

    def sign(self, idx: np.ndarray) -> np.ndarray:
        """Sign in {+1.0, -1.0} for each column index."""
        s = (_mulmod_p61(self.sign_a, np.asarray(idx)) + np.uint64(self.sign_b)) % np.uint64(
            MERSENNE_P61
        )
        return np.where(s & np.uint64(1), 1.0, -1.0)


@dataclass(frozen=True)
class SketchPair:
    """Sketches of two vectors under one shared randomness draw.

    Attributes
    ----------
    vi, vj : ndarray
        The two k-dimensional sketch vectors.
    norm_i_sq, norm_j_sq : float
        Known squared norms of the original vectors.
    scheme : str
        ``"fh"`` (feature hashing) or ``"rp"`` (Gaussian random projection);
        determines how raw slot sums are normalized into sufficient
        statistics.
    """

    vi: np.ndarray
    vj: np.ndarray
    norm_i_sq: float
    norm_j_sq: float
    scheme: str

    def __post_init__(self):
        if self.vi.shape != self.vj.shape or self.vi.ndim != 1 or len(self.vi) < 1:
            raise ValueError("sketches must be 1-d arrays of equal length >= 1")
        if not (np.isfinite(self.norm_i_sq) and self.norm_i_sq > 0):
            raise ValueError("norm_i_sq must be finite and positive")
        if not (np.isfinite(self.norm_j_sq) and self.norm_j_sq > 0):
            raise ValueError("norm_j_sq must be finite and positive")
        if self.scheme not in (FEATURE_HASH, RANDOM_PROJECTION):
            raise ValueError(f"unknown sketch scheme {self.scheme!r}")

    @property
    def k(self) -> int:
        return len(self.vi)


@dataclass(frozen=True)
class SuffStats:
    """Normalized second moments of a sketch pair.

    ``w1`` and ``w2`` estimate the squared norms of the two original vectors,
    ``w3`` estimates their inner product; all three are unbiased.
    """

    w1: float
    w2: float
    w3: float
    k: int


def feature_hash(x: np.ndarray, k: int, hashes) -> np.ndarray:
    """Feature-hashing sketch: bucket ``s`` collects ``sum_{h(t)=s} sign(t) x_t``.

    ``hashes`` is anything exposing ``bucket(idx)`` and ``sign(idx)``
    (normally a :class:`HashPair`).
    """
    x = np.asarray(x, dtype=float)
    idx = np.arange(len(x))
    return np.bincount(hashes.bucket(idx), weights=hashes.sign(idx) * x, minlength=k)


def random_projection(x: np.ndarray, r_cols: np.ndarray) -> np.ndarray:
    """Project ``x`` onto each column of a p-by-k standard-normal matrix."""
    x = np.asarray(x, dtype=float)
    r_cols = np.asarray(r_cols, dtype=float)
    if r_cols.shape[0] != len(x):
        raise ValueError("projection columns must have the same length as x")
    return x @ r_cols


def suff_stats(pair: SketchPair) -> SuffStats:
    """Sufficient statistics of a sketch pair, normalized per scheme.

    Feature hashing uses the raw slot sums (each slot carries variance
    ``norm^2 / k``, so the sums are already unbiased for the norms); random
    projections divide the sums by ``k`` (each slot is a full-variance
    Gaussian functional).
    """
    w1 = float(pair.vi @ pair.vi)
    w2 = float(pair.vj @ pair.vj)
    w3 = float(pair.vi @ pair.vj)
    if pair.scheme == RANDOM_PROJECTION:
        w1, w2, w3 = w1 / pair.k, w2 / pair.k, w3 / pair.k
    return SuffStats(w1=w1, w2=w2, w3=w3, k=pair.k)


def draw_sketch_pair(
    x1: np.ndarray, x2: np.ndarray, k: int, scheme: str, rng: SeededRng
) -> SketchPair:
    """Draw one fresh sketch of a fixed vector pair.

    Both vectors share the same hash functions (or projection matrix); the
    cross products of the resulting slots are what carries the inner-product
    signal.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    g = rng.generator()
    if scheme == FEATURE_HASH:
        hp = HashPair.draw(g, k)
        idx = np.arange(len(x1))
        buckets = hp.bucket(idx)
        signs = hp.sign(idx)
        vi = np.bincount(buckets, weights=signs * x1, minlength=k)
        vj = np.bincount(buckets, weights=signs * x2, minlength=k)
    elif scheme == RANDOM_PROJECTION:
        r_cols = g.standard_normal((len(x1), k))
        vi = x1 @ r_cols
        vj = x2 @ r_cols
    else:
        raise ValueError(f"unknown sketch scheme {scheme!r}")
    return SketchPair(
        vi=vi,
        vj=vj,
        norm_i_sq=float(x1 @ x1),
        norm_j_sq=float(x2 @ x2),
        scheme=scheme,
    )


def generate_vector_pair(
    d: int, r: float, theta: float, rng: SeededRng
) -> tuple[np.ndarray, np.ndarray]:
    """Construct a vector pair with prescribed norm ratio and angle.

    The second vector has squared norm ``d`` (entries are O(1)); the first
    has squared norm ``r * d`` and sits at angle ``theta`` to the second.
    Built from an orthonormalized pair of random Gaussian directions, so the
    ratio and angle hold to floating-point accuracy.
    """
    if d < 2:
        raise ValueError("dimension d must be >= 2")
    if r <= 0:
        raise ValueError("norm ratio r must be positive")
    if not 0 <= theta <= np.pi:
        raise InvalidAngle(f"theta must lie in [0, pi], got {theta}")
    g = rng.generator()
    g1 = g.standard_normal(d)
    g2 = g.standard_normal(d)
    u = g1 / np.linalg.norm(g1)
    w = g2 - (g2 @ u) * u
    u_perp = w / np.linalg.norm(w)
    x2 = np.sqrt(d) * u
    x1 = np.sqrt(r * d) * (np.cos(theta) * u + np.sin(theta) * u_perp)
    return x1, x2
