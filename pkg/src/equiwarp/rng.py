"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, frame, counter)``, so results
do not depend on iteration order, batching or worker count.  The mixing
function is the SplitMix64 finalizer applied once per absorbed key word.
"""

import numpy as np
from scipy.special import ndtri

__all__ = ["STREAM_WARP", "STREAM_MIX", "STREAM_CALIBRATION",
           "STREAM_INDEPENDENT", "mix64",
           "counter_uniform", "counter_normal"]

# stream identifiers; one per consumer so streams never overlap
STREAM_WARP = 1
STREAM_MIX = 2
STREAM_CALIBRATION = 3
STREAM_INDEPENDENT = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_OFFSET = np.uint64(0x632BE59BD9B4E019)
_S30, _S27, _S31, _S11 = (np.uint64(n) for n in (30, 27, 31, 11))
_INV53 = 2.0 ** -53


def _u64(a):
    a = np.asarray(a)
    if a.dtype.kind == "i" and (a < 0).any():
        raise ValueError("seeds and counters must be non-negative")
    return a.astype(np.uint64)


def mix64(z):
    """SplitMix64 finalizer on a uint64 array."""
    z = np.array(z, dtype=np.uint64, copy=True, ndmin=1)
    with np.errstate(over="ignore"):
        z ^= z >> _S30
        z *= _M1
        z ^= z >> _S27
        z *= _M2
        z ^= z >> _S31
    return z


def _absorb(h, v):
    with np.errstate(over="ignore"):
        return mix64(h ^ (v * _GOLDEN + _OFFSET))


def _hash(seed, stream, frame, counter):
    seed, frame, counter = _u64(seed), _u64(frame), _u64(counter)
    h = mix64(seed + _OFFSET)
    h = _absorb(h, np.uint64(stream))
    h = _absorb(h, frame)
    return _absorb(h, counter)


def counter_uniform(seed, stream, frame, counter):
    """Uniform draws on the open interval (0, 1); arguments broadcast."""
    h = _hash(seed, stream, frame, counter)
    return ((h >> _S11).astype(np.float64) + 0.5) * _INV53


def counter_normal(seed, stream, frame, counter):
    """Standard normal draws by inverse-CDF of :func:`counter_uniform`."""
    return ndtri(counter_uniform(seed, stream, frame, counter))
