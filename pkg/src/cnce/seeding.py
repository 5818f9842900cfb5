"""Deterministic seed derivation for experiment runs.

Every random draw in the package flows from a single master seed through
``stable_hash``, a SplitMix64-style mix over a canonical byte encoding of the
input tuple.  The encoding is fixed and platform independent:

* ``int``    -> ``b"i"`` + 8-byte little-endian value (taken modulo 2**64)
* ``str``    -> ``b"s"`` + 4-byte little-endian length + UTF-8 bytes

The concatenated encoding is zero-padded to a multiple of 8 bytes and folded
8 bytes at a time (little-endian words) into the SplitMix64 finaliser:

    state <- splitmix64(state XOR word),  state starts at 0

``splitmix64`` is the standard finaliser with constants 0x9E3779B97F4A7C15,
0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.  The resulting 64-bit integer
seeds ``numpy.random.default_rng`` directly.
"""

from __future__ import annotations

import struct

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _encode(part) -> bytes:
    if isinstance(part, bool):  # bool is an int subclass; reject to avoid ambiguity
        raise TypeError("bool parts are not hashable inputs")
    if isinstance(part, (int, np.integer)):
        return b"i" + struct.pack("<Q", int(part) & _MASK)
    if isinstance(part, str):
        raw = part.encode("utf-8")
        return b"s" + struct.pack("<I", len(raw)) + raw
    raise TypeError(f"unsupported part type {type(part).__name__!r}")


def stable_hash(*parts) -> int:
    """Mix ints and strings into a 64-bit seed, independent of platform."""
    buf = b"".join(_encode(p) for p in parts)
    if len(buf) % 8:
        buf += b"\x00" * (8 - len(buf) % 8)
    state = 0
    for i in range(0, len(buf), 8):
        (word,) = struct.unpack_from("<Q", buf, i)
        state = _splitmix64(state ^ word)
    return state


def rng_from(*parts) -> np.random.Generator:
    """A PCG64 generator keyed by the canonical hash of ``parts``."""
    return np.random.default_rng(stable_hash(*parts))
