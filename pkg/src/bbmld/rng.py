"""Counter-based keyed random streams.

Every random number is a pure function of ``(key, tag, counter)``, where a
particle's key is derived from its parent's key and its birth order.  Results
therefore do not depend on traversal order, worker count or scheduling.

The scalar functions use Python integers; the ``v*`` variants are vectorised
over numpy ``uint64`` arrays and produce identical bits.
"""
from __future__ import annotations

import math

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
C1 = 0xBF58476D1CE4E5B9
C2 = 0x94D049BB133111EB
C_TAG = 0xD6E8FEB86659FD93
C_CHILD = 0xA0761D6478BD642F
TWO_M53 = 2.0**-53
TWO_M54 = 2.0**-54
TWO_PI = 2.0 * math.pi

# stream tags (low 4 bits); a piece index may be packed above them
TAG_LIFE = 1
TAG_STEP = 2
TAG_MIN = 3
TAG_ARGMIN = 4
TAG_HIT = 5
TAG_BRIDGE = 6
TAG_SPINE = 7
TAG_PICK = 8
TAG_IG = 9
TAG_PAIR = 10
TAG_GRID = 11
TAG_BES = 12

# root-key domains keep independent experiments on separate streams
DOMAIN_BBM = 0
DOMAIN_SPINE_FIXED = 1
DOMAIN_SPINE_FPT = 2
DOMAIN_MISC = 3


def mix(z: int) -> int:
    z = (z + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * C1) & MASK
    z = ((z ^ (z >> 27)) * C2) & MASK
    return z ^ (z >> 31)


def root_key(seed: int, replica: int, domain: int = DOMAIN_BBM) -> int:
    k = mix(int(seed) & MASK)
    k = mix(k ^ ((int(domain) * C_TAG) & MASK))
    return mix((k + (int(replica) & MASK)) & MASK)


def child_key(key: int, j: int) -> int:
    return mix(key ^ (((j + 1) * C_CHILD) & MASK))


def subtag(tag: int, piece: int = 0) -> int:
    return tag | (piece << 4)


def stream(key: int, tag: int, k: int) -> int:
    return mix((mix(key ^ ((tag * C_TAG) & MASK)) + k) & MASK)


def uniform(key: int, tag: int, k: int = 0) -> float:
    return (stream(key, tag, k) >> 11) * TWO_M53 + TWO_M54


def normal(key: int, tag: int, k: int = 0) -> float:
    u1 = uniform(key, tag, 2 * k)
    u2 = uniform(key, tag, 2 * k + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def exponential(key: int, tag: int, k: int = 0) -> float:
    return -math.log(uniform(key, tag, k))


class KeyedStream:
    """Sequential draws from one keyed stream (convenience for scalar code)."""

    def __init__(self, key: int, tag: int):
        self.key = key
        self.tag = tag
        self.k = 0

    def uniform(self) -> float:
        u = uniform(self.key, self.tag, self.k)
        self.k += 1
        return u

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)

    def exponential(self) -> float:
        return -math.log(self.uniform())


# ---------------------------------------------------------------- vectorised

_U = np.uint64


def vmix(z: np.ndarray) -> np.ndarray:
    z = z + _U(GOLDEN)
    z = (z ^ (z >> _U(30))) * _U(C1)
    z = (z ^ (z >> _U(27))) * _U(C2)
    return z ^ (z >> _U(31))


def vchild_key(keys: np.ndarray, j: int) -> np.ndarray:
    return vmix(keys ^ _U(((j + 1) * C_CHILD) & MASK))


def vstream(keys: np.ndarray, tag: int, k: int) -> np.ndarray:
    return vmix(vmix(keys ^ _U((tag * C_TAG) & MASK)) + _U(k))


def vuniform(keys: np.ndarray, tag: int, k: int = 0) -> np.ndarray:
    return (vstream(keys, tag, k) >> _U(11)).astype(np.float64) * TWO_M53 + TWO_M54


def vnormal(keys: np.ndarray, tag: int, k: int = 0) -> np.ndarray:
    u1 = vuniform(keys, tag, 2 * k)
    u2 = vuniform(keys, tag, 2 * k + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)
