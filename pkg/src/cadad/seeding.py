"""Deterministic seed derivation.

A single master seed fans out into independent component streams keyed by
string labels (splitmix64 of master XOR blake2b(label)). Streams depend only
on their label, so adding a new component never perturbs existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, label: str) -> int:
    """64-bit seed for the component named `label` under `master`."""
    h = int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")
    return splitmix64((int(master) & _MASK64) ^ h)


def rng_for(master: int, label: str) -> np.random.Generator:
    """Fresh generator for one component stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, label)))
