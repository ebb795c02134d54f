"""Deterministic seed derivation so every module gets an independent RNG stream."""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(master_seed: int, label: str) -> int:
    """Derive a per-role seed from a master seed and a role label.

    The derivation is splitmix64 applied to master XOR fnv1a(label), so any
    (master, label) pair maps to a stable 63-bit seed regardless of the order
    in which roles are initialised.
    """
    return _splitmix64((int(master_seed) & _MASK) ^ _fnv1a(label)) >> 1
