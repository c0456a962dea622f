"""Deterministic seed derivation.

Per-rollout seeds are derived with a splitmix64-style mixer so the exact
sequence can be reproduced from (base seed, rollout index) in any language.
The formula is frozen in docs/formats.md; do not change it without bumping
the report format version.
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 finalization round of a 64-bit value."""
    x &= MASK64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, index: int) -> int:
    """Mix (base, index) into an independent 64-bit stream seed.

    Equivalent to seeding splitmix64 with `base` and taking output `index`
    (0-based), i.e. splitmix64(base + (index + 1) * golden_gamma).
    """
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    return splitmix64((base + (index + 1) * GOLDEN) & MASK64)


def rollout_seed(protocol_seed: int, rollout_index: int) -> int:
    """Seed for rollout `rollout_index` of an evaluation run.

    Intentionally independent of the agent's training seed: every arm of a
    comparison evaluates on the same initial conditions.
    """
    return derive_seed(protocol_seed, rollout_index)
