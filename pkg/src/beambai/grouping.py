"""Hamming-indexed beam groups.

Beam ``i`` joins group ``B_k`` (``k = 1..log2 N``) when bit ``k-1`` of ``i``
is set, so the pattern of groups in which a user is detected spells out the
binary index of its beam.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int,)) and not isinstance(n, bool) and n >= 1 and n & (n - 1) == 0


def log2_exact(n: int) -> int:
    """Base-2 logarithm of a power of two ``n >= 2``."""
    if not is_power_of_two(n) or n < 2:
        raise ValueError(f"expected a power of two >= 2, got {n!r}")
    return n.bit_length() - 1


@dataclass(frozen=True)
class GroupDesign:
    n_beams: int
    groups: tuple[frozenset[int], ...]

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class DetectionVector:
    verdicts: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "verdicts", tuple(bool(v) for v in self.verdicts))

    def __len__(self):
        return len(self.verdicts)


def build_groups(n_beams: int) -> GroupDesign:
    d = log2_exact(n_beams)
    groups = tuple(
        frozenset(i for i in range(n_beams) if (i >> k) & 1) for k in range(d)
    )
    return GroupDesign(n_beams=n_beams, groups=groups)


def membership(beam_index: int, group_index: int, n_beams: int | None = None) -> bool:
    """True when beam ``beam_index`` belongs to group ``B_{group_index}`` (1-based)."""
    if beam_index < 0 or group_index < 1:
        raise IndexError(f"invalid beam/group index ({beam_index}, {group_index})")
    if n_beams is not None:
        d = log2_exact(n_beams)
        if beam_index >= n_beams or group_index > d:
            raise IndexError(f"({beam_index}, {group_index}) out of range for N={n_beams}")
    return bool((beam_index >> (group_index - 1)) & 1)


def encode(beam_index: int, n_beams: int) -> DetectionVector:
    """Noise-free detection pattern produced by a user sitting in ``beam_index``."""
    d = log2_exact(n_beams)
    if not 0 <= beam_index < n_beams:
        raise IndexError(f"beam {beam_index} out of range for N={n_beams}")
    return DetectionVector(tuple(membership(beam_index, k) for k in range(1, d + 1)))


def decode(detections: DetectionVector | Sequence[bool]) -> int:
    """Beam index implied by per-group verdicts: ``sum_k 2**(k-1) * verdict_k``.

    An all-negative vector decodes to beam 0, the only beam in no group.
    """
    verdicts = detections.verdicts if isinstance(detections, DetectionVector) else detections
    index = 0
    for k, hit in enumerate(verdicts):
        if hit:
            index |= 1 << k
    return index
