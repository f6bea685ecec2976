"""Finitely supported integer multi-indices and their weighted enumeration.

A multi-index l assigns an integer to each position 1, 2, 3, ...; only
finitely many are nonzero.  Its weight is sum(|l_i| * i), which penalizes
both high orders and high positions, so realistic coefficient supports are
tiny and a sparse (position, value) representation is the natural one.
"""

from __future__ import annotations

import itertools


class MultiIndex:
    """Immutable sparse integer vector indexed by positions 1, 2, 3, ...

    Canonical form: entries sorted by strictly increasing position, values
    nonzero.  Equality and hashing are structural, so instances can key the
    coefficient tables of Fourier series.
    """

    __slots__ = ("entries", "weight", "_hash")

    def __init__(self, entries=()):
        acc = {}
        for p, v in entries:
            p = int(p)
            v = int(v)
            if p < 1:
                raise ValueError(f"multi-index positions start at 1, got {p}")
            acc[p] = acc.get(p, 0) + v
        canon = tuple(sorted((p, v) for p, v in acc.items() if v != 0))
        object.__setattr__(self, "entries", canon)
        # weight sum(|l_i| * i): 0 only for the zero index; cached, it drives
        # every norm computation and the canonical sort order
        object.__setattr__(self, "weight", sum(abs(v) * p for p, v in canon))
        object.__setattr__(self, "_hash", hash(canon))

    def __setattr__(self, name, value):
        raise AttributeError("MultiIndex is immutable")

    @classmethod
    def unit(cls, position, value=1):
        return cls(((position, value),))

    @property
    def order(self):
        """Largest |l_i| over the support (0 for the zero index)."""
        return max((abs(v) for _, v in self.entries), default=0)

    @property
    def support(self):
        return tuple(p for p, _ in self.entries)

    @property
    def is_zero(self):
        return not self.entries

    def max_position(self):
        return self.entries[-1][0] if self.entries else 0

    def dense(self, dim):
        """Dense tuple (l_1, ..., l_dim); support must fit."""
        if self.max_position() > dim:
            raise ValueError(f"support exceeds dimension {dim}")
        out = [0] * dim
        for p, v in self.entries:
            out[p - 1] = v
        return tuple(out)

    def dot(self, omega):
        """Inner product (omega, l) = sum(l_i * omega_i)."""
        return sum(v * omega[p - 1] for p, v in self.entries)

    def __neg__(self):
        return MultiIndex(tuple((p, -v) for p, v in self.entries))

    def __add__(self, other):
        return MultiIndex(self.entries + other.entries)

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other):
        return isinstance(other, MultiIndex) and self.entries == other.entries

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        # weight-major order; entry tuples break ties deterministically
        return (self.weight, self.entries) < (other.weight, other.entries)

    def __repr__(self):
        if not self.entries:
            return "MultiIndex(0)"
        body = ", ".join(f"l{p}={v}" for p, v in self.entries)
        return f"MultiIndex({body})"

    def to_json(self):
        return [[p, v] for p, v in self.entries]

    @classmethod
    def from_json(cls, data):
        return cls(tuple((p, v) for p, v in data))


ZERO = MultiIndex()


def enumerate_up_to(max_dim, max_weight, max_order=None):
    """All multi-indices with support in {1..max_dim} and weight <= max_weight.

    Optionally also caps every |l_i| at max_order.  Returned in weight-major,
    then lexicographic (dense vector) order; each index appears exactly once.
    The count is finite: |l_i| <= max_weight / i.
    """
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")
    if max_weight < 0:
        raise ValueError("max_weight must be >= 0")
    caps = []
    for i in range(1, max_dim + 1):
        c = max_weight // i
        if max_order is not None:
            c = min(c, max_order)
        caps.append(c)
    found = []
    for combo in itertools.product(*[range(-c, c + 1) for c in caps]):
        w = sum(abs(v) * i for i, v in enumerate(combo, 1))
        if w <= max_weight:
            found.append((w, combo))
    found.sort()
    return [MultiIndex((i, v) for i, v in enumerate(combo, 1) if v != 0)
            for _, combo in found]
