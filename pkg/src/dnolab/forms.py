"""Sign bookkeeping for ordered multi-indices of (0,q)-forms.

A component u_J of a (0,q)-form is labelled by a strictly increasing tuple J.
Wedging or contracting frame forms reorders indices, and every reordering
costs the parity of the sorting permutation.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple


class FormIndexError(ValueError):
    """Raised for out-of-range entries, missing members or length mismatches."""


@dataclass(frozen=True, order=True)
class MultiIndex:
    entries: Tuple[int, ...]

    def __post_init__(self):
        ent = tuple(int(e) for e in self.entries)
        if any(a >= b for a, b in zip(ent, ent[1:])):
            raise FormIndexError(f"entries must be strictly increasing: {ent}")
        if any(e < 1 for e in ent):
            raise FormIndexError(f"entries must be positive: {ent}")
        object.__setattr__(self, "entries", ent)

    @property
    def q(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[int]:
        return iter(self.entries)

    def __contains__(self, k) -> bool:
        return k in self.entries

    def check_dimension(self, n: int) -> "MultiIndex":
        if any(e > n for e in self.entries):
            raise FormIndexError(f"{self.entries} has entries outside 1..{n}")
        return self

    def label(self) -> str:
        return "".join(str(e) for e in self.entries) or "0"

    def __repr__(self) -> str:
        return f"MultiIndex{self.entries}"


@dataclass(frozen=True)
class SignedIndex:
    index: Optional[MultiIndex]
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise FormIndexError(f"sign must be -1, 0 or 1, got {self.sign}")
        if (self.sign == 0) != (self.index is None):
            raise FormIndexError("sign 0 goes with a missing index and vice versa")


def as_index(J) -> MultiIndex:
    return J if isinstance(J, MultiIndex) else MultiIndex(tuple(J))


def _check_range(seq: Sequence[int], n: Optional[int]) -> None:
    for e in seq:
        if e < 1 or (n is not None and e > n):
            raise FormIndexError(f"entry {e} outside 1..{n if n is not None else 'n'}")


def permutation_parity(seq: Sequence[int]) -> int:
    """Parity of the permutation sorting ``seq`` (entries assumed distinct).

    Counted by bubble sort, which is plenty for the lengths met here.
    """
    work = list(seq)
    swaps = 0
    for i in range(len(work)):
        for j in range(len(work) - 1 - i):
            if work[j] > work[j + 1]:
                work[j], work[j + 1] = work[j + 1], work[j]
                swaps += 1
    return -1 if swaps % 2 else 1


def normalize_index(seq: Sequence[int], n: Optional[int] = None) -> SignedIndex:
    seq = tuple(int(e) for e in seq)
    _check_range(seq, n)
    if len(set(seq)) != len(seq):
        return SignedIndex(None, 0)
    return SignedIndex(MultiIndex(tuple(sorted(seq))), permutation_parity(seq))


def remove_index(J, k: int) -> MultiIndex:
    J = as_index(J)
    if k not in J:
        raise FormIndexError(f"{k} is not in {J.entries}")
    return MultiIndex(tuple(e for e in J.entries if e != k))


def insert_index(K, l: int, n: Optional[int] = None) -> SignedIndex:
    """K with l inserted in place; the sign is that of moving l from the front."""
    K = as_index(K)
    return normalize_index((l,) + K.entries, n)


def contraction_sign(A: Sequence[int], B) -> int:
    B = as_index(B)
    A = tuple(A)
    if len(A) != len(B):
        raise FormIndexError(f"length mismatch: {A} vs {B.entries}")
    if sorted(A) != list(B.entries):
        return 0
    return permutation_parity(A)


def epsilon(prefix: Iterable[int], K, target) -> int:
    """The sign of the sequence prefix+K against the ordered index ``target``."""
    return contraction_sign(tuple(prefix) + as_index(K).entries, target)


def indices_of_degree(n: int, q: int) -> List[MultiIndex]:
    return [MultiIndex(c) for c in combinations(range(1, n + 1), q)]


def check_epsilon_identity(n: int, q: int) -> List[tuple]:
    """Exhaustive search for violations of the two-epsilon exchange identity.

    For every ordered J of length q, k in J and l outside J the product
    eps^{lJ}_{J+l} eps^{k,J-k+l}_{J+l} must equal -eps^{l,J-k}_{J-k+l} eps^{k,J-k}_J.
    Returns the offending (J, k, l) triples with both sides.
    """
    if not (1 <= q <= n <= 8):
        raise FormIndexError(f"need 1 <= q <= n <= 8, got n={n}, q={q}")
    bad = []
    for J in indices_of_degree(n, q):
        for k in J:
            Jk = remove_index(J, k)
            for l in range(1, n + 1):
                if l in J:
                    continue
                Jl = insert_index(J, l).index
                Jkl = insert_index(Jk, l).index
                lhs = epsilon((l,), J, Jl) * epsilon((k,), Jkl, Jl)
                rhs = -epsilon((l,), Jk, Jkl) * epsilon((k,), Jk, J)
                if lhs != rhs:
                    bad.append((J.entries, k, l, lhs, rhs))
    return bad


def count_epsilon_cases(n: int, q: int) -> int:
    return sum(q * (n - q) for _ in indices_of_degree(n, q))
