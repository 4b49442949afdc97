"""Causal attention patterns: construction, reachability analysis, exact path
counting, and per-layer memory budgets.

Cells are 1-indexed throughout the public API. A pattern is described by a
:class:`PatternSpec`; :func:`build_mask` turns it into a concrete boolean
:class:`MaskMatrix` for a given sequence length.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

FULL_CAUSAL = "full"
LOGSPARSE = "logsparse"
LOGSPARSE_LOCAL = "logsparse_local"
LOGSPARSE_RESTART = "logsparse_restart"
LOGSPARSE_RESTART_LOCAL = "logsparse_restart_local"

KINDS = (
    FULL_CAUSAL,
    LOGSPARSE,
    LOGSPARSE_LOCAL,
    LOGSPARSE_RESTART,
    LOGSPARSE_RESTART_LOCAL,
)


@dataclass(frozen=True)
class PatternSpec:
    """Sparse causal attention pattern.

    kind           one of :data:`KINDS`
    local_window   dense left-window size in cells (``*_local`` kinds)
    subseq_len     restart subsequence length in cells (``*_restart`` kinds)
    restart_cross  restart queries also attend each earlier subsequence with
                   the pattern anchored at that subsequence's final cell;
                   False keeps every edge inside its own subsequence
    """

    kind: str = LOGSPARSE
    local_window: int | None = None
    subseq_len: int | None = None
    restart_cross: bool = True

    def validate(self, length: int) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind in (LOGSPARSE_LOCAL, LOGSPARSE_RESTART_LOCAL):
            if self.local_window is None:
                raise ValueError(f"{self.kind} requires local_window")
            if self.local_window < 1:
                raise ValueError("local_window must be >= 1")
        if self.kind in (LOGSPARSE_RESTART, LOGSPARSE_RESTART_LOCAL):
            if self.subseq_len is None:
                raise ValueError(f"{self.kind} requires subseq_len")
            if self.subseq_len < 2:
                raise ValueError("subseq_len must be >= 2")
            if self.subseq_len > length:
                raise ValueError(
                    f"subseq_len {self.subseq_len} exceeds sequence length {length}"
                )


def _logsparse_cells(l: int) -> set[int]:
    """Cells attended by cell l: itself plus predecessors at offsets 2^0..2^floor(log2 l).

    Offsets that land at or below cell 0 are dropped.
    """
    cells = {l}
    step = 1
    while step <= l:
        if l - step >= 1:
            cells.add(l - step)
        step <<= 1
    return cells


def _local_cells(l: int, window: int) -> set[int]:
    """Dense left window of `window` cells ending at l, then exponential
    offsets resuming from the window edge.

    window=1 recovers the plain log-sparse set.
    """
    lo = max(1, l - window + 1)
    cells = set(range(lo, l + 1))
    edge = l - window + 1
    if edge >= 2:
        step = 1
        while edge - step >= 1:
            cells.add(edge - step)
            step <<= 1
    return cells


def index_set(l: int, length: int, spec: PatternSpec) -> list[int]:
    """Cells that cell l may attend under `spec`, sorted ascending.

    This is the raw pattern row, before any densification applied by
    :func:`build_mask`.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if not 1 <= l <= length:
        raise ValueError(f"cell index {l} out of range 1..{length}")
    spec.validate(length)

    if spec.kind == FULL_CAUSAL:
        return list(range(1, l + 1))
    if spec.kind == LOGSPARSE:
        return sorted(_logsparse_cells(l))
    if spec.kind == LOGSPARSE_LOCAL:
        return sorted(_local_cells(l, spec.local_window))

    if spec.kind == LOGSPARSE_RESTART:
        per_cell = _logsparse_cells
    else:
        per_cell = lambda p: _local_cells(p, spec.local_window)

    s_len = spec.subseq_len
    sub = (l - 1) // s_len  # 0-based subsequence holding l
    base = sub * s_len
    cells = {base + c for c in per_cell(l - base)}
    if spec.restart_cross:
        # earlier subsequences: same pattern anchored at their final cell
        anchor = per_cell(s_len)
        for s2 in range(sub):
            cells |= {s2 * s_len + c for c in anchor}
    return sorted(cells)


class MaskMatrix:
    """Boolean causal attention table.

    ``allowed[l-1, j-1]`` is True iff cell l may attend cell j. The array is
    frozen after construction and safe to share across threads.
    """

    def __init__(self, allowed: np.ndarray):
        arr = np.ascontiguousarray(allowed, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"mask must be square, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("mask must have length >= 1")
        if np.triu(arr, k=1).any():
            raise ValueError("mask violates causality: attends a future cell")
        if not arr.diagonal().all():
            raise ValueError("mask must allow self-attention on every cell")
        arr.setflags(write=False)
        self.allowed = arr
        self._rows: list[np.ndarray] | None = None

    @property
    def length(self) -> int:
        return self.allowed.shape[0]

    def allows(self, l: int, j: int) -> bool:
        return bool(self.allowed[l - 1, j - 1])

    def row(self, l: int) -> list[int]:
        """Attended cells of cell l, 1-indexed, ascending."""
        return [int(j) + 1 for j in np.flatnonzero(self.allowed[l - 1])]

    def row_sizes(self) -> np.ndarray:
        return self.allowed.sum(axis=1)

    def _row_indices(self) -> list[np.ndarray]:
        # 0-indexed attended columns per row, cached for the path-count DP
        if self._rows is None:
            self._rows = [np.flatnonzero(r) for r in self.allowed]
        return self._rows

    def _row_bits(self) -> list[int]:
        """Each row as an int bitmask (bit j-1 set iff cell j attended)."""
        return [
            int.from_bytes(np.packbits(r, bitorder="little").tobytes(), "little")
            for r in self.allowed
        ]


def build_mask(spec: PatternSpec, length: int, densify: bool = True) -> MaskMatrix:
    """Build the L x L mask for `spec`.

    With `densify` (the default), every cell l with l <= row_max may attend
    all of its past: those rows fit inside the widest row's storage anyway,
    so the extra edges are free.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    spec.validate(length)
    allowed = np.zeros((length, length), dtype=bool)
    for l in range(1, length + 1):
        cols = np.asarray(index_set(l, length, spec), dtype=int) - 1
        allowed[l - 1, cols] = True
    if densify:
        row_max = int(allowed.sum(axis=1).max())
        for l in range(1, min(row_max, length) + 1):
            allowed[l - 1, :l] = True
    return MaskMatrix(allowed)


@dataclass(frozen=True)
class ReachabilityReport:
    """Multi-layer information-flow coverage of a mask."""

    layers_tested: int
    fully_covered: bool
    uncovered_pairs: list[tuple[int, int]]  # (j, l) with j <= l, 1-indexed


def _reach_bits(mask: MaskMatrix, layers: int) -> list[int]:
    """Bitmask per cell l of all cells whose information reaches l within
    `layers` stacked attention layers (self-loops included)."""
    adj = mask._row_bits()
    reach = list(adj)
    for _ in range(layers - 1):
        rows = mask._row_indices()
        reach = [_or_rows(reach, rows[l]) for l in range(mask.length)]
    return reach


def _or_rows(reach: list[int], cols: np.ndarray) -> int:
    acc = 0
    for j in cols:
        acc |= reach[j]
    return acc


def coverage_after(mask: MaskMatrix, layers: int) -> ReachabilityReport:
    """Which (j, l) pairs are connected after `layers` layers."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    reach = _reach_bits(mask, layers)
    uncovered = []
    for l in range(1, mask.length + 1):
        missing = ((1 << l) - 1) & ~reach[l - 1]
        while missing:
            low = missing & -missing
            uncovered.append((low.bit_length(), l))
            missing ^= low
    return ReachabilityReport(layers, not uncovered, uncovered)


def min_layers_full_coverage(mask: MaskMatrix) -> int | None:
    """Smallest layer count after which every cell receives information from
    all of its past, or None if the pattern can never cover (the reachability
    iteration hits a fixed point first)."""
    length = mask.length
    full = [(1 << l) - 1 for l in range(1, length + 1)]
    rows = mask._row_indices()
    reach = mask._row_bits()
    k = 1
    while True:
        if reach == full:
            return k
        nxt = [_or_rows(reach, rows[l]) for l in range(length)]
        if nxt == reach:
            return None
        reach = nxt
        k += 1


def logsparse_coverage_bound(length: int) -> int:
    """Layer count guaranteeing full coverage for the log-sparse pattern."""
    return int(math.floor(math.log2(length))) + 1 if length > 1 else 1


def count_paths_from(mask: MaskMatrix, j: int, layers: int) -> list[int]:
    """Exact number of `layers`-step directed walks from cell j to every cell,
    where each step follows an allowed edge and self-loops count as steps.

    Returns a list indexed by l-1. Counts are exact Python integers.
    """
    if not 1 <= j <= mask.length:
        raise ValueError(f"cell index {j} out of range 1..{mask.length}")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    rows = mask._row_indices()
    counts = [0] * mask.length
    counts[j - 1] = 1
    for _ in range(layers):
        counts = [sum(counts[a] for a in rows[l]) for l in range(mask.length)]
    return counts


def count_paths(
    mask: MaskMatrix, j: int, l: int, layers: int, bit_width: int | None = None
) -> int:
    """Exact walk count from cell j to cell l in exactly `layers` steps.

    With `bit_width` set, raises OverflowError when the count does not fit
    in that many bits; otherwise arbitrary precision.
    """
    if not 1 <= j <= l <= mask.length:
        raise ValueError(f"need 1 <= j <= l <= {mask.length}, got j={j}, l={l}")
    n = count_paths_from(mask, j, layers)[l - 1]
    if bit_width is not None and n.bit_length() > bit_width:
        raise OverflowError(
            f"path count needs {n.bit_length()} bits, exceeds requested {bit_width}"
        )
    return n


@dataclass(frozen=True)
class MemoryBudget:
    """Attention storage accounting for one layer of a mask."""

    nnz: int
    dense_cells: int
    row_max: int
    analytic_bound: int
    equivalent_full_length: int


def attended_budget(mask: MaskMatrix) -> MemoryBudget:
    """Memory budget of one attention layer under `mask`.

    `equivalent_full_length` is the dense sequence length whose L^2 cost
    matches `analytic_bound`, rounded to the nearest integer (768*112 pairs
    with 293, 576*112 with 254).
    """
    sizes = mask.row_sizes()
    row_max = int(sizes.max())
    length = mask.length
    bound = length * row_max
    return MemoryBudget(
        nnz=int(sizes.sum()),
        dense_cells=length * length,
        row_max=row_max,
        analytic_bound=bound,
        equivalent_full_length=int(round(math.sqrt(bound))),
    )


def budget_to_json(budget: MemoryBudget) -> str:
    return json.dumps(asdict(budget), indent=2, sort_keys=True)


def mask_to_dense_csv(mask: MaskMatrix, path: str) -> None:
    """Dense 0/1 CSV, one row per cell."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in mask.allowed:
            fh.write(",".join("1" if v else "0" for v in row))
            fh.write("\n")


def mask_to_coords(mask: MaskMatrix, path: str) -> None:
    """Coordinate list, one allowed "l,j" pair per line, 1-indexed."""
    with open(path, "w", encoding="utf-8") as fh:
        for l in range(1, mask.length + 1):
            for j in mask.row(l):
                fh.write(f"{l},{j}\n")
