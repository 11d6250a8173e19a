"""Structured gain masks, mask-conforming policies, and the gain file format."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import StateLayout

GAIN_FORMAT = "gfmrisk-gain"
GAIN_VERSION = 1


class NonConformingPolicyError(ValueError):
    """A gain has a nonzero entry outside its mask."""


@dataclass(frozen=True)
class GainMask:
    """Block-sparsity pattern of a decentralized gain.

    Rows are GFM inputs, columns are states.  Block ``(j, l)`` is all-true
    when GFM ``j`` and node ``l`` share a communication link.
    """

    matrix: np.ndarray
    layout: StateLayout
    edges: tuple[tuple[int, int], ...]

    @property
    def nnz(self) -> int:
        return int(self.matrix.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @classmethod
    def full(cls, layout: StateLayout) -> "GainMask":
        n = layout.n_node
        edges = tuple((a, b) for a in range(n) for b in range(a, n))
        return build_mask(edges, layout.n_sg, layout.n_gfm)

    @classmethod
    def dense(cls, shape) -> "GainMask":
        """All-true mask for a gain that has no SG/GFM block structure."""
        return cls(np.ones(shape, dtype=bool), StateLayout(0, 0), ())


def build_mask(edges, n_sg: int, n_gfm: int) -> GainMask:
    layout = StateLayout(n_sg, n_gfm)
    n = layout.n_node
    mat = np.zeros((layout.n_input, layout.n_state), dtype=bool)
    pairs = set()
    for e in edges:
        a, b = (int(v) for v in e)
        for v in (a, b):
            if not 0 <= v < n:
                raise ValueError(f"unknown vertex id {v} (valid ids are 0..{n - 1})")
        pairs.add((min(a, b), max(a, b)))
    for j in range(n_gfm):
        pairs.add((n_sg + j, n_sg + j))

    def connect(gfm_node, other):
        rows = layout.input_indices(gfm_node - n_sg)
        cols = layout.node_state_indices(other)
        mat[np.ix_(rows, cols)] = True

    for a, b in pairs:
        if a >= n_sg:
            connect(a, b)
        if b >= n_sg:
            connect(b, a)
    return GainMask(mat, layout, tuple(sorted(pairs)))


@dataclass(frozen=True)
class Policy:
    """Linear state feedback ``u = -K x`` restricted to a mask."""

    K: np.ndarray
    mask: GainMask

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != self.mask.shape:
            raise ValueError(f"gain shape {K.shape} does not match mask shape {self.mask.shape}")
        if np.any(K[~self.mask.matrix] != 0.0):
            raise NonConformingPolicyError("gain has nonzero entries outside its mask")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    def with_gain(self, K) -> "Policy":
        return Policy(K, self.mask)


def project_to_mask(K_dense, mask: GainMask) -> Policy:
    K = np.asarray(K_dense, dtype=float)
    if K.shape != mask.shape:
        raise ValueError(f"gain shape {K.shape} does not match mask shape {mask.shape}")
    return Policy(np.where(mask.matrix, K, 0.0), mask)


def save_gain(policy: Policy, path) -> None:
    """Write a gain as JSON: dimensions, mask edge list, row-major entries."""
    L = policy.mask.layout
    doc = {
        "format": GAIN_FORMAT,
        "version": GAIN_VERSION,
        "n_sg": L.n_sg,
        "n_gfm": L.n_gfm,
        "rows": int(policy.K.shape[0]),
        "cols": int(policy.K.shape[1]),
        "edges": [list(e) for e in policy.mask.edges],
        "entries": [float(v) for v in policy.K.ravel()],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_gain(path) -> Policy:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != GAIN_FORMAT:
        raise ValueError(f"{path}: not a gain file")
    rows, cols = doc["rows"], doc["cols"]
    K = np.array(doc["entries"], dtype=float)
    if K.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} entries, found {K.size}")
    if doc["n_sg"] == 0 and doc["n_gfm"] == 0:
        mask = GainMask.dense((rows, cols))
    else:
        mask = build_mask(doc["edges"], doc["n_sg"], doc["n_gfm"])
    return Policy(K.reshape(rows, cols), mask)
