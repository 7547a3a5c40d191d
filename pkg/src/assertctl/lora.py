"""Low-rank adapter arithmetic: ``delta = scaling * B @ A`` on dense float64 matrices.

``A`` is ``r x k`` and ``B`` is ``d x r``, so the update matches a ``d x k``
weight matrix ``W``. There is no training here, only the reparameterization
and the bookkeeping around it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import RankTooLarge, ShapeMismatch


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    A: np.ndarray
    B: np.ndarray
    scaling: float = 1.0

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if B.shape[1] != A.shape[0]:
            raise ShapeMismatch(f"B is {B.shape}, A is {A.shape}: inner dimensions differ")
        r = A.shape[0]
        if r > min(B.shape[0], A.shape[1]):
            raise RankTooLarge(f"rank {r} exceeds min(d={B.shape[0]}, k={A.shape[1]})")
        if not self.scaling > 0:
            raise ValueError("scaling must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "scaling", float(self.scaling))

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """Shape ``(d, k)`` of the weight matrix this adapter updates."""
        return self.B.shape[0], self.A.shape[1]


def _check_rank(d: int, k: int, r: int) -> None:
    if min(d, k, r) < 1:
        raise ValueError("d, k and r must be positive")
    if r > min(d, k):
        raise RankTooLarge(f"rank {r} exceeds min(d={d}, k={k})")


def init_adapter(d: int, k: int, r: int, seed: int = 0, scaling: float = 1.0) -> LoraAdapter:
    """Fresh adapter: ``B`` zero, ``A`` standard normal from ``seed``."""
    _check_rank(d, k, r)
    rng = np.random.default_rng(seed)
    return LoraAdapter(rng.standard_normal((r, k)), np.zeros((d, r)), scaling)


def delta(adapter: LoraAdapter) -> np.ndarray:
    return adapter.scaling * (adapter.B @ adapter.A)


def merge(W, adapter: LoraAdapter) -> np.ndarray:
    W = as_matrix(W, "W")
    if W.shape != adapter.shape:
        raise ShapeMismatch(f"W is {W.shape}, adapter updates {adapter.shape}")
    return W + delta(adapter)


def forward(x, W, adapter: LoraAdapter) -> np.ndarray:
    """``W @ x + scaling * B @ (A @ x)`` without forming the merged matrix."""
    W = as_matrix(W, "W")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != W.shape[1]:
        raise ShapeMismatch(f"x has shape {x.shape}, W is {W.shape}")
    if W.shape != adapter.shape:
        raise ShapeMismatch(f"W is {W.shape}, adapter updates {adapter.shape}")
    base = W @ x
    if not adapter.B.any():
        # a zero B contributes nothing; skip the +0.0 so the result is W @ x bit for bit
        return base
    return base + adapter.scaling * (adapter.B @ (adapter.A @ x))


def param_savings(d: int, k: int, r: int) -> tuple[int, int, float]:
    """(adapter parameter count, full matrix parameter count, ratio)."""
    _check_rank(d, k, r)
    adapter_params = r * (d + k)
    full_params = d * k
    return adapter_params, full_params, adapter_params / full_params


# -- text serialization -------------------------------------------------------


def save_adapter(adapter: LoraAdapter, path: Union[str, Path]) -> None:
    """Header ``lora d k r scaling`` then rows of A, then rows of B."""
    d, k = adapter.shape
    lines = [f"lora {d} {k} {adapter.rank} {adapter.scaling!r}"]
    for row in adapter.A:
        lines.append(" ".join(repr(float(v)) for v in row))
    for row in adapter.B:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_adapter(path: Union[str, Path]) -> LoraAdapter:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty adapter file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "lora":
        raise ValueError(f"bad adapter header: {lines[0]!r}")
    d, k, r = (int(v) for v in head[1:4])
    scaling = float(head[4])
    if len(lines) != 1 + r + d:
        raise ValueError(f"expected {r + d} matrix rows, found {len(lines) - 1}")
    rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    A, B = rows[:r], rows[r:]
    if any(len(row) != k for row in A) or any(len(row) != r for row in B):
        raise ShapeMismatch("adapter rows do not match header dimensions")
    return LoraAdapter(np.array(A), np.array(B), scaling)
