"""Diagonal standard form, equi-blocks and degeneracy classification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .system import (
    DIAG_COND_MAX,
    DIAG_RESIDUAL_TOL,
    RANK_TOL,
    AssumptionError,
    LinearSystem,
    numerical_rank,
)

TIE_TOL = 1e-9

UNSTABLE = "unstable"
CRITICALLY_STABLE = "critically_stable"
STABLE = "stable"


@dataclass(frozen=True)
class SpectralForm:
    """``A = V diag(eigenvalues) V_inv`` with eigenvalues sorted by
    descending magnitude (ties: ascending argument in ``[0, 2pi)``), and
    ``C_tilde = C V`` in the same column order."""

    eigenvalues: np.ndarray
    V: np.ndarray
    V_inv: np.ndarray
    C_tilde: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.V @ np.diag(self.eigenvalues) @ self.V_inv


@dataclass(frozen=True)
class EquiBlock:
    indices: tuple[int, ...]
    magnitude: float
    C_block: np.ndarray
    rank: int
    degenerate: bool
    stability_class: str

    @property
    def dim(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class DegeneracyReport:
    blocks: tuple[EquiBlock, ...]
    max_equiblock_dim: int
    system_degenerate: bool
    unstable_part_degenerate: bool
    # (i, j, relative gap) for neighbouring eigenvalues whose grouping was a
    # close call: the gap lies within a factor 10 of the tie tolerance
    near_ties: tuple[tuple[int, int, float], ...] = ()

    def relevant_blocks(self) -> tuple[EquiBlock, ...]:
        """Unstable and critically stable blocks."""
        return tuple(b for b in self.blocks if b.stability_class != STABLE)


def _argument(z: complex) -> float:
    a = math.atan2(z.imag, z.real) % (2 * math.pi)
    # -0.0 imaginary parts would otherwise land just below 2pi
    if a > 2 * math.pi - 1e-12:
        a = 0.0
    return a


def _magnitude_gap(a: float, b: float) -> float:
    return abs(a - b) / max(a, b, 1.0)


def sort_spectrum(eigenvalues: np.ndarray, rel_tol: float = TIE_TOL) -> np.ndarray:
    """Permutation putting eigenvalues in the canonical order."""
    mags = np.abs(eigenvalues)
    order = list(np.argsort(-mags, kind="stable"))
    groups: list[list[int]] = []
    for idx in order:
        if groups and _magnitude_gap(mags[groups[-1][-1]], mags[idx]) <= rel_tol:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    perm = []
    for g in groups:
        perm.extend(sorted(g, key=lambda i: _argument(complex(eigenvalues[i]))))
    return np.array(perm, dtype=int)


def diagonalize(sys: LinearSystem, rel_tol: float = TIE_TOL) -> SpectralForm:
    lams, V = np.linalg.eig(sys.A.astype(complex))
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > DIAG_COND_MAX:
        raise AssumptionError(f"A is not diagonalizable (eigenvector condition {cond:.3g})")
    perm = sort_spectrum(lams, rel_tol)
    lams = lams[perm]
    V = V[:, perm]
    V_inv = np.linalg.inv(V)
    norm_a = np.linalg.norm(sys.A)
    resid = np.linalg.norm(V @ np.diag(lams) @ V_inv - sys.A)
    if resid > DIAG_RESIDUAL_TOL * norm_a:
        raise AssumptionError(
            f"A is not diagonalizable (reconstruction residual {resid:.3g})"
        )
    for arr in (lams, V, V_inv):
        arr.setflags(write=False)
    C_tilde = sys.C @ V
    C_tilde.setflags(write=False)
    return SpectralForm(lams, V, V_inv, C_tilde)


def stability_class(magnitude: float, rel_tol: float = TIE_TOL) -> str:
    if abs(magnitude - 1.0) <= rel_tol:
        return CRITICALLY_STABLE
    return UNSTABLE if magnitude > 1.0 else STABLE


def equi_blocks(sf: SpectralForm, rel_tol: float = TIE_TOL,
                rank_tol: float = RANK_TOL) -> DegeneracyReport:
    """Partition the sorted spectrum into maximal equal-magnitude groups."""
    mags = np.abs(sf.eigenvalues)
    groups: list[list[int]] = []
    near = []
    for i in range(sf.n):
        if groups:
            gap = _magnitude_gap(mags[i - 1], mags[i])
            if rel_tol / 10 <= gap <= rel_tol * 10:
                near.append((i - 1, i, float(gap)))
            if gap <= rel_tol:
                groups[-1].append(i)
                continue
        groups.append([i])

    blocks = []
    for g in groups:
        cols = sf.C_tilde[:, g]
        rank = numerical_rank(cols, rank_tol)
        mag = float(np.mean(mags[g]))
        blocks.append(
            EquiBlock(
                indices=tuple(g),
                magnitude=mag,
                C_block=cols,
                rank=rank,
                degenerate=rank < len(g),
                stability_class=stability_class(mag, rel_tol),
            )
        )
    return DegeneracyReport(
        blocks=tuple(blocks),
        max_equiblock_dim=max(b.dim for b in blocks),
        system_degenerate=any(b.degenerate for b in blocks),
        unstable_part_degenerate=any(
            b.degenerate for b in blocks if b.stability_class != STABLE
        ),
        near_ties=tuple(near),
    )
