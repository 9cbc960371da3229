"""Linear Gaussian system description, assumption checks and JSON I/O.

A system is ``x[k+1] = A x[k] + w[k]``, ``y[k] = C x[k] + v[k]`` with
``w ~ N(0, Q)``, ``v ~ N(0, R)`` and ``x[0] ~ N(x0_mean, Sigma0)``.
Everything downstream assumes three things about it:

* ``(C, A)`` is detectable (PBH test on eigenvalues with ``|lambda| >= 1``);
* ``A`` is diagonalizable;
* ``Q``, ``R`` and ``Sigma0`` are symmetric positive definite.

:func:`validate` checks all three and reports per-assumption verdicts.
Construction only checks shapes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RANK_TOL = 1e-9
DIAG_RESIDUAL_TOL = 1e-8
DIAG_COND_MAX = 1e12
PD_REL_TOL = 1e-12


class SystemSpecError(Exception):
    """Base class for problems with a system description."""


class DimensionError(SystemSpecError, ValueError):
    """Matrices have inconsistent or non-rectangular shapes."""


class SystemFileError(SystemSpecError, ValueError):
    """A system file could not be parsed."""


class AssumptionError(SystemSpecError):
    """The system violates a standing assumption (detectability, ...)."""

    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


class NumericError(ArithmeticError):
    """A computation produced or received non-finite or unfactorable values."""


@dataclass(frozen=True)
class AngleHint:
    """User-declared value of phi / 2pi for a degenerate eigenvalue pair.

    Either an exact fraction ``numerator / denominator`` or an explicit
    declaration that the angle is irrational.
    """

    numerator: int | None = None
    denominator: int | None = None
    irrational: bool = False

    def __post_init__(self):
        if self.irrational:
            if self.numerator is not None or self.denominator is not None:
                raise ValueError("an irrational angle hint carries no fraction")
            return
        if self.numerator is None or self.denominator is None:
            raise ValueError("angle hint needs numerator and denominator")
        if self.denominator <= 0:
            raise ValueError("angle hint denominator must be positive")
        if not 0 < self.numerator < self.denominator:
            raise ValueError("angle hint must satisfy 0 < numerator < denominator")

    def to_json(self) -> dict:
        if self.irrational:
            return {"irrational": True}
        return {"numerator": self.numerator, "denominator": self.denominator}


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """The matrices of the system. Arrays are stored read-only.

    ``Q``, ``R`` and ``Sigma0`` default to identity matrices and
    ``x0_mean`` to the zero vector.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    Sigma0: np.ndarray | None = None
    x0_mean: np.ndarray | None = None
    angle_hint: AngleHint | None = field(default=None, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got shape {C.shape}")
        m = C.shape[0]
        defaults = {"Q": np.eye(n), "R": np.eye(m), "Sigma0": np.eye(n)}
        expected = {"Q": (n, n), "R": (m, m), "Sigma0": (n, n)}
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        for name in ("Q", "R", "Sigma0"):
            raw = getattr(self, name)
            mat = _as_matrix(defaults[name] if raw is None else raw, name)
            if mat.shape != expected[name]:
                raise DimensionError(
                    f"{name} must have shape {expected[name]}, got {mat.shape}"
                )
            object.__setattr__(self, name, mat)
        x0 = np.zeros(n) if self.x0_mean is None else np.array(self.x0_mean, dtype=float)
        if x0.shape != (n,):
            raise DimensionError(f"x0_mean must have length {n}, got shape {x0.shape}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0_mean", x0)
        for name in ("A", "C", "Q", "R", "Sigma0", "x0_mean"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DimensionError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def with_noise(self, Q=None, R=None, Sigma0=None) -> "LinearSystem":
        """Copy with some noise covariances replaced."""
        return LinearSystem(
            self.A,
            self.C,
            self.Q if Q is None else Q,
            self.R if R is None else R,
            self.Sigma0 if Sigma0 is None else Sigma0,
            self.x0_mean,
            self.angle_hint,
        )


@dataclass(frozen=True)
class ValidationReport:
    detectable: bool
    diagonalizable: bool
    noise_pd: bool
    offending_eigenvalues: tuple[complex, ...] = ()
    messages: tuple[str, ...] = ()

    @property
    def admissible(self) -> bool:
        return self.detectable and self.diagonalizable and self.noise_pd

    def to_json(self) -> dict:
        return {
            "detectable": self.detectable,
            "diagonalizable": self.diagonalizable,
            "noise_pd": self.noise_pd,
            "admissible": self.admissible,
            "offending_eigenvalues": [
                [z.real, z.imag] for z in self.offending_eigenvalues
            ],
            "messages": list(self.messages),
        }


def numerical_rank(M: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def pbh_unobservable(A: np.ndarray, C: np.ndarray, tol: float = RANK_TOL,
                     eigenvalues=None) -> list[complex]:
    """Eigenvalues with ``|lambda| >= 1`` that fail the PBH rank test."""
    n = A.shape[0]
    lams = np.linalg.eigvals(A) if eigenvalues is None else eigenvalues
    bad = []
    for lam in lams:
        if abs(lam) < 1.0 - tol:
            continue
        stacked = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        if numerical_rank(stacked, tol) < n:
            bad.append(complex(lam))
    return bad


def _is_spd(M: np.ndarray) -> tuple[bool, str]:
    scale = max(np.abs(M).max(), np.finfo(float).tiny)
    if np.abs(M - M.T).max() > 1e-12 * scale:
        return False, "not symmetric"
    w = np.linalg.eigvalsh(M)
    if w[-1] <= 0 or w[0] <= PD_REL_TOL * w[-1]:
        return False, f"smallest eigenvalue {w[0]:.3g} not positive"
    return True, ""


def diagonalizability(A: np.ndarray) -> tuple[bool, float, float]:
    """Return (ok, relative residual, condition number of V)."""
    lams, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > DIAG_COND_MAX:
        return False, math.inf, float(cond)
    recon = V @ np.diag(lams) @ np.linalg.inv(V)
    resid = np.linalg.norm(recon - A)
    norm_a = np.linalg.norm(A)
    ok = resid <= DIAG_RESIDUAL_TOL * norm_a
    return bool(ok), float(resid / norm_a) if norm_a else float(resid), float(cond)


def validate(sys: LinearSystem, tol: float = RANK_TOL) -> ValidationReport:
    """Check detectability, diagonalizability and positive-definite noise."""
    messages = []

    offending = pbh_unobservable(sys.A, sys.C, tol)
    for lam in offending:
        messages.append(f"PBH test fails for eigenvalue {lam:.6g}: mode not detectable")

    diag_ok, resid, cond = diagonalizability(sys.A)
    if not diag_ok:
        messages.append(
            f"A is not diagonalizable (eigenvector condition {cond:.3g}, "
            f"relative residual {resid:.3g})"
        )

    noise_ok = True
    for name in ("Q", "R", "Sigma0"):
        ok, why = _is_spd(getattr(sys, name))
        if not ok:
            noise_ok = False
            messages.append(f"{name} is not positive definite: {why}")

    return ValidationReport(
        detectable=not offending,
        diagonalizable=diag_ok,
        noise_pd=noise_ok,
        offending_eigenvalues=tuple(offending),
        messages=tuple(messages),
    )


def require_admissible(sys: LinearSystem, tol: float = RANK_TOL) -> ValidationReport:
    report = validate(sys, tol)
    if not report.admissible:
        raise AssumptionError("; ".join(report.messages), report)
    return report


# -- file format ----------------------------------------------------------

_MATRIX_FIELDS = ("A", "C", "Q", "R", "Sigma0")


def _parse_matrix(doc: dict, key: str, path) -> list:
    value = doc[key]
    if not isinstance(value, list) or not value:
        raise SystemFileError(f"{path}: field {key!r} must be a non-empty array of rows")
    width = None
    for i, row in enumerate(value):
        if not isinstance(row, list):
            raise SystemFileError(f"{path}: field {key!r} row {i} is not an array")
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise SystemFileError(
                    f"{path}: field {key!r} entry [{i}][{j}] is not a number: {x!r}"
                )
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DimensionError(
                f"{path}: field {key!r} row {i} has length {len(row)}, expected {width}"
            )
    return value


def system_from_json(doc: dict, path="<memory>") -> LinearSystem:
    if not isinstance(doc, dict):
        raise SystemFileError(f"{path}: top level must be an object")
    missing = [k for k in ("A", "C") if k not in doc]
    if missing:
        raise SystemFileError(f"{path}: missing required field(s) {missing}")
    mats = {k: _parse_matrix(doc, k, path) for k in _MATRIX_FIELDS if k in doc}
    x0 = doc.get("x0_mean")
    if x0 is not None and (
        not isinstance(x0, list)
        or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in x0)
    ):
        raise SystemFileError(f"{path}: field 'x0_mean' must be an array of numbers")
    hint = None
    raw_hint = doc.get("angle_hint")
    if raw_hint is not None:
        if not isinstance(raw_hint, dict):
            raise SystemFileError(f"{path}: field 'angle_hint' must be an object")
        try:
            if raw_hint.get("irrational", False):
                hint = AngleHint(irrational=True)
            else:
                num, den = raw_hint["numerator"], raw_hint["denominator"]
                if not all(isinstance(v, int) and not isinstance(v, bool) for v in (num, den)):
                    raise SystemFileError(f"{path}: angle_hint fields must be integers")
                g = math.gcd(num, den)
                hint = AngleHint(num // g, den // g)
        except KeyError as exc:
            raise SystemFileError(f"{path}: angle_hint missing {exc}") from None
        except ValueError as exc:
            if isinstance(exc, SystemSpecError):
                raise
            raise SystemFileError(f"{path}: angle_hint: {exc}") from None
    try:
        return LinearSystem(
            A=mats["A"],
            C=mats["C"],
            Q=mats.get("Q"),
            R=mats.get("R"),
            Sigma0=mats.get("Sigma0"),
            x0_mean=x0,
            angle_hint=hint,
        )
    except DimensionError as exc:
        raise DimensionError(f"{path}: {exc}") from None


def load_system(path) -> LinearSystem:
    """Read a system file. Assumptions are not checked here; call :func:`validate`."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFileError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from None
    return system_from_json(doc, path)


def system_to_json(sys: LinearSystem) -> dict:
    doc = {name: getattr(sys, name).tolist() for name in _MATRIX_FIELDS}
    doc["x0_mean"] = sys.x0_mean.tolist()
    if sys.angle_hint is not None:
        doc["angle_hint"] = sys.angle_hint.to_json()
    return doc


def save_system(sys: LinearSystem, path) -> None:
    # json writes floats with repr(), so a reload is bit-exact
    Path(path).write_text(json.dumps(system_to_json(sys), indent=2) + "\n")
