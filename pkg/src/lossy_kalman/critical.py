"""Critical arrival probability p_c of the intermittent Kalman filter.

Exact values where closed forms exist:

* every unstable / critically stable equi-block one-step observable:
  ``p_c = max(1 - |lambda_1|^-2, 0)`` with ``lambda_1`` dominant;
* a degenerate pair ``lambda_1 = lambda_2 exp(j phi)`` with rank-one
  observation columns: ``p_c = 1 - |lambda|^(-2 / (1 - D_M(phi / 2pi)))``
  where ``D_M`` is the modified Dirichlet function.

Elsewhere :func:`critical_value` reports an interval built from the fact
that a system is never easier to estimate than any of its diagonal blocks.
"""

from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .spectral import (
    STABLE,
    TIE_TOL,
    UNSTABLE,
    diagonalize,
    equi_blocks,
    stability_class,
)
from .system import (
    RANK_TOL,
    AngleHint,
    AssumptionError,
    LinearSystem,
    numerical_rank,
    require_admissible,
)

MAX_DENOMINATOR = 64
ANGLE_TOL = 1e-9
# how far a user hint may sit from the computed angle
HINT_TOL = 1e-6

RATIONAL = "rational"
IRRATIONAL = "irrational"
UNDETERMINED = "undetermined"


class AngleHintError(ValueError):
    """An angle hint contradicts the eigenvalues it is supposed to describe."""


@dataclass(frozen=True)
class RationalAngle:
    """Classification of ``phi / 2pi`` for a pair of equal-magnitude eigenvalues.

    For ``undetermined`` angles ``min_denominator`` is the smallest
    denominator of any fraction within tolerance of ``value``; every
    smaller denominator is ruled out.
    """

    kind: str
    value: float
    numerator: int | None = None
    denominator: int | None = None
    min_denominator: int | None = None

    def __post_init__(self):
        if self.kind not in (RATIONAL, IRRATIONAL, UNDETERMINED):
            raise ValueError(f"unknown angle kind {self.kind!r}")
        if self.kind == RATIONAL:
            r, q = self.numerator, self.denominator
            if q is None or r is None or not 0 < r < q or math.gcd(r, q) != 1:
                raise ValueError(f"rational angle needs irreducible 0 < r < q, got {r}/{q}")

    @classmethod
    def rational(cls, r: int, q: int) -> "RationalAngle":
        return cls(RATIONAL, r / q, r, q)

    @classmethod
    def irrational(cls, value: float = math.nan) -> "RationalAngle":
        return cls(IRRATIONAL, value)

    def to_json(self) -> dict:
        doc = {"kind": self.kind, "value": self.value}
        if self.kind == RATIONAL:
            doc.update(numerator=self.numerator, denominator=self.denominator)
        if self.min_denominator is not None:
            doc["min_denominator"] = self.min_denominator
        return doc


@dataclass(frozen=True)
class CriticalValueResult:
    """``exact`` when known; otherwise ``[lower, upper]`` (``upper`` may be unknown)."""

    exact: float | None
    lower: float
    upper: float | None
    provenance: tuple[tuple[str, str], ...] = ()
    notes: tuple[str, ...] = ()
    angle: RationalAngle | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("exact", "lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, float(v))
        if self.exact is not None:
            if not (self.lower == self.exact == self.upper):
                raise ValueError("exact result needs lower == exact == upper")
        if self.upper is not None and self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")
        for v in (self.lower, self.upper):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"critical value bound {v} outside [0, 1]")

    @classmethod
    def exactly(cls, value: float, source: str, notes=(), angle=None):
        return cls(value, value, value, (("exact", source),), tuple(notes), angle)

    def to_json(self) -> dict:
        doc = {
            "exact": self.exact,
            "lower": self.lower,
            "upper": self.upper,
            "provenance": [list(p) for p in self.provenance],
            "notes": list(self.notes),
        }
        if self.angle is not None:
            doc["angle"] = self.angle.to_json()
        return doc


# -- angles -----------------------------------------------------------------

def simplest_fraction_between(lo: Fraction, hi: Fraction) -> Fraction:
    """Fraction with the smallest denominator in the closed interval [lo, hi].

    Walks the continued-fraction expansions of both endpoints until they
    part ways.
    """
    if lo > hi:
        lo, hi = hi, lo
    fl = math.floor(lo)
    if fl == lo:
        return Fraction(fl)
    if fl + 1 <= hi:
        return Fraction(fl + 1)
    # both ends share the integer part fl
    rest = simplest_fraction_between(1 / (hi - fl), 1 / (lo - fl))
    return fl + 1 / rest


def _phase_fraction(lambda1: complex, lambda2: complex, tol: float) -> float:
    if lambda2 == 0:
        raise AssumptionError("angle undefined for a zero eigenvalue")
    phi = cmath.phase(complex(lambda1) / complex(lambda2)) % (2 * math.pi)
    x = phi / (2 * math.pi)
    if x <= tol or x >= 1 - tol:
        raise AssumptionError(
            "equal eigenvalues in a rank-deficient pair (phi = 0): system not detectable"
        )
    return x


def modified_dirichlet(angle: RationalAngle) -> float:
    """1/q for an irreducible fraction r/q, 0 for an irrational number."""
    if angle.kind == RATIONAL:
        return 1.0 / angle.denominator
    if angle.kind == IRRATIONAL:
        return 0.0
    raise ValueError(
        "modified Dirichlet function is undefined for an undetermined angle; "
        "supply an angle hint"
    )


def _classify_from_float(x: float, max_denominator: int, tol: float) -> RationalAngle:
    frac = simplest_fraction_between(Fraction(x - tol), Fraction(x + tol))
    if frac.denominator <= max_denominator:
        return RationalAngle.rational(frac.numerator, frac.denominator)
    return RationalAngle(UNDETERMINED, x, min_denominator=frac.denominator)


def _apply_hint(x: float, computed: RationalAngle, hint: AngleHint) -> RationalAngle | None:
    """Angle implied by ``hint``, or None if the hint does not fit ``x``."""
    if hint.irrational:
        if computed.kind == RATIONAL:
            return None
        return RationalAngle.irrational(x)
    r, q = hint.numerator, hint.denominator
    g = math.gcd(r, q)
    r, q = r // g, q // g
    # phi and 2pi - phi describe the same pair listed in the other order
    if abs(x - r / q) <= HINT_TOL:
        return RationalAngle.rational(r, q)
    if abs(x - (q - r) / q) <= HINT_TOL:
        return RationalAngle.rational(q - r, q)
    return None


def classify_angle(lambda1: complex, lambda2: complex,
                   max_denominator: int = MAX_DENOMINATOR,
                   tol: float = ANGLE_TOL,
                   hint: AngleHint | None = None) -> RationalAngle:
    """Classify ``phi / 2pi`` where ``lambda1 = lambda2 exp(j phi)``.

    A floating-point angle is only ever reported as rational (a fraction
    with denominator ``<= max_denominator`` within ``tol``) or
    undetermined. Irrationality has to be declared through ``hint``.
    """
    x = _phase_fraction(lambda1, lambda2, tol)
    computed = _classify_from_float(x, max_denominator, tol)
    if hint is None:
        return computed
    hinted = _apply_hint(x, computed, hint)
    if hinted is None:
        raise AngleHintError(
            f"angle hint {hint.to_json()} inconsistent with phi/2pi = {x:.12g}"
        )
    return hinted


# -- closed forms -----------------------------------------------------------

def nondegenerate_value(magnitude: float, rel_tol: float = TIE_TOL) -> float:
    """``max(1 - |lambda|^-2, 0)``; critically stable magnitudes count as 1."""
    if stability_class(magnitude, rel_tol) != UNSTABLE:
        return 0.0
    return 1.0 - magnitude ** -2


def degenerate_value(magnitude: float, angle: RationalAngle,
                     rel_tol: float = TIE_TOL) -> float:
    if stability_class(magnitude, rel_tol) != UNSTABLE:
        return 0.0
    exponent = -2.0 / (1.0 - modified_dirichlet(angle))
    return 1.0 - magnitude ** exponent


def second_order_critical_value(lambda1: complex, lambda2: complex, C_block,
                                *, hint: AngleHint | None = None,
                                max_denominator: int = MAX_DENOMINATOR,
                                tol: float = ANGLE_TOL,
                                rel_tol: float = TIE_TOL,
                                rank_tol: float = RANK_TOL) -> CriticalValueResult:
    """p_c of the two-dimensional diagonal system ``(diag(lambda1, lambda2), C_block)``."""
    C_block = np.asarray(C_block)
    if C_block.ndim != 2 or C_block.shape[1] != 2:
        raise ValueError(f"C_block must have two columns, got shape {C_block.shape}")
    if abs(lambda2) > abs(lambda1):
        lambda1, lambda2 = lambda2, lambda1
        C_block = C_block[:, ::-1]
    rank = numerical_rank(C_block, rank_tol)
    if rank == 0:
        raise AssumptionError("observation block has rank 0: pair not detectable")
    mag1, mag2 = abs(lambda1), abs(lambda2)

    if (mag1 - mag2) / max(mag1, 1.0) > rel_tol:
        return CriticalValueResult.exactly(
            nondegenerate_value(mag1, rel_tol), "nondegenerate: distinct magnitudes"
        )
    if rank == 2:
        return CriticalValueResult.exactly(
            nondegenerate_value(mag1, rel_tol), "nondegenerate: one-step observable pair"
        )
    if stability_class(mag1, rel_tol) != UNSTABLE:
        if stability_class(mag1, rel_tol) != STABLE:
            # a critically stable pair still has to be detectable
            _phase_fraction(lambda1, lambda2, tol)
        return CriticalValueResult.exactly(0.0, "degenerate pair, not unstable")

    angle = classify_angle(lambda1, lambda2, max_denominator, tol, hint)
    if angle.kind == RATIONAL:
        return CriticalValueResult.exactly(
            degenerate_value(mag1, angle, rel_tol),
            f"degenerate pair, rational angle {angle.numerator}/{angle.denominator}",
            angle=angle,
        )
    if angle.kind == IRRATIONAL:
        return CriticalValueResult.exactly(
            degenerate_value(mag1, angle, rel_tol),
            "degenerate pair, irrational angle",
            angle=angle,
        )
    q_min = angle.min_denominator
    upper = 1.0 - mag1 ** (-2.0 * q_min / (q_min - 1))
    lower = nondegenerate_value(mag1, rel_tol)
    return CriticalValueResult(
        exact=None,
        lower=lower,
        upper=upper,
        provenance=(
            ("lower", "degenerate pair, irrational-angle value"),
            ("upper", f"degenerate pair, rational angle with denominator >= {q_min}"),
        ),
        notes=(
            f"phi/2pi = {angle.value:.12g} matches no fraction with denominator "
            f"<= {max_denominator}; the exact value depends on whether it is "
            "rational. Supply angle_hint to resolve.",
        ),
        angle=angle,
    )


# -- dispatcher -------------------------------------------------------------

def _pair_values(sf, block, max_denominator, tol, rel_tol, rank_tol):
    """Best lower bound from every 1- and 2-element sub-block of ``block``."""
    best = nondegenerate_value(block.magnitude, rel_tol)
    for i, j in itertools.combinations(block.indices, 2):
        cols = sf.C_tilde[:, [i, j]]
        try:
            res = second_order_critical_value(
                sf.eigenvalues[i], sf.eigenvalues[j], cols,
                max_denominator=max_denominator, tol=tol,
                rel_tol=rel_tol, rank_tol=rank_tol,
            )
        except AssumptionError:
            continue
        best = max(best, res.lower)
    return best


def critical_value(sys: LinearSystem, *, max_denominator: int = MAX_DENOMINATOR,
                   tol: float = ANGLE_TOL, rel_tol: float = TIE_TOL,
                   rank_tol: float = RANK_TOL) -> CriticalValueResult:
    """p_c of ``sys``, exact where a closed form applies, else an interval.

    Only ``A`` and ``C`` (and the optional angle hint) enter the value;
    the noise covariances are looked at for validation only.
    """
    require_admissible(sys, rank_tol)
    sf = diagonalize(sys, rel_tol)
    report = equi_blocks(sf, rel_tol, rank_tol)
    relevant = report.relevant_blocks()
    has_stable = len(relevant) < len(report.blocks)

    dominant = nondegenerate_value(float(abs(sf.eigenvalues[0])), rel_tol)
    notes = []
    if has_stable:
        notes.append("stable equi-blocks do not affect p_c and were excluded")

    hint = sys.angle_hint
    degenerate = [b for b in relevant if b.degenerate]
    if not degenerate:
        if hint is not None:
            raise AngleHintError(
                f"angle hint {hint.to_json()} given but no unstable equi-block is degenerate"
            )
        return CriticalValueResult.exactly(
            dominant, "all unstable/critically stable equi-blocks one-step observable",
            notes,
        )

    hint_used = False
    block_results = []
    for b in degenerate:
        if b.dim == 2:
            i, j = b.indices
            lam1, lam2 = sf.eigenvalues[i], sf.eigenvalues[j]
            use_hint = None
            if hint is not None:
                x = _phase_fraction(lam1, lam2, tol)
                computed = _classify_from_float(x, max_denominator, tol)
                if _apply_hint(x, computed, hint) is not None:
                    use_hint = hint
                    hint_used = True
            res = second_order_critical_value(
                lam1, lam2, b.C_block, hint=use_hint,
                max_denominator=max_denominator, tol=tol,
                rel_tol=rel_tol, rank_tol=rank_tol,
            )
        else:
            lower = _pair_values(sf, b, max_denominator, tol, rel_tol, rank_tol)
            res = CriticalValueResult(
                None, lower, None,
                (("lower", f"best 1- and 2-element sub-block of a degenerate "
                           f"{b.dim}-dimensional equi-block"),),
            )
        block_results.append((b, res))
    if hint is not None and not hint_used:
        raise AngleHintError(
            f"angle hint {hint.to_json()} matches no degenerate eigenvalue pair"
        )

    lower = max([dominant] + [r.lower for _, r in block_results])
    provenance = [("lower", "dominant eigenvalue bound")]
    provenance += [
        ("lower", f"block {list(b.indices)}: {src}")
        for b, r in block_results for kind, src in r.provenance
        if kind in ("exact", "lower")
    ]
    angle = block_results[0][1].angle if len(block_results) == 1 else None

    if any(b.dim >= 3 for b, _ in block_results):
        notes.append(
            "degenerate equi-block of dimension >= 3: exact value open; "
            "only a block lower bound is available"
        )
        return CriticalValueResult(None, lower, None, tuple(provenance), tuple(notes), angle)

    block, res = block_results[0]
    if len(block_results) == 1 and block is relevant[0]:
        # a lone degenerate pair carrying the dominant magnitude decides p_c
        if res.exact is not None:
            src = res.provenance[0][1]
            return CriticalValueResult.exactly(
                res.exact, f"dominant degenerate pair: {src}", notes, res.angle
            )
        return CriticalValueResult(
            None, res.lower, res.upper, res.provenance, tuple(notes) + res.notes, res.angle
        )

    notes.append(
        "degenerate pair does not carry the dominant magnitude (or several "
        "degenerate pairs): only the block lower bound is known"
    )
    for _, r in block_results:
        notes.extend(r.notes)
    return CriticalValueResult(None, lower, None, tuple(provenance), tuple(notes), angle)
