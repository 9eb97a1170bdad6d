"""Model primitives: coefficient fields, state validation, characteristic roots.

The market model is a diffusion whose dividend rate and volatility are fed by
two running functionals of the price path: the running maximum ``s`` and the
running maximum drawdown ``y``.  Everything downstream (boundary ODEs, value
assembly, simulation) consumes the pair of coefficient fields through the
helpers in this module, so the fields carry closed-form partial derivatives
with them rather than relying on numerical differentiation.

For frozen ``(s, y)`` the pricing operator applied to a power ``x**gamma``
yields the quadratic ``sigma^2/2 * gamma*(gamma-1) + (r-delta)*gamma - r``,
whose two real roots straddle the interval [0, 1].  ``roots`` evaluates the
pair and its four partial derivatives in a cancellation-safe way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import DomainError, NonPositiveCoefficient

FamilyName = Literal["constant", "s_only", "bounded_rational"]
PayoffKind = Literal["call", "put"]

_FAMILY_ARITY = {"constant": 1, "s_only": 2, "bounded_rational": 3}

_POSITIVITY_FLOOR = 1e-8
_AUDIT_GRID = 64


@dataclass(frozen=True)
class CoefficientField:
    """One scalar field c(s, y) from a small closed-under-restriction catalog.

    Families
    --------
    constant          c0
    s_only            c0 + c1 * s/(1+s)
    bounded_rational  c0 + c1 * s/(1+s) + c2 * y/(1+y)

    The saturating ratios keep every member bounded with a finite limit at
    infinity, and restricting ``bounded_rational`` to the diagonal s = y
    lands back inside ``s_only`` with c1 <- c1 + c2.
    """

    family: FamilyName
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.family not in _FAMILY_ARITY:
            raise ValueError(f"unknown coefficient family {self.family!r}")
        want = _FAMILY_ARITY[self.family]
        if len(self.params) != want:
            raise ValueError(
                f"family {self.family!r} takes {want} parameter(s), got {len(self.params)}"
            )
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def value(self, s, y):
        p = self.params
        if self.family == "constant":
            return p[0] + 0.0 * s + 0.0 * y
        if self.family == "s_only":
            return p[0] + p[1] * s / (1.0 + s) + 0.0 * y
        return p[0] + p[1] * s / (1.0 + s) + p[2] * y / (1.0 + y)

    def d_ds(self, s, y):
        if self.family == "constant":
            return 0.0 * s + 0.0 * y
        return self.params[1] / (1.0 + s) ** 2 + 0.0 * y

    def d_dy(self, s, y):
        if self.family == "bounded_rational":
            return self.params[2] / (1.0 + y) ** 2 + 0.0 * s
        return 0.0 * s + 0.0 * y

    def limit_at_infinity(self) -> float:
        return float(sum(self.params))

    def diagonal_restriction(self) -> "CoefficientField":
        """The field seen along s = y, expressed as an s_only member."""
        if self.family == "constant":
            return self
        if self.family == "s_only":
            return self
        c0, c1, c2 = self.params
        return CoefficientField("s_only", (c0, c1 + c2))


@dataclass(frozen=True)
class ModelSpec:
    """Full problem description: rate, payoff, and the two coefficient fields.

    Construction audits positivity of both fields on a 64x64 log-spaced grid
    over the domain box [0, domain_s_max] x [0, domain_y_max] restricted to
    y <= s, rejecting anything that dips to 1e-8 or below.
    """

    r: float
    strike: float
    payoff_kind: PayoffKind
    delta_field: CoefficientField
    sigma_field: CoefficientField
    domain_s_max: float = 20.0
    domain_y_max: float = 20.0

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"rate must be positive, got {self.r}")
        if not self.strike > 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.payoff_kind not in ("call", "put"):
            raise ValueError(f"payoff_kind must be 'call' or 'put', got {self.payoff_kind!r}")
        if not (self.domain_s_max > 0 and self.domain_y_max > 0):
            raise ValueError("domain box must have positive extent")
        s = np.geomspace(self.domain_s_max * 1e-6, self.domain_s_max, _AUDIT_GRID)
        y = np.concatenate([[0.0], np.geomspace(self.domain_y_max * 1e-6,
                                                self.domain_y_max, _AUDIT_GRID - 1)])
        ss, yy = np.meshgrid(s, y, indexing="ij")
        yy = np.minimum(yy, ss)  # audit the admissible quadrant y <= s
        for name, field in (("delta", self.delta_field), ("sigma", self.sigma_field)):
            vals = np.asarray(field.value(ss, yy), dtype=float)
            if not np.all(vals > _POSITIVITY_FLOOR):
                worst = float(vals.min())
                raise NonPositiveCoefficient(
                    f"{name} field reaches {worst:.3e} on the domain box "
                    f"(floor {_POSITIVITY_FLOOR:.0e})"
                )

    def payoff(self, x):
        if self.payoff_kind == "call":
            return np.maximum(x - self.strike, 0.0)
        return np.maximum(self.strike - x, 0.0)

    def diagonal_spec(self) -> "ModelSpec":
        """Companion model whose fields depend on the running maximum only.

        Used to seed the three-dimensional boundary slices at the diagonal,
        where the drawdown coordinate coincides with the running maximum of
        the two-dimensional companion problem.
        """
        return ModelSpec(
            r=self.r,
            strike=self.strike,
            payoff_kind=self.payoff_kind,
            delta_field=self.delta_field.diagonal_restriction(),
            sigma_field=self.sigma_field.diagonal_restriction(),
            domain_s_max=self.domain_s_max,
            domain_y_max=self.domain_y_max,
        )


@dataclass(frozen=True)
class StateTriple:
    """A point (x, s, y) of the state space {0 < s - y <= x <= s}."""

    x: float
    s: float
    y: float

    def __post_init__(self) -> None:
        if not self.s - self.y > 0:
            raise DomainError(f"need s - y > 0, got s={self.s}, y={self.y}")
        if not self.s - self.y <= self.x <= self.s:
            raise DomainError(
                f"x={self.x} outside [s-y, s] = [{self.s - self.y}, {self.s}]"
            )


@dataclass(frozen=True)
class RootPair:
    """Characteristic roots at one (s, y) with their four partial derivatives."""

    gamma1: float
    gamma2: float
    dgamma1_ds: float
    dgamma2_ds: float
    dgamma1_dy: float
    dgamma2_dy: float

    def __post_init__(self) -> None:
        if not self.gamma2 < 0 < 1 < self.gamma1:
            raise ValueError(
                f"root ordering gamma2 < 0 < 1 < gamma1 violated: "
                f"({self.gamma1}, {self.gamma2})"
            )


def eval_fields(spec: ModelSpec, s, y):
    """Both fields and their partials at (s, y).

    Returns (delta, sigma, ddelta_ds, ddelta_dy, dsigma_ds, dsigma_dy).
    Accepts scalars or broadcastable arrays; raises DomainError off the
    quadrant 0 <= y <= s.
    """
    s_arr, y_arr = np.asarray(s, dtype=float), np.asarray(y, dtype=float)
    if np.any(s_arr <= 0) or np.any(y_arr < 0) or np.any(y_arr > s_arr):
        raise DomainError("eval_fields requires s > 0 and 0 <= y <= s")
    d = spec.delta_field
    g = spec.sigma_field
    return (
        d.value(s, y), g.value(s, y),
        d.d_ds(s, y), d.d_dy(s, y),
        g.d_ds(s, y), g.d_dy(s, y),
    )


def _roots_core(r, delta, sigma, dd_ds, dd_dy, dsg_ds, dsg_dy):
    """Vector-safe root pair and derivatives.

    The larger-magnitude root comes straight from the quadratic formula, the
    other via the product identity gamma1*gamma2 = -2r/sigma^2, which avoids
    the cancellation m -+ R when |m| is close to R.
    """
    sig2 = sigma * sigma
    m = 0.5 - (r - delta) / sig2
    root = np.sqrt(m * m + 2.0 * r / sig2)
    prod = -2.0 * r / sig2
    big = np.where(m >= 0, m + root, m - root)
    other = prod / big
    gamma1 = np.where(m >= 0, big, other)
    gamma2 = np.where(m >= 0, other, big)

    sig3 = sig2 * sigma
    phi = (sigma * dd_ds + 2.0 * (r - delta) * dsg_ds) / sig3
    psi = (sigma * dd_dy + 2.0 * (r - delta) * dsg_dy) / sig3
    ts = (m * phi - 2.0 * r * dsg_ds / sig3) / root
    ty = (m * psi - 2.0 * r * dsg_dy / sig3) / root
    return gamma1, gamma2, phi + ts, phi - ts, psi + ty, psi - ty


def roots_arrays(spec: ModelSpec, s, y):
    """Array form of :func:`roots`; returns six ndarrays (or scalars)."""
    delta, sigma, dd_ds, dd_dy, dsg_ds, dsg_dy = eval_fields(spec, s, y)
    return _roots_core(spec.r, delta, sigma, dd_ds, dd_dy, dsg_ds, dsg_dy)


def roots(spec: ModelSpec, s: float, y: float) -> RootPair:
    """Characteristic root pair with derivatives at a single (s, y)."""
    g1, g2, d1s, d2s, d1y, d2y = roots_arrays(spec, float(s), float(y))
    return RootPair(float(g1), float(g2), float(d1s), float(d2s), float(d1y), float(d2y))


def generator_residual(
    spec: ModelSpec,
    f: Callable[[float], float],
    point: StateTriple,
    dfdx: Callable[[float], float] | None = None,
    d2fdx2: Callable[[float], float] | None = None,
    fd_step: float | None = None,
) -> float:
    """(L f - r f)(x) with coefficients frozen at the point's (s, y).

    ``f`` is a function of the price coordinate alone.  Derivatives are taken
    from the supplied callables when given (solver output has exact power-form
    derivatives) and from central differences otherwise.  The point must be
    interior: s - y < x < s.
    """
    x, s, y = point.x, point.s, point.y
    if not (s - y < x < s):
        raise DomainError(f"interior point required, got x={x} on [s-y, s]=[{s - y}, {s}]")
    delta, sigma, *_ = eval_fields(spec, s, y)
    if dfdx is not None and d2fdx2 is not None:
        fp, fpp = dfdx(x), d2fdx2(x)
    else:
        h = fd_step if fd_step is not None else 1e-5 * max(abs(x), spec.strike)
        h = min(h, 0.5 * (x - (s - y)), 0.5 * (s - x))
        fp = (f(x + h) - f(x - h)) / (2.0 * h)
        fpp = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    return (spec.r - delta) * x * fp + 0.5 * sigma**2 * x * x * fpp - spec.r * f(x)
