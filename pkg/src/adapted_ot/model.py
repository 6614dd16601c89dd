"""Domain types shared by all modules: coefficient specs, time grids, paths,
and finite path/Markov measures.

Coefficients are a closed declarative family rather than arbitrary callbacks,
so that Lipschitz and linear-growth constants are computable exactly (they
feed the monotonicity certificate of the truncated scheme).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

# Absolute tolerance for probability sums (double-precision accumulation
# over at most ~1e4 atoms).
PROB_TOL = 1e-12


class AdaptedOTError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AdaptedOTError):
    """Invalid parameters or inconsistent configuration."""


class ExtrapolationError(AdaptedOTError):
    """A piecewise-linear table was queried outside its knot range."""


class NotMarkovianError(AdaptedOTError):
    """A path-dependent coefficient was used where a Markovian one is required."""


class DivergenceError(AdaptedOTError):
    """A simulated path left the admissible range (|x| > threshold)."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


COEFFICIENT_KINDS = ("constant", "affine", "ou", "table", "sign_switch")
ROLES = ("drift", "diffusion")

# Divergence threshold: anything beyond this is treated as a blow-up rather
# than silently propagating to inf/nan.
DIVERGENCE_THRESHOLD = 1e8


@dataclass(frozen=True)
class CoefficientSpec:
    """One drift or diffusion coefficient from the closed declarative family.

    Kinds and their parameters:

    - ``constant``:    value ``c``; evaluates to ``c`` everywhere.
    - ``affine``:      ``intercept + slope * x``.
    - ``ou``:          mean-reversion drift ``-theta * x``.
    - ``table``:       piecewise-linear interpolation through ``knots`` /
                       ``values``; querying outside the knot range is an error.
    - ``sign_switch``: path-dependent drift ``level * sign(path(switch_time))``
                       active strictly after ``switch_time``; not Markovian.
    """

    kind: str
    role: str = "drift"
    value: float = 0.0
    intercept: float = 0.0
    slope: float = 0.0
    theta: float = 0.0
    knots: tuple = ()
    values: tuple = ()
    level: float = 0.0
    switch_time: float = 0.0

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise ConfigError(f"unknown coefficient kind {self.kind!r}")
        if self.role not in ROLES:
            raise ConfigError(f"unknown coefficient role {self.role!r}")
        if self.kind == "table":
            knots = np.asarray(self.knots, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if knots.ndim != 1 or knots.size < 2 or knots.size != values.size:
                raise ConfigError("table needs >= 2 knots and matching values")
            if not np.all(np.diff(knots) > 0):
                raise ConfigError("table knots must be strictly increasing")
            if not (np.isfinite(knots).all() and np.isfinite(values).all()):
                raise ConfigError("table knots/values must be finite")
        if self.kind == "sign_switch" and not 0.0 < self.switch_time < 1.0:
            raise ConfigError("sign_switch switch_time must lie in (0, 1)")

    @property
    def is_markovian(self):
        return self.kind != "sign_switch"

    def evaluate(self, x):
        """Evaluate a Markovian coefficient at state(s) ``x`` (scalar or array).

        Diffusion coefficients are checked to be nonnegative on the queried
        points; tables refuse to extrapolate.
        """
        if not self.is_markovian:
            raise NotMarkovianError("sign_switch is path-dependent; use eval_coefficient")
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            out = np.full_like(x, self.value)
        elif self.kind == "affine":
            out = self.intercept + self.slope * x
        elif self.kind == "ou":
            out = -self.theta * x
        else:  # table
            knots = np.asarray(self.knots, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if x.size and (x.min() < knots[0] or x.max() > knots[-1]):
                raise ExtrapolationError(
                    f"table query outside knot range [{knots[0]}, {knots[-1]}]"
                )
            out = np.interp(x, knots, values)
        if self.role == "diffusion" and out.size and out.min() < 0:
            raise ConfigError("diffusion coefficient evaluated to a negative value")
        return out if out.ndim else float(out)


def constant(c, role="drift"):
    return CoefficientSpec(kind="constant", role=role, value=float(c))


def affine(intercept, slope, role="drift"):
    return CoefficientSpec(kind="affine", role=role, intercept=float(intercept),
                           slope=float(slope))


def ou(theta, role="drift"):
    return CoefficientSpec(kind="ou", role=role, theta=float(theta))


def table(knots, values, role="drift"):
    return CoefficientSpec(kind="table", role=role,
                           knots=tuple(float(k) for k in knots),
                           values=tuple(float(v) for v in values))


def sign_switch(level, switch_time):
    return CoefficientSpec(kind="sign_switch", role="drift", level=float(level),
                           switch_time=float(switch_time))


@dataclass(frozen=True)
class GrowthBounds:
    """Lipschitz / linear-growth constants of a coefficient.

    ``|phi(x) - phi(y)| <= lipschitz * |x - y|`` (when present) and
    ``|phi(x)| <= linear_growth_K * (1 + |x|)`` on the coefficient's domain.
    """

    lipschitz: Optional[float]
    linear_growth_K: float
    value_at_zero_bound: float


def growth_bounds(spec):
    """Exact Lipschitz/growth constants for a Markovian coefficient.

    Tables report the maximum inter-knot slope; ``sign_switch`` has no
    state-Lipschitz constant and is rejected.
    """
    if not spec.is_markovian:
        raise NotMarkovianError("growth bounds are undefined for sign_switch")
    if spec.kind == "constant":
        c = abs(spec.value)
        return GrowthBounds(lipschitz=0.0, linear_growth_K=c, value_at_zero_bound=c)
    if spec.kind == "affine":
        lip = abs(spec.slope)
        v0 = abs(spec.intercept)
        return GrowthBounds(lipschitz=lip, linear_growth_K=max(lip, v0),
                            value_at_zero_bound=v0)
    if spec.kind == "ou":
        return GrowthBounds(lipschitz=abs(spec.theta), linear_growth_K=abs(spec.theta),
                            value_at_zero_bound=0.0)
    # table: max slope between knots; growth bound anchored at the knot
    # closest to the origin (the table domain need not contain 0).
    knots = np.asarray(spec.knots, dtype=float)
    values = np.asarray(spec.values, dtype=float)
    slopes = np.diff(values) / np.diff(knots)
    lip = float(np.max(np.abs(slopes))) if slopes.size else 0.0
    x_anchor = float(np.clip(0.0, knots[0], knots[-1]))
    v_anchor = float(np.interp(x_anchor, knots, values))
    k = max(lip, abs(v_anchor) + lip * abs(x_anchor))
    return GrowthBounds(lipschitz=lip, linear_growth_K=k,
                        value_at_zero_bound=abs(v_anchor) + lip * abs(x_anchor))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on the fixed horizon [0, 1] with N steps of size h = 1/N."""

    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps must be a positive integer")

    @property
    def h(self):
        return 1.0 / self.n_steps

    def times(self):
        return np.arange(self.n_steps + 1) * self.h

    def index_of(self, t):
        """Grid index of time ``t``; errors if ``t`` is not (nearly) on the grid."""
        k = t * self.n_steps
        k_round = int(round(k))
        if abs(k - k_round) > 1e-9 * self.n_steps or not 0 <= k_round <= self.n_steps:
            raise ConfigError(f"time {t} is not on the grid with N={self.n_steps}")
        return k_round


@dataclass(frozen=True)
class SamplePath:
    """Values of one path on the grid points of a TimeGrid (x_0 first)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n_steps + 1,):
            raise ConfigError("path length must equal n_steps + 1")
        if not np.isfinite(values).all():
            raise ConfigError("path values must be finite")


def eval_coefficient(spec, t, prefix):
    """Evaluate a coefficient at time ``t`` given the path prefix over [0, t].

    ``prefix`` is a SamplePath whose values cover at least [0, t].  Markovian
    kinds read only the state at ``t``; ``sign_switch`` evaluates
    ``level * sign(path(switch_time)) * 1{t > switch_time}``.
    """
    k = prefix.grid.index_of(t)
    if k >= prefix.values.size:
        raise ConfigError("path prefix does not cover the requested time")
    if spec.is_markovian:
        return float(spec.evaluate(prefix.values[k]))
    k_sw = prefix.grid.index_of(spec.switch_time)
    if t <= spec.switch_time:
        return 0.0
    if k_sw >= prefix.values.size:
        raise ConfigError("path prefix does not cover the switch time")
    return float(spec.level * np.sign(prefix.values[k_sw]))


@dataclass(frozen=True)
class DiscretePathMeasure:
    """Finitely supported measure on paths: one weight per value-sequence.

    Paths are the stage-1..T coordinates (no implicit time-0 entry); all
    paths share one length.
    """

    paths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        paths = np.atleast_2d(np.asarray(self.paths, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", weights)
        if paths.ndim != 2 or weights.shape != (paths.shape[0],):
            raise ConfigError("need one weight per path")
        if not np.isfinite(paths).all():
            raise ConfigError("path values must be finite")
        if weights.size and weights.min() < 0:
            raise ConfigError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > PROB_TOL:
            raise ConfigError("weights must sum to 1 within 1e-12")

    @property
    def n_stages(self):
        return self.paths.shape[1]

    def to_json(self):
        return json.dumps({"paths": self.paths.tolist(),
                           "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(paths=np.asarray(data["paths"], dtype=float),
                   weights=np.asarray(data["weights"], dtype=float))


@dataclass(frozen=True)
class MarkovLattice:
    """Finite-support, finite-stage Markov chain with explicit kernels.

    ``supports[k]`` is the sorted stage-k support (stage 0 is the single
    initial value) and ``transitions[k]`` maps stage-k nodes to stage-(k+1)
    nodes, one probability row per node.
    """

    initial_value: float
    supports: tuple
    transitions: tuple

    def __post_init__(self):
        supports = tuple(np.asarray(s, dtype=float) for s in self.supports)
        transitions = tuple(np.asarray(t, dtype=float) for t in self.transitions)
        object.__setattr__(self, "supports", supports)
        object.__setattr__(self, "transitions", transitions)
        if len(supports) != len(transitions) + 1:
            raise ConfigError("need one transition matrix per stage")
        if supports[0].shape != (1,) or supports[0][0] != self.initial_value:
            raise ConfigError("stage-0 support must be the initial value alone")
        for k, s in enumerate(supports):
            if s.ndim != 1 or not np.isfinite(s).all():
                raise ConfigError(f"stage-{k} support must be finite 1-D")
            if np.any(np.diff(s) <= 0):
                raise ConfigError(f"stage-{k} support must be strictly increasing")
        for k, t in enumerate(transitions):
            if t.shape != (supports[k].size, supports[k + 1].size):
                raise ConfigError(f"stage-{k} transition shape mismatch")
            if t.size and t.min() < 0:
                raise ConfigError(f"stage-{k} transition has negative mass")
            if np.max(np.abs(t.sum(axis=1) - 1.0)) > PROB_TOL:
                raise ConfigError(f"stage-{k} transition rows must sum to 1")

    @property
    def n_steps(self):
        return len(self.transitions)

    def stage_marginals(self):
        """Forward marginal probability vectors, one per stage."""
        out = [np.array([1.0])]
        for t in self.transitions:
            out.append(out[-1] @ t)
        return out

    def to_json(self):
        return json.dumps({
            "initial_value": self.initial_value,
            "stages": [{"support": s.tolist(), "transition": t.tolist()}
                       for s, t in zip(self.supports[1:], self.transitions)],
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        x0 = float(data["initial_value"])
        supports = [np.array([x0])]
        transitions = []
        for stage in data["stages"]:
            supports.append(np.asarray(stage["support"], dtype=float))
            transitions.append(np.asarray(stage["transition"], dtype=float))
        return cls(initial_value=x0, supports=tuple(supports),
                   transitions=tuple(transitions))


# -- coefficient spec text schema -------------------------------------------
#
# One spec per line of space-separated key=value tokens, e.g.
#
#   kind=constant value=1.5
#   kind=affine intercept=0 slope=2
#   kind=ou theta=1
#   kind=table knots=0,1,2 values=3,4,5
#   kind=sign_switch level=5 switch_time=0.1
#
# ``role`` is optional and defaults to "drift".

def format_coefficient(spec):
    """Serialize a CoefficientSpec to the key=value text schema."""
    parts = [f"kind={spec.kind}"]
    if spec.kind == "constant":
        parts.append(f"value={spec.value!r}")
    elif spec.kind == "affine":
        parts.append(f"intercept={spec.intercept!r}")
        parts.append(f"slope={spec.slope!r}")
    elif spec.kind == "ou":
        parts.append(f"theta={spec.theta!r}")
    elif spec.kind == "table":
        parts.append("knots=" + ",".join(repr(k) for k in spec.knots))
        parts.append("values=" + ",".join(repr(v) for v in spec.values))
    else:
        parts.append(f"level={spec.level!r}")
        parts.append(f"switch_time={spec.switch_time!r}")
    if spec.role != "drift":
        parts.append(f"role={spec.role}")
    return " ".join(parts)


def parse_coefficient(text, role=None):
    """Parse the key=value text schema back into a CoefficientSpec."""
    fields = {}
    for token in text.split():
        if "=" not in token:
            raise ConfigError(f"bad coefficient token {token!r}")
        key, _, raw = token.partition("=")
        fields[key] = raw
    if "kind" not in fields:
        raise ConfigError("coefficient text needs a kind= token")
    kind = fields.pop("kind")
    if role is None:
        role = fields.pop("role", "drift")
    else:
        fields.pop("role", None)
    try:
        if kind == "constant":
            return constant(float(fields["value"]), role=role)
        if kind == "affine":
            return affine(float(fields["intercept"]), float(fields["slope"]), role=role)
        if kind == "ou":
            return CoefficientSpec(kind="ou", role=role, theta=float(fields["theta"]))
        if kind == "table":
            knots = [float(v) for v in fields["knots"].split(",")]
            values = [float(v) for v in fields["values"].split(",")]
            return table(knots, values, role=role)
        if kind == "sign_switch":
            return sign_switch(float(fields["level"]), float(fields["switch_time"]))
    except KeyError as exc:
        raise ConfigError(f"missing coefficient field {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad coefficient value: {exc}") from exc
    raise ConfigError(f"unknown coefficient kind {kind!r}")
