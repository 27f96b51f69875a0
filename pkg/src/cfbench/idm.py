"""Intelligent-driver car-following law: desired gap, acceleration, simulation,
one-step prediction and bounded calibration.

The acceleration law is

    a_f = a_max * (1 - (v_f / v_d)^c0 - (d_star / spacing)^c1)

with the speed- and closing-rate-dependent desired gap

    d_star = d + c2 * sqrt(v_f / v_d) + v_f * tau + v_f * dv / (2 * sqrt(a_max * |b_d|))

Two sign conventions for dv are supported: the source model's closing rate
dv = v_f - v_l (default, stable) and the verbatim printed form
dv = v_l - v_f. The desired gap is clamped to stay positive and the
acceleration to +-10 m/s^2 as a physical guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import CollisionError, ConfigError, DomainError
from .trajectory import Trajectory, finite_difference

DEFAULT_V_DESIRED = 130.0 / 3.6  # free-flow speed 130 km/h
D_STAR_FLOOR = 0.01  # m; the desired gap needs to be positive
ACCEL_CLAMP = 10.0  # m/s^2 physical guard


class SignConvention(str, Enum):
    """Direction of the speed-difference term in the desired gap."""

    TREIBER_2000 = "treiber2000"  # dv = v_f - v_l
    PAPER_VERBATIM = "paper"  # dv = v_l - v_f

    @classmethod
    def parse(cls, text: str) -> "SignConvention":
        for member in cls:
            if text in (member.value, member.name.lower()):
                return member
        raise ConfigError(f"unknown sign convention {text!r}")


@dataclass(frozen=True)
class IdmParams:
    """The seven model parameters, SI units.

    c1 is conventionally fixed at 2 and v_d at the free-flow speed; the
    remaining five are what calibration searches over (c2 optionally).
    """

    a_max: float
    c0: float
    d: float
    tau: float
    b_d: float
    c1: float = 2.0
    c2: float = 0.0
    v_d: float = DEFAULT_V_DESIRED

    def as_dict(self) -> dict[str, float]:
        return {
            "a_max": self.a_max,
            "v_d": self.v_d,
            "c0": self.c0,
            "c1": self.c1,
            "c2": self.c2,
            "d": self.d,
            "tau": self.tau,
            "b_d": self.b_d,
        }


# Parameter ranges used for validation and as default calibration bounds.
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "a_max": (0.73, 5.0),
    "c0": (0.2, 20.0),
    "d": (0.0, 17.0),
    "tau": (1.0, 2.5),
    "b_d": (2.0, 9.0),
    "c2": (0.0, 10.0),  # opt-in; no published range
}

CALIBRATED_FIELDS = ("a_max", "c0", "d", "tau", "b_d")


def validate_params(p: IdmParams, bounds: Mapping[str, tuple[float, float]] | None = None) -> None:
    bounds = dict(DEFAULT_BOUNDS if bounds is None else bounds)
    for name, (lo, hi) in bounds.items():
        value = getattr(p, name)
        if not lo <= value <= hi:
            raise ConfigError(f"parameter {name}={value} outside [{lo}, {hi}]")
    if p.v_d <= 0:
        raise ConfigError("desired speed must be positive")


def desired_gap(
    p: IdmParams,
    v_f,
    v_l,
    conv: SignConvention = SignConvention.TREIBER_2000,
):
    """Desired minimum gap d_star, clamped to at least 0.01 m. Vectorized."""
    v_f = np.asarray(v_f, dtype=float)
    v_l = np.asarray(v_l, dtype=float)
    dv = v_l - v_f if conv is SignConvention.PAPER_VERBATIM else v_f - v_l
    raw = (
        p.d
        + p.c2 * np.sqrt(v_f / p.v_d)
        + v_f * p.tau
        + v_f * dv / (2.0 * math.sqrt(p.a_max * abs(p.b_d)))
    )
    out = np.maximum(raw, D_STAR_FLOOR)
    return float(out) if out.ndim == 0 else out


def acceleration(
    p: IdmParams,
    v_f,
    v_l,
    spacing,
    conv: SignConvention = SignConvention.TREIBER_2000,
):
    """Follower acceleration for the given state, clamped to +-10 m/s^2."""
    spacing = np.asarray(spacing, dtype=float)
    if np.any(spacing <= 0.0):
        raise DomainError("spacing must be positive")
    v_f = np.asarray(v_f, dtype=float)
    d_star = desired_gap(p, v_f, v_l, conv)
    raw = p.a_max * (1.0 - (v_f / p.v_d) ** p.c0 - (d_star / spacing) ** p.c1)
    out = np.clip(raw, -ACCEL_CLAMP, ACCEL_CLAMP)
    return float(out) if out.ndim == 0 else out


def equilibrium_gap(p: IdmParams, v: float, conv: SignConvention = SignConvention.TREIBER_2000) -> float:
    """Spacing at which a follower at speed v behind a leader at speed v holds steady."""
    if not 0.0 <= v < p.v_d:
        raise DomainError("equilibrium exists only for 0 <= v < v_d")
    d_star = desired_gap(p, v, v, conv)
    return d_star / math.sqrt(1.0 - (v / p.v_d) ** p.c0)


def simulate_follower(
    p: IdmParams,
    leader: Trajectory,
    init: tuple[float, float],
    dt: float | None = None,
    conv: SignConvention = SignConvention.TREIBER_2000,
) -> Trajectory:
    """Integrate the follower behind a recorded leader (ballistic stepping).

    ``init`` is the follower's starting (position, speed); the leader's
    positions are taken from the trajectory or reconstructed by integrating
    its speed. Speed is floored at zero (no reversing): when a step would
    cross zero the vehicle stops at the ballistic stopping point. Raises
    CollisionError if the gap collapses.
    """
    dt = leader.dt if dt is None else dt
    n = len(leader)
    if leader.x_l is not None:
        x_lead = leader.x_l
    else:
        # cumulative ballistic integral of the leader speed from 0
        x_lead = np.concatenate(([0.0], np.cumsum((leader.v_l[:-1] + leader.v_l[1:]) * 0.5 * dt)))
    x = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    gap = np.empty(n)
    x[0], v[0] = init
    for k in range(n):
        gap[k] = x_lead[k] - x[k]
        if gap[k] <= 0.0:
            raise CollisionError(k)
        a[k] = acceleration(p, v[k], leader.v_l[k], gap[k], conv)
        if k + 1 == n:
            break
        v_next = v[k] + a[k] * dt
        if v_next < 0.0 and a[k] < 0.0:
            # stop partway through the step, never reverse
            x[k + 1] = x[k] - v[k] ** 2 / (2.0 * a[k])
            v[k + 1] = 0.0
        else:
            x[k + 1] = x[k] + v[k] * dt + 0.5 * a[k] * dt * dt
            v[k + 1] = max(v_next, 0.0)
    a_lead = leader.a_l.copy() if leader.a_l is not None else finite_difference(leader.v_l, dt)
    return Trajectory(
        id=f"{leader.id}-sim",
        hz=1.0 / dt,
        t=leader.t.copy(),
        v_l=leader.v_l.copy(),
        v_f=v,
        a_l=a_lead,
        a_f=a,
        gap=gap,
        dv=v - leader.v_l,
        x_l=x_lead.copy(),
        x_f=x,
    )


def predict_accel_series(
    p: IdmParams,
    traj: Trajectory,
    conv: SignConvention = SignConvention.TREIBER_2000,
) -> np.ndarray:
    """One-step acceleration prediction at every observed state (no rollout)."""
    if traj.gap is None or traj.dv is None:
        raise DomainError(f"trajectory {traj.id}: derive kinematics before predicting")
    return acceleration(p, traj.v_f, traj.v_l, traj.gap, conv)


def dataset_rmse(
    p: IdmParams,
    dataset: Sequence[Trajectory],
    conv: SignConvention = SignConvention.TREIBER_2000,
) -> float:
    """Pooled RMSE of one-step predictions against observed accelerations."""
    sq_sum = 0.0
    count = 0
    for traj in dataset:
        err = predict_accel_series(p, traj, conv) - traj.a_f
        sq_sum += float(np.dot(err, err))
        count += len(err)
    return math.sqrt(sq_sum / count)


@dataclass
class CalibrationResult:
    params: IdmParams
    rmse: float
    convention: SignConvention
    n_evaluations: int


def calibrate(
    train: Sequence[Trajectory],
    bounds: Mapping[str, tuple[float, float]] | None = None,
    conv: SignConvention = SignConvention.TREIBER_2000,
    budget: int = 8000,
    n_starts: int = 16,
    seed: int = 0,
    calibrate_c2: bool = False,
    v_d: float = DEFAULT_V_DESIRED,
) -> CalibrationResult:
    """Fit the free parameters by multi-start Nelder-Mead on pooled RMSE.

    Starts are a Latin-hypercube sample of the bounded box (deterministic
    given the seed); each local search is bound-projected. ``budget`` is the
    total objective-evaluation allowance split across starts.
    """
    if not train:
        raise ConfigError("calibration needs a non-empty training set")
    fields = list(CALIBRATED_FIELDS) + (["c2"] if calibrate_c2 else [])
    merged = dict(DEFAULT_BOUNDS)
    if bounds:
        merged.update(bounds)
    for name in fields:
        lo, hi = merged[name]
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"invalid bounds for {name}: [{lo}, {hi}]")
        dlo, dhi = DEFAULT_BOUNDS[name]
        if lo < dlo or hi > dhi:
            raise ConfigError(
                f"bounds for {name} ([{lo}, {hi}]) violate the parameter range [{dlo}, {dhi}]"
            )
    box = np.array([merged[name] for name in fields])
    dim = len(fields)
    min_budget = n_starts * (dim + 1)
    if budget < min_budget:
        raise ConfigError(
            f"budget {budget} below minimum {min_budget} for {n_starts} starts in {dim} dims"
        )

    # Pre-stack the training states once; the objective is then one
    # vectorized pass per candidate.
    v_f = np.concatenate([tr.v_f for tr in train])
    v_l = np.concatenate([tr.v_l for tr in train])
    gap = np.concatenate([tr.gap for tr in train])
    a_true = np.concatenate([tr.a_f for tr in train])
    if np.any(gap <= 0):
        raise DomainError("training data contains non-positive gaps; clean it first")

    evaluations = 0

    def objective(theta: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        theta = np.clip(theta, box[:, 0], box[:, 1])
        kwargs = dict(zip(fields, theta))
        p = IdmParams(v_d=v_d, **kwargs)
        err = acceleration(p, v_f, v_l, gap, conv) - a_true
        return math.sqrt(float(np.mean(err * err)))

    sampler = qmc.LatinHypercube(d=dim, seed=seed)
    starts = qmc.scale(sampler.random(n_starts), box[:, 0], box[:, 1])
    maxfev = max(budget // n_starts, dim + 2)

    best_x, best_f = None, math.inf
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=[tuple(b) for b in box],
            options={"maxfev": maxfev, "xatol": 1e-7, "fatol": 1e-10},
        )
        if res.fun < best_f:
            best_f, best_x = float(res.fun), np.clip(res.x, box[:, 0], box[:, 1])
    params = IdmParams(v_d=v_d, **{k: float(v) for k, v in zip(fields, best_x)})
    return CalibrationResult(
        params=params, rmse=best_f, convention=conv, n_evaluations=evaluations
    )


def save_params(path, result: CalibrationResult) -> None:
    """Flat key=value text file: parameter symbols, convention, train RMSE."""
    lines = [f"{k} = {repr(float(v))}" for k, v in result.params.as_dict().items()]
    lines.append(f"convention = {result.convention.value}")
    lines.append(f"rmse = {repr(result.rmse)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> CalibrationResult:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        conv = SignConvention.parse(values.pop("convention"))
        rmse = float(values.pop("rmse"))
        params = IdmParams(**{k: float(v) for k, v in values.items()})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed parameter file {path}: {exc}") from None
    return CalibrationResult(params=params, rmse=rmse, convention=conv, n_evaluations=0)
