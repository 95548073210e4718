"""Approximated sequential bilevel optimisation with a smooth log-barrier.

The lower-level optimality constraint f(beta, w) <= f*_mu(beta) is enforced by
the barrier P_sigma(zeta), zeta = f(beta, w) - f*_mu(beta), where

    P(zeta; sigma) = -sigma (log(-zeta) + eta1)                  -kappa <= zeta < 0
                   = -sigma (eta2 + eta3 / zeta^2 + eta4 / zeta)  zeta < -kappa
                   = inf                                         zeta >= 0

and f*_mu is the optimum of the ridge-regularised lower problem. Matching value,
slope and curvature of the two branches at zeta = -kappa gives

    eta3 = kappa^2 / 2,  eta4 = 2 kappa,  eta2 = log(kappa) + eta1 + 3/2

and P >= 0 on zeta < 0 requires eta2 <= 0, i.e. eta1 <= -(log(kappa) + 3/2).

Each outer step solves for z*_mu (ridge lower problem), then for w* (upper
objective + barrier + theta ridge), then forms the hypergradient

    grad = dF/dbeta(beta, w*) + P'(zeta) (df/dbeta(beta, w*) - df/dbeta(beta, z*)).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import ConfigError, Tensor

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "mu", "theta", "sigma", "zeta", "F_val", "f_tr", "hypergrad_norm")


class BarrierDomainError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    def __init__(self, msg, zeta=None):
        super().__init__(msg)
        self.zeta = zeta


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


# -- barrier ----------------------------------------------------------------------

def derive_eta(kappa: float = 1.0, eta1: float | None = None) -> tuple:
    if not 0 < kappa <= 1:
        raise ConfigError(f"kappa must lie in (0, 1], got {kappa}")
    limit = -(math.log(kappa) + 1.5)
    if eta1 is None:
        eta1 = limit
    if eta1 > limit + 1e-15:
        raise ConfigError(f"eta1={eta1} makes the barrier negative; need eta1 <= {limit}")
    return (eta1, math.log(kappa) + eta1 + 1.5, kappa * kappa / 2.0, 2.0 * kappa)


def barrier_p(zeta: float, sigma_barrier: float, kappa: float, eta: Sequence[float]) -> float:
    if zeta >= 0:
        return math.inf
    e1, e2, e3, e4 = eta
    if zeta >= -kappa:
        return -sigma_barrier * (math.log(-zeta) + e1)
    iz = 1.0 / zeta  # powers of 1/zeta stay finite for very negative zeta
    return -sigma_barrier * (e2 + e3 * iz * iz + e4 * iz)


def barrier_p_derivs(zeta: float, sigma_barrier: float, kappa: float, eta: Sequence[float]) -> tuple:
    """(dP/dzeta, d2P/dzeta2) for zeta < 0."""
    if zeta >= 0:
        raise BarrierDomainError(f"barrier derivatives undefined at zeta={zeta} >= 0")
    _, _, e3, e4 = eta
    s = sigma_barrier
    if zeta >= -kappa:
        return -s / zeta, s / zeta ** 2
    iz = 1.0 / zeta
    return s * iz * iz * (2 * e3 * iz + e4), -s * iz ** 3 * (6 * e3 * iz + 2 * e4)


def barrier_clamped(zeta: float, sigma_barrier: float, kappa: float, eta, eps: float) -> tuple:
    """Barrier value and slope with zeta capped at -eps.

    Above the cap the barrier continues along its tangent at -eps, so value and
    slope stay consistent for line searches. Returns (value, slope, capped).
    """
    if zeta <= -eps:
        return barrier_p(zeta, sigma_barrier, kappa, eta), barrier_p_derivs(zeta, sigma_barrier, kappa, eta)[0], False
    p0 = barrier_p(-eps, sigma_barrier, kappa, eta)
    d0 = barrier_p_derivs(-eps, sigma_barrier, kappa, eta)[0]
    return p0 + d0 * (zeta + eps), d0, True


# -- problem and schedule ----------------------------------------------------------------

Objective = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass
class BilevelProblem:
    """Upper objective F and lower objective f over (beta, omega).

    ``upper`` and ``lower`` map (beta, omega) to (value, d/dbeta, d/domega).
    ``beta`` and ``omega`` hold the current iterates.
    """

    upper: Objective
    lower: Objective
    beta: np.ndarray
    omega: np.ndarray
    d_val: Any = None
    d_tr: Any = None
    name: str = "problem"
    beta_star: float | None = None
    phi: Callable[[float], float] | None = None
    on_update: Callable | None = None


@dataclass
class ScheduleStep:
    mu: float
    theta: float
    sigma: float


@dataclass
class BarrierSchedule:
    """Decay rule mu_k = theta_k = sigma_k = start * decay^floor(k / every), floored.

    Explicit per-step sequences for mu/theta/sigma override the rule; the last
    element repeats once a sequence runs out.
    """

    start: float = 0.1
    decay: float = 0.5
    every: int = 25
    floor: float = 1e-4
    mu: Sequence[float] | None = None
    theta: Sequence[float] | None = None
    sigma_barrier: Sequence[float] | None = None
    kappa: float = 1.0
    eta1: float | None = None
    inner_steps: int = 50
    inner_lr: float = 1e-2
    omega_steps: int | None = None
    omega_lr: float | None = None
    feasibility_eps: float = 1e-8
    max_violation: float = 1e-6
    tol: float = 0.0
    step_tol: float = 0.0

    def __post_init__(self):
        for name in ("mu", "theta", "sigma_barrier"):
            seq = getattr(self, name)
            if seq is None:
                continue
            seq = [float(v) for v in seq]
            if not seq or min(seq) <= 0 or any(b > a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"{name} must be a positive non-increasing sequence")
            setattr(self, name, seq)
        if self.start <= 0 or not 0 < self.decay <= 1 or self.floor <= 0 or self.every < 1:
            raise ConfigError("decay rule needs start > 0, 0 < decay <= 1, floor > 0, every >= 1")
        self.eta = derive_eta(self.kappa, self.eta1)

    @classmethod
    def constant(cls, value: float, **kw) -> "BarrierSchedule":
        return cls(start=value, decay=1.0, floor=value, **kw)

    def _rule(self, k: int) -> float:
        return max(self.start * self.decay ** (k // self.every), self.floor)

    def at(self, k: int) -> ScheduleStep:
        def pick(seq):
            if seq is None:
                return self._rule(k)
            return seq[min(k, len(seq) - 1)]

        return ScheduleStep(pick(self.mu), pick(self.theta), pick(self.sigma_barrier))


@dataclass
class InnerSolution:
    z_star: np.ndarray
    omega_star: np.ndarray
    f_star_mu: float


@dataclass
class HypergradientResult:
    explicit_part: np.ndarray
    implicit_part: np.ndarray
    total: np.ndarray
    inner: InnerSolution
    diagnostics: dict = field(default_factory=dict)


# -- inner solves -------------------------------------------------------------------

def inner_regularized_solve(problem: BilevelProblem, beta, mu: float, inner_steps: int, inner_lr: float,
                            omega0=None, tol: float = 0.0) -> tuple:
    """Gradient descent on f(beta, w) + mu/2 |w|^2 from a warm start.

    Returns (z_star, f_star_mu, losses).
    """
    if mu <= 0:
        raise ConfigError("mu must be positive")
    w = np.array(problem.omega if omega0 is None else omega0, dtype=np.float64)
    losses = []
    for _ in range(inner_steps):
        val, _, gw = problem.lower(beta, w)
        obj = val + 0.5 * mu * float(w @ w)
        losses.append(obj)
        if not math.isfinite(obj):
            raise DivergenceError("lower-level objective became non-finite", losses)
        g = gw + mu * w
        if tol and float(np.linalg.norm(g)) <= tol:
            break
        w = w - inner_lr * g
    val, _, _ = problem.lower(beta, w)
    f_star = val + 0.5 * mu * float(w @ w)
    if not math.isfinite(f_star):
        raise DivergenceError("lower-level objective became non-finite", losses + [f_star])
    losses.append(f_star)
    return w, f_star, losses


def _composite(problem, beta, w, f_star_mu, step: ScheduleStep, sched: BarrierSchedule):
    F, _, gF = problem.upper(beta, w)
    f, _, gf = problem.lower(beta, w)
    zeta = f - f_star_mu
    p, dp, capped = barrier_clamped(zeta, step.sigma, sched.kappa, sched.eta, sched.feasibility_eps)
    val = F + p + 0.5 * step.theta * float(w @ w)
    grad = gF + dp * gf + step.theta * w
    return val, grad, zeta, capped


def omega_solve(problem: BilevelProblem, beta, step: ScheduleStep, sched: BarrierSchedule,
                z_star, f_star_mu: float, omega0=None) -> tuple:
    """Minimise F + P_sigma(f - f*_mu) + theta/2 |w|^2 by backtracking gradient descent.

    The start is the warm iterate if strictly feasible, else z* (which has
    zeta = -mu/2 |z*|^2). Returns (omega_star, info).
    """
    starts = [np.array(problem.omega if omega0 is None else omega0, dtype=np.float64), np.array(z_star, dtype=np.float64)]
    best = None
    for cand in starts:
        f, _, _ = problem.lower(beta, cand)
        zeta = f - f_star_mu
        if not math.isfinite(zeta):
            continue
        if zeta < -sched.feasibility_eps:
            best = (cand, zeta)
            break
        if best is None or zeta < best[1]:
            best = (cand, zeta)
    if best is None:
        raise InfeasibleError("no start with a finite constraint residual", None)
    w, zeta0 = best
    if zeta0 >= -sched.feasibility_eps:
        log.debug("no strictly feasible start (zeta=%.3e); barrier cap active", zeta0)

    steps = sched.omega_steps or sched.inner_steps
    lr_max = sched.omega_lr or sched.inner_lr
    val, grad, zeta, capped = _composite(problem, beta, w, f_star_mu, step, sched)
    t = lr_max
    n_capped = int(capped)
    it = 0
    for it in range(steps):
        gg = float(grad @ grad)
        if not math.isfinite(val) or not math.isfinite(gg):
            raise DivergenceError("barrier subproblem became non-finite", [val])
        if gg <= sched.tol ** 2:
            break
        t = min(2.0 * t, lr_max)
        while True:
            w_new = w - t * grad
            v_new, g_new, z_new, c_new = _composite(problem, beta, w_new, f_star_mu, step, sched)
            if math.isfinite(v_new) and v_new <= val - 1e-4 * t * gg:
                break
            t *= 0.5
            if t < 1e-30:
                break
        if t < 1e-30:
            break
        moved = t * math.sqrt(gg)
        w, val, grad, zeta = w_new, v_new, g_new, z_new
        n_capped += int(c_new)
        if moved <= sched.step_tol * (1.0 + float(np.linalg.norm(w))):
            break
    if zeta > sched.max_violation:
        raise InfeasibleError(f"barrier subproblem ended infeasible (zeta={zeta:.3e})", zeta)
    return w, {"zeta": zeta, "objective": val, "iterations": it + 1, "capped_evals": n_capped}


def implicit_grad(problem: BilevelProblem, beta, omega_star, z_star, step: ScheduleStep,
                  sched: BarrierSchedule) -> tuple:
    """G = P'(zeta) (df/dbeta at w* - df/dbeta at z*), beta the only differentiation variable.

    Returns (G, zeta, f_tr at w*).
    """
    f_w, gb_w, _ = problem.lower(beta, omega_star)
    f_z, gb_z, _ = problem.lower(beta, z_star)
    f_star_mu = f_z + 0.5 * step.mu * float(np.dot(z_star, z_star))
    zeta = f_w - f_star_mu
    if not math.isfinite(zeta) or zeta > sched.max_violation:
        raise BarrierDomainError(f"implicit gradient needs zeta < 0, got {zeta}")
    _, dp, capped = barrier_clamped(zeta, step.sigma, sched.kappa, sched.eta, sched.feasibility_eps)
    if capped:
        log.debug("implicit gradient evaluated with capped zeta (%.3e)", zeta)
    return dp * (gb_w - gb_z), zeta, f_w


def hypergradient(problem: BilevelProblem, beta, k_or_step, sched: BarrierSchedule, omega0=None) -> HypergradientResult:
    step = sched.at(k_or_step) if isinstance(k_or_step, (int, np.integer)) else k_or_step
    beta = np.asarray(beta, dtype=np.float64)
    z, f_star, inner_losses = inner_regularized_solve(
        problem, beta, step.mu, sched.inner_steps, sched.inner_lr, omega0, sched.tol
    )
    w, info = omega_solve(problem, beta, step, sched, z, f_star, omega0)
    G, zeta, f_tr = implicit_grad(problem, beta, w, z, step, sched)
    F_val, gF_beta, _ = problem.upper(beta, w)
    total = gF_beta + G
    diagnostics = dict(info, zeta=zeta, F_val=F_val, f_tr=f_tr, inner_losses=inner_losses,
                       mu=step.mu, theta=step.theta, sigma=step.sigma)
    return HypergradientResult(gF_beta, G, total, InnerSolution(z, w, f_star), diagnostics)


@dataclass
class TraceRow:
    step: int
    mu: float
    theta: float
    sigma: float
    zeta: float
    F_val: float
    f_tr: float
    hypergrad_norm: float
    beta: np.ndarray

    def csv_row(self) -> list:
        return [self.step] + [repr(float(v)) for v in (self.mu, self.theta, self.sigma, self.zeta,
                                                       self.F_val, self.f_tr, self.hypergrad_norm)]


def asblo_train(problem: BilevelProblem, schedule: BarrierSchedule, outer_steps: int, outer_lr: float,
                callback: Callable | None = None) -> list:
    """Outer gradient descent on beta; omega is carried between steps as the warm start.

    Each row's F_val is the value-function estimate F(beta_k, w*_k).
    """
    trace = []
    for k in range(outer_steps):
        res = hypergradient(problem, problem.beta, k, schedule)
        d = res.diagnostics
        norm = float(np.linalg.norm(res.total))
        row = TraceRow(k, d["mu"], d["theta"], d["sigma"], d["zeta"], d["F_val"], d["f_tr"], norm, problem.beta.copy())
        trace.append(row)
        if not math.isfinite(norm):
            raise DivergenceError(f"hypergradient non-finite at outer step {k}", trace)
        problem.omega = res.inner.omega_star
        problem.beta = problem.beta - outer_lr * res.total
        if problem.on_update is not None:
            problem.on_update(problem.beta, problem.omega)
        if callback is not None:
            callback(k, row, res)
    return trace


def write_trace(trace: list, path_or_file) -> None:
    if hasattr(path_or_file, "write"):
        _write_rows(trace, path_or_file)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(trace, fh)


def _write_rows(trace, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in trace:
        w.writerow(row.csv_row())


# -- analytic validation problems -----------------------------------------------------

def _autodiff_objective(fn: Callable[[Tensor, Tensor], Tensor]) -> Objective:
    def objective(beta, omega):
        b = Tensor(np.asarray(beta, dtype=np.float64), requires_grad=True)
        w = Tensor(np.asarray(omega, dtype=np.float64), requires_grad=True)
        out = fn(b, w)
        out.backward()
        return float(out.data), b.grad.copy(), w.grad.copy()

    return objective


def make_toy_problem(kind: str = "quadratic", beta0: float = 0.0, omega0: float = 0.0) -> BilevelProblem:
    """Scalar bilevel problems with closed-form value functions.

    quadratic:       F = (w - 1)^2 + (b - 2)^2, f = (w - b)^2 / 2, phi(b) = (b-1)^2 + (b-2)^2, b* = 1.5
    constraint_only: F = (w - b)^2,             f = w^2 / 2,       phi(b) = b^2,               b* = 0
    """
    if kind == "quadratic":
        upper = _autodiff_objective(lambda b, w: T.tsum(T.square(w - 1.0) + T.square(b - 2.0)))
        lower = _autodiff_objective(lambda b, w: T.tsum(T.square(w - b)) * 0.5)
        return BilevelProblem(upper, lower, np.array([beta0]), np.array([omega0]), name=kind,
                              beta_star=1.5, phi=lambda b: (b - 1.0) ** 2 + (b - 2.0) ** 2)
    if kind == "constraint_only":
        upper = _autodiff_objective(lambda b, w: T.tsum(T.square(w - b)))
        lower = _autodiff_objective(lambda b, w: T.tsum(T.square(w)) * 0.5)
        return BilevelProblem(upper, lower, np.array([beta0]), np.array([omega0]), name=kind,
                              beta_star=0.0, phi=lambda b: b ** 2)
    raise ConfigError(f"unknown toy problem {kind!r}")


TOY_KINDS = ("quadratic", "constraint_only")


def toy_schedule(**kw) -> BarrierSchedule:
    """Defaults for the scalar problems: long, tolerance-stopped inner solves."""
    base = dict(inner_steps=200, inner_lr=0.5, omega_steps=500, feasibility_eps=1e-8, tol=1e-12, step_tol=1e-13)
    base.update(kw)
    return BarrierSchedule(**base)
