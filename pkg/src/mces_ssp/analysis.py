"""Exact dynamic programming for undiscounted episodic MDPs.

Policy evaluation by dense LU, value and policy iteration, the maximal
expected episode length ``w``, the termination horizon ``K_eta``,
suboptimality gaps and the MCES parameter schedules derived from them.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .mdp import ImproperPolicyError, MdpError, MdpSpec, Policy, require_valid

TIE_TOL = 1e-12
RESIDUAL_TOL = 1e-10
ETA_STAR = 1.0 - math.exp(-1.0)
DEFAULT_ENUM_BUDGET = 10**6


class ScheduleError(MdpError):
    pass


class BudgetError(MdpError):
    """Refusal to run an operation whose cost exceeds the configured budget."""


class NonConvergenceError(MdpError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


# -- evaluation ----------------------------------------------------------------


def policy_matrices(spec: MdpSpec, pi: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix over non-terminal states and reward vector under ``pi``."""
    pi.check(spec)
    idx = np.arange(spec.n_states)
    a = pi.as_array()
    return spec.inner[idx, a, :].copy(), spec.reward[idx, a].copy()


def solve_transient(Q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(I - Q) x = b`` by LU with partial pivoting plus one refinement pass."""
    M = np.eye(Q.shape[0]) - Q
    anorm = np.abs(M).sum(axis=0).max()
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ImproperPolicyError(f"singular evaluation system: {exc}") from None
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > 1e-14 or not np.all(np.isfinite(lu)):
        raise ImproperPolicyError(
            f"evaluation system is (near) singular, rcond={rcond:.3g}; policy is not proper"
        )
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    res = b - M @ x
    if np.abs(res).max(initial=0.0) > RESIDUAL_TOL:
        x = x + scipy.linalg.lu_solve((lu, piv), res, check_finite=False)
    return x


def _evaluate(inner, reward, actions):
    idx = np.arange(inner.shape[0])
    v = solve_transient(inner[idx, actions, :], reward[idx, actions])
    q = reward + inner @ v
    return v, q


def exact_policy_evaluation(spec: MdpSpec, pi: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(v_pi, q_pi)`` with ``v`` of shape (S,) and ``q`` of shape (S, A)."""
    pi.check(spec)
    return _evaluate(spec.inner, spec.reward, pi.as_array())


def bellman_apply(spec: MdpSpec, v: np.ndarray) -> np.ndarray:
    return (spec.reward + spec.inner @ np.asarray(v, dtype=float)).max(axis=1)


def w_norm(x: np.ndarray, w: np.ndarray) -> float:
    return float(np.max(np.abs(x) / w))


# -- greedy selection ------------------------------------------------------------


def argmax_set(q: np.ndarray, s: int, tol: float = TIE_TOL) -> set[int]:
    row = np.asarray(q)[s]
    return set(np.flatnonzero(row >= row.max() - tol).tolist())


def _greedy(q, current=None, tol=TIE_TOL):
    best = q.max(axis=1, keepdims=True)
    is_max = q >= best - tol
    first = is_max.argmax(axis=1)
    if current is None:
        return first
    keep = is_max[np.arange(q.shape[0]), current]
    return np.where(keep, current, first)


def greedy_policy(q: np.ndarray, tie_rule: str = "lowest-index", reference: Policy | None = None) -> Policy:
    """Greedy policy w.r.t. ``q``.

    ``tie_rule`` is ``"lowest-index"`` or ``"prefer-current"``; the latter keeps
    the action of ``reference`` whenever it is among the maximizers.
    """
    q = np.asarray(q, dtype=float)
    if tie_rule == "lowest-index":
        return Policy(_greedy(q))
    if tie_rule == "prefer-current":
        if reference is None:
            raise ValueError("prefer-current tie rule needs a reference policy")
        return Policy(_greedy(q, reference.as_array()))
    raise ValueError(f"unknown tie rule {tie_rule!r}")


# -- iteration schemes -----------------------------------------------------------


def _policy_iteration(inner, reward, start, cache=None):
    S, A = reward.shape
    limit = A**S + 1
    current = np.asarray(start, dtype=np.intp)
    history = [current]
    while True:
        key = current.tobytes()
        if cache is not None and key in cache:
            v, q = cache[key]
        else:
            v, q = _evaluate(inner, reward, current)
            if cache is not None:
                cache[key] = (v, q)
        nxt = _greedy(q, current)
        if np.array_equal(nxt, current):
            return history, v, q
        history.append(nxt)
        current = nxt
        if len(history) > limit:
            raise RuntimeError("policy iteration exceeded A^S + 1 steps")


@dataclass
class PolicyIterationResult:
    policies: list[Policy]
    value: np.ndarray
    q: np.ndarray
    optimal: bool = True

    @property
    def steps(self) -> int:
        """Number of improvement steps that changed the policy."""
        return len(self.policies) - 1

    @property
    def final(self) -> Policy:
        return self.policies[-1]


def exact_policy_iteration(spec: MdpSpec, pi0: Policy | None = None, cache: dict | None = None) -> PolicyIterationResult:
    """Exact policy iteration with the prefer-current tie rule.

    Stops at the first repeated policy, which is then optimal. ``cache`` maps
    policy bytes to ``(v, q)`` and may be shared across calls on one instance.
    """
    if pi0 is None:
        pi0 = Policy.constant(spec.n_states)
    pi0.check(spec)
    hist, v, q = _policy_iteration(spec.inner, spec.reward, pi0.as_array(), cache)
    return PolicyIterationResult([Policy(p) for p in hist], v, q)


def compute_w(spec: MdpSpec) -> tuple[np.ndarray, float, float]:
    """Maximal expected episode length per state, its sup norm and ``rho = 1 - 1/||w||``."""
    ones = np.ones_like(spec.reward)
    _, w, _ = _policy_iteration(spec.inner, ones, np.zeros(spec.n_states, dtype=np.intp))
    w_inf = float(w.max())
    return w, w_inf, 1.0 - 1.0 / w_inf


def value_iteration(spec: MdpSpec, tol: float = 1e-10, max_iter: int = 100_000, w: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Iterate the Bellman operator from zero until ``||v - Tv||_w <= tol``.

    Returns the first iterate meeting the tolerance and the number of
    operator applications that produced it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if w is None:
        w = compute_w(spec)[0]
    v = np.zeros(spec.n_states)
    for k in range(max_iter + 1):
        tv = bellman_apply(spec, v)
        res = w_norm(tv - v, w)
        if res <= tol:
            return v, k
        v = tv
    raise NonConvergenceError(
        f"value iteration did not reach tol={tol} in {max_iter} iterations (residual {res:.3e})",
        res,
    )


# -- termination horizon -------------------------------------------------------


def k_eta_cap(n_states: int, eta: float) -> int:
    return 10 * n_states * math.ceil(1.0 / (1.0 - eta))


def compute_k_eta(spec: MdpSpec, eta: float) -> int:
    """Smallest k with worst-case k-step survival probability at most ``1 - eta``."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    cap = k_eta_cap(spec.n_states, eta)
    u = np.ones(spec.n_states)
    for k in range(1, cap + 1):
        u = (spec.inner @ u).max(axis=1)
        if u.max() <= 1.0 - eta:
            return k
    raise ImproperPolicyError(
        f"survival probability still above {1.0 - eta:.4g} after {cap} steps; "
        "check that all policies are proper"
    )


# -- gaps ------------------------------------------------------------------------


def _gap_from_q(q, tol=TIE_TOL):
    best = q.max(axis=1, keepdims=True)
    rest = np.where(q >= best - tol, -np.inf, q)
    margins = best[:, 0] - rest.max(axis=1)
    return float(margins.min())  # +inf where all actions are maximal


def gap_of_policy(spec: MdpSpec, pi: Policy) -> float:
    _, q = exact_policy_evaluation(spec, pi)
    return _gap_from_q(q)


def gap_star(spec: MdpSpec, pi_star: Policy | None = None) -> float:
    if pi_star is None:
        pi_star = exact_policy_iteration(spec).final
    return gap_of_policy(spec, pi_star)


def n_policies(spec: MdpSpec) -> int:
    return spec.n_actions**spec.n_states


def iter_policies(spec: MdpSpec):
    for acts in itertools.product(range(spec.n_actions), repeat=spec.n_states):
        yield Policy(acts)


def check_enum_budget(spec: MdpSpec, budget: int, what: str = "policy enumeration") -> None:
    count = n_policies(spec)
    if count > budget:
        raise BudgetError(
            f"{what} needs A^S = {spec.n_actions}^{spec.n_states} = {count} policies, "
            f"over the budget of {budget}; supply the gap externally (override) instead"
        )


def gap_min(spec: MdpSpec, budget: int = DEFAULT_ENUM_BUDGET) -> float:
    """Minimum suboptimality gap over all deterministic stationary policies (enumerated)."""
    check_enum_budget(spec, budget)
    return min(_gap_from_q(_evaluate(spec.inner, spec.reward, p.as_array())[1]) for p in iter_policies(spec))


# -- schedules -------------------------------------------------------------------


def _log(x, what):
    if not (x > 0) or not math.isfinite(x):
        raise ScheduleError(f"non-positive or non-finite argument {x!r} to log in {what}")
    return math.log(x)


def _check_gap(value, name):
    if value is None:
        return
    if math.isinf(value):
        raise ScheduleError(
            f"{name} is +inf: environment has constant returns; any policy optimal"
        )
    if not value > 0:
        raise ScheduleError(f"{name} must be positive, got {value!r}")


def l_of_eta(k_eta: float, eta: float, delta_star: float) -> int:
    """Improvement-step schedule ``ceil((2K/eta) log(K / (eta * gap*)))``."""
    _check_gap(delta_star, "gap at the optimal policy")
    return math.ceil(2.0 * k_eta / eta * _log(k_eta / (eta * delta_star), "L(eta)"))


def l0_bound(w_inf: float, delta_star: float) -> int:
    """Policy-iteration step bound ``ceil(2 ||w|| log(||w|| / gap*))``."""
    _check_gap(delta_star, "gap at the optimal policy")
    return math.ceil(2.0 * w_inf * _log(w_inf / delta_star, "L0"))


def zeta_of(delta_confidence: float, l_star: int) -> float:
    return 1.0 - (1.0 - delta_confidence) ** (1.0 / l_star)


def n_of_delta(k: float, gap: float, n_states: int, n_actions: int, zeta: float) -> int:
    """Episodes per pair ``ceil((8K^2/gap^2) log(2SA/zeta)^3)``."""
    _check_gap(gap, "minimum gap")
    lg = _log(2.0 * n_states * n_actions / zeta, "N(delta)")
    return math.ceil(8.0 * k * k / (gap * gap) * lg**3)


def t0_of(k: float, n_states: int, n_actions: int, zeta: float) -> float:
    return 2.0 * k * _log(4.0 * n_states * n_actions / zeta, "T0")


@dataclass
class Overrides:
    """Externally known constants replacing the computed ones."""

    delta_min: float | None = None
    delta_star: float | None = None
    k: int | None = None  # K for eta = 1 - 1/e
    k_eta: int | None = None  # K for the supplied eta

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class ScheduleReport:
    n_states: int
    n_actions: int
    eta: float
    delta_confidence: float
    w: list[float]
    w_inf: float
    rho: float
    k_eta: int
    k: int
    delta_star: float
    delta_min: float | None
    L0: int
    L_eta: int
    L_star: int
    zeta: float
    N_delta: int
    T0: float
    overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def schedules(spec: MdpSpec, eta: float = ETA_STAR, delta_confidence: float = 0.1, overrides: Overrides | None = None, budget: int = DEFAULT_ENUM_BUDGET) -> ScheduleReport:
    """All derived constants for one instance.

    The minimum gap over all policies is enumerated when ``A^S <= budget``
    and must come from ``overrides`` otherwise.
    """
    if not 0.0 < eta < 1.0:
        raise ScheduleError(f"eta must lie in (0, 1), got {eta}")
    if not 0.0 < delta_confidence < 1.0:
        raise ScheduleError(f"delta must lie in (0, 1), got {delta_confidence}")
    ov = overrides or Overrides()
    require_valid(spec)
    S, A = spec.n_states, spec.n_actions

    w, w_inf, rho = compute_w(spec)
    k_eta = ov.k_eta if ov.k_eta is not None else compute_k_eta(spec, eta)
    k = ov.k if ov.k is not None else compute_k_eta(spec, ETA_STAR)
    d_star = ov.delta_star if ov.delta_star is not None else gap_star(spec)
    if ov.delta_min is not None:
        d_min = ov.delta_min
    else:
        d_min = gap_min(spec, budget)
    _check_gap(d_star, "gap at the optimal policy")
    _check_gap(d_min, "minimum gap")

    L0 = l0_bound(w_inf, d_star)
    L_eta = l_of_eta(k_eta, eta, d_star)
    L_star = l_of_eta(k, ETA_STAR, d_star)
    zeta = zeta_of(delta_confidence, L_star)
    return ScheduleReport(
        n_states=S,
        n_actions=A,
        eta=eta,
        delta_confidence=delta_confidence,
        w=[float(x) for x in w],
        w_inf=w_inf,
        rho=rho,
        k_eta=int(k_eta),
        k=int(k),
        delta_star=float(d_star),
        delta_min=None if d_min is None else float(d_min),
        L0=L0,
        L_eta=L_eta,
        L_star=L_star,
        zeta=zeta,
        N_delta=n_of_delta(k, d_min, S, A, zeta),
        T0=t0_of(k, S, A, zeta),
        overrides=ov.to_dict(),
    )
