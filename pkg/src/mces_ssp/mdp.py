"""Tabular episodic MDP model, structural validation and the JSON file format.

Transition rows are stored over ``S' ∪ {terminal}``: index ``S`` of the last
axis is the implicit absorbing terminal state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-9


class MdpError(ValueError):
    """Base class for malformed or invalid MDP instances."""


class StructuralError(MdpError):
    pass


class StochasticityError(MdpError):
    pass


class ParseError(MdpError):
    pass


class ImproperPolicyError(MdpError):
    """Raised when an operation needs a proper policy (or all-proper MDP)."""


class DiscountError(MdpError):
    pass


@dataclass(frozen=True, eq=False)
class MdpSpec:
    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    transition: np.ndarray  # (S, A, S + 1), last column is the terminal
    reward: np.ndarray  # (S, A)
    discount: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(str(s) for s in self.state_names))
        object.__setattr__(self, "action_names", tuple(str(a) for a in self.action_names))
        p = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def inner(self) -> np.ndarray:
        """Sub-stochastic kernel restricted to the non-terminal states, shape (S, A, S)."""
        return self.transition[:, :, :-1]

    @property
    def terminal_prob(self) -> np.ndarray:
        return self.transition[:, :, -1]

    def __eq__(self, other):
        if not isinstance(other, MdpSpec):
            return NotImplemented
        return (
            self.state_names == other.state_names
            and self.action_names == other.action_names
            and self.discount == other.discount
            and self.transition.shape == other.transition.shape
            and self.reward.shape == other.reward.shape
            and bool(np.array_equal(self.transition, other.transition))
            and bool(np.array_equal(self.reward, other.reward))
        )

    __hash__ = None


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary policy; ``action_of[s]`` is the action index at state ``s``."""

    action_of: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "action_of", tuple(int(a) for a in self.action_of))

    def __len__(self):
        return len(self.action_of)

    def __getitem__(self, s):
        return self.action_of[s]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.action_of, dtype=np.intp)

    @classmethod
    def constant(cls, n_states: int, action: int = 0) -> "Policy":
        return cls((action,) * n_states)

    def check(self, spec: MdpSpec) -> None:
        if len(self.action_of) != spec.n_states:
            raise StructuralError(
                f"policy has {len(self.action_of)} entries, MDP has {spec.n_states} states"
            )
        for s, a in enumerate(self.action_of):
            if not 0 <= a < spec.n_actions:
                raise StructuralError(f"policy action {a} at state {s} out of range")

    def names(self, spec: MdpSpec) -> list[str]:
        return [spec.action_names[a] for a in self.action_of]


@dataclass
class ValidationReport:
    stochastic_ok: bool
    reward_range_ok: bool
    all_policies_proper: bool
    survival_profile: list[float]
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.stochastic_ok and self.reward_range_ok and self.all_policies_proper

    def to_dict(self) -> dict:
        return {
            "stochastic_ok": self.stochastic_ok,
            "reward_range_ok": self.reward_range_ok,
            "all_policies_proper": self.all_policies_proper,
            "survival_profile": list(self.survival_profile),
            "messages": list(self.messages),
        }


def check_structure(spec: MdpSpec) -> None:
    """Raise StructuralError unless the arrays have the declared sizes."""
    S, A = spec.n_states, spec.n_actions
    if S < 1 or A < 1:
        raise StructuralError(f"need at least one state and one action (got S={S}, A={A})")
    p, r = spec.transition, spec.reward
    if p.ndim != 3 or p.shape[0] != S:
        raise StructuralError(f"transitions: expected {S} state rows, got shape {p.shape}")
    for s in range(S):
        if p.shape[1] != A:
            raise StructuralError(f"transitions[{s}]: expected {A} action rows, got {p.shape[1]}")
    if p.shape[2] != S + 1:
        raise StructuralError(
            f"transitions[0][0]: expected {S + 1} entries (states + terminal), got {p.shape[2]}"
        )
    if r.shape != (S, A):
        raise StructuralError(f"rewards: expected shape ({S}, {A}), got {r.shape}")
    if not np.all(np.isfinite(p)):
        s, a, _ = np.argwhere(~np.isfinite(p))[0]
        raise StructuralError(f"transitions[{s}][{a}] contains a non-finite entry")
    if not np.all(np.isfinite(r)):
        s, a = np.argwhere(~np.isfinite(r))[0]
        raise StructuralError(f"rewards[{s}][{a}] is not finite")


def check_stochastic(spec: MdpSpec) -> None:
    p = spec.transition
    neg = np.argwhere(p < 0)
    if len(neg):
        s, a, j = neg[0]
        raise StochasticityError(f"transitions[{s}][{a}][{j}] = {p[s, a, j]!r} is negative")
    big = np.argwhere(p > 1)
    if len(big):
        s, a, j = big[0]
        raise StochasticityError(f"transitions[{s}][{a}][{j}] = {p[s, a, j]!r} exceeds 1")
    sums = p.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if len(bad):
        s, a = bad[0]
        raise StochasticityError(
            f"transitions[{s}][{a}] sums to {sums[s, a]!r}, not 1 (tolerance {ROW_SUM_TOL})"
        )


def survival_profile(inner: np.ndarray, n_steps: int) -> np.ndarray:
    """Worst-case non-termination probabilities ``||u_k||_inf`` for k = 0..n_steps.

    ``u_0 = 1`` and ``u_{k+1}(s) = max_a sum_{s'} p(s'|s,a) u_k(s')``.
    """
    u = np.ones(inner.shape[0])
    out = [1.0]
    for _ in range(n_steps):
        u = (inner @ u).max(axis=1)
        out.append(float(u.max()))
    return np.array(out)


def trapping_states(inner: np.ndarray) -> np.ndarray:
    """States from which some stationary policy never reaches the terminal.

    Greatest fixed point of ``E = {s : some action keeps all mass inside E}``,
    computed on supports so that rounding in the probabilities cannot matter.
    """
    S = inner.shape[0]
    stay = np.ones(S, dtype=bool)
    support = inner > 0
    term = 1.0 - inner.sum(axis=2)
    closed_mass = np.isclose(term, 0.0, rtol=0.0, atol=ROW_SUM_TOL)
    for _ in range(S + 1):
        # an action keeps the chain in `stay` iff it has no terminal mass and
        # every successor is in `stay`
        ok = closed_mass & ~np.any(support & ~stay[None, None, :], axis=2)
        new = stay & ok.any(axis=1)
        if np.array_equal(new, stay):
            break
        stay = new
    return stay


def validate(spec: MdpSpec) -> ValidationReport:
    """Check stochasticity, reward range and that every stationary policy is proper.

    Structural problems (wrong array sizes) raise ``StructuralError``;
    stochasticity violations raise ``StochasticityError``.
    """
    check_structure(spec)
    check_stochastic(spec)
    messages = []
    r = spec.reward
    reward_ok = bool(np.all((r >= 0.0) & (r <= 1.0)))
    if not reward_ok:
        s, a = np.argwhere((r < 0.0) | (r > 1.0))[0]
        messages.append(f"rewards[{s}][{a}] = {r[s, a]!r} outside [0, 1]")
    profile = survival_profile(spec.inner, spec.n_states)
    trap = trapping_states(spec.inner)
    proper = not trap.any()
    if not proper:
        names = [spec.state_names[i] for i in np.flatnonzero(trap)]
        messages.append(
            "some stationary policy never terminates from states " + ", ".join(names)
        )
    return ValidationReport(
        stochastic_ok=True,
        reward_range_ok=reward_ok,
        all_policies_proper=proper,
        survival_profile=[float(x) for x in profile],
        messages=messages,
    )


def require_valid(spec: MdpSpec, undiscounted: bool = True) -> ValidationReport:
    """Validate and raise unless the instance satisfies every analysis assumption."""
    report = validate(spec)
    if not report.reward_range_ok:
        raise MdpError("; ".join(report.messages))
    if not report.all_policies_proper:
        raise ImproperPolicyError("; ".join(report.messages))
    if undiscounted and spec.discount != 1.0:
        raise DiscountError(
            f"analysis is defined for undiscounted episodes only (discount={spec.discount})"
        )
    return report


# -- file format -------------------------------------------------------------


def spec_to_dict(spec: MdpSpec) -> dict:
    return {
        "states": list(spec.state_names),
        "actions": list(spec.action_names),
        "discount": spec.discount,
        "transitions": spec.transition.tolist(),
        "rewards": spec.reward.tolist(),
    }


def spec_from_dict(doc, source: str = "<dict>") -> MdpSpec:
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be an object")
    for key in ("states", "actions", "discount", "transitions", "rewards"):
        if key not in doc:
            raise ParseError(f"{source}: missing field '{key}'")
    states, actions = doc["states"], doc["actions"]
    if not isinstance(states, list) or not all(isinstance(s, str) for s in states):
        raise ParseError(f"{source}: field 'states' must be an array of strings")
    if not isinstance(actions, list) or not all(isinstance(a, str) for a in actions):
        raise ParseError(f"{source}: field 'actions' must be an array of strings")
    discount = doc["discount"]
    if not isinstance(discount, (int, float)) or isinstance(discount, bool):
        raise ParseError(f"{source}: field 'discount' must be a number")
    if not 0.0 < discount <= 1.0:
        raise ParseError(f"{source}: field 'discount' must lie in (0, 1]")
    S, A = len(states), len(actions)
    trans = doc["transitions"]
    if not isinstance(trans, list) or len(trans) != S:
        raise StructuralError(f"{source}: field 'transitions' must have {S} state rows")
    for s, block in enumerate(trans):
        if not isinstance(block, list) or len(block) != A:
            raise StructuralError(f"{source}: transitions[{s}] must have {A} action rows")
        for a, row in enumerate(block):
            if not isinstance(row, list) or len(row) != S + 1:
                raise StructuralError(
                    f"{source}: transitions[{s}][{a}] must have {S + 1} entries"
                )
            _check_numbers(row, f"{source}: transitions[{s}][{a}]")
    rewards = doc["rewards"]
    if not isinstance(rewards, list) or len(rewards) != S:
        raise StructuralError(f"{source}: field 'rewards' must have {S} state rows")
    for s, row in enumerate(rewards):
        if not isinstance(row, list) or len(row) != A:
            raise StructuralError(f"{source}: rewards[{s}] must have {A} entries")
        _check_numbers(row, f"{source}: rewards[{s}]")
    return MdpSpec(
        state_names=states,
        action_names=actions,
        transition=np.array(trans, dtype=float).reshape(S, A, S + 1),
        reward=np.array(rewards, dtype=float).reshape(S, A),
        discount=float(discount),
    )


def _check_numbers(row, where):
    for j, x in enumerate(row):
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
            raise ParseError(f"{where}[{j}] is not a finite number")


def load_mdp(path) -> MdpSpec:
    """Read an MDP file and validate it (stochasticity and structure errors raise)."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    spec = spec_from_dict(doc, str(path))
    validate(spec)
    return spec


def save_mdp(spec: MdpSpec, path) -> None:
    # json writes floats with repr(), the shortest round-trip form
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=1) + "\n")
