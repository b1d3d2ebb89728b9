"""Seeded episode simulation and Monte Carlo estimation of action values.

Every start pair of every iteration draws from its own counter-based stream
(Philox keyed by ``(seed, state, action, iteration)``), so estimates do not
depend on how pairs are scheduled across threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mdp import MdpError, MdpSpec, Policy

DEFAULT_CAP = 10**7
BLOCK = 1 << 17


class EpisodeCapError(MdpError):
    pass


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *ids)``."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *ids])))


def default_threads() -> int:
    env = os.environ.get("MCES_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class Trajectory:
    start: tuple[int, int]
    steps: list[tuple[int, int, float]]
    total_return: float

    @property
    def length(self) -> int:
        return len(self.steps)


def _cap_error(cap):
    return EpisodeCapError(f"episode exceeded safety cap of {cap} steps; check properness")


def sample_episode(spec: MdpSpec, pi: Policy, start: tuple[int, int], rng: np.random.Generator, cap: int = DEFAULT_CAP) -> Trajectory:
    """Simulate one episode from ``start`` and then follow ``pi`` until termination."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    S = spec.n_states
    s, a = start
    steps = []
    total = 0.0
    while True:
        if len(steps) >= cap:
            raise _cap_error(cap)
        r = float(spec.reward[s, a])
        steps.append((s, a, r))
        total += r
        nxt = int(rng.choice(S + 1, p=spec.transition[s, a]))
        if nxt == S:
            return Trajectory((start[0], start[1]), steps, total)
        s, a = nxt, pi[nxt]


def write_trajectory_dump(trajectories, path, spec: MdpSpec | None = None) -> None:
    """One episode per line: start, length, return (tab separated)."""
    with open(path, "w") as fh:
        for t in trajectories:
            s, a = t.start
            label = f"{spec.state_names[s]},{spec.action_names[a]}" if spec else f"{s},{a}"
            fh.write(f"{label}\t{t.length}\t{t.total_return!r}\n")


@dataclass
class _Block:
    returns: np.ndarray
    lengths: np.ndarray
    fv_sum: np.ndarray | None  # per state, sum of first-visit returns of (s, pi(s))
    fv_count: np.ndarray | None


def _simulate(spec, actions, start, m, rng, cap, first_visit):
    S = spec.n_states
    s0, a0 = start
    idx_all = np.arange(S)
    cdf = np.cumsum(spec.transition[idx_all, actions], axis=1)[:, :S]
    r_pi = spec.reward[idx_all, actions]
    start_cdf = np.cumsum(spec.transition[s0, a0])[:S]

    ret = np.full(m, spec.reward[s0, a0])
    length = np.ones(m, dtype=np.int64)
    cur = np.searchsorted(start_cdf, rng.random(m), side="right")
    live = np.flatnonzero(cur < S)
    cur = cur[live]
    fp = None
    if first_visit:
        fp = np.full((m, S), np.nan)
        if actions[s0] == a0:
            fp[:, s0] = 0.0
    while live.size:
        if length[live[0]] >= cap:
            raise _cap_error(cap)
        if fp is not None:
            seen = np.isnan(fp[live, cur])
            fp[live[seen], cur[seen]] = ret[live[seen]]
        ret[live] += r_pi[cur]
        length[live] += 1
        u = rng.random(live.size)
        nxt = (cdf[cur] <= u[:, None]).sum(axis=1)
        keep = nxt < S
        live = live[keep]
        cur = nxt[keep]
    if fp is None:
        return _Block(ret, length, None, None)
    visited = ~np.isnan(fp)
    fv = np.where(visited, ret[:, None] - np.nan_to_num(fp), 0.0)
    return _Block(ret, length, fv.sum(axis=0), visited.sum(axis=0))


def sample_returns(spec: MdpSpec, pi: Policy, start: tuple[int, int], n: int, rng: np.random.Generator, cap: int = DEFAULT_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Returns and lengths of ``n`` independent episodes from ``start`` under ``pi``."""
    rets, lens = [], []
    actions = pi.as_array()
    for lo in range(0, n, BLOCK):
        b = _simulate(spec, actions, start, min(BLOCK, n - lo), rng, cap, False)
        rets.append(b.returns)
        lens.append(b.lengths)
    return np.concatenate(rets), np.concatenate(lens)


@dataclass
class PairStats:
    ret_sum: float
    episodes: int
    steps: int
    max_length: int
    fv_sum: np.ndarray | None = None
    fv_count: np.ndarray | None = None


def _pair_stats(spec, actions, start, n, seed, iteration, cap, first_visit):
    rng = stream(seed, start[0], start[1], iteration)
    S = spec.n_states
    tot = PairStats(0.0, 0, 0, 0)
    if first_visit:
        tot.fv_sum, tot.fv_count = np.zeros(S), np.zeros(S, dtype=np.int64)
    for lo in range(0, n, BLOCK):
        b = _simulate(spec, actions, start, min(BLOCK, n - lo), rng, cap, first_visit)
        tot.ret_sum += float(b.returns.sum())
        tot.episodes += b.returns.size
        tot.steps += int(b.lengths.sum())
        tot.max_length = max(tot.max_length, int(b.lengths.max()))
        if first_visit:
            tot.fv_sum += b.fv_sum
            tot.fv_count += b.fv_count
    return tot


@dataclass
class MCEstimate:
    q: np.ndarray
    counts: np.ndarray  # returns averaged into each entry
    episodes: int
    steps: int
    max_length: int


def monte_carlo_q(spec: MdpSpec, pi: Policy, n_episodes: int, seed: int = 0, iteration: int = 0, first_visit: bool = False, cap: int = DEFAULT_CAP, threads: int | None = None) -> MCEstimate:
    """Estimate ``q_pi`` with ``n_episodes`` episodes started at every state-action pair.

    In first-visit mode each episode also contributes its first-visit return to
    every pair it visits; ``counts`` then differs between pairs.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    pi.check(spec)
    S, A = spec.n_states, spec.n_actions
    actions = pi.as_array()
    pairs = [(s, a) for s in range(S) for a in range(A)]

    def job(pair):
        return _pair_stats(spec, actions, pair, n_episodes, seed, iteration, cap, first_visit)

    threads = threads or default_threads()
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(job, pairs))
    else:
        stats = [job(p) for p in pairs]

    sums = np.zeros((S, A))
    counts = np.zeros((S, A), dtype=np.int64)
    for (s, a), st in zip(pairs, stats):
        sums[s, a] += st.ret_sum
        counts[s, a] += st.episodes
        if first_visit:
            extra_sum, extra_count = st.fv_sum.copy(), st.fv_count.copy()
            if actions[s] == a:
                # the start pair's own first visit is already counted above
                extra_sum[s] -= st.ret_sum
                extra_count[s] -= st.episodes
            sums[np.arange(S), actions] += extra_sum
            counts[np.arange(S), actions] += extra_count
    return MCEstimate(
        q=sums / counts,
        counts=counts,
        episodes=sum(st.episodes for st in stats),
        steps=sum(st.steps for st in stats),
        max_length=max(st.max_length for st in stats),
    )
