"""Max-min fair resource-block allocation.

Rates are indexed ``d[u, t, r]`` (user, symbol, resource block).  An allocation
is an owner matrix ``owner[t, r]`` of 0-based user indices, which is the same
as a set of binary masks X_u whose sum over users is all-ones.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channel import Cfr, OfdmConfig

RB_SUBCARRIERS = 12
THERMAL_NOISE_DBM_HZ = -174.0
DEFAULT_NF_DB = 7.0
EXACT_LIMIT = 10**7


class PartitionError(ValueError):
    """An allocation leaves a resource block unowned or doubly owned."""


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class FairnessReport:
    throughput: np.ndarray
    t_min: float
    gap: float
    variance: float
    total: float


# -- rates --------------------------------------------------------------------

def rb_bandwidth(ofdm: OfdmConfig) -> float:
    return RB_SUBCARRIERS * ofdm.scs_hz


def noise_power_dbm(ofdm: OfdmConfig, nf_db: float = DEFAULT_NF_DB) -> float:
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(rb_bandwidth(ofdm)) + nf_db


def shannon_rate(snr, bandwidth_hz: float) -> np.ndarray:
    return bandwidth_hz * np.log2(1.0 + np.asarray(snr, dtype=float))


def rb_gains(cfr: Cfr, weight, ofdm: OfdmConfig) -> np.ndarray:
    """Mean |w^H h|^2 over each RB's subcarriers: shape (n_symbols, n_rbs)."""
    K = cfr.h.shape[0]
    if K < RB_SUBCARRIERS:
        raise ValueError(f"{K} subcarriers cannot hold a {RB_SUBCARRIERS}-subcarrier RB")
    R = K // RB_SUBCARRIERS
    y = cfr.h @ np.asarray(weight, dtype=complex).conj()  # (K, S)
    p = np.abs(y[: R * RB_SUBCARRIERS]) ** 2
    return p.reshape(R, RB_SUBCARRIERS, -1).mean(axis=1).T


def compute_rates(cfr_per_user, weights, ofdm: OfdmConfig, tx_power_dbm: float,
                  nf_db: float = DEFAULT_NF_DB) -> np.ndarray:
    """Shannon rate per (user, symbol, RB) in bit/s under each user's beam.

    ``tx_power_dbm`` is the total transmit power; ``weights`` holds one
    unit-norm beam per user.
    """
    noise_mw = 10 ** (noise_power_dbm(ofdm, nf_db) / 10)
    p_mw = 10 ** (tx_power_dbm / 10)
    rates = []
    for cfr, w in zip(cfr_per_user, weights, strict=True):
        snr = p_mw * rb_gains(cfr, w, ofdm) / noise_mw
        rates.append(shannon_rate(snr, rb_bandwidth(ofdm)))
    return np.array(rates, dtype=float)


# -- evaluation ---------------------------------------------------------------

def check_partition(owner, n_users: int) -> None:
    o = np.asarray(owner)
    bad = np.argwhere((o < 0) | (o >= n_users) | (o != np.round(o)))
    if len(bad):
        t, r = bad[0]
        raise PartitionError(f"resource block (t={t}, r={r}) has no valid owner")


def masks(owner, n_users: int) -> np.ndarray:
    """Binary allocation matrices X_u, shape (n_users, T, R)."""
    o = np.asarray(owner)
    return (o[None] == np.arange(n_users)[:, None, None]).astype(int)


def throughputs(owner, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return np.sum(d * masks(owner, d.shape[0]), axis=(1, 2))


def evaluate(owner, d) -> FairnessReport:
    d = np.asarray(d, dtype=float)
    owner = np.asarray(owner)
    if owner.shape != d.shape[1:]:
        raise PartitionError(f"owner shape {owner.shape} does not match {d.shape[1:]}")
    check_partition(owner, d.shape[0])
    T = throughputs(owner, d)
    return FairnessReport(T, float(T.min()), float(T.max() - T.min()), float(np.var(T)), float(T.sum()))


def leximin_key(T) -> tuple[float, ...]:
    return tuple(np.sort(np.asarray(T, dtype=float)))


# -- exact solver ----------------------------------------------------------------

def solve_exact(d, limit: int = EXACT_LIMIT) -> tuple[np.ndarray, float]:
    """Optimal max-min allocation by branch and bound over RBs in row-major order.

    Among optimal allocations, returns the lexicographically smallest owner array.
    """
    d = np.asarray(d, dtype=float)
    N, T, R = d.shape
    n = T * R
    if N ** n > limit:
        raise InstanceTooLarge(f"{N}^{n} assignments exceed the limit of {limit}")
    rates = d.reshape(N, n)
    # suffix[u, i] = what user u could still gain from RBs i..n-1
    suffix = np.concatenate([np.cumsum(rates[:, ::-1], axis=1)[:, ::-1], np.zeros((N, 1))], axis=1)
    rates_l = rates.T.tolist()
    suffix_l = suffix.T.tolist()

    def search(target: float | None):
        """Depth-first in lexicographic order.

        With ``target`` None: find the optimal value.  Otherwise return the first
        (lexicographically smallest) assignment reaching ``target``.
        """
        best = [-math.inf, None]
        acc = [0.0] * N
        seq = [0] * n

        def rec(i: int) -> bool:
            bound = min(a + s for a, s in zip(acc, suffix_l[i]))
            if target is None:
                if bound <= best[0]:
                    return False
            elif bound < target:
                return False
            if i == n:
                val = min(acc)
                if target is None:
                    best[0], best[1] = val, list(seq)
                    return False
                best[0], best[1] = val, list(seq)
                return True
            row = rates_l[i]
            for u in range(N):
                acc[u] += row[u]
                seq[i] = u
                done = rec(i + 1)
                acc[u] -= row[u]
                if done:
                    return True
            return False

        rec(0)
        return best

    opt, _ = search(None)
    # second pass reproduces the optimum exactly; tolerance guards float reassociation
    val, seq = search(opt - 1e-12 * max(1.0, abs(opt)))
    owner = np.array(seq, dtype=int).reshape(T, R)
    return owner, float(min(throughputs(owner, d)))


# -- heuristic -------------------------------------------------------------------

def _greedy(d: np.ndarray) -> np.ndarray:
    N, T, R = d.shape
    rates = d.reshape(N, T * R)
    owner = np.full(T * R, -1)
    acc = np.zeros(N)
    free = np.ones(T * R, dtype=bool)
    for _ in range(T * R):
        u = int(np.argmin(acc))
        cand = np.where(free, rates[u], -np.inf)
        rb = int(np.argmax(cand))
        owner[rb] = u
        free[rb] = False
        acc[u] += rates[u, rb]
    return owner


def _subsets(items, max_size: int):
    out = [()]
    for k in range(1, max_size + 1):
        out.extend(itertools.combinations(items, k))
    return out


def _best_pair_exchange(rates, owner, acc, a, b, max_size, eps):
    """Best leximin-improving exchange of RB subsets between users a and b.

    Users other than a and b keep their throughput, and leximin ignores common
    elements, so comparing the sorted pair (T_a, T_b) is enough.
    """
    sa = _subsets(np.flatnonzero(owner == a).tolist(), max_size)
    sb = _subsets(np.flatnonzero(owner == b).tolist(), max_size)
    ra, rb = rates[a], rates[b]
    a_loss = np.array([ra[list(s)].sum() for s in sa])
    b_gain = np.array([rb[list(s)].sum() for s in sa])
    b_loss = np.array([rb[list(s)].sum() for s in sb])
    a_gain = np.array([ra[list(s)].sum() for s in sb])
    x = acc[a] - a_loss[:, None] + a_gain[None, :]
    y = acc[b] - b_loss[None, :] + b_gain[:, None]
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    lo0, hi0 = min(acc[a], acc[b]), max(acc[a], acc[b])
    better = (lo > lo0 + eps) | ((lo >= lo0 - eps) & (hi > hi0 + eps))
    better[0, 0] = False
    if not better.any():
        return None
    # best candidate by (lo, hi), first in scan order on ties
    lo_m = np.where(better, lo, -np.inf)
    top = lo_m >= lo_m.max() - eps
    hi_m = np.where(top, hi, -np.inf)
    i, j = np.unravel_index(int(np.argmax(hi_m)), hi_m.shape)
    return (lo[i, j], hi[i, j]), sa[i], sb[j]


def _best_cycle(rates, owner, acc, users, max_size, eps):
    """Best leximin-improving cyclic hand-over u0 -> u1 -> u2 -> u0 of RB subsets."""
    subs = [_subsets(np.flatnonzero(owner == u).tolist(), max_size) for u in users]
    nxt = [1, 2, 0]
    loss = [np.array([rates[u, list(s)].sum() for s in subs[i]]) for i, u in enumerate(users)]
    # gain[i]: what the receiver users[nxt[i]] earns from each subset of users[i]
    gain = [np.array([rates[users[nxt[i]], list(s)].sum() for s in subs[i]]) for i in range(3)]
    l0, l1, l2 = loss
    g0, g1, g2 = gain
    x0 = acc[users[0]] - l0[:, None, None] + g2[None, None, :]
    x1 = acc[users[1]] - l1[None, :, None] + g0[:, None, None]
    x2 = acc[users[2]] - l2[None, None, :] + g1[None, :, None]
    new = np.sort(np.stack(np.broadcast_arrays(x0, x1, x2), axis=-1), axis=-1).reshape(-1, 3)
    old = np.sort(acc[list(users)])
    gt = new > old + eps
    lt = new < old - eps
    better = gt[:, 0] | (~lt[:, 0] & (gt[:, 1] | (~lt[:, 1] & gt[:, 2])))
    better[0] = False
    if not better.any():
        return None
    idx = np.flatnonzero(better)
    cand = new[idx]
    order = np.lexsort((idx, -cand[:, 2], -cand[:, 1], -cand[:, 0]))
    i0, i1, i2 = np.unravel_index(int(idx[order[0]]), (len(l0), len(l1), len(l2)))
    return subs[0][i0], subs[1][i1], subs[2][i2]


def _local_search(d: np.ndarray, owner: np.ndarray, max_size: int = 2) -> np.ndarray:
    """Leximin descent over RB exchanges between two users and cyclic hand-overs among three.

    Neighbourhoods are tried from small to large (1-move/1-swap first) and the
    search drops back to the smallest one after every accepted move.
    """
    N = d.shape[0]
    rates = d.reshape(N, -1)
    owner = owner.copy()
    acc = np.array([rates[u, owner == u].sum() for u in range(N)])
    eps = 1e-12 * max(1.0, float(rates.sum()))
    levels = [("pair", k) for k in range(1, max_size + 1)] + [("cycle", 1)]
    level = 0
    while level < len(levels):
        kind, size = levels[level]
        best = None
        if kind == "pair":
            for a in range(N):
                for b in range(a + 1, N):
                    cand = _best_pair_exchange(rates, owner, acc, a, b, size, eps)
                    if cand is None:
                        continue
                    moves = {b: cand[1], a: cand[2]}
                    trial = _apply(rates, owner, acc, moves)
                    key = leximin_key(trial)
                    if best is None or _better(key, best[0], eps):
                        best = (key, moves, trial)
        else:
            for trip in itertools.combinations(range(N), 3):
                for users in (trip, (trip[0], trip[2], trip[1])):
                    cand = _best_cycle(rates, owner, acc, users, size, eps)
                    if cand is None:
                        continue
                    moves = {users[1]: cand[0], users[2]: cand[1], users[0]: cand[2]}
                    trial = _apply(rates, owner, acc, moves)
                    key = leximin_key(trial)
                    if best is None or _better(key, best[0], eps):
                        best = (key, moves, trial)
        if best is None:
            level += 1
            continue
        _, moves, acc = best
        for receiver, rbs in moves.items():
            owner[list(rbs)] = receiver
        level = 0
    return owner


def _apply(rates, owner, acc, moves) -> np.ndarray:
    """Throughputs after handing each RB subset in ``moves`` to its receiver."""
    trial = acc.copy()
    for receiver, rbs in moves.items():
        for i in rbs:
            trial[owner[i]] -= rates[owner[i], i]
            trial[receiver] += rates[receiver, i]
    return trial


def _better(a: tuple, b: tuple, eps: float) -> bool:
    """Leximin: is sorted vector ``a`` strictly better than ``b``?"""
    for x, y in zip(a, b):
        if x > y + eps:
            return True
        if x < y - eps:
            return False
    return False


HEURISTIC_KICK_BUDGET = 3000  # kicks x (N*T*R) cap on the perturbation work


def solve_heuristic(d, kicks: int | None = None) -> tuple[np.ndarray, float]:
    """Greedy fill toward the poorest user, then leximin exchange descent.

    The descent is iterated: a fixed-seed kick reassigns a few random RBs and the
    descent restarts; the leximin-best local optimum is kept.  The kick sequence
    depends only on the instance shape, so the result is deterministic in ``d``.
    """
    d = np.asarray(d, dtype=float)
    N, T, R = d.shape
    if kicks is None:
        kicks = int(np.clip(HEURISTIC_KICK_BUDGET // max(1, N * T * R), 4, 100))
    best = _local_search(d, _greedy(d))
    best_key = leximin_key(throughputs(best.reshape(T, R), d))
    eps = 1e-12 * max(1.0, float(d.sum()))
    if N > 1:
        rng = np.random.default_rng(0)
        hi = max(2, (T * R) // 3)
        for _ in range(kicks):
            trial = best.copy()
            n_kick = min(int(rng.integers(2, hi + 1)), T * R)
            rbs = rng.choice(T * R, size=n_kick, replace=False)
            trial[rbs] = rng.integers(0, N, size=len(rbs))
            trial = _local_search(d, trial)
            key = leximin_key(throughputs(trial.reshape(T, R), d))
            if _better(key, best_key, eps):
                best, best_key = trial, key
    owner = best.reshape(T, R)
    check_partition(owner, N)
    return owner, float(min(throughputs(owner, d)))


def solve_max_total(d) -> tuple[np.ndarray, float]:
    """Throughput-greedy baseline: each RB goes to its highest-rate user."""
    d = np.asarray(d, dtype=float)
    owner = np.argmax(d, axis=0)
    return owner, float(min(throughputs(owner, d)))
