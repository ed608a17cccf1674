"""Repeated single-item first-price auctions among learning autobidders.

Bids live on the grid {0, eps, 2 eps, ...} capped at each agent's value.
Ties among reserve-meeting top bids are broken uniformly at random; the
counterfactual gains fed to the learners (and used for regret) are the
expected gains under that rule, while the realized winner is drawn.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .auction_core import TieBreakRule, make_instance
from .bid_profiles import FiniteProfile
from .equilibrium import DeviationSet, EquilibriumReport, verify_cce


@dataclass(frozen=True)
class RepeatedGame:
    values: tuple[float, ...]
    sigmas: tuple[float, ...]
    reserve: float
    eps: float
    rounds: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if len(self.values) != len(self.sigmas) or len(self.values) < 1:
            raise ValueError("values and sigmas must have one entry per agent")
        for x in list(self.values) + [self.reserve]:
            if abs(x / self.eps - round(x / self.eps)) > 1e-9:
                raise ValueError(f"{x} is not a multiple of eps={self.eps}")
        if self.rounds < 1:
            raise ValueError("need at least one round")

    @property
    def n(self) -> int:
        return len(self.values)

    def grid(self, i: int) -> np.ndarray:
        k = int(round(self.values[i] / self.eps))
        return np.arange(k + 1) * self.eps

    def instance(self):
        return make_instance([[v] for v in self.values], sigmas=list(self.sigmas), reserves=[self.reserve],
                             tiebreak=TieBreakRule.uniform_random(self.n, 1))


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = "hedge"              # or "epsilon_greedy"
    rate: float | None = None             # hedge: default sqrt(ln K / T) on gains scaled to [0, 1]
    explore: float = 1.0                  # epsilon-greedy: explore w.p. min(1, explore * t^{-1/3})
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("hedge", "epsilon_greedy"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.rate is not None and not self.rate > 0:
            raise ValueError("rate must be positive")
        if not self.explore > 0:
            raise ValueError("explore must be positive")


@dataclass
class History:
    game: RepeatedGame
    bids: np.ndarray         # T x n
    winners: np.ndarray      # T, -1 when unsold
    payments: np.ndarray     # T
    gains: np.ndarray        # T x n realized

    @property
    def rounds(self) -> int:
        return len(self.winners)

    def window(self, fraction: float) -> slice:
        if not 0 < fraction <= 1:
            raise ValueError("window fraction must lie in (0, 1]")
        start = self.rounds - max(1, int(round(self.rounds * fraction)))
        return slice(start, self.rounds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.game.n
        w.writerow(["round"] + [f"bid_{i}" for i in range(n)] + ["winner", "payment"] + [f"gain_{i}" for i in range(n)])
        for t in range(self.rounds):
            w.writerow([t] + [f"{x:.10g}" for x in self.bids[t]] + [int(self.winners[t]), f"{self.payments[t]:.10g}"]
                       + [f"{x:.10g}" for x in self.gains[t]])
        return buf.getvalue()


def _gains(game: RepeatedGame, i: int, bids: np.ndarray, others: np.ndarray) -> np.ndarray:
    v, s = game.values[i], game.sigmas[i]
    if others.size == 0:
        top, cnt = -math.inf, 0
    else:
        top = float(others.max())
        cnt = int(np.sum(np.abs(others - top) <= 1e-9))
    g = np.zeros(len(bids))
    meets = bids >= game.reserve - 1e-12
    win = meets & (bids > top + 1e-9)
    tie = meets & (np.abs(bids - top) <= 1e-9)
    g[win] = v - s * bids[win]
    g[tie] = (v - s * bids[tie]) / (cnt + 1)
    return g


def counterfactual_gains(game: RepeatedGame, i: int, others: np.ndarray) -> np.ndarray:
    """Expected gain of every grid bid of agent i against fixed opponent bids (uniform ties)."""
    return _gains(game, i, game.grid(i), others)


def run_repeated(game: RepeatedGame, configs: Sequence[LearnerConfig] | None = None, seed: int = 0) -> History:
    configs = list(configs) if configs is not None else [LearnerConfig(seed=seed * 1000 + i) for i in range(game.n)]
    if len(configs) != game.n:
        raise ValueError("one learner config per agent")
    rngs = [np.random.default_rng(c.seed) for c in configs]
    tie_rng = np.random.default_rng([seed, 7919])
    grids = [game.grid(i) for i in range(game.n)]
    K = [len(g) for g in grids]
    T = game.rounds
    scale = [max(v, 1e-12) for v in game.values]
    rates = [c.rate if c.rate is not None else math.sqrt(math.log(max(k, 2)) / T) for c, k in zip(configs, K)]
    cum = [np.zeros(k) for k in K]
    bids = np.zeros((T, game.n))
    idx = np.zeros(game.n, dtype=int)
    winners = np.full(T, -1, dtype=int)
    payments = np.zeros(T)
    gains = np.zeros((T, game.n))
    for t in range(T):
        for i, c in enumerate(configs):
            if c.algorithm == "hedge":
                z = rates[i] * cum[i] / scale[i]
                p = np.exp(z - z.max())
                cdf = np.cumsum(p)
                idx[i] = min(int(np.searchsorted(cdf, rngs[i].random() * cdf[-1], side="right")), K[i] - 1)
            else:
                if rngs[i].random() < min(1.0, c.explore * (t + 1) ** (-1.0 / 3.0)):
                    idx[i] = int(rngs[i].integers(K[i]))
                else:
                    idx[i] = int(np.argmax(cum[i]))
            bids[t, i] = grids[i][idx[i]]
        b = bids[t]
        top = b.max()
        if top >= game.reserve - 1e-12:
            tied = np.nonzero(np.abs(b - top) <= 1e-9)[0]
            w = int(tied[0] if len(tied) == 1 else tied[int(tie_rng.integers(len(tied)))])
            winners[t] = w
            payments[t] = b[w]
            gains[t, w] = game.values[w] - game.sigmas[w] * b[w]
        for i in range(game.n):
            cum[i] += counterfactual_gains(game, i, np.delete(b, i))
    return History(game, bids, winners, payments, gains)


def _cf_matrix(h: History, i: int, rows: slice) -> np.ndarray:
    """T x K expected gains of every fixed grid bid, vectorized over rounds."""
    game = h.game
    grid = game.grid(i)
    others = np.delete(h.bids[rows], i, axis=1)
    if others.shape[1] == 0:
        top = np.full(len(others), -np.inf)
        cnt = np.zeros(len(others))
    else:
        top = others.max(axis=1)
        cnt = np.sum(np.abs(others - top[:, None]) <= 1e-9, axis=1)
    G = grid[None, :]
    meets = G >= game.reserve - 1e-12
    val = game.values[i] - game.sigmas[i] * G
    win = meets & (G > top[:, None] + 1e-9)
    tie = meets & (np.abs(G - top[:, None]) <= 1e-9)
    return np.where(win, val, 0.0) + np.where(tie, val / (cnt[:, None] + 1), 0.0)


def regret(h: History, i: int, rows: slice | None = None) -> float:
    """Best fixed grid bid in hindsight minus the played bids, with expected tie gains."""
    rows = rows or slice(0, h.rounds)
    M = _cf_matrix(h, i, rows)
    played = np.rint(h.bids[rows, i] / h.game.eps).astype(int)
    return float(M.sum(axis=0).max() - M[np.arange(len(played)), played].sum())


def empirical_cce(h: History, window: float = 0.25) -> FiniteProfile:
    rows = h.window(window)
    B = h.bids[rows]
    keys, counts = np.unique(np.rint(B / h.game.eps).astype(int), axis=0, return_counts=True)
    total = counts.sum()
    atoms = [((k * h.game.eps)[:, None], c / total) for k, c in zip(keys, counts)]
    # absorb float drift so the probabilities sum to 1 exactly
    s = sum(p for _, p in atoms)
    atoms[-1] = (atoms[-1][0], atoms[-1][1] + (1.0 - s))
    return FiniteProfile(atoms)


def verify_empirical_cce(h: History, window: float = 0.25) -> EquilibriumReport:
    """verify_cce of the window distribution against all grid bids, tolerance from window regret."""
    rows = h.window(window)
    W = rows.stop - rows.start
    tol = max(regret(h, i, rows) for i in range(h.game.n)) / W + 1e-6
    return verify_cce(h.game.instance(), empirical_cce(h, window), DeviationSet.bid_grid(h.game.eps), tol)


def well_supported_fraction(h: History, r: float | None = None, window: float = 1.0) -> float:
    r = h.game.reserve if r is None else r
    rows = h.window(window)
    return float(np.mean(h.bids[rows].max(axis=1) >= r - 1e-12))


def support(h: History, i: int, window: float = 0.25, min_freq: float = 0.0) -> list[float]:
    rows = h.window(window)
    vals, counts = np.unique(np.rint(h.bids[rows, i] / h.game.eps).astype(int), return_counts=True)
    keep = counts / counts.sum() > min_freq
    return [float(v * h.game.eps) for v in vals[keep]]


@dataclass
class DominanceReport:
    dominated: dict = field(default_factory=dict)   # agent -> [(action, dominating action)]

    @property
    def clean(self) -> bool:
        return not any(self.dominated.values())


def co_undominated_check(A1: Sequence[float], A2: Sequence[float], game: RepeatedGame) -> DominanceReport:
    """Actions of each support weakly dominated, within the other support, by some grid bid."""
    if game.n != 2:
        raise ValueError("co-domination is checked for two agents")
    rep = DominanceReport({0: [], 1: []})
    for i, (own, opp) in enumerate(((A1, A2), (A2, A1))):
        grid = game.grid(i)
        table = np.array([counterfactual_gains(game, i, np.array([b])) for b in opp])   # |opp| x K
        for a in own:
            # own actions may sit off the grid (an overbid support), so score them directly
            col = np.array([_gains(game, i, np.array([a]), np.array([b]))[0] for b in opp])[:, None]
            weak = np.all(table >= col - 1e-12, axis=0) & np.any(table > col + 1e-12, axis=0)
            if np.any(weak):
                rep.dominated[i].append((float(a), float(grid[int(np.argmax(weak))])))
    return rep


@dataclass
class LearningSummary:
    regrets: list[float]
    regret_per_round: list[float]
    sold_fraction_final: float
    cce_epsilon: float
    cce_tolerance: float
    cce_verdict: str
    dominated: dict

    def to_json(self) -> dict:
        return dict(self.__dict__)


def summarize(h: History, window: float = 0.25, min_freq: float = 0.0) -> LearningSummary:
    regs = [regret(h, i) for i in range(h.game.n)]
    rows = h.window(window)
    W = rows.stop - rows.start
    rep = verify_empirical_cce(h, window)
    tol = max(regret(h, i, rows) for i in range(h.game.n)) / W + 1e-6
    dom = {}
    if h.game.n == 2:
        d = co_undominated_check(support(h, 0, window, min_freq), support(h, 1, window, min_freq), h.game)
        dom = {str(k): v for k, v in d.dominated.items()}
    return LearningSummary(regs, [r / h.rounds for r in regs], well_supported_fraction(h, window=window),
                           rep.epsilon, tol, rep.verdict, dom)
