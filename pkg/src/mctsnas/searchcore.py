"""Monte-Carlo search over architecture decision sequences.

UCT, RAVE and GRAVE share one tree implementation and differ only in the
child-selection rule.  NMCS and random search use no tree.  All of them draw
rewards through an :class:`Evaluator`, which enforces the parameter bound,
counts playouts against the budget and keeps the best leaf seen.

Randomness: every playout owns a numpy generator spawned from
``SeedSequence(seed, spawn_key=...)`` with a key naming its algorithm, move
and playout index, so a run is a pure function of (algorithm, config, seed)
and the playouts of one leaf batch may be evaluated in any order.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .arch import (
    BASELINE_PARAMS,
    ArchState,
    MacroConfig,
    apply_move,
    build_spec,
    count_params,
    legal_moves,
    move_key,
)
from .naswot import RewardNormalizer

ALGORITHMS = ("uct", "rave", "grave", "nmcs", "random")

# spawn-key stream tags
_MCTS, _NMCS, _RANDOM = 1, 2, 3


@dataclass(frozen=True)
class SearchConfig:
    k: float = 0.4
    bias: float = 1e-5
    tref: int = 30
    nmcs_level: int = 1
    playout_width: int = 8
    budget: int = 300  # total playouts for the whole run
    time_per_move: float | None = None  # seconds; switches MCTS to wall-clock mode
    alpha: int = BASELINE_PARAMS
    seed: int = 0
    reuse_tree: bool = False
    extended: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.bias <= 0:
            raise ValueError("bias must be > 0")
        if self.tref < 0 or self.nmcs_level < 0:
            raise ValueError("tref and nmcs_level must be >= 0")
        if self.playout_width < 1:
            raise ValueError("playout_width must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


class BudgetExhausted(Exception):
    pass


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ---------------------------------------------------------------------------
# selection rules


@dataclass
class NodeStats:
    n_s: int
    n: list[int]
    r: list[float]

    @property
    def mu(self) -> list[float]:
        return [ri / ni if ni else 0.0 for ri, ni in zip(self.r, self.n)]


@dataclass
class AmafStats:
    n: list[int]
    r: list[float]

    @property
    def mu(self) -> list[float]:
        return [ri / ni if ni else 0.0 for ri, ni in zip(self.r, self.n)]


def _explore(k, n_s, n_i):
    return k * math.sqrt(math.log(max(n_s, 1)) / n_i)


def _argmax(values: Sequence[float]) -> int:
    best, best_v = 0, values[0]
    for i, v in enumerate(values):
        if v > best_v:
            best, best_v = i, v
    return best


def uct_select(stats: NodeStats, k: float) -> int:
    if not stats.n:
        raise ValueError("node has no children")
    values = []
    for ni, ri in zip(stats.n, stats.r):
        values.append(math.inf if ni == 0 else ri / ni + _explore(k, stats.n_s, ni))
    return _argmax(values)


def rave_beta(n_i: int, amaf_n: int, bias: float) -> float:
    if n_i == 0 and amaf_n == 0:
        return 1.0
    return amaf_n / (n_i + amaf_n + 4 * n_i * amaf_n * bias * bias)


def rave_select(stats: NodeStats, amaf: AmafStats, k: float, bias: float) -> int:
    if not stats.n:
        raise ValueError("node has no children")
    values = []
    for ni, ri, an, ar in zip(stats.n, stats.r, amaf.n, amaf.r):
        if ni == 0:
            # AMAF alone drives an unvisited child; with no data at all it is forced
            values.append(math.inf if an == 0 else ar / an + _explore(k, stats.n_s, 1))
            continue
        beta = rave_beta(ni, an, bias)
        amaf_mu = ar / an if an else 0.0
        values.append((1 - beta) * ri / ni + beta * amaf_mu + _explore(k, stats.n_s, ni))
    return _argmax(values)


class Node:
    __slots__ = ("state", "parent", "move", "children", "n", "r", "amaf_n", "amaf_r", "leaf_visits")

    def __init__(self, state: ArchState, parent: "Node | None" = None, move: int | None = None):
        self.state = state
        self.parent = parent
        self.move = move
        self.children: list[Node] | None = None
        self.n = 0
        self.r = 0.0
        self.amaf_n: dict = {}
        self.amaf_r: dict = {}
        self.leaf_visits = 0  # playouts started here

    @property
    def expanded(self) -> bool:
        return self.children is not None

    def expand(self) -> None:
        self.children = [Node(apply_move(self.state, m), self, m) for m in legal_moves(self.state)]

    def child_keys(self) -> list:
        d, ext = self.state.depth, self.state.extended
        return [move_key(d, c.move, ext) for c in self.children]

    def stats(self) -> NodeStats:
        return NodeStats(self.n, [c.n for c in self.children], [c.r for c in self.children])

    def amaf_for(self, keys) -> AmafStats:
        return AmafStats([self.amaf_n.get(k, 0) for k in keys], [self.amaf_r.get(k, 0.0) for k in keys])


def grave_amaf_source(node: Node, tref: int) -> Node:
    """Closest node on the path to the root (itself included) with >= tref visits."""
    cur = node
    while cur.parent is not None and cur.n < tref:
        cur = cur.parent
    return cur


def grave_select(node: Node, k: float, bias: float, tref: int) -> int:
    if not node.children:
        raise ValueError("node has no children")
    src = grave_amaf_source(node, tref)
    return rave_select(node.stats(), src.amaf_for(node.child_keys()), k, bias)


def select_child(node: Node, variant: str, cfg: SearchConfig) -> int:
    if variant == "uct":
        return uct_select(node.stats(), cfg.k)
    if variant == "rave":
        return rave_select(node.stats(), node.amaf_for(node.child_keys()), cfg.k, cfg.bias)
    if variant == "grave":
        return grave_select(node, cfg.k, cfg.bias, cfg.tref)
    raise ValueError(f"unknown MCTS variant {variant!r}")


# ---------------------------------------------------------------------------
# playouts and leaf evaluation


def playout(state: ArchState, rng: np.random.Generator) -> tuple[list[int], ArchState]:
    moves = []
    while not state.is_terminal:
        legal = legal_moves(state)
        m = legal[int(rng.integers(len(legal)))]
        moves.append(m)
        state = apply_move(state, m)
    return moves, state


@dataclass(frozen=True)
class LeafResult:
    state: ArchState
    params: int
    raw: float  # -inf for the degenerate-kernel sentinel and for violations
    reward: float
    violated: bool

    @property
    def key(self) -> tuple:
        """Ordering used for 'best': admissible first, then raw score."""
        return (not self.violated, self.raw)


class Evaluator:
    """Turns terminal states into rewards in [0, 1].

    ``scorer`` maps a terminal ArchState to a raw score (higher is better, -inf
    for a degenerate network).  With ``normalize=False`` raw scores are assumed
    to already lie in [0, 1] and are used as rewards directly.
    """

    def __init__(self, scorer: Callable[[ArchState], float], cfg: SearchConfig,
                 macro: MacroConfig | None = None, budget: int | None = None,
                 normalize: bool = True, keep_log: bool = True):
        self.scorer = scorer
        self.cfg = cfg
        self.macro = macro or MacroConfig()
        self.budget = cfg.budget if budget is None else budget
        self.normalize = normalize
        self.normalizer = RewardNormalizer()
        self.playouts = 0
        self.best: LeafResult | None = None
        self.log: list[dict] | None = [] if keep_log else None
        self._params: dict[tuple, int] = {}

    @property
    def remaining(self) -> int:
        return self.budget - self.playouts

    def params(self, state: ArchState) -> int:
        key = (state.extended, state.decisions)
        p = self._params.get(key)
        if p is None:
            p = count_params(build_spec(state, self.macro))
            self._params[key] = p
        return p

    def _raw(self, state: ArchState) -> tuple[int, float]:
        p = self.params(state)
        if p > self.cfg.alpha:
            return p, -math.inf
        return p, float(self.scorer(state))

    def evaluate_batch(self, states: Sequence[ArchState], prefix: Sequence[int] = ()) -> list[LeafResult]:
        if len(states) > self.remaining:
            raise BudgetExhausted(f"{len(states)} playouts requested, {self.remaining} left")
        if self.cfg.workers > 1 and len(states) > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                raws = list(pool.map(self._raw, states))
        else:
            raws = [self._raw(s) for s in states]
        # normalizer, counters and log are updated serially in playout order
        out = []
        for state, (p, raw) in zip(states, raws):
            violated = p > self.cfg.alpha
            if violated:
                reward = 0.0
            elif self.normalize:
                self.normalizer.update(raw)
                reward = self.normalizer.normalize(raw)
            else:
                reward = min(1.0, max(0.0, raw)) if math.isfinite(raw) else 0.0
            res = LeafResult(state, p, raw, reward, violated)
            if self.best is None or res.key > self.best.key:
                self.best = res
            if self.log is not None:
                self.log.append({
                    "playout_id": self.playouts,
                    "move_prefix": list(prefix),
                    "moves": list(state.decisions),
                    "params": p,
                    "raw_score": raw if math.isfinite(raw) else None,
                    "reward": reward,
                    "violated": violated,
                })
            self.playouts += 1
            out.append(res)
        return out

    def __call__(self, state: ArchState) -> LeafResult:
        return self.evaluate_batch([state])[0]


def evaluate_leaf(state: ArchState, evaluator: Evaluator) -> float:
    if not state.is_terminal:
        raise ValueError("evaluate_leaf needs a terminal state")
    return evaluator(state).reward


# ---------------------------------------------------------------------------
# MCTS


def backpropagate(path: Sequence[Node], played_moves: Sequence[int], reward: float) -> None:
    """Update visit and AMAF statistics along ``path`` for one playout.

    ``played_moves`` is the full sequence from the root of ``path``.  Each
    node's AMAF table is credited once per distinct move key that was played
    at or below its depth and is legal at the node, i.e. has the node's slot
    type.
    """
    root_depth = path[0].state.depth
    ext = path[0].state.extended
    keys = [move_key(root_depth + i, m, ext) for i, m in enumerate(played_moves)]
    for node in path:
        node.n += 1
        node.r += reward
        if node.state.is_terminal:
            continue
        slot = move_key(node.state.depth, 0, ext)[0]
        seen = set()
        for key in keys[node.state.depth - root_depth:]:
            if key[0] != slot or key in seen:
                continue
            seen.add(key)
            node.amaf_n[key] = node.amaf_n.get(key, 0) + 1
            node.amaf_r[key] = node.amaf_r.get(key, 0.0) + reward


def mcts_iteration(root: Node, variant: str, cfg: SearchConfig, evaluator: Evaluator,
                   rng_for: Callable[[int], np.random.Generator], width: int) -> int:
    """One select/expand/playout/backprop round with ``width`` leaf playouts."""
    node, path, moves = root, [root], []
    while node.expanded and not node.state.is_terminal:
        node = node.children[select_child(node, variant, cfg)]
        path.append(node)
        moves.append(node.move)
    if not node.state.is_terminal:
        # expansion: the playouts start from a newly created child, so that
        # every playout informs some child's statistics
        node.expand()
        node = node.children[select_child(node, variant, cfg)]
        path.append(node)
        moves.append(node.move)
    rollouts = [playout(node.state, rng_for(j)) for j in range(width)]
    results = evaluator.evaluate_batch([t for _, t in rollouts], prefix=root.state.decisions + tuple(moves))
    for (tail, _), res in zip(rollouts, results):
        node.leaf_visits += 1
        backpropagate(path, moves + tail, res.reward)
    return width


def best_child(node: Node) -> Node:
    """Most visited child; ties go to the lowest index."""
    visits = [c.n for c in node.children]
    return node.children[visits.index(max(visits))]


def mcts_move(root: ArchState | Node, cfg: SearchConfig, variant: str, evaluator: Evaluator,
              budget: int | None = None, move_index: int = 0) -> tuple[int, Node]:
    """Search from ``root`` and return (most visited move, root node)."""
    node = root if isinstance(root, Node) else Node(root)
    if node.state.is_terminal:
        raise ValueError("mcts_move on a terminal state")
    budget = evaluator.remaining if budget is None else min(budget, evaluator.remaining)
    if budget <= 0 and cfg.time_per_move is None:
        raise ValueError("mcts_move needs a positive playout budget")
    deadline = None if cfg.time_per_move is None else time.monotonic() + cfg.time_per_move
    used, it = 0, 0
    while True:
        if deadline is not None:
            if time.monotonic() >= deadline and used > 0:
                break
            width = min(cfg.playout_width, evaluator.remaining)
        else:
            width = min(cfg.playout_width, budget - used)
        if width <= 0:
            break
        used += mcts_iteration(node, variant, cfg, evaluator,
                               lambda j, it=it: substream(cfg.seed, _MCTS, move_index, it, j), width)
        it += 1
    if not node.expanded:
        node.expand()
    return best_child(node).move, node


# ---------------------------------------------------------------------------
# NMCS and random search


class _Counter:
    def __init__(self):
        self.i = 0

    def next(self) -> int:
        self.i += 1
        return self.i - 1


def nmcs(state: ArchState, level: int, cfg: SearchConfig, evaluator: Evaluator,
         restart: int = 0, _counter: _Counter | None = None) -> tuple[list[int], LeafResult]:
    """Nested Monte-Carlo search with best-sequence memoization.

    Returns the best move sequence from ``state`` and the evaluation of the
    terminal state it leads to.  Sequences are compared by LeafResult.key.
    """
    counter = _counter or _Counter()
    if level == 0:
        moves, term = playout(state, substream(cfg.seed, _NMCS, restart, counter.next()))
        return moves, evaluator(term)
    best_seq: list[int] = []
    best: LeafResult | None = None
    played: list[int] = []
    while not state.is_terminal:
        for m in legal_moves(state):
            seq, res = nmcs(apply_move(state, m), level - 1, cfg, evaluator, restart, counter)
            if best is None or res.key > best.key:
                best, best_seq = res, played + [m] + seq
        m = best_seq[len(played)]
        played.append(m)
        state = apply_move(state, m)
    if best is None:
        best = evaluator(state)
    return best_seq, best


def _root(cfg: SearchConfig) -> ArchState:
    return ArchState((), cfg.extended)


# ---------------------------------------------------------------------------
# results and the move-commit driver


@dataclass
class SearchResult:
    algorithm: str
    seed: int
    best_decisions: list[int]
    best_reward: float
    best_raw_score: float | None
    best_params: int
    violated: bool
    playouts_done: int
    commit_log: list[dict] = field(default_factory=list)
    normalizer: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def best_state(self) -> ArchState:
        return ArchState(tuple(self.best_decisions), bool(self.config.get("extended", False)))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _finish(algorithm: str, cfg: SearchConfig, ev: Evaluator, commit_log: list[dict],
            rescore: Callable[[ArchState], float] | None) -> SearchResult:
    best = ev.best
    if best is None:
        raise RuntimeError("search evaluated no architecture")
    raw = best.raw
    if not best.violated and rescore is not None:
        raw = float(rescore(best.state))
    reward = 0.0 if best.violated else (ev.normalizer.normalize(raw) if ev.normalize else best.reward)
    return SearchResult(
        algorithm=algorithm,
        seed=cfg.seed,
        best_decisions=list(best.state.decisions),
        best_reward=reward,
        best_raw_score=raw if math.isfinite(raw) else None,
        best_params=best.params,
        violated=best.violated,
        playouts_done=ev.playouts,
        commit_log=commit_log,
        normalizer=ev.normalizer.to_dict(),
        config=asdict(cfg),
    )


def random_search(cfg: SearchConfig, evaluator: Evaluator, iterations: int | None = None,
                  rescore=None) -> SearchResult:
    iterations = evaluator.remaining if iterations is None else iterations
    if iterations < 1:
        raise ValueError("random search needs at least one iteration")
    root = _root(cfg)
    for i in range(iterations):
        _, term = playout(root, substream(cfg.seed, _RANDOM, i))
        evaluator(term)
    return _finish("random", cfg, evaluator, [], rescore)


def run_search(algorithm: str, cfg: SearchConfig, evaluator: Evaluator,
               rescore: Callable[[ArchState], float] | None = None) -> SearchResult:
    """Run one search to completion under ``evaluator``'s playout budget.

    MCTS variants commit one move at a time, splitting the remaining budget
    evenly over the remaining decisions (or using ``time_per_move`` seconds
    per move).  NMCS restarts with fresh playout streams until the budget is
    spent.  ``rescore`` recomputes the best architecture's raw score once.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if evaluator.budget < 1 and not (cfg.time_per_move and algorithm in ("uct", "rave", "grave")):
        raise ValueError("search budget must be at least one playout")
    if algorithm == "random":
        return random_search(cfg, evaluator, rescore=rescore)

    commit_log: list[dict] = []
    if algorithm == "nmcs":
        restart = 0
        try:
            while evaluator.remaining > 0:
                seq, res = nmcs(_root(cfg), cfg.nmcs_level, cfg, evaluator, restart)
                commit_log.append({"restart": restart, "sequence": seq, "params": res.params,
                                   "raw_score": res.raw if math.isfinite(res.raw) else None})
                restart += 1
        except BudgetExhausted:
            pass
        return _finish(algorithm, cfg, evaluator, commit_log, rescore)

    state = _root(cfg)
    node: Node | None = None
    i = 0
    while not state.is_terminal:
        left = state.n_decisions - state.depth
        # one playout stays reserved for the committed architecture
        per_move = (evaluator.remaining - 1) // left if cfg.time_per_move is None else None
        if per_move is not None and per_move < 1:
            per_move = min(1, evaluator.remaining)
        if per_move == 0 or (cfg.time_per_move is not None and evaluator.remaining <= 0):
            # budget spent: complete the sequence with untried defaults
            move = legal_moves(state)[0]
            visits = 0
        else:
            root = node if (cfg.reuse_tree and node is not None) else Node(state)
            move, root = mcts_move(root, cfg, algorithm, evaluator, per_move, i)
            visits = next(c.n for c in root.children if c.move == move)
            node = next(c for c in root.children if c.move == move)
            node.parent = None
        commit_log.append({"depth": i, "move": move, "visits": visits, "playouts": evaluator.playouts})
        state = apply_move(state, move)
        i += 1
    if evaluator.remaining > 0:
        evaluator(state)
    return _finish(algorithm, cfg, evaluator, commit_log, rescore)
