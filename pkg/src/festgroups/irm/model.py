"""Infinite Relational Model for bipartite binary data.

The sampler state lives in fixed-capacity integer arrays that the compiled
kernels update in place; :class:`IRMState` wraps them and exposes the
partitions, block counts and log posterior.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from . import _kernels as K

MODES = ("row", "col")


class InvariantError(RuntimeError):
    """Cached sampler bookkeeping disagrees with a from-scratch recompute."""


@dataclass
class IRMConfig:
    beta: float = 1.0
    alpha_row: float | None = None   # None: ln(number of rows)
    alpha_col: float | None = None   # None: ln(number of columns)
    sweeps: int = 500
    split_merge_per_sweep: int = 1
    restricted_sweeps: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("alpha_row", "alpha_col"):
            a = getattr(self, name)
            if a is not None and not a > 0:
                raise ValueError(f"{name} must be positive")
        if self.restricted_sweeps < 1:
            raise ValueError("restricted_sweeps must be >= 1")
        if self.sweeps < 0 or self.split_merge_per_sweep < 0:
            raise ValueError("sweeps and split_merge_per_sweep must be >= 0")

    def alphas(self, I: int, J: int) -> tuple[float, float]:
        return (_auto_alpha(self.alpha_row, I), _auto_alpha(self.alpha_col, J))


def _auto_alpha(alpha, n):
    if alpha is not None:
        return float(alpha)
    if n < 2:
        raise ValueError("automatic concentration ln(n) needs at least 2 nodes")
    return math.log(n)


@dataclass
class Partition:
    assignments: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.assignments, dtype=np.int64)
        if z.ndim != 1:
            raise ValueError("assignments must be one-dimensional")
        if z.size and z.min() < 0:
            raise ValueError("cluster labels must be non-negative")
        self.assignments = z

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Compact arbitrary labels to 0..L-1 in order of first appearance."""
        _, first, inverse = np.unique(np.asarray(labels), return_index=True,
                                      return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return cls(rank[inverse])

    @property
    def num_clusters(self) -> int:
        return int(self.assignments.max()) + 1 if self.assignments.size else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_clusters)

    def __len__(self):
        return self.assignments.size


@dataclass
class BlockCounts:
    links: np.ndarray
    nonlinks: np.ndarray


@dataclass
class HeldOutMask:
    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    truth: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.truth = np.asarray(self.truth, dtype=bool)
        if len(self.cells) != len(self.truth):
            raise ValueError("cells and truth differ in length")
        if len({tuple(c) for c in self.cells}) != len(self.cells):
            raise ValueError("masked cells must be distinct")

    def __len__(self):
        return len(self.cells)


@dataclass
class LinkProbability:
    eta_hat: np.ndarray


def _as_dense(A) -> np.ndarray:
    if hasattr(A, "links"):
        A = A.links
    if hasattr(A, "toarray"):
        A = A.toarray()
    return np.asarray(A).astype(bool)


def observed_matrix(A, mask: HeldOutMask | None = None) -> np.ndarray:
    """int8 view of A: 1 link, 0 non-link, -1 masked."""
    X = _as_dense(A).astype(np.int8)
    if mask is not None and len(mask):
        X[mask.cells[:, 0], mask.cells[:, 1]] = -1
    return X


# ---------------------------------------------------------------------------
# closed-form scores

def crp_log_prior(partition: Partition, alpha: float, n: int | None = None) -> float:
    """log p(partition) under CRP(alpha)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if n is None:
        n = len(partition)
    if n != len(partition):
        raise ValueError(f"partition covers {len(partition)} nodes, expected {n}")
    if n == 0:
        return 0.0
    sizes = partition.sizes
    if (sizes == 0).any():
        raise ValueError("partition has empty clusters")
    L = len(sizes)
    return float(L * math.log(alpha) + gammaln(alpha) - gammaln(n + alpha)
                 + gammaln(sizes).sum())


def _block_counts(X, z1, L1, z2, L2):
    R = np.zeros((X.shape[0], L1))
    R[np.arange(X.shape[0]), z1] = 1
    C = np.zeros((X.shape[1], L2))
    C[np.arange(X.shape[1]), z2] = 1
    links = R.T @ (X == 1) @ C
    nonlinks = R.T @ (X == 0) @ C
    return np.rint(links).astype(np.int64), np.rint(nonlinks).astype(np.int64)


def joint_log_posterior(A, rows: Partition, cols: Partition, config: IRMConfig,
                        mask: HeldOutMask | None = None) -> float:
    """log p(A, rows, cols | beta, alphas) with the block rates integrated out."""
    X = observed_matrix(A, mask)
    I, J = X.shape
    if len(rows) != I or len(cols) != J:
        raise ValueError(f"partitions of sizes ({len(rows)}, {len(cols)}) do not match "
                         f"a {I}x{J} matrix")
    a1, a2 = config.alphas(I, J)
    b = config.beta
    Np, Nn = _block_counts(X, rows.assignments, rows.num_clusters,
                           cols.assignments, cols.num_clusters)
    lik = float((betaln(Np + b, Nn + b) - betaln(b, b)).sum())
    return lik + crp_log_prior(rows, a1, I) + crp_log_prior(cols, a2, J)


# ---------------------------------------------------------------------------
# sampler state

class IRMState:
    """Complete collapsed-sampler state bound to its data and configuration."""

    def __init__(self, X: np.ndarray, z_row, z_col, config: IRMConfig,
                 mask: HeldOutMask | None = None):
        self.X = np.ascontiguousarray(X, dtype=np.int8)
        self.Xt = np.ascontiguousarray(self.X.T)
        I, J = self.X.shape
        self.config = config
        self.mask = mask if mask is not None else HeldOutMask()
        self.alpha_row, self.alpha_col = config.alphas(I, J)
        self.z1 = Partition.from_labels(z_row).assignments.copy()
        self.z2 = Partition.from_labels(z_col).assignments.copy()
        if self.z1.size != I or self.z2.size != J:
            raise ValueError("assignment lengths do not match the data")
        self.L1 = int(self.z1.max()) + 1
        self.L2 = int(self.z2.max()) + 1
        self.s1 = np.zeros(I + 1, dtype=np.int64)
        self.s2 = np.zeros(J + 1, dtype=np.int64)
        self.s1[:self.L1] = np.bincount(self.z1, minlength=self.L1)
        self.s2[:self.L2] = np.bincount(self.z2, minlength=self.L2)
        self.Np = np.zeros((I + 1, J + 1), dtype=np.int64)
        self.Nn = np.zeros((I + 1, J + 1), dtype=np.int64)
        K.block_counts(self.X, self.z1, self.L1, self.z2, self.L2, self.Np, self.Nn)
        self.tb, self.tb2, self.tlog = K.make_tables(I * J, max(I, J) + 1, config.beta)
        self._buffers()
        self.split_merge_accepted = {"row": 0, "col": 0}
        self.split_merge_proposed = {"row": 0, "col": 0}
        self.refresh_log_posterior()

    def _buffers(self):
        I, J = self.X.shape
        self.lp1 = np.zeros(J + 1, dtype=np.int64)
        self.ln1 = np.zeros(J + 1, dtype=np.int64)
        self.lp2 = np.zeros(I + 1, dtype=np.int64)
        self.ln2 = np.zeros(I + 1, dtype=np.int64)
        self.logp1 = np.zeros(I + 2)
        self.logp2 = np.zeros(J + 2)
        self.ws1 = K.make_workspace(I, J + 1)
        self.ws2 = K.make_workspace(J, I + 1)

    @classmethod
    def initial(cls, A, config: IRMConfig, mask: HeldOutMask | None = None,
                rng: np.random.Generator | None = None, init: str = "crp") -> "IRMState":
        """Start from a CRP draw (``init="crp"``) or one cluster per mode."""
        X = observed_matrix(A, mask)
        I, J = X.shape
        if init == "single":
            return cls(X, np.zeros(I, int), np.zeros(J, int), config, mask)
        if init != "crp":
            raise ValueError(f"unknown init {init!r}")
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        a1, a2 = config.alphas(I, J)
        return cls(X, crp_draw(I, a1, rng), crp_draw(J, a2, rng), config, mask)

    @property
    def shape(self):
        return self.X.shape

    @property
    def rows(self) -> Partition:
        return Partition(self.z1.copy())

    @property
    def cols(self) -> Partition:
        return Partition(self.z2.copy())

    @property
    def blocks(self) -> BlockCounts:
        return BlockCounts(self.Np[:self.L1, :self.L2].copy(),
                           self.Nn[:self.L1, :self.L2].copy())

    def refresh_log_posterior(self) -> float:
        self.log_posterior = float(K.log_posterior(
            self.s1, self.L1, self.s2, self.L2, self.Np, self.Nn,
            self.config.beta, self.alpha_row, self.alpha_col))
        return self.log_posterior

    def copy(self) -> "IRMState":
        new = object.__new__(IRMState)
        new.__dict__.update(self.__dict__)
        for name in ("z1", "z2", "s1", "s2", "Np", "Nn"):
            setattr(new, name, getattr(self, name).copy())
        new.split_merge_accepted = dict(self.split_merge_accepted)
        new.split_merge_proposed = dict(self.split_merge_proposed)
        new._buffers()
        return new

    def check(self, tol: float = 1e-9) -> None:
        """Compare cached bookkeeping with a from-scratch recompute."""
        I, J = self.X.shape
        for z, s, L, name in ((self.z1, self.s1, self.L1, "row"),
                              (self.z2, self.s2, self.L2, "col")):
            if z.min() < 0 or z.max() != L - 1:
                raise InvariantError(f"{name} labels not compact")
            if not np.array_equal(np.bincount(z, minlength=L), s[:L]) or s[L:].any():
                raise InvariantError(f"{name} cluster sizes out of sync")
        Np, Nn = _block_counts(self.X, self.z1, self.L1, self.z2, self.L2)
        if not (np.array_equal(Np, self.Np[:self.L1, :self.L2])
                and np.array_equal(Nn, self.Nn[:self.L1, :self.L2])):
            raise InvariantError("block counts out of sync")
        if self.Np[self.L1:].any() or self.Np[:, self.L2:].any():
            raise InvariantError("stale counts outside the active blocks")
        if self.Nn[self.L1:].any() or self.Nn[:, self.L2:].any():
            raise InvariantError("stale counts outside the active blocks")
        area = np.outer(self.s1[:self.L1], self.s2[:self.L2])
        masked = np.zeros_like(area)
        if len(self.mask):
            np.add.at(masked, (self.z1[self.mask.cells[:, 0]],
                               self.z2[self.mask.cells[:, 1]]), 1)
        if not np.array_equal(Np + Nn, area - masked):
            raise InvariantError("block totals do not match block areas")
        lp = joint_log_posterior(self.X == 1, self.rows, self.cols, self._config_resolved(),
                                 self.mask)
        if abs(lp - self.log_posterior) > tol * max(1.0, abs(lp)):
            raise InvariantError(f"log posterior drift: cached {self.log_posterior}, "
                                 f"recomputed {lp}")

    def _config_resolved(self) -> IRMConfig:
        return IRMConfig(**{**asdict(self.config), "alpha_row": self.alpha_row,
                            "alpha_col": self.alpha_col})

    def to_json(self) -> dict:
        return {
            "row_assignments": self.z1.tolist(),
            "col_assignments": self.z2.tolist(),
            "config": {**asdict(self.config), "alpha_row": self.alpha_row,
                       "alpha_col": self.alpha_col},
            "log_posterior": self.log_posterior,
            "eta_hat": predict_eta(self).eta_hat.tolist(),
        }

    def _mode(self, mode):
        if mode == "row":
            return (self.X, self.z1, self.s1, self.L1, self.z2, self.L2, self.Np, self.Nn,
                    math.log(self.alpha_row), self.lp1, self.ln1, self.logp1, self.ws1)
        if mode == "col":
            return (self.Xt, self.z2, self.s2, self.L2, self.z1, self.L1, self.Np.T,
                    self.Nn.T, math.log(self.alpha_col), self.lp2, self.ln2, self.logp2,
                    self.ws2)
        raise ValueError(f"mode must be 'row' or 'col', got {mode!r}")

    def _set_L(self, mode, L):
        if mode == "row":
            self.L1 = int(L)
        else:
            self.L2 = int(L)


def crp_draw(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Sequential-seating draw from CRP(alpha)."""
    z = np.zeros(n, dtype=np.int64)
    sizes: list[int] = []
    for k in range(n):
        w = np.array(sizes + [alpha], dtype=float)
        c = int(rng.choice(len(w), p=w / w.sum()))
        if c == len(sizes):
            sizes.append(0)
        sizes[c] += 1
        z[k] = c
    return z


def _seed_kernels(rng: np.random.Generator) -> None:
    K.seed(int(rng.integers(2**62)))


def conditional_log_probs(state: IRMState, node: int, mode: str) -> np.ndarray:
    """Unnormalized log probabilities for reassigning one node.

    Entry ``l < L`` is for existing cluster ``l`` and the last entry is for a
    new cluster.  If ``node`` is alone in its cluster that cluster would be
    empty once the node leaves, so its entry is ``-inf`` (the new-cluster
    entry covers it).  The state is not modified.
    """
    work = state.copy()
    X, z, s, L, z_o, L_o, Np, Nn, log_alpha, lp, ln, logp, _ = work._mode(mode)
    if not 0 <= node < X.shape[0]:
        raise IndexError(f"node {node} out of range for mode {mode!r}")
    k = int(z[node])
    singleton = s[k] == 1
    K.node_counts(X, node, z_o, L_o, lp, ln)
    for m in range(L_o):
        Np[k, m] -= lp[m]
        Nn[k, m] -= ln[m]
    s[k] -= 1
    out = np.full(L + 1, -np.inf)
    if singleton:
        s[k] = 1  # placeholder so the kernel can run; entry replaced below
    K.conditional(s, L, lp, ln, Np, Nn, L_o, log_alpha, work.tb, work.tb2, work.tlog, out)
    if singleton:
        out[k] = -np.inf
    return out


def gibbs_sweep(state: IRMState, rng: np.random.Generator) -> IRMState:
    """Resample every row node, then every column node, in place."""
    _seed_kernels(rng)
    for mode in MODES:
        X, z, s, L, z_o, L_o, Np, Nn, log_alpha, lp, ln, logp, _ = state._mode(mode)
        L = K.sweep_mode(X, z, s, L, z_o, L_o, Np, Nn, log_alpha,
                         state.tb, state.tb2, state.tlog, lp, ln, logp)
        state._set_L(mode, L)
    state.refresh_log_posterior()
    return state


def split_merge_move(state: IRMState, mode: str, rng: np.random.Generator) -> IRMState:
    """One split-merge Metropolis-Hastings move on ``mode``, in place."""
    _seed_kernels(rng)
    X, z, s, L, z_o, L_o, Np, Nn, log_alpha, _, _, _, ws = state._mode(mode)
    if X.shape[0] < 2:
        return state
    L, accepted = K.split_merge(X, z, s, L, z_o, L_o, Np, Nn, log_alpha,
                                state.config.restricted_sweeps, ws,
                                state.tb, state.tb2, state.tlog)
    state._set_L(mode, L)
    state.split_merge_proposed[mode] += 1
    state.split_merge_accepted[mode] += int(accepted)
    state.refresh_log_posterior()
    return state


def predict_eta(state: IRMState) -> LinkProbability:
    """Posterior mean block link probabilities (N+ + beta) / (N+ + N- + 2 beta)."""
    b = state.config.beta
    Np = state.Np[:state.L1, :state.L2].astype(float)
    Nn = state.Nn[:state.L1, :state.L2].astype(float)
    return LinkProbability((Np + b) / (Np + Nn + 2 * b))


def hold_out(A, fraction: float, rng: np.random.Generator
             ) -> tuple[np.ndarray, HeldOutMask]:
    """Mask ceil(fraction * links) links and as many non-links, uniformly."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    dense = _as_dense(A)
    links = np.flatnonzero(dense.ravel())
    nonlinks = np.flatnonzero(~dense.ravel())
    k = math.ceil(fraction * len(links))
    if k == 0:
        raise ValueError("no cells would be held out")
    if k > len(nonlinks):
        raise ValueError(f"need {k} non-links to hold out, only {len(nonlinks)} exist")
    pos = rng.choice(links, size=k, replace=False)
    neg = rng.choice(nonlinks, size=k, replace=False)
    flat = np.concatenate([pos, neg])
    cells = np.column_stack(np.unravel_index(flat, dense.shape))
    mask = HeldOutMask(cells, np.concatenate([np.ones(k, bool), np.zeros(k, bool)]))
    return observed_matrix(dense, mask), mask


@dataclass
class InferenceResult:
    best: IRMState
    trace: np.ndarray
    final: IRMState | None = None


def run_inference(A, config: IRMConfig, mask: HeldOutMask | None = None,
                  rng: np.random.Generator | None = None, check_every: int = 0,
                  init: str = "crp") -> InferenceResult:
    """Run ``config.sweeps`` sweeps; keep the highest-posterior state seen.

    Each sweep is followed by ``split_merge_per_sweep`` split-merge moves per
    mode.  ``trace[t]`` is the log posterior after sweep ``t`` (``trace`` has
    ``sweeps + 1`` entries; entry 0 is the initial state).
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    state = IRMState.initial(A, config, mask, rng, init=init)
    _seed_kernels(rng)
    trace = np.empty(config.sweeps + 1)
    trace[0] = state.log_posterior
    best = state.copy()
    for t in range(1, config.sweeps + 1):
        L1, L2 = K.full_sweep(state.X, state.Xt, state.z1, state.s1, state.L1,
                              state.z2, state.s2, state.L2, state.Np, state.Nn,
                              math.log(state.alpha_row), math.log(state.alpha_col),
                              True, config.split_merge_per_sweep,
                              config.restricted_sweeps, state.tb, state.tb2, state.tlog,
                              state.lp1, state.ln1, state.lp2, state.ln2,
                              state.logp1, state.logp2, state.ws1, state.ws2)
        state.L1, state.L2 = int(L1), int(L2)
        trace[t] = state.refresh_log_posterior()
        if trace[t] > best.log_posterior:
            best = state.copy()
        if check_every and t % check_every == 0:
            state.check()
    return InferenceResult(best, trace, state)


def run_restarts(A, config: IRMConfig, restarts: int, mask: HeldOutMask | None = None,
                 jobs: int = 1, seed: int | None = None) -> tuple[IRMState, list[np.ndarray]]:
    """Independent chains from spawned seeds; returns the best state and all traces."""
    seeds = np.random.SeedSequence(config.seed if seed is None else seed).spawn(restarts)

    def one(ss):
        return run_inference(A, config, mask, np.random.default_rng(ss))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(ss) for ss in seeds]
    best = max(results, key=lambda r: r.best.log_posterior).best
    return best, [r.trace for r in results]
