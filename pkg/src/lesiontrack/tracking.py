"""Lesion correspondence between two scans as a graph-matching problem.

Both lesion sets are extended by one dummy node. The unary cost of a match
is a distance between the two lesions (dummy: ``dummy_unary_cost``); the
binary cost of two matches compares the inter-lesion distances on each scan
(distance to a dummy: ``dummy_binary_cost``). A source lesion matched to the
dummy disappears; a target lesion matched from the dummy appears.

Assignments are int arrays over the real source lesions holding a target
index, or -1 for the dummy.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleAssignment, MissingCorrespondence
from .geodesic import euclidean_matrix, pairwise_matrix, vertex_distance_matrix

logger = logging.getLogger(__name__)

DUMMY = -1
SOLVERS = ("auto", "hungarian", "spectral", "brute_force")
DISTANCES = ("euclidean", "geodesic")


@dataclass(frozen=True)
class MatchConfig:
    alpha: float = 0.5
    distance_kind: str = "geodesic"
    dummy_unary_cost: float = 0.5
    dummy_binary_cost: float = 0.5
    solver: str = "auto"
    geodesic_method: str = "dijkstra"
    normalize_by_diameter: bool = False
    permissive: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.dummy_unary_cost < 0 or self.dummy_binary_cost < 0:
            raise ConfigError("dummy costs must be non-negative")
        if self.distance_kind not in DISTANCES:
            raise ConfigError(f"distance_kind must be one of {DISTANCES}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    disappearing: tuple[int, ...]
    appearing: tuple[int, ...]
    loss: float
    unary_term: float
    binary_term: float
    solver_used: str
    config: MatchConfig | None = field(default=None, compare=False)

    @property
    def assignment(self) -> np.ndarray:
        n = len(self.pairs) + len(self.disappearing)
        a = np.full(n, DUMMY, dtype=np.int64)
        for i, m in self.pairs:
            a[i] = m
        return a

    def to_json(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "disappearing": list(self.disappearing),
            "appearing": list(self.appearing),
            "loss": self.loss,
            "unary": self.unary_term,
            "binary": self.binary_term,
            "solver": self.solver_used,
            "config": asdict(self.config) if self.config else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MatchResult":
        cfg = MatchConfig(**d["config"]) if d.get("config") else None
        return cls(
            tuple(tuple(p) for p in d["pairs"]), tuple(d["disappearing"]), tuple(d["appearing"]),
            float(d["loss"]), float(d["unary"]), float(d["binary"]), d.get("solver", ""), cfg,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


# -- cost assembly ----------------------------------------------------------

def extend_with_dummy(matrix, dummy_cost: float) -> np.ndarray:
    """Append one dummy row and column of ``dummy_cost``; the dummy-dummy entry is 0."""
    matrix = np.asarray(matrix, dtype=float)
    r, c = matrix.shape
    out = np.full((r + 1, c + 1), float(dummy_cost))
    out[:r, :c] = matrix
    out[r, c] = 0.0
    return out


def unary_costs(lesions_t, lesions_t1, corr=None, mesh_t1=None, distance_kind: str = "geodesic",
                dummy_unary_cost: float = 0.5, method: str = "dijkstra", permissive: bool = False,
                scale: float = 1.0) -> np.ndarray:
    """(n+1, m+1) unary cost matrix with the dummy row/column appended.

    Euclidean costs are 3D distances between the lesion points; geodesic
    costs are surface distances on ``mesh_t1`` between the corresponded
    source lesion and each target lesion. ``scale`` divides the real entries.
    """
    if distance_kind == "euclidean":
        d = euclidean_matrix(lesions_t.points, lesions_t1.points)
    elif distance_kind == "geodesic":
        if corr is None or mesh_t1 is None:
            raise MissingCorrespondence("geodesic unary costs need a correspondence map and the target mesh")
        mapped = [int(corr[v]) for v in lesions_t.vertices]
        if len(mapped) and len(lesions_t1):
            d = vertex_distance_matrix(mesh_t1, mapped, lesions_t1.vertices, method, permissive)
        else:
            d = np.zeros((len(mapped), len(lesions_t1)))
    else:
        raise ConfigError(f"unknown distance kind {distance_kind!r}")
    return extend_with_dummy(d / scale, dummy_unary_cost)


def lesion_distances(mesh, lesions, distance_kind: str = "geodesic", method: str = "dijkstra",
                     permissive: bool = False) -> np.ndarray:
    if distance_kind == "euclidean":
        return euclidean_matrix(lesions.points, lesions.points)
    if not len(lesions):
        return np.zeros((0, 0))
    return pairwise_matrix(mesh, lesions, method, permissive)


def binary_distance_matrices(mesh_t, lesions_t, mesh_t1, lesions_t1, dummy_binary_cost: float = 0.5,
                             distance_kind: str = "geodesic", method: str = "dijkstra",
                             permissive: bool = False, scale: float = 1.0):
    """Inter-lesion distance matrices of both scans, each extended by a dummy row/column."""
    d_t = lesion_distances(mesh_t, lesions_t, distance_kind, method, permissive) / scale
    d_t1 = lesion_distances(mesh_t1, lesions_t1, distance_kind, method, permissive) / scale
    return extend_with_dummy(d_t, dummy_binary_cost), extend_with_dummy(d_t1, dummy_binary_cost)


# -- loss -------------------------------------------------------------------

def _check_assignment(assignment, n: int, m: int) -> np.ndarray:
    a = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if len(a) != n:
        raise InfeasibleAssignment(f"assignment covers {len(a)} source lesions, expected {n}")
    if ((a < DUMMY) | (a >= m)).any():
        raise InfeasibleAssignment(f"assignment targets outside [-1, {m})")
    real = a[a != DUMMY]
    if len(np.unique(real)) != len(real):
        raise InfeasibleAssignment("two source lesions share one target lesion")
    return a


def matches_of(assignment, n: int, m: int):
    """Source and target indices (dummy = n and m) of every match, appearing ones last."""
    a = np.asarray(assignment, dtype=np.int64)
    src = np.arange(n)
    tgt = np.where(a == DUMMY, m, a)
    appearing = np.setdiff1d(np.arange(m), a[a != DUMMY])
    return (np.concatenate([src, np.full(len(appearing), n)]),
            np.concatenate([tgt, appearing]).astype(np.int64))


def evaluate_loss(assignment, unary, d_t, d_t1, alpha: float):
    """(loss, unary_term, binary_term) of a feasible assignment.

    The binary term sums over unordered pairs of distinct matches, so every
    pair of lesions is counted once.
    """
    unary = np.asarray(unary, dtype=float)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    a = _check_assignment(assignment, n, m)
    s, t = matches_of(a, n, m)
    u = float(unary[s, t].sum())
    diff = np.abs(np.asarray(d_t)[np.ix_(s, s)] - np.asarray(d_t1)[np.ix_(t, t)])
    b = float(np.triu(diff, 1).sum())
    return alpha * u + (1.0 - alpha) * b, u, b


# -- Kuhn-Munkres -----------------------------------------------------------

def _finite(cost: np.ndarray) -> np.ndarray:
    """Replace +inf by a value larger than any finite assignment cost."""
    cost = np.asarray(cost, dtype=float)
    if np.isfinite(cost).all():
        return cost
    finite = cost[np.isfinite(cost)]
    big = (np.abs(finite).sum() + 1.0) * (cost.shape[0] + 1)
    return np.where(np.isfinite(cost), cost, big)


def _kuhn_munkres(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns (col_of_row, u, v) with reduced costs ``cost - u[:, None] - v``
    non-negative and zero on the assignment.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: 1-based row on column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while True:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[owner[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _lexicographic_refine(col_of_row, tight):
    """Lexicographically smallest perfect matching among tight edges.

    Every optimal assignment uses only edges that are tight for the optimal
    duals, so this picks the smallest optimal assignment row by row.
    """
    n = len(col_of_row)
    col = col_of_row.copy()
    row_of = np.empty(n, dtype=np.int64)
    row_of[col] = np.arange(n)
    tight_cols = [np.flatnonzero(tight[i]) for i in range(n)]

    def reroute(start_row, target_col, first_row):
        # alternating path from start_row to target_col through rows > first_row
        prev = {start_row: None}
        via = {}
        stack = [start_row]
        while stack:
            r = stack.pop()
            for c in tight_cols[r]:
                if c == col[r]:
                    continue
                if c == target_col:
                    # unwind: r takes c, its predecessor takes r's old column, ...
                    path = [(r, c)]
                    while prev[r] is not None:
                        path.append((prev[r], via[r]))
                        r = prev[r]
                    return path
                nxt = row_of[c]
                if nxt <= first_row or nxt in prev:
                    continue
                prev[nxt] = r
                via[nxt] = c
                stack.append(nxt)
        return None

    for i in range(n):
        for c in tight_cols[i]:
            if c >= col[i]:
                break
            r = row_of[c]
            if r < i:
                continue
            path = reroute(r, col[i], i)
            if path is None:
                continue
            old = col[i]
            for rr, cc in path:
                col[rr] = cc
            col[i] = c
            row_of[col] = np.arange(n)
            assert old in col
            break
    return col


def solve_hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment of rows to columns.

    Rectangular matrices are padded with zero rows or columns; rows left on a
    padding column get -1. Among optimal assignments the lexicographically
    smallest column sequence is returned.
    """
    cost = _finite(np.asarray(cost, dtype=float))
    r, c = cost.shape
    if r == 0:
        return np.zeros(0, dtype=np.int64)
    size = max(r, c)
    sq = np.zeros((size, size))
    sq[:r, :c] = cost
    col, u, v = _kuhn_munkres(sq)
    scale = max(1.0, float(np.abs(sq).max()))
    tight = np.abs(sq - u[:, None] - v[None, :]) <= 1e-10 * scale * size
    col = _lexicographic_refine(col, tight)
    out = col[:r].copy()
    out[out >= c] = -1
    return out


def pad_with_dummies(unary) -> np.ndarray:
    """Square (n+m) matrix where each real lesion has its own copy of the dummy.

    Layout: [[real n x m, source-dummy n x n], [target-dummy m x m, 0 (m x n)]].
    """
    unary = np.asarray(unary, dtype=float)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    out = np.zeros((n + m, m + n))
    out[:n, :m] = unary[:n, :m]
    out[:n, m:] = unary[:n, m][:, None]
    out[n:, :m] = unary[n, :m][None, :]
    return out


def solve_hungarian_dummy(unary) -> np.ndarray:
    """Assignment minimising the unary term alone, dummies included."""
    unary = np.asarray(unary, dtype=float)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    col = solve_hungarian(pad_with_dummies(unary))[:n]
    return np.where(col < m, col, DUMMY)


# -- exhaustive search --------------------------------------------------------

def enumerate_assignments(n: int, m: int) -> np.ndarray:
    """Every feasible assignment of n sources to m targets or the dummy, as rows."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    rows = []
    for k in range(min(n, m) + 1):
        for chosen in itertools.combinations(range(n), k):
            for targets in itertools.permutations(range(m), k):
                a = [DUMMY] * n
                for i, t in zip(chosen, targets):
                    a[i] = t
                rows.append(a)
    return np.array(rows, dtype=np.int64)


def batch_losses(assignments, unary, d_t, d_t1, alpha: float):
    """Loss, unary and binary terms for many assignments at once."""
    unary = _finite(unary)
    d_t, d_t1 = _finite(d_t), _finite(d_t1)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    a = np.asarray(assignments, dtype=np.int64)
    tgt = np.where(a == DUMMY, m, a)  # (B, n)
    present = np.zeros((len(a), m + 1), dtype=bool)
    np.put_along_axis(present, tgt, True, axis=1)
    appearing = ~present[:, :m]  # (B, m)
    u = unary[np.arange(n)[None, :], tgt].sum(axis=1) + (appearing * unary[n, :m][None, :]).sum(axis=1)
    # source-source pairs
    iu, ku = np.triu_indices(n, 1)
    b = np.abs(d_t[iu, ku][None, :] - d_t1[tgt[:, iu], tgt[:, ku]]).sum(axis=1)
    # source-appearing pairs
    if m:
        sa = np.abs(d_t[np.arange(n), n][None, :, None] - d_t1[tgt[:, :, None], np.arange(m)[None, None, :]])
        b += (sa * appearing[:, None, :]).sum(axis=(1, 2))
        ju, lu = np.triu_indices(m, 1)
        aa = np.abs(d_t[n, n] - d_t1[ju, lu])
        b += (appearing[:, ju] & appearing[:, lu]) @ aa
    return alpha * u + (1.0 - alpha) * b, u, b


def solve_brute_force(unary, d_t, d_t1, alpha: float, chunk: int = 20000) -> np.ndarray:
    """Exact minimiser by enumeration; ties go to the first assignment enumerated."""
    unary = np.asarray(unary, dtype=float)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    cands = enumerate_assignments(n, m)
    best, best_loss = None, np.inf
    for start in range(0, len(cands), chunk):
        block = cands[start:start + chunk]
        loss, _, _ = batch_losses(block, unary, d_t, d_t1, alpha)
        k = int(np.argmin(loss))
        if loss[k] < best_loss:
            best, best_loss = block[k], loss[k]
    return best.copy()


# -- spectral relaxation ----------------------------------------------------

def _candidates(unary, max_candidates: int):
    """Association-graph nodes (source, target) in extended indexing."""
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    nodes = []
    for i in range(n):
        order = np.lexsort((np.arange(m), unary[i, :m]))[:max_candidates]
        nodes.extend((i, int(j)) for j in sorted(order))
        nodes.append((i, m))
    nodes.extend((n, j) for j in range(m))
    return np.array(nodes, dtype=np.int64).reshape(-1, 2)


def _affinity(nodes, unary, d_t, d_t1, alpha, n, m):
    src, tgt = nodes[:, 0], nodes[:, 1]
    pair_cost = (1.0 - alpha) * np.abs(d_t[np.ix_(src, src)] - d_t1[np.ix_(tgt, tgt)])
    conflict = ((src[:, None] == src[None, :]) & (src[:, None] != n)) | \
               ((tgt[:, None] == tgt[None, :]) & (tgt[:, None] != m))
    node_cost = alpha * unary[src, tgt]
    costs = np.concatenate([pair_cost[~conflict].ravel(), node_cost])
    nonzero = costs[(costs > 0) & np.isfinite(costs)]
    sigma = float(np.median(nonzero)) if len(nonzero) else 1.0
    k = np.exp(-pair_cost / sigma)
    k[conflict] = 0.0
    np.fill_diagonal(k, np.exp(-node_cost / sigma))
    return k


def power_iteration(k: np.ndarray, iters: int = 200, tol: float = 1e-10) -> np.ndarray:
    """Leading eigenvector of a non-negative symmetric matrix, from the uniform vector."""
    x = np.full(k.shape[0], 1.0 / math.sqrt(k.shape[0]))
    for _ in range(iters):
        y = k @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return x
        y /= norm
        if np.abs(y - x).sum() < tol:
            return y
        x = y
    return x


def move_deltas(assignment, unary, d_t, d_t1, alpha: float):
    """Exact loss change of every single move from ``assignment``.

    Returns (swap, take, drop):

    * ``swap[i, k]``: exchange the targets of sources i and k;
    * ``take[i, j]``: source i moves onto target j, which must be unmatched
      (its previous target, if real, starts appearing);
    * ``drop[i]``: source i moves to the dummy.

    Invalid moves are +inf. Costs O(n * m * (n + m)).
    """
    u, dt, dt1 = unary, d_t, d_t1
    n, m = u.shape[0] - 1, u.shape[1] - 1
    a = np.asarray(assignment, dtype=np.int64)
    t = np.where(a == DUMMY, m, a)
    matched = np.zeros(m + 1, dtype=bool)
    matched[t] = True
    appearing = np.flatnonzero(~matched[:m])
    # active slots: every source, then the appearing targets
    s_act = np.concatenate([np.arange(n), np.full(len(appearing), n)])
    t_act = np.concatenate([t, appearing])
    # g_src[i, x]: binary contribution of source i with target x against all active slots
    g_src = np.abs(dt[:n, s_act][:, None, :] - dt1[:, t_act][None, :, :]).sum(axis=2)
    g_app = np.abs(dt[n, s_act][None, :] - dt1[:, t_act]).sum(axis=1)
    src = np.arange(n)
    ti = t[:, None]
    tk = t[None, :]

    # swap i <-> k; the i-k pair term itself is unchanged
    def own(i_idx, k_idx, new_t, old_t, other_old_t):
        return (g_src[i_idx, new_t] - g_src[i_idx, old_t]
                - (np.abs(dt[i_idx, i_idx] - dt1[new_t, old_t]) - np.abs(dt[i_idx, i_idx] - dt1[old_t, old_t]))
                - (np.abs(dt[i_idx, k_idx] - dt1[new_t, other_old_t])
                   - np.abs(dt[i_idx, k_idx] - dt1[old_t, other_old_t])))

    ii, kk = np.meshgrid(src, src, indexing="ij")
    d_bin = own(ii, kk, tk.repeat(n, 0), ti.repeat(n, 1), tk.repeat(n, 0)) + \
        own(kk, ii, ti.repeat(n, 1), tk.repeat(n, 0), ti.repeat(n, 1))
    d_un = u[ii, tk] + u[kk, ti] - u[ii, ti] - u[kk, tk]
    swap = alpha * d_un + (1 - alpha) * d_bin
    swap[(ti == tk) | (ii >= kk)] = np.inf

    # take: source i onto unmatched target j
    take = np.full((n, m), np.inf)
    if len(appearing):
        j = appearing[None, :]
        t0 = ti
        real0 = t0 < m
        c_new = (g_src[src[:, None], j] - np.abs(dt[src, src][:, None] - dt1[j, t0])
                 - np.abs(dt[src, n][:, None] - dt1[j, j]))
        c_old = (g_src[src, t][:, None] - np.abs(dt[src, src] - dt1[t, t])[:, None]
                 - np.abs(dt[src, n][:, None] - dt1[t0, j]))
        app_old = g_app[j] - np.abs(dt[n, src][:, None] - dt1[j, t0]) - np.abs(dt[n, n] - dt1[j, j])
        pair_old = np.abs(dt[src, n][:, None] - dt1[t0, j])
        app_new = (g_app[t0] - np.abs(dt[n, src][:, None] - dt1[t0, t0]) - np.abs(dt[n, n] - dt1[t0, j])
                   + np.abs(dt[src, n][:, None] - dt1[j, t0]))
        d_bin = c_new - c_old - app_old - pair_old + np.where(real0, app_new, 0.0)
        d_un = u[src[:, None], j] - u[src, t][:, None] - u[n, j] + np.where(real0, u[n, t0], 0.0)
        take[:, appearing] = alpha * d_un + (1 - alpha) * d_bin

    # drop: source i onto the dummy
    drop = np.full(n, np.inf)
    real = t < m
    if real.any():
        i = src[real]
        t0 = t[real]
        c_new = g_src[i, m] - np.abs(dt[i, i] - dt1[m, t0])
        c_old = g_src[i, t0] - np.abs(dt[i, i] - dt1[t0, t0])
        app_new = g_app[t0] - np.abs(dt[n, i] - dt1[t0, t0]) + np.abs(dt[i, n] - dt1[m, t0])
        d_bin = c_new - c_old + app_new
        d_un = u[i, m] - u[i, t0] + u[n, t0]
        drop[i] = alpha * d_un + (1 - alpha) * d_bin
    return swap, take, drop


def local_search(assignment, unary, d_t, d_t1, alpha: float, max_steps: int = 10000) -> np.ndarray:
    """Steepest-descent hill climbing on the loss.

    Moves: exchange the targets of two source lesions (dummy included), move
    a source lesion onto an unmatched target, or onto the dummy. Each step
    applies the single best improving move; stops at a local minimum. Ties
    go to the first move in (swap, take, drop) row-major order.
    """
    unary = _finite(unary)
    d_t, d_t1 = _finite(d_t), _finite(d_t1)
    a = np.asarray(assignment, dtype=np.int64).copy()
    if len(a) == 0:
        return a
    scale = max(1.0, float(np.abs(unary).max()), float(np.abs(d_t).max()), float(np.abs(d_t1).max()))
    for _ in range(max_steps):
        swap, take, drop = move_deltas(a, unary, d_t, d_t1, alpha)
        best = [swap.min(), take.min() if take.size else np.inf, drop.min()]
        kind = int(np.argmin(best))
        if not best[kind] < -1e-12 * scale:
            break
        if kind == 0:
            i, k = np.unravel_index(int(np.argmin(swap)), swap.shape)
            a[i], a[k] = a[k], a[i]
        elif kind == 1:
            i, j = np.unravel_index(int(np.argmin(take)), take.shape)
            a[i] = j
        else:
            a[int(np.argmin(drop))] = DUMMY
    return a


def solve_spectral(unary, d_t, d_t1, alpha: float, max_candidates: int = 12) -> np.ndarray:
    """Approximate minimiser of the unary+binary loss.

    Power iteration on the pairwise affinity ``exp(-cost / sigma)`` (sigma
    the median non-zero cost) gives a soft assignment, which the Hungarian
    method rounds; pairwise-swap hill climbing then polishes it. The unary
    optimum is polished as a second start and the better result returned.
    With ``alpha == 1`` this is exactly :func:`solve_hungarian_dummy`.
    """
    unary = np.asarray(unary, dtype=float)
    d_t, d_t1 = np.asarray(d_t, dtype=float), np.asarray(d_t1, dtype=float)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    hungarian = solve_hungarian_dummy(unary)
    if alpha == 1.0 or n == 0:
        return hungarian
    fu, ft, ft1 = _finite(unary), _finite(d_t), _finite(d_t1)
    nodes = _candidates(fu, max_candidates)
    x = power_iteration(_affinity(nodes, fu, ft, ft1, alpha, n, m))
    score = np.full((n + 1, m + 1), -1.0)
    score[nodes[:, 0], nodes[:, 1]] = np.abs(x)
    score[n, m] = 0.0
    rounded = solve_hungarian_dummy(np.where(score >= 0, score.max() - score, np.inf))
    starts = [rounded, hungarian]
    best, best_loss = None, np.inf
    for s in starts:
        polished = local_search(s, fu, ft, ft1, alpha)
        loss = float(batch_losses(polished[None, :], fu, ft, ft1, alpha)[0][0])
        if loss < best_loss - 1e-12 * max(1.0, abs(best_loss) if np.isfinite(best_loss) else 1.0):
            best, best_loss = polished, loss
    return best


# -- driver -------------------------------------------------------------------

def result_from_assignment(assignment, unary, d_t, d_t1, alpha, solver, config=None) -> MatchResult:
    unary = np.asarray(unary)
    n, m = unary.shape[0] - 1, unary.shape[1] - 1
    a = _check_assignment(assignment, n, m)
    loss, u, b = evaluate_loss(a, unary, d_t, d_t1, alpha)
    pairs = tuple((i, int(a[i])) for i in range(n) if a[i] != DUMMY)
    matched = {j for _, j in pairs}
    return MatchResult(
        pairs=pairs,
        disappearing=tuple(i for i in range(n) if a[i] == DUMMY),
        appearing=tuple(j for j in range(m) if j not in matched),
        loss=loss, unary_term=u, binary_term=b, solver_used=solver, config=config,
    )


def solve(unary, d_t, d_t1, alpha: float, solver: str = "auto") -> tuple[np.ndarray, str]:
    if solver == "auto":
        solver = "hungarian" if alpha == 1.0 else "spectral"
    if solver == "hungarian":
        if alpha != 1.0:
            logger.warning("hungarian solver ignores the binary term (alpha=%g)", alpha)
        return solve_hungarian_dummy(unary), solver
    if solver == "spectral":
        return solve_spectral(unary, d_t, d_t1, alpha), solver
    if solver == "brute_force":
        return solve_brute_force(unary, d_t, d_t1, alpha), solver
    raise ConfigError(f"unknown solver {solver!r}")


def track(mesh_t, lesions_t, mesh_t1, lesions_t1, corr=None, config: MatchConfig = MatchConfig()) -> MatchResult:
    """Match lesions of scan t to lesions of scan t+1."""
    kind, method, perm = config.distance_kind, config.geodesic_method, config.permissive
    scale = 1.0
    if config.normalize_by_diameter and len(lesions_t) > 1:
        diam = float(np.max(lesion_distances(mesh_t, lesions_t, "geodesic", method, perm)))
        if np.isfinite(diam) and diam > 0:
            scale = diam
    unary = unary_costs(lesions_t, lesions_t1, corr, mesh_t1, kind, config.dummy_unary_cost, method, perm, scale)
    d_t, d_t1 = binary_distance_matrices(
        mesh_t, lesions_t, mesh_t1, lesions_t1, config.dummy_binary_cost, kind, method, perm, scale
    )
    assignment, used = solve(unary, d_t, d_t1, config.alpha, config.solver)
    return result_from_assignment(assignment, unary, d_t, d_t1, config.alpha, used, config)
