"""N-player program on the binomial noise lattice.

Every agent ``i`` chooses a trading rate ``v^i_n`` at each decision node ``n``
(levels ``0 .. M-1`` of the tree) and minimises the expected cost

    sum_n w_n L(X^i_n, v^i_n) + 2^-M sum_leaves Psi(X^i_leaf),

where ``w_n = h / 2^k`` for a node on level ``k`` (its path probability times
the step) and ``X^i_child = X^i_n + h v^i_n``. The population minimises the
average of these costs subject to the balance constraint
``(1/N) sum_i v^i_n = Q_n`` at each decision node.

The constraint at node ``n`` enters the Lagrangian with weight ``w_n``, so the
multiplier is the price: stationarity reads ``L_v + P^i + price = 0`` for
every agent, where ``P^i`` is the discrete adjoint.

Nodes are stored in heap order: node ``n`` has children ``2n+1`` (up move)
and ``2n+2`` (down move); level ``k`` occupies indices ``2^k-1 .. 2^(k+1)-2``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, ConfigError, ConvergenceError, DomainError, SingularityError
from .market import CostModel, MarketParams, lq_cost
from .supply import NoiseLattice

__all__ = [
    "TreeProblem",
    "TreeSolution",
    "AdjointTable",
    "variable_count",
    "assemble_kkt",
    "kkt_unknowns",
    "solve_lq",
    "solve_general",
    "price_from_multipliers",
    "discrete_adjoint",
    "brute_force_oracle",
    "mean_l2_distance",
    "tree_price_paths",
]

ORACLE_CAPACITY = 200
DEFAULT_MAX_KKT_UNKNOWNS = 500_000


def variable_count(N: int, M: int) -> int:
    """Unknowns of the KKT system: ``N`` velocities plus one multiplier per decision node."""
    return (N + 1) * (2**M - 1)


@dataclass(frozen=True)
class TreeProblem:
    """Population of ``N`` agents with initial positions ``x0`` on a lattice."""

    lattice: NoiseLattice
    x0: np.ndarray
    params: MarketParams
    cost: CostModel | None = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.ndim != 1 or x0.size < 1:
            raise ConfigError("expected a non-empty vector of initial positions", field="x0")
        if not np.all(np.isfinite(x0)):
            raise ConfigError("initial positions must be finite", field="x0")
        if self.lattice.M < 1:
            raise ConfigError("lattice needs at least one step", field="M")
        object.__setattr__(self, "x0", x0)
        if self.cost is None:
            object.__setattr__(self, "cost", lq_cost(self.params))

    @property
    def N(self) -> int:
        return self.x0.size

    @property
    def M(self) -> int:
        return self.lattice.M

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def n_decision(self) -> int:
        return 2**self.M - 1

    @property
    def n_variables(self) -> int:
        return variable_count(self.N, self.M)

    def weights(self) -> np.ndarray:
        """``w_n = h / 2^k`` for the decision nodes."""
        levels = self.lattice.node_levels()[: self.n_decision]
        return self.h * np.ldexp(1.0, -levels)

    def mean_x0(self) -> float:
        # fsum is order-independent, so permuting agents cannot change the result
        return math.fsum(self.x0) / self.N


@dataclass(frozen=True)
class TreeSolution:
    """Velocities, positions and prices on the lattice.

    ``v`` and ``price`` live on the decision nodes (shape ``(N, 2^M - 1)`` and
    ``(2^M - 1,)``); ``X`` covers every node including the leaves.
    """

    problem: TreeProblem = field(repr=False)
    v: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    price: np.ndarray = field(repr=False)
    multipliers: np.ndarray = field(repr=False)
    objective: float
    kkt_residual: float
    balance_residual: float
    method: str
    info: dict = field(default_factory=dict)

    def level_price(self, k: int) -> np.ndarray:
        return self.price[2**k - 1 : 2 ** (k + 1) - 1]

    def diagnostics(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "balance_residual": self.balance_residual,
            "N": self.problem.N,
            "M": self.problem.M,
            "variables": self.problem.n_variables,
            **self.info,
        }

    def to_dict(self) -> dict:
        lat = self.problem.lattice
        levels = []
        for k in range(self.problem.M):
            sl = slice(2**k - 1, 2 ** (k + 1) - 1)
            levels.append(
                {
                    "k": k,
                    "Q": lat.q[sl].tolist(),
                    "price": self.price[sl].tolist(),
                    "v": self.v[:, sl].tolist(),
                }
            )
        return {
            "params": self.problem.params.to_dict(),
            "x0": self.problem.x0.tolist(),
            "h": self.problem.h,
            "levels": levels,
            "diagnostics": self.diagnostics(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, include_velocities: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        N = self.problem.N
        header = ["k", "j", "Q", "price"]
        if include_velocities:
            header += [f"v_{i + 1}" for i in range(N)]
        writer.writerow(header)
        levels = self.problem.lattice.node_levels()
        for n in range(self.problem.n_decision):
            k = int(levels[n])
            row = [k, n - (2**k - 1) + 1, repr(float(self.problem.lattice.q[n])), repr(float(self.price[n]))]
            if include_velocities:
                row += [repr(float(x)) for x in self.v[:, n]]
            writer.writerow(row)
        return buf.getvalue()


@dataclass(frozen=True)
class AdjointTable:
    """Discrete adjoint ``P`` (shape ``(N, 2^M - 1)``) and ``Pi = mean_i (P^i + L_v)``."""

    P: np.ndarray
    Pi: np.ndarray


# ---------------------------------------------------------------- forward pass


def positions(problem: TreeProblem, v: np.ndarray) -> np.ndarray:
    """Positions ``X^i_n`` at every node given velocities on the decision nodes."""
    D = problem.n_decision
    X = np.empty((problem.N, 2 * D + 1))
    X[:, 0] = problem.x0
    h = problem.h
    for k in range(problem.M):
        parents = np.arange(2**k - 1, 2 ** (k + 1) - 1)
        step = X[:, parents] + h * v[:, parents]
        X[:, 2 * parents + 1] = step
        X[:, 2 * parents + 2] = step
    return X


def objective(problem: TreeProblem, v: np.ndarray, X: np.ndarray | None = None) -> float:
    """Population-average expected cost."""
    X = positions(problem, v) if X is None else X
    D = problem.n_decision
    w = problem.weights()
    running = np.asarray(problem.cost.L(X[:, :D], v), dtype=float) @ w
    terminal = np.asarray(problem.cost.Psi(X[:, D:]), dtype=float).sum(axis=1) * 2.0**-problem.M
    return float(np.mean(running + terminal))


def _adjoint(problem: TreeProblem, v: np.ndarray, X: np.ndarray) -> np.ndarray:
    cost = problem.cost
    D = problem.n_decision
    h = problem.h
    P = np.empty((problem.N, D))
    last = np.arange(2 ** (problem.M - 1) - 1, D)
    psi = np.asarray(cost.Psi_prime(X[:, D:]), dtype=float)
    # leaves 2n+1, 2n+2 of a last-level node n sit at offsets 2n+1-D, 2n+2-D
    P[:, last] = 0.5 * (psi[:, 2 * last + 1 - D] + psi[:, 2 * last + 2 - D])
    for k in range(problem.M - 2, -1, -1):
        nodes = np.arange(2**k - 1, 2 ** (k + 1) - 1)
        up, down = 2 * nodes + 1, 2 * nodes + 2
        gu = h * np.asarray(cost.L_x(X[:, up], v[:, up]), dtype=float) + P[:, up]
        gd = h * np.asarray(cost.L_x(X[:, down], v[:, down]), dtype=float) + P[:, down]
        P[:, nodes] = 0.5 * (gu + gd)
    return P


def discrete_adjoint(problem: TreeProblem, solution: TreeSolution) -> AdjointTable:
    """Backward recursion for the adjoint of every agent.

    On the last decision level ``P`` is the mean of ``Psi'`` over the two
    leaves; above it, ``P`` is the mean over the children of
    ``h L_x(X_child, v_child) + P_child``.
    """
    P = _adjoint(problem, solution.v, solution.X)
    D = problem.n_decision
    Lv = np.asarray(problem.cost.L_v(solution.X[:, :D], solution.v), dtype=float)
    return AdjointTable(P=P, Pi=np.mean(P + Lv, axis=0))


def _normalised_gradient(problem: TreeProblem, v: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``L_v + P``: the gradient of each agent's cost divided by the node weight."""
    D = problem.n_decision
    return np.asarray(problem.cost.L_v(X[:, :D], v), dtype=float) + _adjoint(problem, v, X)


def price_from_multipliers(problem: TreeProblem, multipliers, convention: str = "weighted") -> np.ndarray:
    """Convert raw balance multipliers into prices.

    With ``convention="weighted"`` (constraints scaled by ``w_n``, as in
    :func:`solve_lq`) the multiplier already is the price. With
    ``"unweighted"`` constraints the price is ``multiplier / w_n``, i.e.
    ``2^k / h`` times the multiplier.
    """
    lam = np.asarray(multipliers, dtype=float)
    if convention == "weighted":
        return lam.copy()
    if convention == "unweighted":
        return lam / problem.weights()
    raise ConfigError(f"unknown multiplier convention {convention!r}")


def _finish(problem, v, price, multipliers, method, info) -> TreeSolution:
    X = positions(problem, v)
    G = _normalised_gradient(problem, v, X)
    kkt = float(np.max(np.abs(G + price[None, :])))
    balance = float(np.max(np.abs(v.mean(axis=0) - problem.lattice.q[: problem.n_decision])))
    return TreeSolution(
        problem=problem,
        v=v,
        X=X,
        price=price,
        multipliers=multipliers,
        objective=objective(problem, v, X),
        kkt_residual=kkt,
        balance_residual=balance,
        method=method,
        info=info,
    )


# -------------------------------------------------------------------- LQ solve


def _lq_structure(problem: TreeProblem):
    """Per-agent Hessian ``H`` and the vectors ``S``, ``T`` of the linear term.

    The quadratic cost of one agent is ``1/2 v'Hv + h (x0 S - T)'v + const``
    with ``H_ab = c w_a [a == b] + h^2 S_b`` whenever ``a`` is an ancestor of
    (or equal to) ``b``, where ``S_b`` sums the position weights ``D_m`` over
    the strict descendants of ``b``.
    """
    p = problem.params
    M, D, h = problem.M, problem.n_decision, problem.h
    levels = problem.lattice.node_levels()
    n_all = 2 * D + 1
    Dm = np.empty(n_all)
    Dm[:D] = p.eta * h * np.ldexp(1.0, -levels[:D])
    Dm[0] = 0.0  # the root position is fixed
    Dm[D:] = p.gamma * 2.0**-M
    target = np.where(np.arange(n_all) < D, p.kappa, p.zeta)
    sub = Dm.copy()
    subT = Dm * target
    for n in range(D - 1, -1, -1):
        sub[n] += sub[2 * n + 1] + sub[2 * n + 2]
        subT[n] += subT[2 * n + 1] + subT[2 * n + 2]
    S = sub[:D] - Dm[:D]
    T = subT[:D] - (Dm * target)[:D]

    w = problem.weights()
    rows, cols, vals = [np.arange(D)], [np.arange(D)], [p.c * w + h * h * S]
    b = np.arange(D)
    anc = b.copy()
    for _ in range(M - 1):
        has = anc > 0
        anc = np.where(has, (anc - 1) // 2, anc)
        sel = np.flatnonzero(has)
        if sel.size == 0:
            break
        a = anc[sel]
        val = h * h * S[b[sel]]
        rows += [a, b[sel]]
        cols += [b[sel], a]
        vals += [val, val]
    H = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(D, D)
    )
    return H, S, T, w


def assemble_kkt(problem: TreeProblem):
    """Symmetrically scaled KKT matrix and right-hand side.

    Unknowns are ``sqrt(w) v^i`` for every agent followed by ``sqrt(w) price``.
    Returns ``(K, rhs, scale)`` where ``scale = 1 / sqrt(w)`` undoes the
    variable scaling.
    """
    if problem.cost.kind != "LQ":
        raise ConfigError("the linear KKT system needs an LQ cost model", field="cost")
    H, S, T, w = _lq_structure(problem)
    N, D = problem.N, problem.n_decision
    scale = 1.0 / np.sqrt(w)
    Dinv = sp.diags(scale)
    Hs = (Dinv @ H @ Dinv).tocsc()
    eye = sp.identity(D, format="csc")  # W^-1/2 W W^-1/2
    blocks = [[None] * (N + 1) for _ in range(N + 1)]
    for i in range(N):
        blocks[i][i] = Hs
        blocks[i][N] = eye
        blocks[N][i] = eye
    K = sp.bmat(blocks, format="csc")
    q = problem.lattice.q[:D]
    g = problem.h * (problem.x0[:, None] * S[None, :] - T[None, :])
    rhs = np.concatenate([(-g * scale[None, :]).ravel(), N * np.sqrt(w) * q])
    return K, rhs, scale


def kkt_unknowns(problem: TreeProblem) -> int:
    """Size of the assembled KKT system."""
    return assemble_kkt(problem)[0].shape[0]


def solve_lq(problem: TreeProblem, method: str = "auto", max_kkt_unknowns: int = DEFAULT_MAX_KKT_UNKNOWNS) -> TreeSolution:
    """Exact solution of the LQ program.

    Parameters
    ----------
    method : {"auto", "kkt", "schur"}
        ``"kkt"`` factors the full sparse KKT system with SuperLU. ``"schur"``
        eliminates the agents block by block: all agents share the Hessian
        ``H``, so the price is ``-W^-1 (H Q + mean_i g^i)`` and
        ``v^i = Q - h (x0^i - mean x0) H^-1 S``, requiring a single sparse
        factorisation of size ``2^M - 1``. ``"auto"`` uses ``"kkt"`` up to
        ``max_kkt_unknowns`` unknowns and falls back to ``"schur"`` beyond,
        where the KKT factor would no longer fit comfortably in memory.
    """
    if problem.cost.kind != "LQ":
        raise ConfigError("solve_lq needs an LQ cost model; use solve_general", field="cost")
    if problem.M > 22:
        raise CapacityError(f"M={problem.M} exceeds the lattice bound")
    if method == "auto":
        method = "kkt" if problem.n_variables <= max_kkt_unknowns else "schur"
    N, D = problem.N, problem.n_decision
    q = problem.lattice.q[:D]
    info = {"unknowns": problem.n_variables}
    if method == "kkt":
        K, rhs, scale = assemble_kkt(problem)
        info.update(kkt_size=K.shape[0], kkt_nnz=int(K.nnz))
        try:
            # a symmetric fill-reducing ordering keeps the factor small (COLAMD fills in badly)
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularityError(f"KKT matrix is singular: {exc}") from None
        sol = lu.solve(rhs)
        info.update(factor_nnz=int(lu.L.nnz + lu.U.nnz))
        v = sol[: N * D].reshape(N, D) * scale[None, :]
        price = sol[N * D :] * scale
    elif method == "schur":
        H, S, T, w = _lq_structure(problem)
        try:
            lu = spla.splu(H.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularityError(f"Hessian is singular: {exc}") from None
        info.update(hessian_nnz=int(H.nnz), factor_nnz=int(lu.L.nnz + lu.U.nnz))
        y = lu.solve(S)
        xbar0 = problem.mean_x0()
        price = -(H @ q + problem.h * (xbar0 * S - T)) / w
        v = q[None, :] - problem.h * (problem.x0 - xbar0)[:, None] * y[None, :]
    else:
        raise ConfigError(f"unknown method {method!r}", field="method")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(price))):
        raise SingularityError("KKT solve produced non-finite values")
    return _finish(problem, v, price, price.copy(), method, info)


# --------------------------------------------------------------- general solve


def solve_general(problem: TreeProblem, tol: float = 1e-8, max_iters: int = 20_000, v0=None) -> TreeSolution:
    """Projected gradient descent for a general convex cost.

    The iterate stays on the balance manifold: the search direction is the
    per-node gradient with its agent mean removed, which is the exact
    projection onto the constraints in the metric weighted by ``w``. Steps
    start from the Barzilai-Borwein length and backtrack until Armijo's
    condition holds. The price is minus the agent mean of ``L_v + P``.

    Raises
    ------
    ConvergenceError
        If the projected gradient is still above ``tol`` after ``max_iters``.
    """
    if tol <= 0:
        raise ConfigError("tolerance must be positive", field="tol")
    D = problem.n_decision
    q = problem.lattice.q[:D]
    w = problem.weights()
    v = np.broadcast_to(q, (problem.N, D)).copy() if v0 is None else np.array(v0, dtype=float)
    X = positions(problem, v)
    f = objective(problem, v, X)
    G = _normalised_gradient(problem, v, X)
    d = G - G.mean(axis=0)
    step = 1.0 / (problem.params.c if problem.cost.kind == "LQ" else 1.0)
    prev = None
    it = 0
    res = float(np.max(np.abs(d)))
    while res > tol:
        if it >= max_iters:
            raise ConvergenceError(
                f"projected gradient did not converge: residual {res:.3e} after {it} iterations",
                residual=res,
                iterations=it,
            )
        if prev is not None:
            s, y = v - prev[0], d - prev[1]
            sy = float(np.sum(w * s * y))
            if sy > 0:
                step = float(np.sum(w * s * s)) / sy
        slope = float(np.sum(w * d * d)) / problem.N
        t = step
        for _ in range(60):
            cand = v - t * d
            Xc = positions(problem, cand)
            fc = objective(problem, cand, Xc)
            if fc <= f - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed", residual=res, iterations=it)
        prev = (v, d)
        v, X, f = cand, Xc, fc
        G = _normalised_gradient(problem, v, X)
        d = G - G.mean(axis=0)
        res = float(np.max(np.abs(d)))
        it += 1
    # remove the rounding drift of the balance constraint
    v = v - (v.mean(axis=0) - q)[None, :]
    X = positions(problem, v)
    price = -_normalised_gradient(problem, v, X).mean(axis=0)
    return _finish(problem, v, price, price.copy(), "projected-gradient", {"iterations": it})


# ---------------------------------------------------------------------- oracle


def _enumerated_objective(problem: TreeProblem, V: np.ndarray) -> np.ndarray:
    """Objective for a batch ``V`` of shape ``(B, N, 2^M - 1)`` by explicit path enumeration.

    Path ``p`` (``0 <= p < 2^M``) visits on level ``k`` the node with 0-based
    in-level index ``p >> (M - k)``; every path has probability ``2^-M``.
    """
    M, h, N = problem.M, problem.h, problem.N
    cost = problem.cost
    B = V.shape[0]
    total = np.zeros(B)
    for p in range(2**M):
        x = np.broadcast_to(problem.x0, (B, N)).astype(float)
        acc = np.zeros((B, N))
        for k in range(M):
            node = 2**k - 1 + (p >> (M - k))
            vk = V[:, :, node]
            acc = acc + h * np.asarray(cost.L(x, vk), dtype=float)
            x = x + h * vk
        acc = acc + np.asarray(cost.Psi(x), dtype=float)
        total = total + acc.mean(axis=1)
    return total * 2.0**-M


def brute_force_oracle(problem: TreeProblem, half_width: float = 0.5, points: int = 41, rounds: int = 3) -> TreeSolution:
    """Independent dense solver for tiny instances (testing only).

    For LQ costs the Hessian and gradient of the enumerated objective are
    read off exactly from unit perturbations (the objective is quadratic) and
    the unweighted equality-constrained QP is solved through its dense KKT
    matrix. For other costs the last agent's velocities are eliminated
    through the balance constraint and the remaining (at most three) free
    variables are found by nested grid refinement around ``v = Q``.
    """
    N, D = problem.N, problem.n_decision
    if problem.n_variables > ORACLE_CAPACITY:
        raise CapacityError(f"{problem.n_variables} unknowns exceed the oracle capacity {ORACLE_CAPACITY}")
    q = problem.lattice.q[:D]
    n = N * D
    if problem.cost.kind == "LQ":
        E = np.eye(n)
        f0 = _enumerated_objective(problem, np.zeros((1, N, D)))[0]
        fi = _enumerated_objective(problem, E.reshape(n, N, D))
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        Hd = np.zeros((n, n))
        if pairs:
            batch = np.array([E[a] + E[b] for a, b in pairs]).reshape(-1, N, D)
            fab = _enumerated_objective(problem, batch)
            for (a, b), val in zip(pairs, fab):
                Hd[a, b] = Hd[b, a] = val - fi[a] - fi[b] + f0
        f2 = _enumerated_objective(problem, (2 * E).reshape(n, N, D))
        Hd[np.diag_indices(n)] = f2 - 2 * fi + f0
        g = fi - f0 - 0.5 * np.diag(Hd)
        A = np.zeros((D, n))
        for i in range(N):
            A[np.arange(D), i * D + np.arange(D)] = 1.0 / N
        K = np.block([[Hd, A.T], [A, np.zeros((D, D))]])
        sol = np.linalg.solve(K, np.concatenate([-g, q]))
        v = sol[:n].reshape(N, D)
        lam = sol[n:]
        price = price_from_multipliers(problem, lam, convention="unweighted")
        return _finish(problem, v, price, lam, "oracle-dense-kkt", {})

    free = (N - 1) * D
    if free > 3:
        raise CapacityError(f"grid search supports at most 3 free variables, got {free}")
    if free == 0:
        v = q[None, :].copy()
    else:
        center = np.tile(q, N - 1)
        width = half_width
        for _ in range(rounds):
            axes = [np.linspace(c - width, c + width, points) for c in center]
            grid = np.array(list(itertools.product(*axes)))
            head = grid.reshape(-1, N - 1, D)
            last = N * q[None, :] - head.sum(axis=1)
            V = np.concatenate([head, last[:, None, :]], axis=1)
            vals = _enumerated_objective(problem, V)
            center = grid[int(np.argmin(vals))]
            width = 2 * width / (points - 1)
        head = center.reshape(N - 1, D)
        v = np.vstack([head, N * q - head.sum(axis=0)])
    X = positions(problem, v)
    price = -_normalised_gradient(problem, v, X).mean(axis=0)
    return _finish(problem, v, price, price.copy(), "oracle-grid", {"final_step": 2 * width / (points - 1) if free else 0.0})


# ------------------------------------------------------------ path utilities


def tree_price_paths(solution: TreeSolution) -> np.ndarray:
    """Price along every root-to-level-``M-1`` path, shape ``(2^(M-1), M)``."""
    nodes = solution.problem.lattice.path_nodes(solution.problem.M - 1)
    return solution.price[nodes]


def mean_l2_distance(a, b, h: float) -> float:
    """Average over paths of the discrete L2 norm of ``a - b``.

    ``a`` and ``b`` have shape ``(paths, K)`` on a common grid of step ``h``;
    each path norm uses the trapezoid rule over its ``K - 1`` intervals.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise DomainError(f"ensembles differ in shape: {a.shape} vs {b.shape}")
    if a.shape[1] < 2:
        raise DomainError("need at least two grid points per path")
    d2 = (a - b) ** 2
    integral = h * (d2[:, 1:-1].sum(axis=1) + 0.5 * (d2[:, 0] + d2[:, -1]))
    return float(np.mean(np.sqrt(integral)))
