"""Optimal transport core: quantile couplings, the stagewise rearrangement of
Markov lattices, exact bi-causal dynamic programming, a transportation
simplex, a causality-constrained LP oracle for tiny trees, and the metric
suite (classical / causal / symmetrised-causal / bi-causal values).

Inner DP subproblems are solved by the exact transportation LP rather than
assuming Monge structure: the continuation value added to the stage cost can
break submodularity in general, so agreement with the rearrangement is a
verified result here, not an assumption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .lattice import quantize_increment
from .model import AdaptedOTError, ConfigError, MarkovLattice
from .noise import truncation_level

PIVOT_TOL = 1e-12
MAX_TREE_PATHS = 64


@dataclass(frozen=True)
class TransportPlan:
    """A joint probability matrix with fixed marginals and its cost."""

    joint: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost: float

    def validate(self, cost_matrix=None, tol=1e-10):
        joint = np.asarray(self.joint, dtype=float)
        if joint.size and joint.min() < -tol:
            raise ConfigError("transport plan has negative mass")
        if np.max(np.abs(joint.sum(axis=1) - self.row_marginal)) > tol:
            raise ConfigError("row sums do not match the row marginal")
        if np.max(np.abs(joint.sum(axis=0) - self.col_marginal)) > tol:
            raise ConfigError("column sums do not match the column marginal")
        if cost_matrix is not None:
            if abs(float(np.sum(joint * cost_matrix)) - self.cost) > tol:
                raise ConfigError("stored cost does not match the plan")
        return True


# -- exact transportation simplex --------------------------------------------

def _northwest_corner(a, b):
    """Initial basic feasible solution with exactly n + m - 1 cells."""
    n, m = a.size, b.size
    x = np.zeros((n, m))
    basis = []
    a_rem = a.copy()
    b_rem = b.copy()
    i = j = 0
    while True:
        t = min(a_rem[i], b_rem[j])
        x[i, j] = t
        basis.append((i, j))
        a_rem[i] -= t
        b_rem[j] -= t
        if i == n - 1 and j == m - 1:
            break
        if a_rem[i] <= 1e-15 and i < n - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _transport_simplex(cost, a, b, pivot_tol):
    """Exact primal transportation simplex on strictly positive marginals.

    Returns (plan, value).  Dantzig pricing with a switch to Bland's rule
    after a degeneracy budget, so termination is guaranteed.
    """
    n, m = cost.shape
    if n == 1:
        return b.reshape(1, -1), float(b @ cost[0])
    if m == 1:
        return a.reshape(-1, 1), float(a @ cost[:, 0])
    x, basis = _northwest_corner(a, b)
    rows = [set() for _ in range(n)]
    cols = [set() for _ in range(m)]
    for (i, j) in basis:
        rows[i].add(j)
        cols[j].add(i)
    tol = pivot_tol * max(1.0, float(np.max(np.abs(cost))))
    max_iter = 200 + 40 * n * m
    bland_after = 100 + 20 * n * m
    u = np.empty(n)
    v = np.empty(m)
    for it in range(max_iter):
        # duals from the basis tree
        u.fill(np.nan)
        v.fill(np.nan)
        u[0] = 0.0
        stack = [(0, True)]
        while stack:
            idx, is_row = stack.pop()
            if is_row:
                for j in rows[idx]:
                    if np.isnan(v[j]):
                        v[j] = cost[idx, j] - u[idx]
                        stack.append((j, False))
            else:
                for i in cols[idx]:
                    if np.isnan(u[i]):
                        u[i] = cost[i, idx] - v[idx]
                        stack.append((i, True))
        reduced = cost - u[:, None] - v[None, :]
        if it < bland_after:
            ei, ej = np.unravel_index(np.argmin(reduced), reduced.shape)
            if reduced[ei, ej] >= -tol:
                break
        else:
            neg = np.argwhere(reduced < -tol)
            if neg.size == 0:
                break
            ei, ej = neg[0]
        # unique tree path from row ei to column ej
        parent = {("r", ei): None}
        stack = [("r", ei)]
        target = ("c", ej)
        while target not in parent:
            node = stack.pop()
            kind, idx = node
            if kind == "r":
                for j in rows[idx]:
                    nxt = ("c", j)
                    if nxt not in parent:
                        parent[nxt] = node
                        stack.append(nxt)
            else:
                for i in cols[idx]:
                    nxt = ("r", i)
                    if nxt not in parent:
                        parent[nxt] = node
                        stack.append(nxt)
        path_nodes = [target]
        while parent[path_nodes[-1]] is not None:
            path_nodes.append(parent[path_nodes[-1]])
        path_nodes.reverse()  # row ei ... col ej
        edges = []
        for na, nb in zip(path_nodes[:-1], path_nodes[1:]):
            (ka, ia), (kb, ib) = na, nb
            edges.append((ia, ib) if ka == "r" else (ib, ia))
        minus = edges[0::2]  # edges sharing a row/col chain with the entering cell
        theta = min(x[c] for c in minus)
        leave = next(c for c in minus if x[c] == theta)
        x[ei, ej] += theta
        sign = -1.0
        for c in edges:
            x[c] += sign * theta
            sign = -sign
        x[leave] = 0.0
        rows[leave[0]].discard(leave[1])
        cols[leave[1]].discard(leave[0])
        rows[ei].add(ej)
        cols[ej].add(ei)
    else:
        raise AdaptedOTError("transportation simplex failed to converge")
    np.clip(x, 0.0, None, out=x)
    return x, float(np.sum(x * cost))


def transportation_lp(cost, row_marginal, col_marginal, pivot_tol=PIVOT_TOL):
    """Exact optimal plan for the transportation problem.

    Marginals must be probability vectors with matching sums (within 1e-9);
    zero-mass rows and columns are stripped before solving and restored as
    zero rows in the returned plan.
    """
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(row_marginal, dtype=float)
    b = np.asarray(col_marginal, dtype=float)
    if cost.shape != (a.size, b.size):
        raise ConfigError("cost matrix shape must match the marginals")
    if a.size and a.min() < 0 or b.size and b.min() < 0:
        raise ConfigError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise ConfigError("marginal sums differ by more than 1e-9; infeasible")
    ri = np.flatnonzero(a > 0)
    cj = np.flatnonzero(b > 0)
    sub, value = _transport_simplex(cost[np.ix_(ri, cj)], a[ri], b[cj], pivot_tol)
    joint = np.zeros_like(cost)
    joint[np.ix_(ri, cj)] = sub
    return TransportPlan(joint=joint, row_marginal=a, col_marginal=b, cost=value)


# -- quantile machinery -------------------------------------------------------

def quantile(atoms, weights, u):
    """Left-continuous generalized inverse of the CDF at level u in (0, 1]."""
    if not 0.0 < u <= 1.0:
        raise ConfigError("quantile level must lie in (0, 1]")
    atoms = np.asarray(atoms, dtype=float)
    cdf = np.cumsum(np.asarray(weights, dtype=float))
    idx = int(np.searchsorted(cdf, u, side="left"))
    return float(atoms[min(idx, atoms.size - 1)])


def _quantile_pairs(wx, wy):
    """Mass assignment of the quantile coupling of two weight vectors.

    Returns index arrays (ix, iy) and the mass sent between those atoms;
    both inputs are read in sorted-support order.
    """
    ix, iy, mass = [], [], []
    i = j = 0
    nx, ny = wx.size, wy.size
    ri = wx[0] if nx else 0.0
    rj = wy[0] if ny else 0.0
    while i < nx and j < ny:
        if ri <= 1e-15:
            i += 1
            if i < nx:
                ri = wx[i]
            continue
        if rj <= 1e-15:
            j += 1
            if j < ny:
                rj = wy[j]
            continue
        t = min(ri, rj)
        ix.append(i)
        iy.append(j)
        mass.append(t)
        ri -= t
        rj -= t
    return np.asarray(ix, dtype=int), np.asarray(iy, dtype=int), np.asarray(mass)


def monotone_rearrangement(x_atoms, x_weights, y_atoms, y_weights, p=2):
    """Quantile coupling of two discrete measures on sorted supports."""
    x_atoms = np.asarray(x_atoms, dtype=float)
    y_atoms = np.asarray(y_atoms, dtype=float)
    wx = np.asarray(x_weights, dtype=float)
    wy = np.asarray(y_weights, dtype=float)
    if np.any(np.diff(x_atoms) < 0) or np.any(np.diff(y_atoms) < 0):
        raise ConfigError("supports must be sorted")
    if abs(wx.sum() - 1.0) > 1e-9 or abs(wy.sum() - 1.0) > 1e-9:
        raise ConfigError("weights must sum to 1")
    ix, iy, mass = _quantile_pairs(wx, wy)
    joint = np.zeros((x_atoms.size, y_atoms.size))
    np.add.at(joint, (ix, iy), mass)
    cost = float(np.sum(mass * np.abs(x_atoms[ix] - y_atoms[iy]) ** p))
    return TransportPlan(joint=joint, row_marginal=wx, col_marginal=wy, cost=cost)


# -- coupled chains -----------------------------------------------------------

@dataclass(frozen=True)
class CoupledChain:
    """Joint Markov chain over product states of two lattices.

    ``plans[k][(i, j)]`` holds the conditional joint child law of product
    state (i, j) at stage k as (next-x indices, next-y indices, masses).
    """

    lattice_x: MarkovLattice
    lattice_y: MarkovLattice
    plans: tuple

    def validate(self, tol=1e-10):
        for k, stage in enumerate(self.plans):
            kx = self.lattice_x.transitions[k]
            ky = self.lattice_y.transitions[k]
            for (i, j), (ix, iy, mass) in stage.items():
                row_x = np.zeros(kx.shape[1])
                np.add.at(row_x, ix, mass)
                if np.max(np.abs(row_x - kx[i])) > tol:
                    raise ConfigError(f"x-marginalization broken at stage {k}")
                row_y = np.zeros(ky.shape[1])
                np.add.at(row_y, iy, mass)
                if np.max(np.abs(row_y - ky[j])) > tol:
                    raise ConfigError(f"y-marginalization broken at stage {k}")
        return True


def kr_coupling(x_lattice, y_lattice):
    """Stagewise quantile coupling of the two lattices' conditional kernels
    (the common-uniform construction applied to every product state)."""
    if x_lattice.n_steps != y_lattice.n_steps:
        raise ConfigError("lattices must share the stage count")
    plans = []
    for k in range(x_lattice.n_steps):
        kx = x_lattice.transitions[k]
        ky = y_lattice.transitions[k]
        stage = {(i, j): _quantile_pairs(kx[i], ky[j])
                 for i in range(kx.shape[0]) for j in range(ky.shape[0])}
        plans.append(stage)
    return CoupledChain(lattice_x=x_lattice, lattice_y=y_lattice,
                        plans=tuple(plans))


def synchronous_product_chain(b_x, sigma_x, b_y, sigma_y, n_steps, m,
                              max_support, trunc_k=4, x0=0.0):
    """Both lattices built from one shared increment quantization, coupled by
    the common atom (the discrete synchronous coupling).

    Returns (x_lattice, y_lattice, chain).  When both one-step maps are
    increasing this chain coincides with ``kr_coupling`` of the lattices.
    """
    from .lattice import build_lattice

    lat_x, maps_x = build_lattice(b_x, sigma_x, n_steps, m, max_support,
                                  trunc_k=trunc_k, x0=x0, return_atom_maps=True)
    lat_y, maps_y = build_lattice(b_y, sigma_y, n_steps, m, max_support,
                                  trunc_k=trunc_k, x0=x0, return_atom_maps=True)
    h = 1.0 / n_steps
    quant = quantize_increment(h, truncation_level(h, trunc_k), m)
    plans = []
    for k in range(n_steps):
        stage = {}
        mx = maps_x[k]
        my = maps_y[k]
        for i in range(mx.shape[0]):
            for j in range(my.shape[0]):
                # aggregate atoms landing on the same product child
                pairs = {}
                for a in range(quant.m):
                    key = (mx[i, a], my[j, a])
                    pairs[key] = pairs.get(key, 0.0) + quant.weights[a]
                keys = sorted(pairs)
                stage[(i, j)] = (np.array([kk[0] for kk in keys], dtype=int),
                                 np.array([kk[1] for kk in keys], dtype=int),
                                 np.array([pairs[kk] for kk in keys]))
        plans.append(stage)
    chain = CoupledChain(lattice_x=lat_x, lattice_y=lat_y, plans=tuple(plans))
    return lat_x, lat_y, chain


def coupled_cost(chain, p=2, scaled=True):
    """Forward expectation of sum_k w_k |x_k - y_k|^p over the joint chain
    (w_k = h for the scaled cost, 1 otherwise; the initial stage carries no
    cost term)."""
    lx, ly = chain.lattice_x, chain.lattice_y
    n = lx.n_steps
    w = (1.0 / n) if scaled else 1.0
    pi = np.ones((1, 1))
    total = 0.0
    for k in range(n):
        nx = lx.supports[k + 1].size
        ny = ly.supports[k + 1].size
        pi_next = np.zeros((nx, ny))
        stage = chain.plans[k]
        for i, j in zip(*np.nonzero(pi > 0)):
            ix, iy, mass = stage[(i, j)]
            np.add.at(pi_next, (ix, iy), pi[i, j] * mass)
        diff = np.abs(lx.supports[k + 1][:, None] - ly.supports[k + 1][None, :])
        total += w * float(np.sum(pi_next * diff**p))
        pi = pi_next
    return total


# -- bi-causal dynamic programming -------------------------------------------

@dataclass(frozen=True)
class BicausalSolution:
    """Value and optimal policy of the bi-causal transport problem.

    ``policy[k][(i, j)]`` holds (next-x indices, next-y indices, plan matrix,
    inner value) for product state (i, j) at stage k.
    """

    value: float
    p: float
    stage_weights: np.ndarray
    values_x: tuple
    values_y: tuple
    kernels_x: tuple
    kernels_y: tuple
    policy: tuple

    def plan_at(self, stage, i, j):
        si, sj, plan, val = self.policy[stage][(i, j)]
        kx = self.kernels_x[stage]
        ky = self.kernels_y[stage]
        joint = np.zeros((kx.shape[1], ky.shape[1]))
        joint[np.ix_(si, sj)] = plan
        return TransportPlan(joint=joint, row_marginal=kx[i],
                             col_marginal=ky[j], cost=val)

    def forward_value(self):
        """Re-evaluate the stored policy forward; equals ``value`` up to
        accumulation error (the solution invariant)."""
        pi = np.ones((1, 1))
        total = 0.0
        for k, stage in enumerate(self.policy):
            nx = self.values_x[k + 1].size
            ny = self.values_y[k + 1].size
            pi_next = np.zeros((nx, ny))
            for i, j in zip(*np.nonzero(pi > 1e-300)):
                si, sj, plan, _ = stage[(i, j)]
                pi_next[np.ix_(si, sj)] += pi[i, j] * plan
            diff = np.abs(self.values_x[k + 1][:, None]
                          - self.values_y[k + 1][None, :])
            total += self.stage_weights[k] * float(np.sum(pi_next * diff**self.p))
            pi = pi_next
        return total

    def validate(self, tol=1e-9):
        if abs(self.forward_value() - self.value) > tol:
            raise ConfigError("policy forward value disagrees with DP value")
        return True


def _dp_engine(values_x, kernels_x, values_y, kernels_y, p, stage_weights):
    n = len(kernels_x)
    v_next = np.zeros((values_x[n].size, values_y[n].size))
    policy = [None] * n
    for k in range(n - 1, -1, -1):
        xv = values_x[k + 1]
        yv = values_y[k + 1]
        cost_full = stage_weights[k] * np.abs(xv[:, None] - yv[None, :]) ** p + v_next
        kx = kernels_x[k]
        ky = kernels_y[k]
        supports_y = [np.flatnonzero(ky[j] > 0) for j in range(ky.shape[0])]
        weights_y = [ky[j, sj] for j, sj in enumerate(supports_y)]
        v_new = np.empty((kx.shape[0], ky.shape[0]))
        stage_policy = {}
        for i in range(kx.shape[0]):
            si = np.flatnonzero(kx[i] > 0)
            px = kx[i, si]
            block = cost_full[si]
            for j in range(ky.shape[0]):
                sj = supports_y[j]
                py = weights_y[j]
                sub = block[:, sj]
                plan, val = _transport_simplex(sub, px, py, PIVOT_TOL)
                v_new[i, j] = val
                stage_policy[(i, j)] = (si, sj, plan, val)
        v_next = v_new
        policy[k] = stage_policy
    return v_next[0, 0], policy


def bicausal_dp(x_lattice, y_lattice, p=2, scaled=True):
    """Backward induction for the bi-causal problem on two Markov lattices.

    V_N = 0 and V_k(x, y) minimises, over couplings of the two conditional
    kernels, the expected stage cost w_{k+1} |x' - y'|^p plus continuation;
    each inner problem is solved exactly by the transportation simplex.
    The state is the current value pair, valid because lattices are Markov.
    """
    if x_lattice.n_steps != y_lattice.n_steps:
        raise ConfigError("lattices must share the stage count")
    n = x_lattice.n_steps
    w = np.full(n, (1.0 / n) if scaled else 1.0)
    value, policy = _dp_engine(x_lattice.supports, x_lattice.transitions,
                               y_lattice.supports, y_lattice.transitions, p, w)
    return BicausalSolution(value=value, p=p, stage_weights=w,
                            values_x=tuple(x_lattice.supports),
                            values_y=tuple(y_lattice.supports),
                            kernels_x=tuple(x_lattice.transitions),
                            kernels_y=tuple(y_lattice.transitions),
                            policy=tuple(policy))


def history_stage_system(measure):
    """Expand a path measure into history states: stage-k nodes are the
    distinct k-prefixes (lexicographic order), stage 0 an artificial root."""
    paths = measure.paths
    weights = measure.weights
    n_stages = measure.n_stages
    values = [np.array([0.0])]
    kernels = []
    prev_index = {(): 0}
    for k in range(1, n_stages + 1):
        masses = {}
        for idx in range(paths.shape[0]):
            pref = tuple(paths[idx, :k])
            masses[pref] = masses.get(pref, 0.0) + weights[idx]
        nodes = sorted(masses)
        index = {pref: i for i, pref in enumerate(nodes)}
        kern = np.zeros((len(prev_index), len(nodes)))
        for pref, mass in masses.items():
            kern[prev_index[pref[:-1]], index[pref]] += mass
        kern /= kern.sum(axis=1, keepdims=True)
        values.append(np.array([pref[-1] for pref in nodes]))
        kernels.append(kern)
        prev_index = index
    return values, kernels


def tree_bicausal_dp(mu, nu, p=2):
    """Bi-causal DP on history-expanded trees (unscaled stage costs).

    Valid for arbitrary (non-Markov) path measures; used to cross-check the
    causality-constrained LP.
    """
    vx, kx = history_stage_system(mu)
    vy, ky = history_stage_system(nu)
    if len(kx) != len(ky):
        raise ConfigError("path measures must share the stage count")
    w = np.ones(len(kx))
    value, policy = _dp_engine(vx, kx, vy, ky, p, w)
    return BicausalSolution(value=value, p=p, stage_weights=w,
                            values_x=tuple(vx), values_y=tuple(vy),
                            kernels_x=tuple(kx), kernels_y=tuple(ky),
                            policy=tuple(policy))


# -- causality-constrained LP oracle ------------------------------------------

def _prefix_classes(paths, upto):
    """Map each path index to its class of indices sharing the length-``upto``
    prefix; classes returned in first-appearance order."""
    groups = {}
    for idx in range(paths.shape[0]):
        groups.setdefault(tuple(paths[idx, :upto]), []).append(idx)
    return list(groups.values())


def _causality_rows(paths_a, weights_a, paths_b, flat_index):
    """Sparse rows enforcing: conditional on the full a-path, the law of the
    b-prefix depends only on the a-prefix.  ``flat_index(a_idx, b_idx)`` maps
    a path-index pair to its variable in the (mu-major) joint grid."""
    rows = []
    n_paths_b = paths_b.shape[0]
    n_stages = paths_a.shape[1]
    for t in range(1, n_stages):
        classes_a = _prefix_classes(paths_a, t)
        classes_b = _prefix_classes(paths_b, t)
        for class_a in classes_a:
            if len(class_a) < 2:
                continue  # constraint is an identity for singleton classes
            mass_a = float(weights_a[class_a].sum())
            if mass_a <= 0:
                continue
            for class_b in classes_b:
                if len(class_b) == n_paths_b:
                    continue  # full space: both sides reduce to mu masses
                for i0 in class_a:
                    # pi(i0, B) * mu(A) - mu(i0) * pi(A, B) = 0
                    cols, coefs = [], []
                    for jb in class_b:
                        cols.append(flat_index(i0, jb))
                        coefs.append(mass_a)
                    w_i0 = float(weights_a[i0])
                    for ia in class_a:
                        for jb in class_b:
                            cols.append(flat_index(ia, jb))
                            coefs.append(-w_i0)
                    rows.append((cols, coefs))
    return rows


def causal_lp(mu, nu, p=2, mode="bicausal"):
    """Exact LP value of the transport problem on tiny trees under the chosen
    causality constraints (``classical`` drops them all)."""
    if mode not in ("classical", "causal", "anticausal", "bicausal"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mu.n_stages != nu.n_stages:
        raise ConfigError("path measures must share the stage count")
    n_mu = mu.paths.shape[0]
    n_nu = nu.paths.shape[0]
    if n_mu > MAX_TREE_PATHS or n_nu > MAX_TREE_PATHS:
        raise ConfigError(f"instance too large (> {MAX_TREE_PATHS} paths)")
    cost = np.abs(mu.paths[:, None, :] - nu.paths[None, :, :]) ** p
    cost = cost.sum(axis=2).ravel()
    n_vars = n_mu * n_nu
    rows = []
    rhs = []
    for i in range(n_mu):
        rows.append(([i * n_nu + j for j in range(n_nu)], [1.0] * n_nu))
        rhs.append(float(mu.weights[i]))
    for j in range(n_nu):
        rows.append(([i * n_nu + j for i in range(n_mu)], [1.0] * n_mu))
        rhs.append(float(nu.weights[j]))
    if mode in ("causal", "bicausal"):
        extra = _causality_rows(mu.paths, mu.weights, nu.paths,
                                lambda i, j: i * n_nu + j)
        rows.extend(extra)
        rhs.extend([0.0] * len(extra))
    if mode in ("anticausal", "bicausal"):
        # swapped roles: the a-side is nu, so (a, b) = (j, i) in the mu-major grid
        extra = _causality_rows(nu.paths, nu.weights, mu.paths,
                                lambda j, i: i * n_nu + j)
        rows.extend(extra)
        rhs.extend([0.0] * len(extra))
    indptr = [0]
    indices = []
    data = []
    for cols, coefs in rows:
        indices.extend(cols)
        data.extend(coefs)
        indptr.append(len(indices))
    a_eq = sp.csr_matrix((data, indices, indptr), shape=(len(rows), n_vars))
    res = linprog(cost, A_eq=a_eq, b_eq=np.asarray(rhs), bounds=(0, None),
                  method="highs")
    if not res.success:
        raise AdaptedOTError(f"causality LP failed: {res.message}")
    return float(res.fun)


@dataclass(frozen=True)
class MetricSuiteResult:
    """p-th power values of the distance family on one pair of trees."""

    w: float
    cw: float
    cw_rev: float
    scw: float
    aw: float


def metric_suite(mu, nu, p=2, ordering_tol=1e-10):
    """All five values via the LP oracle, with the ordering
    AW >= SCW = max(CW, CW') >= W asserted on the way out."""
    w = causal_lp(mu, nu, p, "classical")
    cw = causal_lp(mu, nu, p, "causal")
    cw_rev = causal_lp(mu, nu, p, "anticausal")
    aw = causal_lp(mu, nu, p, "bicausal")
    scw = max(cw, cw_rev)
    if aw < scw - ordering_tol or scw < w - ordering_tol:
        raise AdaptedOTError(
            f"metric ordering violated: AW={aw} SCW={scw} W={w}")
    return MetricSuiteResult(w=w, cw=cw, cw_rev=cw_rev, scw=scw, aw=aw)
