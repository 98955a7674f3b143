"""Dense two-phase primal simplex for small linear programs.

Solves  max c'v  subject to  A_ub v <= b_ub,  A_eq v = b_eq,  v >= 0.

The problems in this package are tiny (tens of variables and rows), so the
implementation favors determinism and auditability over speed: a dense
Gauss-Jordan tableau, Bland's anti-cycling pivot rule throughout, and a fixed
pivot tolerance. Duals are recovered from the final basis so callers can
report shadow prices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
MAX_ITER = 20000


class Infeasible(Exception):
    """The constraint system admits no nonnegative solution."""


class Unbounded(Exception):
    """The objective is unbounded above; valid inputs should never trigger this."""


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    iterations: int


def solve(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None) -> SimplexResult:
    """Maximize c'v over the polyhedron {A_ub v <= b_ub, A_eq v = b_eq, v >= 0}.

    Duals follow the maximization convention: ``duals_ub[i]`` is the increase
    in optimal objective per unit increase of ``b_ub[i]`` (nonnegative);
    ``duals_eq`` are free-signed.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    a_ub, b_ub = _as_rows(a_ub, b_ub, n)
    a_eq, b_eq = _as_rows(a_eq, b_eq, n)
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq

    if m == 0:
        # Only nonnegativity: optimum is 0 unless some c_j > 0 (then unbounded).
        if np.any(c > PIVOT_TOL):
            raise Unbounded("no constraints bound a variable with positive reward")
        return SimplexResult(np.zeros(n), 0.0, np.zeros(0), np.zeros(0), 0)

    # Assemble equalities  [A | slacks] v' = b  with b >= 0.  Rows whose slack
    # keeps a +1 coefficient start with the slack basic; all other rows get an
    # artificial variable.
    a = np.vstack([a_ub, a_eq]) if m_ub and m_eq else (a_ub if m_ub else a_eq)
    b = np.concatenate([b_ub, b_eq])
    t = np.zeros((m, n + m_ub))
    t[:, :n] = a
    for i in range(m_ub):
        t[i, n + i] = 1.0
    negate = b < 0
    t[negate] *= -1.0
    b = np.abs(b)

    needs_artificial = [i for i in range(m) if i >= m_ub or negate[i]]
    n_slack = m_ub
    n_art = len(needs_artificial)
    total = n + n_slack + n_art
    tot_tab = np.zeros((m, total + 1))
    tot_tab[:, : n + n_slack] = t
    tot_tab[:, -1] = b

    basis = [-1] * m
    art_cols = []
    unit_col = [0] * m  # column that started as e_i, used to read B^{-1}
    k = 0
    for i in range(m):
        if i in needs_artificial:
            col = n + n_slack + k
            tot_tab[i, col] = 1.0
            art_cols.append(col)
            basis[i] = col
            unit_col[i] = col
            k += 1
        else:
            basis[i] = n + i
            unit_col[i] = n + i
    art_set = set(art_cols)

    iters = 0
    if art_cols:
        # Phase 1: drive sum of artificials to zero.
        c1 = np.zeros(total)
        c1[art_cols] = -1.0
        iters += _optimize(tot_tab, basis, c1, banned=frozenset())
        if -_basis_objective(tot_tab, basis, c1) > FEAS_TOL:
            raise Infeasible("phase-1 optimum leaves residual infeasibility")
        _pivot_out_artificials(tot_tab, basis, art_set, n + n_slack)

    # Phase 2: the caller's objective, artificials barred from entering.
    c2 = np.zeros(total)
    c2[:n] = c
    iters += _optimize(tot_tab, basis, c2, banned=frozenset(art_set))

    x = np.zeros(total)
    for i, j in enumerate(basis):
        x[j] = tot_tab[i, -1]
    v = x[:n]

    # y = c_B B^{-1}; the initial unit columns of each row hold B^{-1} e_i.
    cb = c2[basis]
    y = np.array([cb @ tot_tab[:, unit_col[i]] for i in range(m)])
    y[np.asarray(negate)] *= -1.0
    duals_ub = y[:m_ub].copy()
    duals_eq = y[m_ub:].copy()
    # Clip pivot-scale negativity on inequality duals; they are >= 0 in exact
    # arithmetic for a maximization.
    duals_ub[np.abs(duals_ub) < PIVOT_TOL] = 0.0

    return SimplexResult(
        x=v,
        objective=float(c @ v),
        duals_ub=duals_ub,
        duals_eq=duals_eq,
        iterations=iters,
    )


def _as_rows(a, b, n):
    if a is None or b is None or len(np.atleast_1d(b)) == 0:
        return np.zeros((0, n)), np.zeros(0)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (b.size, n):
        raise ValueError(f"constraint shape mismatch: {a.shape} vs ({b.size}, {n})")
    return a, b


def _basis_objective(tab, basis, c) -> float:
    return float(c[basis] @ tab[:, -1])


def _optimize(tab, basis, c, banned) -> int:
    """Run Bland-rule pivots until no reduced cost improves the objective."""
    m, width = tab.shape
    ncols = width - 1
    for it in range(MAX_ITER):
        cb = c[basis]
        reduced = c[:ncols] - cb @ tab[:, :ncols]
        enter = -1
        for j in range(ncols):
            if j in banned:
                continue
            if reduced[j] > PIVOT_TOL:
                enter = j
                break
        if enter < 0:
            return it

        # Ratio test; Bland tie-break by smallest basic variable index.
        leave = -1
        best = np.inf
        for i in range(m):
            aij = tab[i, enter]
            if aij > PIVOT_TOL:
                ratio = tab[i, -1] / aij
                if ratio < best - PIVOT_TOL or (
                    abs(ratio - best) <= PIVOT_TOL
                    and (leave < 0 or basis[i] < basis[leave])
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            raise Unbounded(f"column {enter} is unbounded")

        _pivot(tab, leave, enter)
        basis[leave] = enter
    raise RuntimeError("simplex exceeded the iteration cap")


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    piv = tab[row]
    for i in range(tab.shape[0]):
        if i != row and tab[i, col] != 0.0:
            tab[i] -= tab[i, col] * piv


def _pivot_out_artificials(tab, basis, art_set, n_real):
    """Replace zero-level basic artificials with real columns when possible."""
    for i in range(len(basis)):
        if basis[i] in art_set:
            for j in range(n_real):
                if abs(tab[i, j]) > PIVOT_TOL:
                    _pivot(tab, i, j)
                    basis[i] = j
                    break
            # A row with no real pivot candidate is redundant; its artificial
            # stays basic at level zero and is barred from re-entering.
