"""Reference solver keeping the contact pressure as an explicit unknown.

The stabilised mixed system couples the displacements with a
segmentwise-polynomial multiplier constrained to be nonnegative at the
segment Gauss points.  Because each segment carries as many Gauss points
as multiplier coefficients, the point samples parametrise the multiplier
exactly and the sign constraint becomes a finite-dimensional
complementarity problem:

    lambda_q >= 0,   g_q >= 0,   lambda_q * g_q = 0,

with ``g_q`` the weighted residual between the multiplier and the
eliminated-pressure expression.  Small instances are solved by
enumerating active patterns and verifying each candidate independently;
larger ones by a primal-dual active-set iteration on the samples.

This path exists to certify that the displacement-only solver and its
pressure reconstruction coincide with the explicit mixed solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .contact import (
    MASTER_SLAVE,
    WEIGHTED,
    ContactProblem,
    InterfaceData,
    NitscheConfig,
    _sample_coefficients,
    _solve_linear,
    build_interface_data,
    bulk_system,
)

ENUMERATION_SAMPLE_CAP = 12


class InfeasibleError(RuntimeError):
    """No active pattern satisfies the complementarity conditions."""


@dataclass
class MixedSystem:
    """Symmetric saddle system in (displacements, multiplier samples).

    ``matrix`` is the full stabilised operator; the multiplier block is
    negative semidefinite.  ``c`` holds the per-sample weights that turn
    multiplier rows into the complementarity residual.
    """

    problem: ContactProblem
    config: NitscheConfig
    data: InterfaceData
    matrix: sp.csr_matrix
    rhs: np.ndarray
    c: np.ndarray

    @property
    def n_u(self) -> int:
        return self.problem.num_dofs

    @property
    def n_lam(self) -> int:
        return self.data.num_samples


def build_mixed_system(problem: ContactProblem, config: NitscheConfig,
                       data: Optional[InterfaceData] = None) -> MixedSystem:
    """Assemble the stabilised mixed operator for the chosen variant."""
    if data is None:
        data = build_interface_data(problem)
    A, b = bulk_system(problem)
    n_u = problem.num_dofs
    n_l = data.num_samples
    w1, w2, beta, _, beta_ms, slave = _sample_coefficients(data, problem.materials, config)
    mu1, mu2 = problem.materials[0].mu, problem.materials[1].mu
    alpha = config.alpha

    rows, cols, vals = [], [], []

    def add(r, c_, v):
        rows.append(r)
        cols.append(c_)
        vals.append(v)

    nq = data.n_per_seg
    c_weight = np.empty(n_l)
    for s in range(len(data.segments)):
        d = data.dofs[s]
        for k in range(nq):
            i = s * nq + k
            w = data.weights[i]
            J = data.jump[i]
            T1 = data.t1[i]
            T2 = data.t2[i]
            if config.variant == WEIGHTED:
                stab = [(alpha * data.h1[i] / mu1, T1), (alpha * data.h2[i] / mu2, T2)]
                c_q = alpha * (data.h1[i] / mu1 + data.h2[i] / mu2)
            elif config.variant == MASTER_SLAVE:
                Ts = T2 if slave == 2 else T1
                hs = data.h2[i] if slave == 2 else data.h1[i]
                mus = mu2 if slave == 2 else mu1
                stab = [(alpha * hs / mus, Ts)]
                c_q = alpha * hs / mus
            else:
                M = w1[i] * T1 + w2[i] * T2
                stab = [(1.0 / beta[i], M)]
                c_q = 1.0 / beta[i]
            c_weight[i] = c_q

            # displacement-displacement stabilisation: -sum coeff T^T T
            for coeff, T in stab:
                block = -w * coeff * np.outer(T, T)
                add(np.repeat(d, len(d)), np.tile(d, len(d)), block.ravel())
            # displacement-multiplier coupling: -(jump + sum coeff T)
            col = np.full(len(d), n_u + i)
            coupling = -w * data.jump[i].copy()
            for coeff, T in stab:
                coupling = coupling - w * coeff * T
            add(d, col, coupling)
            add(col, d, coupling)
            # multiplier-multiplier: -c_q
            add(np.array([n_u + i]), np.array([n_u + i]), np.array([-w * c_q]))

    S = sp.coo_matrix(
        (np.concatenate([np.asarray(v).ravel() for v in vals]),
         (np.concatenate([np.asarray(r).ravel() for r in rows]),
          np.concatenate([np.asarray(c_).ravel() for c_ in cols]))),
        shape=(n_u + n_l, n_u + n_l),
    ).tocsr()
    full = sp.bmat([[A, None], [None, sp.csr_matrix((n_l, n_l))]], format="csr") + S
    rhs = np.concatenate([b, np.zeros(n_l)])
    return MixedSystem(problem=problem, config=config, data=data,
                       matrix=full, rhs=rhs, c=c_weight)


@dataclass
class MixedResult:
    system: MixedSystem
    u: np.ndarray
    lam: np.ndarray
    pattern: np.ndarray
    iterations: int


def _solve_pattern(system: MixedSystem, pattern: np.ndarray):
    """Solve with multiplier samples clamped to zero off the pattern.

    Active samples keep their saddle rows; inactive ones are eliminated
    like homogeneous Dirichlet constraints.
    """
    n = system.n_u + system.n_lam
    fixed = np.concatenate([system.problem.fixed_mask(), ~pattern])
    x = _solve_linear(system.matrix, system.rhs, fixed, n)
    return x[: system.n_u], x[system.n_u:]


def _lh_of(system: MixedSystem, u: np.ndarray) -> np.ndarray:
    from .contact import lh_values

    return lh_values(system.data, system.problem.materials, system.config, u)


def check_vi_residual(system: MixedSystem, u: np.ndarray, lam: np.ndarray) -> float:
    """Maximum complementarity violation of a candidate mixed solution.

    The inequality system over the sample directions reduces to
    lambda >= 0, lambda - l_h(u) >= 0 and lambda (lambda - l_h(u)) = 0
    at every sample; the positive sample weights drop out.
    """
    r = lam - _lh_of(system, u)
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    return max(
        float(np.maximum(-lam, 0.0).max(initial=0.0)),
        float(np.maximum(-r, 0.0).max(initial=0.0)),
        float(np.abs(lam * r).max(initial=0.0)) / scale,
    )


def solve_mixed(problem: ContactProblem, config: NitscheConfig,
                method: str = "auto", tol: float = 1e-9,
                max_iterations: int = 40) -> MixedResult:
    """Solve the stabilised mixed contact problem.

    ``method='enumerate'`` tries every active pattern and returns the
    first consistent one (instances up to ``ENUMERATION_SAMPLE_CAP``
    samples); ``'pdas'`` runs the primal-dual active-set iteration;
    ``'auto'`` picks enumeration for tiny instances.
    """
    system = build_mixed_system(problem, config)
    ns = system.n_lam
    if method == "auto":
        method = "enumerate" if ns <= ENUMERATION_SAMPLE_CAP else "pdas"

    if method == "enumerate":
        if ns > ENUMERATION_SAMPLE_CAP:
            raise ValueError(
                f"{ns} multiplier samples exceed the enumeration cap "
                f"{ENUMERATION_SAMPLE_CAP}; use method='pdas'"
            )
        tried = 0
        for bits in product((True, False), repeat=ns):
            pattern = np.array(bits, dtype=bool)
            tried += 1
            try:
                u, lam = _solve_pattern(system, pattern)
            except Exception:
                continue
            lh = _lh_of(system, u)
            ok = np.all(lam[pattern] >= -tol) and np.all(lh[~pattern] <= tol)
            if ok and check_vi_residual(system, u, np.maximum(lam, 0.0)) <= tol:
                return MixedResult(system=system, u=u, lam=np.maximum(lam, 0.0),
                                   pattern=pattern, iterations=tried)
        raise InfeasibleError(
            "no active pattern satisfies the complementarity system; "
            "check the stabilisation parameter"
        )

    if method != "pdas":
        raise ValueError(f"unknown method {method!r}")

    pattern = np.ones(ns, dtype=bool)
    seen = {pattern.tobytes()}
    for it in range(1, max_iterations + 1):
        u, lam = _solve_pattern(system, pattern)
        lh = _lh_of(system, u)
        new_pattern = lh > 0.0
        if np.array_equal(new_pattern, pattern):
            lam = np.where(pattern, lam, 0.0)
            if check_vi_residual(system, u, lam) > tol:
                raise InfeasibleError("stationary pattern violates complementarity")
            return MixedResult(system=system, u=u, lam=lam,
                               pattern=pattern, iterations=it)
        key = new_pattern.tobytes()
        if key in seen:
            raise InfeasibleError("active-set iteration cycled on the mixed system")
        seen.add(key)
        pattern = new_pattern
    raise InfeasibleError(f"mixed active-set iteration did not settle in {max_iterations} steps")
