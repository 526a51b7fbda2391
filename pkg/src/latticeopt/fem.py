"""2D Euler-Bernoulli frame analysis: stiffness, assembly, solve, compliance.

The global system carries 3 DOF per node (u, v, theta).  Supports fix the two
translations only.  Solves use a banded Cholesky factorization; a failed
factorization, or any pivot below ``PIVOT_RTOL`` times the mean stiffness
diagonal, marks the structure unstable (a mechanism or floating part).
Compliance is the work of the applied loads, F^T u.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from . import lattice
from .lattice import FrameModel, GridSpec, SectionProps, UnitTopology

STABLE = "stable"
UNSTABLE = "unstable"

DEFAULT_THRESHOLD = 5.0  # N*m, compliance screening cut for dataset generation
PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class SolveResult:
    status: str
    compliance: float | None = None  # N*m, present iff stable
    displacements: np.ndarray | None = None  # (n_retained_nodes, 3): u, v, theta

    @property
    def stable(self) -> bool:
        return self.status == STABLE


def element_stiffness(length: float, section: SectionProps, angle: float) -> np.ndarray:
    """6x6 global-frame stiffness of one beam element at the given axis angle."""
    if length <= 0:
        raise ValueError("element length must be positive")
    k = _element_stiffness_batch(
        np.asarray([length]),
        np.asarray([section.area * section.youngs_modulus]),
        np.asarray([section.second_moment * section.youngs_modulus]),
        np.asarray([np.cos(angle)]),
        np.asarray([np.sin(angle)]),
    )
    return k[0]


def _element_stiffness_batch(L, EA, EI, c, s) -> np.ndarray:
    """Stacked (E, 6, 6) global stiffness blocks for arrays of element data."""
    n = len(L)
    ax = EA / L
    b1 = 12.0 * EI / L**3
    b2 = 6.0 * EI / L**2
    b3 = 4.0 * EI / L
    b4 = 2.0 * EI / L

    k = np.zeros((n, 6, 6))
    k[:, 0, 0] = k[:, 3, 3] = ax
    k[:, 0, 3] = k[:, 3, 0] = -ax
    k[:, 1, 1] = k[:, 4, 4] = b1
    k[:, 1, 4] = k[:, 4, 1] = -b1
    k[:, 1, 2] = k[:, 2, 1] = k[:, 1, 5] = k[:, 5, 1] = b2
    k[:, 2, 4] = k[:, 4, 2] = k[:, 4, 5] = k[:, 5, 4] = -b2
    k[:, 2, 2] = k[:, 5, 5] = b3
    k[:, 2, 5] = k[:, 5, 2] = b4

    t = np.zeros((n, 6, 6))
    t[:, 0, 0] = t[:, 1, 1] = t[:, 3, 3] = t[:, 4, 4] = c
    t[:, 0, 1] = t[:, 3, 4] = s
    t[:, 1, 0] = t[:, 4, 3] = -s
    t[:, 2, 2] = t[:, 5, 5] = 1.0
    return np.einsum("eji,ejk,ekl->eil", t, k, t, optimize=True)


def _element_dofs(node_a: np.ndarray, node_b: np.ndarray) -> np.ndarray:
    dofs = np.empty((len(node_a), 6), dtype=np.intp)
    for p, nd in ((0, node_a), (3, node_b)):
        dofs[:, p] = 3 * nd
        dofs[:, p + 1] = 3 * nd + 1
        dofs[:, p + 2] = 3 * nd + 2
    return dofs


def _band_entries(dofs: np.ndarray, ks: np.ndarray):
    """Lower-band coordinates and values of all element stiffness entries."""
    rows = np.repeat(dofs, 6, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 6)).reshape(-1)
    vals = ks.reshape(-1)
    keep = rows >= cols
    return rows[keep] - cols[keep], cols[keep], vals[keep]


def _zero_dof_indices(fixed: np.ndarray, bw: int, ndof: int):
    """Band coordinates of every off-diagonal entry in the rows/cols of `fixed`."""
    rr, cc = [], []
    for d in fixed:
        r = np.arange(1, bw + 1)
        ok = d + r < ndof
        rr.append(r[ok])
        cc.append(np.full(ok.sum(), d))
        j = np.arange(max(0, d - bw), d)
        rr.append(d - j)
        cc.append(j)
    return np.concatenate(rr), np.concatenate(cc)


class _BandedSystem:
    """Shared banded solve with pivot-based stability detection."""

    def __init__(self, bw: int, ndof: int):
        self.bw = bw
        self.ndof = ndof

    def solve(self, ab: np.ndarray, rhs: np.ndarray):
        """Factorize and solve; returns (u, stable)."""
        diag_mean = ab[0].mean()
        try:
            cb = cholesky_banded(ab, lower=True, check_finite=False)
        except LinAlgError:
            return None, False
        if (cb[0].min()) ** 2 < PIVOT_RTOL * diag_mean:
            return None, False
        u = cho_solve_banded((cb, True), rhs, check_finite=False)
        return u, True


def solve_compliance(model: FrameModel) -> SolveResult:
    """Assemble and solve K u = F for a frame model; compliance = F^T u."""
    if model.n_elements == 0 or len(model.supports) == 0:
        raise ValueError("model needs at least one element and one support")
    dx = model.nodes[model.node_b, 0] - model.nodes[model.node_a, 0]
    dy = model.nodes[model.node_b, 1] - model.nodes[model.node_a, 1]
    length = np.hypot(dx, dy)
    ks = _element_stiffness_batch(
        length,
        model.area * model.youngs_modulus,
        model.second_moment * model.youngs_modulus,
        dx / length,
        dy / length,
    )
    dofs = _element_dofs(model.node_a, model.node_b)
    ndof = 3 * model.n_nodes
    bw = int((dofs.max(axis=1) - dofs.min(axis=1)).max())

    ab = np.zeros((bw + 1, ndof))
    br, bc, bv = _band_entries(dofs, ks)
    np.add.at(ab, (br, bc), bv)

    scale = ab[0].mean()
    fixed = np.concatenate([3 * model.supports, 3 * model.supports + 1])
    zr, zc = _zero_dof_indices(np.sort(fixed), bw, ndof)
    ab[zr, zc] = 0.0
    ab[0, fixed] = scale

    rhs = np.zeros(ndof)
    rhs[0::3] = model.loads
    rhs[fixed] = 0.0

    u, ok = _BandedSystem(bw, ndof).solve(ab, rhs)
    if not ok:
        return SolveResult(UNSTABLE)
    return SolveResult(STABLE, float(rhs @ u), u.reshape(-1, 3))


class UnitEvaluator:
    """Fast repeated analysis of unit topologies on a fixed tiled skeleton.

    Precomputes every candidate element's stiffness block and band coordinates
    once; per topology the work is a masked scatter-add, boundary fixing, and
    one banded factorization.  Produces the same results as
    ``solve_compliance(instantiate_global(x, spec))``.
    """

    def __init__(self, spec: GridSpec, tiles: int = 3):
        self.spec = spec
        self.tiles = tiles
        m = spec.m
        grid_nodes, ends, kind = lattice.candidate_elements(m, tiles)
        coords = grid_nodes * spec.spacing
        dx = coords[ends[:, 1], 0] - coords[ends[:, 0], 0]
        dy = coords[ends[:, 1], 1] - coords[ends[:, 0], 1]
        length = np.hypot(dx, dy)
        is_frame = kind < 0
        sec_l, sec_f = spec.lattice_section, spec.frame_section
        ea = np.where(is_frame, sec_f.area * sec_f.youngs_modulus, sec_l.area * sec_l.youngs_modulus)
        ei = np.where(
            is_frame,
            sec_f.second_moment * sec_f.youngs_modulus,
            sec_l.second_moment * sec_l.youngs_modulus,
        )
        ks = _element_stiffness_batch(length, ea, ei, dx / length, dy / length)
        dofs = _element_dofs(ends[:, 0], ends[:, 1])

        self.n_raw = len(grid_nodes)
        self.ndof = 3 * self.n_raw
        self.bw = int((dofs.max(axis=1) - dofs.min(axis=1)).max())

        base = np.zeros((self.bw + 1, self.ndof))
        br, bc, bv = _band_entries(dofs[is_frame], ks[is_frame])
        np.add.at(base, (br, bc), bv)
        self._base = base

        lat = ~is_frame
        lr, lc, lv = _band_entries(dofs[lat], ks[lat])
        n_lat = lat.sum()
        self._lat_rows = lr
        self._lat_cols = lc
        self._lat_vals = lv
        # 21 lower-triangle entries per element, grouped per element in order
        self._lat_member = np.repeat(kind[lat], 21)
        self._lat_ends = ends[lat]
        self._lat_kind = kind[lat]

        self._frame_nodes = np.unique(ends[is_frame].reshape(-1))
        self._supports = lattice.support_node_ids(m, tiles)
        fixed = np.sort(np.concatenate([3 * self._supports, 3 * self._supports + 1]))
        self._fixed = fixed
        self._zr, self._zc = _zero_dof_indices(fixed, self.bw, self.ndof)
        self._rhs_full = np.zeros(self.ndof)
        self._rhs_full[0::3] = lattice.load_vector_grid(m, tiles)
        self._rhs_full[fixed] = 0.0
        self._system = _BandedSystem(self.bw, self.ndof)

    def analyze(
        self, x: UnitTopology, threshold: float = DEFAULT_THRESHOLD
    ) -> tuple[float, SolveResult]:
        """Volume and solve result for x; unstable if the factorization fails
        or the compliance exceeds `threshold`."""
        if x.m != self.spec.m:
            raise ValueError("topology resolution does not match evaluator")
        mask = x.bits.view(bool)
        volume = lattice.unit_volume(x, self.spec)

        ab = self._base.copy()
        sel = mask[self._lat_member]
        np.add.at(ab, (self._lat_rows[sel], self._lat_cols[sel]), self._lat_vals[sel])

        active = np.zeros(self.n_raw, dtype=bool)
        active[self._frame_nodes] = True
        active[self._lat_ends[mask[self._lat_kind]].reshape(-1)] = True

        diag = ab[0]
        scale = diag[np.repeat(active, 3)].mean()
        ab[self._zr, self._zc] = 0.0
        ab[0, self._fixed] = scale
        inactive_dofs = np.repeat(~active, 3)
        ab[0, inactive_dofs] = scale

        u, ok = self._system.solve(ab, self._rhs_full)
        if not ok:
            return volume, SolveResult(UNSTABLE)
        compliance = float(self._rhs_full @ u)
        if compliance > threshold:
            return volume, SolveResult(UNSTABLE)
        return volume, SolveResult(STABLE, compliance, u.reshape(-1, 3)[active])


_EVALUATORS: dict[tuple, UnitEvaluator] = {}


def get_evaluator(spec: GridSpec, tiles: int = 3) -> UnitEvaluator:
    key = (spec, tiles)
    if key not in _EVALUATORS:
        _EVALUATORS[key] = UnitEvaluator(spec, tiles)
    return _EVALUATORS[key]


def analyze(
    x: UnitTopology, spec: GridSpec, threshold: float = DEFAULT_THRESHOLD, tiles: int = 3
) -> tuple[float, SolveResult]:
    """Volume and screened solve result for a unit topology."""
    return get_evaluator(spec, tiles).analyze(x, threshold)
