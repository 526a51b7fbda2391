"""Periodic lattice unit cells and their instantiation as global frame models.

A unit is an ``m x m`` grid of square cells with periodic boundary: opposite
edges are identified, so the unit has ``m**2`` nodes and ``4*m**2`` candidate
members.  Members are grouped into four orientation channels:

    H  (0): (i, j) -> (i+1, j)      horizontal
    V  (1): (i, j) -> (i, j+1)      vertical
    DP (2): (i, j) -> (i+1, j+1)    right diagonal
    DM (3): (i+1, j) -> (i, j+1)    left diagonal

with all node coordinates taken modulo m.  The flat member index is
``c*m*m + j*m + i`` (channel-major).  The physical structure tiles the unit
3x3, wraps it in a rigid outer frame, and is pin-supported at the two base
corners; a 12 kN horizontal load is distributed over the upper edge.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

CH_H, CH_V, CH_DP, CH_DM = 0, 1, 2, 3

UNIT_SIDE = 2.0  # m
TOTAL_LOAD = 12000.0  # N, horizontal, distributed over upper-edge nodes
SQRT2 = np.sqrt(2.0)

_MM2 = 1e-6  # mm^2 -> m^2
_MM4 = 1e-12  # mm^4 -> m^4
_NMM2 = 1e6  # N/mm^2 -> N/m^2


@dataclass(frozen=True)
class SectionProps:
    """Cross-section and material properties in SI units."""

    area: float  # m^2
    second_moment: float  # m^4
    youngs_modulus: float  # N/m^2

    def __post_init__(self):
        if self.area <= 0 or self.second_moment <= 0 or self.youngs_modulus <= 0:
            raise ValueError("section properties must be strictly positive")


def lattice_section(m: int) -> SectionProps:
    """Lattice member section for an m x m unit: A = 6.0e4/m mm^2, I = 8.0e8/m^3 mm^4, E = 20000 N/mm^2."""
    return SectionProps(
        area=6.0e4 / m * _MM2,
        second_moment=8.0e8 / m**3 * _MM4,
        youngs_modulus=20000.0 * _NMM2,
    )


def frame_section() -> SectionProps:
    """Outer-frame section: A = 1.2e5 mm^2, I = 1.6e9 mm^4, E = 20000 N/mm^2."""
    return SectionProps(
        area=1.2e5 * _MM2,
        second_moment=1.6e9 * _MM4,
        youngs_modulus=20000.0 * _NMM2,
    )


@dataclass(frozen=True)
class GridSpec:
    """Geometry and sections of one m x m unit (side length fixed at 2.0 m)."""

    m: int
    unit_side: float = UNIT_SIDE
    lattice_section: SectionProps = None  # type: ignore[assignment]
    frame_section: SectionProps = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("grid resolution m must be a positive integer")
        if self.lattice_section is None:
            object.__setattr__(self, "lattice_section", lattice_section(self.m))
        if self.frame_section is None:
            object.__setattr__(self, "frame_section", frame_section())

    @property
    def spacing(self) -> float:
        return self.unit_side / self.m


def member_count(m: int) -> int:
    """Number of candidate members in an m x m unit: 4*m**2."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return 4 * m * m


def member_index(c: int, i: int, j: int, m: int) -> int:
    """Flat index of channel-c member at cell (i, j), periodic in both axes."""
    return c * m * m + (j % m) * m + (i % m)


class UnitTopology:
    """0-1 design vector over the 4*m**2 periodic members of an m x m unit."""

    __slots__ = ("m", "bits")

    def __init__(self, m: int, bits):
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        if bits.shape != (4 * m * m,):
            raise ValueError(f"expected {4 * m * m} bits for m={m}, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("bits must be 0 or 1")
        bits.flags.writeable = False
        self.m = m
        self.bits = bits

    def __eq__(self, other):
        return (
            isinstance(other, UnitTopology)
            and self.m == other.m
            and np.array_equal(self.bits, other.bits)
        )

    def __hash__(self):
        return hash((self.m, self.bits.tobytes()))

    def __repr__(self):
        return f"UnitTopology(m={self.m}, n_present={int(self.bits.sum())})"


def ground(m: int) -> UnitTopology:
    """Ground structure: every candidate member present."""
    return UnitTopology(m, np.ones(4 * m * m, dtype=np.uint8))


def empty(m: int) -> UnitTopology:
    return UnitTopology(m, np.zeros(4 * m * m, dtype=np.uint8))


def incident_members(m: int, node: tuple[int, int]) -> list[int]:
    """The 8 members incident to periodic node (i, j), in canonical order.

    Order: H(i,j), H(i-1,j), V(i,j), V(i,j-1), DP(i,j), DP(i-1,j-1),
    DM(i-1,j), DM(i,j-1); indices wrap modulo m.
    """
    i, j = node
    if not (0 <= i < m and 0 <= j < m):
        raise ValueError(f"node {node} out of range for m={m}")
    return [
        member_index(CH_H, i, j, m),
        member_index(CH_H, i - 1, j, m),
        member_index(CH_V, i, j, m),
        member_index(CH_V, i, j - 1, m),
        member_index(CH_DP, i, j, m),
        member_index(CH_DP, i - 1, j - 1, m),
        member_index(CH_DM, i - 1, j, m),
        member_index(CH_DM, i, j - 1, m),
    ]


@functools.lru_cache(maxsize=None)
def incidence_table(m: int) -> np.ndarray:
    """(m**2, 8) member indices; row j*m+i lists incident_members(m, (i, j))."""
    table = np.empty((m * m, 8), dtype=np.intp)
    for j in range(m):
        for i in range(m):
            table[j * m + i] = incident_members(m, (i, j))
    table.flags.writeable = False
    return table


def unit_volume(x: UnitTopology, spec: GridSpec) -> float:
    """Total member volume of the unit in m^3 (outer frame excluded).

    Computed as A * L * (n_hv + sqrt(2) * n_diag) so that refining a topology
    preserves the value bit-exactly (A and L halve, counts quadruple).
    """
    if x.m != spec.m:
        raise ValueError("topology and spec resolutions differ")
    m = x.m
    n_hv = int(x.bits[: 2 * m * m].sum())
    n_diag = int(x.bits[2 * m * m :].sum())
    return float(spec.lattice_section.area * spec.spacing * (n_hv + SQRT2 * n_diag))


def refine(x: UnitTopology) -> UnitTopology:
    """Duplicate each member into the 4 members of the doubled grid.

    Coarse member (c, j, i) sets fine members (c, 2j+dj, 2i+di) for
    dj, di in {0, 1}.
    """
    m = x.m
    coarse = x.bits.reshape(4, m, m)
    fine = np.repeat(np.repeat(coarse, 2, axis=1), 2, axis=2)
    return UnitTopology(2 * m, fine.reshape(-1))


def mirror(x: UnitTopology) -> UnitTopology:
    """Reflect the unit about a vertical axis (periodic node map i -> -i mod m)."""
    m = x.m
    a = x.bits.reshape(4, m, m)
    out = np.empty_like(a)
    cols = (m - 1 - np.arange(m)) % m
    cols_v = (m - np.arange(m)) % m
    out[CH_H] = a[CH_H][:, cols]
    out[CH_V] = a[CH_V][:, cols_v]
    out[CH_DP] = a[CH_DM][:, cols]
    out[CH_DM] = a[CH_DP][:, cols]
    return UnitTopology(m, out.reshape(-1))


def to_channel_array(x: UnitTopology) -> np.ndarray:
    """Bits as a real (4, m, m) array with entry (c, j, i) = bits[c*m*m + j*m + i]."""
    return x.bits.reshape(4, x.m, x.m).astype(np.float64)


def from_channel_array(a: np.ndarray) -> UnitTopology:
    a = np.asarray(a)
    if a.ndim != 3 or a.shape[0] != 4 or a.shape[1] != a.shape[2]:
        raise ValueError(f"expected shape (4, m, m), got {a.shape}")
    return UnitTopology(a.shape[1], np.rint(a).astype(np.uint8).reshape(-1))


@dataclass(frozen=True)
class FrameModel:
    """Instantiated physical structure: retained nodes, elements, supports, loads.

    nodes: (N, 2) coordinates in m.  Elements are parallel arrays over E
    members: end node indices plus per-element section values.  supports are
    pinned nodes (translations fixed, rotation free).  loads holds the
    horizontal nodal force in N, aligned with nodes.
    """

    nodes: np.ndarray
    node_a: np.ndarray
    node_b: np.ndarray
    area: np.ndarray
    second_moment: np.ndarray
    youngs_modulus: np.ndarray
    supports: np.ndarray
    loads: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.node_a)

    def elements(self):
        """Iterate (node_a, node_b, SectionProps) triples."""
        for a, b, ar, sm, e in zip(
            self.node_a, self.node_b, self.area, self.second_moment, self.youngs_modulus
        ):
            yield int(a), int(b), SectionProps(float(ar), float(sm), float(e))


def candidate_elements(m: int, tiles: int = 3):
    """Candidate element table for the tiled structure, on the full node grid.

    Returns (grid_nodes, ends, kind) where grid_nodes is (n+1)**2 x 2 in grid
    units (n = tiles*m cells per side), ends is (E, 2) raw node ids, and kind
    is the owning unit member index, or -1 for an always-present frame element.
    Frame elements replace the lattice variable on the global boundary rows
    and columns, so boundary positions never map to a unit member.
    """
    n = tiles * m
    stride = n + 1

    def nid(gi, gj):
        return gj * stride + gi

    ends = []
    kind = []
    # outer frame: H at rows 0 and n, V at columns 0 and n
    for gj in (0, n):
        for gi in range(n):
            ends.append((nid(gi, gj), nid(gi + 1, gj)))
            kind.append(-1)
    for gi in (0, n):
        for gj in range(n):
            ends.append((nid(gi, gj), nid(gi, gj + 1)))
            kind.append(-1)
    # lattice H members on interior rows
    for gj in range(1, n):
        for gi in range(n):
            ends.append((nid(gi, gj), nid(gi + 1, gj)))
            kind.append(member_index(CH_H, gi, gj, m))
    # lattice V members on interior columns
    for gi in range(1, n):
        for gj in range(n):
            ends.append((nid(gi, gj), nid(gi, gj + 1)))
            kind.append(member_index(CH_V, gi, gj, m))
    # diagonals cross cell centers without a node there
    for gj in range(n):
        for gi in range(n):
            ends.append((nid(gi, gj), nid(gi + 1, gj + 1)))
            kind.append(member_index(CH_DP, gi, gj, m))
    for gj in range(n):
        for gi in range(n):
            ends.append((nid(gi + 1, gj), nid(gi, gj + 1)))
            kind.append(member_index(CH_DM, gi, gj, m))

    jj, ii = np.divmod(np.arange(stride * stride), stride)
    grid_nodes = np.column_stack([ii, jj]).astype(np.float64)
    return grid_nodes, np.asarray(ends, dtype=np.intp), np.asarray(kind, dtype=np.intp)


def corner_node_ids(m: int, tiles: int = 3) -> np.ndarray:
    n = tiles * m
    stride = n + 1
    return np.asarray([0, n, n * stride, n * stride + n], dtype=np.intp)


def support_node_ids(m: int, tiles: int = 3) -> np.ndarray:
    """Raw grid ids of the pinned supports: the two base corners.

    Pinning all four corners would let the rigid top chord carry the applied
    load axially straight into the upper supports, collapsing the compliance
    by more than an order of magnitude and decoupling it from the lattice.
    """
    n = tiles * m
    return np.asarray([0, n], dtype=np.intp)


def load_vector_grid(m: int, tiles: int = 3) -> np.ndarray:
    """Horizontal nodal load on the raw (n+1)**2 grid: tributary split of 12 kN.

    Interior upper-edge nodes carry 12000/n N, the two top corners half that.
    """
    n = tiles * m
    stride = n + 1
    loads = np.zeros(stride * stride)
    top = n * stride + np.arange(stride)
    loads[top] = TOTAL_LOAD / n
    loads[top[0]] = loads[top[-1]] = 0.5 * TOTAL_LOAD / n
    return loads


def instantiate_global(x: UnitTopology, spec: GridSpec, tiles: int = 3) -> FrameModel:
    """Build the tiles x tiles tiled frame model for topology x.

    Lattice members map to unit variable (i mod m, j mod m); rigid frame
    elements sit on the global perimeter regardless of x; isolated nodes are
    dropped; supports are the two base corner nodes; a total horizontal load
    of 12 kN is distributed over the upper edge.
    """
    if x.m != spec.m:
        raise ValueError("topology and spec resolutions differ")
    m = spec.m
    grid_nodes, ends, kind = candidate_elements(m, tiles)
    present = kind < 0
    present |= (kind >= 0) & (x.bits[np.clip(kind, 0, None)] == 1)
    ends = ends[present]
    kind = kind[present]

    used = np.zeros(len(grid_nodes), dtype=bool)
    used[ends.reshape(-1)] = True
    renumber = -np.ones(len(grid_nodes), dtype=np.intp)
    renumber[used] = np.arange(used.sum())

    nodes = grid_nodes[used] * spec.spacing
    node_a = renumber[ends[:, 0]]
    node_b = renumber[ends[:, 1]]
    is_frame = kind < 0
    sec_l, sec_f = spec.lattice_section, spec.frame_section
    area = np.where(is_frame, sec_f.area, sec_l.area)
    second_moment = np.where(is_frame, sec_f.second_moment, sec_l.second_moment)
    youngs = np.where(is_frame, sec_f.youngs_modulus, sec_l.youngs_modulus)

    supports = renumber[support_node_ids(m, tiles)]
    loads = load_vector_grid(m, tiles)[used]
    return FrameModel(
        nodes=nodes,
        node_a=node_a,
        node_b=node_b,
        area=area,
        second_moment=second_moment,
        youngs_modulus=youngs,
        supports=supports,
        loads=loads,
    )


def save_topology(x: UnitTopology, path) -> None:
    """Write the topology text format: `m=<int>` then a 0/1 string, LF-terminated."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"m={x.m}\n")
        fh.write("".join("1" if b else "0" for b in x.bits))
        fh.write("\n")


def load_topology(path) -> UnitTopology:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("m="):
            raise ValueError(f"{path}: line 1 must be 'm=<int>', got {header!r}")
        try:
            m = int(header[2:])
        except ValueError as exc:
            raise ValueError(f"{path}: bad grid resolution in {header!r}") from exc
        bitstr = fh.readline().strip()
    if len(bitstr) != 4 * m * m or set(bitstr) - {"0", "1"}:
        raise ValueError(f"{path}: line 2 must be {4 * m * m} characters of 0/1")
    return UnitTopology(m, np.frombuffer(bitstr.encode("ascii"), dtype=np.uint8) - ord("0"))
