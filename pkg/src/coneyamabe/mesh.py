"""Graded tensor-product grids on the axisymmetric reduction of the cone.

Solutions invariant under translations along the singular plane and under
the transverse rotations depend only on (x1, r) with r the distance to the
singular plane.  In polar coordinates x1 = rho_polar*cos(omega),
r = rho_polar*sin(omega) the cone interior is the wedge 0 < omega < theta,
the singular set sits on the axis omega = 0, the cone face is the ray
omega = theta, and the distance to the singular set is exactly
rho = rho_polar*sin(omega).

Meshes are tensor products of a log-uniform radial grid and an angular grid
graded toward omega = 0; in the computational plane (log rho_polar, omega)
the domain is a rectangle.  The quadrature weight per node is the reduced
volume density W = rho_polar^(n-d) sin^(n-d-1)(omega) times the cell area
(measured in the log-radial coordinate), and Robin-face nodes carry the
surface density rho_polar^(n-d) sin^(n-d-1)(theta) per unit log-radius.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConeModel

__all__ = [
    "BoundaryTag",
    "ReducedDomain",
    "Mesh",
    "Field",
    "build_mesh",
    "build_mesh_from_angular_nodes",
    "truncation_family",
    "distance_field",
    "write_field_table",
    "read_field_table",
]


class BoundaryTag(enum.IntEnum):
    """Node classification; every boundary node carries exactly one tag."""

    INTERIOR = 0
    DIRICHLET_INNER_ANGULAR = 1  # omega = omega_min, the truncation toward the singular set
    DIRICHLET_RADIAL = 2         # rho_polar = rho_polar_min or rho_polar_max (and all corners)
    ROBIN_CONE = 3               # omega = theta, the cone face


@dataclass(frozen=True)
class ReducedDomain:
    """Truncated wedge omega_min <= omega <= theta, rho_polar in [min, max]."""

    cone: ConeModel
    rho_polar_min: float
    rho_polar_max: float
    omega_min: float

    def __post_init__(self):
        object.__setattr__(self, "rho_polar_min", float(self.rho_polar_min))
        object.__setattr__(self, "rho_polar_max", float(self.rho_polar_max))
        object.__setattr__(self, "omega_min", float(self.omega_min))
        if not 0.0 < self.rho_polar_min < self.rho_polar_max:
            raise ValueError(
                f"need 0 < rho_polar_min < rho_polar_max, got "
                f"[{self.rho_polar_min}, {self.rho_polar_max}]"
            )
        if not 0.0 <= self.omega_min < self.cone.theta:
            raise ValueError(
                f"need 0 <= omega_min < theta = {self.cone.theta}, got {self.omega_min}"
            )

    def with_omega_min(self, omega_min: float) -> "ReducedDomain":
        return ReducedDomain(self.cone, self.rho_polar_min, self.rho_polar_max, omega_min)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor-product grid; node (i, j) has flat index i * n_angular + j.

    radial_nodes are strictly increasing and uniform in log(rho_polar);
    angular_nodes are strictly increasing in (0, theta].  Immutable after
    construction, safe to share read-only across threads.
    """

    domain: ReducedDomain
    radial_nodes: np.ndarray
    angular_nodes: np.ndarray
    tags: np.ndarray = field(repr=False)
    node_weights: np.ndarray = field(repr=False)
    robin_weights: np.ndarray = field(repr=False)  # full length; nonzero on ROBIN_CONE only

    @property
    def n_radial(self) -> int:
        return len(self.radial_nodes)

    @property
    def n_angular(self) -> int:
        return len(self.angular_nodes)

    @property
    def n_nodes(self) -> int:
        return self.n_radial * self.n_angular

    def index(self, i, j):
        return i * self.n_angular + j

    @property
    def rho_polar(self) -> np.ndarray:
        """Polar radius per node, flat ordering."""
        return np.repeat(self.radial_nodes, self.n_angular)

    @property
    def omega(self) -> np.ndarray:
        """Angular coordinate per node, flat ordering."""
        return np.tile(self.angular_nodes, self.n_radial)

    @property
    def rho(self) -> np.ndarray:
        """Distance to the singular set, rho_polar * sin(omega), per node."""
        return self.rho_polar * np.sin(self.omega)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return (self.tags == BoundaryTag.DIRICHLET_INNER_ANGULAR) | (
            self.tags == BoundaryTag.DIRICHLET_RADIAL
        )

    @property
    def robin_mask(self) -> np.ndarray:
        return self.tags == BoundaryTag.ROBIN_CONE

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.dirichlet_mask

    def angular_offset_of(self, coarser: "Mesh") -> int:
        """Index offset embedding a coarser truncation's angular grid into this one.

        Meshes produced by truncation_family share radial nodes and the
        coarser mesh's angular nodes form the tail of the finer one; returns
        k such that self.angular_nodes[k:] == coarser.angular_nodes.
        """
        k = self.n_angular - coarser.n_angular
        if k < 0 or not np.array_equal(self.angular_nodes[k:], coarser.angular_nodes):
            raise ValueError("meshes are not nested truncations")
        if not np.array_equal(self.radial_nodes, coarser.radial_nodes):
            raise ValueError("meshes do not share radial nodes")
        return k


@dataclass
class Field:
    """Node-indexed scalar values on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"field length {self.values.shape} does not match mesh with "
                f"{self.mesh.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def full(cls, mesh: Mesh, value: float) -> "Field":
        return cls(mesh, np.full(mesh.n_nodes, float(value)))

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls.full(mesh, 0.0)

    def copy(self) -> "Field":
        return Field(self.mesh, self.values.copy())


def _half_widths(nodes: np.ndarray) -> np.ndarray:
    """Trapezoidal cell widths: half-gaps left+right, half-gap at the ends."""
    gaps = np.diff(nodes)
    w = np.empty(len(nodes))
    w[0] = 0.5 * gaps[0]
    w[-1] = 0.5 * gaps[-1]
    w[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return w


def _assemble_mesh(domain: ReducedDomain, radial_nodes, angular_nodes) -> Mesh:
    cone = domain.cone
    nr, na = len(radial_nodes), len(angular_nodes)
    if nr < 4 or na < 4:
        raise ValueError(f"need at least 4 nodes per direction, got {nr} x {na}")
    if np.any(np.diff(radial_nodes) <= 0) or np.any(np.diff(angular_nodes) <= 0):
        raise ValueError("mesh nodes must be strictly increasing")
    if angular_nodes[0] <= 0.0:
        raise ValueError("solver meshes require omega_min > 0 (nodes on the singular axis excluded)")

    ii, jj = np.meshgrid(np.arange(nr), np.arange(na), indexing="ij")
    tags = np.full((nr, na), BoundaryTag.INTERIOR, dtype=np.int8)
    tags[(jj == 0)] = BoundaryTag.DIRICHLET_INNER_ANGULAR
    tags[(jj == na - 1)] = BoundaryTag.ROBIN_CONE
    tags[(ii == 0) | (ii == nr - 1)] = BoundaryTag.DIRICHLET_RADIAL  # corners go Dirichlet

    p = cone.n - cone.d  # transverse dimension; weight W = rho_polar^p sin^(p-1)(omega)
    xi = np.log(radial_nodes)
    dxi = _half_widths(xi)
    dom = _half_widths(angular_nodes)
    # volume density in (xi, omega): W * rho_polar = rho_polar^(p+1) sin^(p-1)
    wvol = np.outer(radial_nodes ** (p + 1) * dxi, np.sin(angular_nodes) ** (p - 1) * dom)
    # surface density on the cone face per unit xi: W = rho_polar^p sin^(p-1)(theta);
    # corners are Dirichlet-tagged, so they carry no Robin surface weight
    wrob = np.zeros((nr, na))
    wrob[1:-1, na - 1] = radial_nodes[1:-1] ** p * np.sin(angular_nodes[-1]) ** (p - 1) * dxi[1:-1]

    return Mesh(
        domain=domain,
        radial_nodes=np.asarray(radial_nodes, dtype=float),
        angular_nodes=np.asarray(angular_nodes, dtype=float),
        tags=tags.reshape(-1),
        node_weights=wvol.reshape(-1),
        robin_weights=wrob.reshape(-1),
    )


def build_mesh(domain: ReducedDomain, n_radial: int, n_angular: int, grading: float = 2.0) -> Mesh:
    """Tensor mesh with n_radial x n_angular nodes.

    Radial nodes are uniform in log(rho_polar).  Angular node k sits at
    omega_min + (theta - omega_min) * (k/(n_angular-1))^grading, so grading 1
    is uniform and grading > 1 concentrates nodes toward the singular axis
    where the rho^(-(n-2)/2) profile must be resolved.
    """
    if n_radial < 4 or n_angular < 4:
        raise ValueError(f"need n_radial, n_angular >= 4, got {n_radial}, {n_angular}")
    if grading < 1.0:
        raise ValueError(f"grading must be >= 1, got {grading}")
    if domain.omega_min <= 0.0:
        raise ValueError("build_mesh requires omega_min > 0")
    theta = domain.cone.theta
    radial = np.exp(
        np.linspace(np.log(domain.rho_polar_min), np.log(domain.rho_polar_max), n_radial)
    )
    s = np.linspace(0.0, 1.0, n_angular)
    angular = domain.omega_min + (theta - domain.omega_min) * s**grading
    angular[0] = domain.omega_min
    angular[-1] = theta
    return _assemble_mesh(domain, radial, angular)


def build_mesh_from_angular_nodes(domain: ReducedDomain, radial_nodes, angular_nodes) -> Mesh:
    """Mesh with explicitly supplied node arrays (used by truncation families)."""
    return _assemble_mesh(domain, np.asarray(radial_nodes, float), np.asarray(angular_nodes, float))


def truncation_family(
    base: Mesh, levels: int, nodes_per_octave: int = 10
) -> list[Mesh]:
    """Nested meshes for the shrinking truncations omega_min, omega_min/2, ...

    Level 0 is the base mesh.  Level k halves omega_min and prepends
    nodes_per_octave log-uniform angular nodes in the new octave
    [omega_min/2^k, omega_min/2^(k-1)), so every coarser mesh's nodes are
    shared exactly by all finer ones (nested on the common subdomain) and
    nodewise comparisons across truncations need no interpolation.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if nodes_per_octave < 2:
        raise ValueError("nodes_per_octave must be >= 2")
    meshes = [base]
    angular = base.angular_nodes
    omega_min = base.domain.omega_min
    for _ in range(1, levels):
        new_min = 0.5 * omega_min
        octave = np.exp(np.linspace(np.log(new_min), np.log(omega_min), nodes_per_octave + 1))[:-1]
        angular = np.concatenate([octave, angular])
        domain = base.domain.with_omega_min(new_min)
        meshes.append(build_mesh_from_angular_nodes(domain, base.radial_nodes, angular))
        omega_min = new_min
    return meshes


def distance_field(mesh: Mesh) -> Field:
    """Distance to the singular set: rho_polar * sin(omega), exact per node."""
    return Field(mesh, mesh.rho)


def write_field_table(target, mesh: Mesh, values=None) -> None:
    """Plain-text tabular dump, one node per row: rho_polar, omega, tag, value.

    `target` is a path or a writable text file.  With values=None the value
    column is 0.  Format is documented in the README (debugging/plotting aid).
    """
    vals = np.zeros(mesh.n_nodes) if values is None else np.asarray(values, float)
    if vals.shape != (mesh.n_nodes,):
        raise ValueError("values length does not match mesh")
    own = isinstance(target, (str, bytes))
    fh = open(target, "w", newline="\n") if own else target
    try:
        fh.write("rho_polar,omega,tag,value\n")
        rp, om, tg = mesh.rho_polar, mesh.omega, mesh.tags
        for k in range(mesh.n_nodes):
            fh.write(f"{rp[k]:.17g},{om[k]:.17g},{BoundaryTag(tg[k]).name},{vals[k]:.17g}\n")
    finally:
        if own:
            fh.close()


def read_field_table(source) -> tuple[np.ndarray, np.ndarray, list, np.ndarray]:
    """Inverse of write_field_table: arrays (rho_polar, omega, tag names, values)."""
    own = isinstance(source, (str, bytes))
    fh = open(source, "r") if own else source
    try:
        header = fh.readline().strip()
        if header != "rho_polar,omega,tag,value":
            raise ValueError(f"unrecognized field table header: {header!r}")
        rp, om, tg, vals = [], [], [], []
        for line in fh:
            a, b, c, d = line.strip().split(",")
            rp.append(float(a))
            om.append(float(b))
            tg.append(c)
            vals.append(float(d))
    finally:
        if own:
            fh.close()
    return np.array(rp), np.array(om), tg, np.array(vals)
