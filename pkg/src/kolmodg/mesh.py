"""Structured rectangular meshes and face classification for the drift field x*d/dy.

The degenerate problem u_t - u_xx + x u_y = f distinguishes boundary pieces by
the outward normal n = (n1, n2): the elliptic part Gamma_0 (n1 != 0), the
inflow Gamma_- (x n2 < 0) and the outflow Gamma_+ (x n2 >= 0).  Element sides
are split the same way into inflow/outflow parts d-T / d+T.  A grid line is
required at x = 0 whenever the domain straddles it, so that x n2 has one sign
on the interior of every face.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

INTERIOR = "interior"
GAMMA_0 = "gamma0"
GAMMA_MINUS = "gamma-"
GAMMA_PLUS = "gamma+"

INFLOW = "-"
OUTFLOW = "+"

N_FACES_PER_ELEMENT = 4


class MeshConfigError(ValueError):
    """Raised when a requested mesh cannot satisfy the grid-line constraints."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle (x_lo, x_hi) x (y_lo, y_hi)."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise MeshConfigError("domain must satisfy x_lo < x_hi and y_lo < y_hi")

    @property
    def straddles_x0(self) -> bool:
        return self.x_lo < 0.0 < self.x_hi


@dataclass(frozen=True)
class Element:
    index: int
    ix: int
    iy: int
    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def hx(self) -> float:
        return self.x1 - self.x0

    @property
    def hy(self) -> float:
        return self.y1 - self.y0

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.hx, self.hy))

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def area(self) -> float:
        return self.hx * self.hy


@dataclass(frozen=True)
class Face:
    """Mesh face, oriented by its owner element.

    For interior faces the owner is the adjacent element with the *higher*
    index, and jumps are taken as (owner trace) - (neighbour trace); `normal`
    is outward from the owner.  Boundary faces have `neighbour = None` and the
    outward domain normal.
    """

    index: int
    horizontal: bool
    pos: float  # y-coordinate for horizontal faces, x for vertical
    lo: float  # span of the face along its axis
    hi: float
    owner: int
    neighbour: int | None
    normal: tuple[float, float]

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def is_boundary(self) -> bool:
        return self.neighbour is None

    @property
    def midpoint(self) -> tuple[float, float]:
        mid = 0.5 * (self.lo + self.hi)
        return (self.pos, mid) if not self.horizontal else (mid, self.pos)


@dataclass
class Mesh:
    domain: Domain
    nx: int
    ny: int
    xs: np.ndarray
    ys: np.ndarray
    elements: list[Element]
    faces: list[Face]
    elem_faces: list[list[int]] = field(default_factory=list)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def interior_faces(self) -> list[Face]:
        return [f for f in self.faces if not f.is_boundary]

    @property
    def boundary_faces(self) -> list[Face]:
        return [f for f in self.faces if f.is_boundary]

    @property
    def h_min(self) -> float:
        return min(e.diameter for e in self.elements)

    @property
    def h_max(self) -> float:
        return max(e.diameter for e in self.elements)

    @property
    def hbar_min(self) -> float:
        # capped minimal mesh size used by the mesh-dependent spectral gap
        return 0.5 * min(1.0, self.h_min)

    @property
    def c_rho(self) -> float:
        ratios = [1.0]
        for f in self.interior_faces:
            ha = self.elements[f.owner].diameter
            hb = self.elements[f.neighbour].diameter
            ratios.append(max(ha / hb, hb / ha))
        return max(ratios)

    def to_json(self) -> str:
        """Geometry summary: element boxes and face records."""
        data = {
            "domain": [self.domain.x_lo, self.domain.x_hi, self.domain.y_lo, self.domain.y_hi],
            "nx": self.nx,
            "ny": self.ny,
            "elements": [
                {"index": e.index, "box": [e.x0, e.x1, e.y0, e.y1], "diameter": e.diameter}
                for e in self.elements
            ],
            "faces": [
                {
                    "index": f.index,
                    "endpoints": _face_endpoints(f),
                    "normal": list(f.normal),
                    "owner": f.owner,
                    "neighbour": f.neighbour,
                }
                for f in self.faces
            ],
        }
        return json.dumps(data, indent=2)


def _face_endpoints(f: Face) -> list[list[float]]:
    if f.horizontal:
        return [[f.lo, f.pos], [f.hi, f.pos]]
    return [[f.pos, f.lo], [f.pos, f.hi]]


def build_rect_mesh(domain: Domain, nx: int, ny: int) -> Mesh:
    """Uniform nx-by-ny tensor grid on the domain.

    Raises MeshConfigError when the domain straddles x = 0 but the uniform
    spacing puts no grid line there.
    """
    if nx < 1 or ny < 1:
        raise MeshConfigError("nx and ny must be at least 1")
    xs = np.linspace(domain.x_lo, domain.x_hi, nx + 1)
    ys = np.linspace(domain.y_lo, domain.y_hi, ny + 1)
    if domain.straddles_x0:
        hits = np.isclose(xs, 0.0, atol=1e-12 * max(1.0, abs(domain.x_hi - domain.x_lo)))
        if not hits.any():
            raise MeshConfigError(
                "domain straddles x = 0 but the %d-cell grid has no line there" % nx
            )
        xs[hits] = 0.0  # snap, so face-sign logic sees an exact zero

    elements = []
    for iy in range(ny):
        for ix in range(nx):
            elements.append(
                Element(iy * nx + ix, ix, iy, xs[ix], xs[ix + 1], ys[iy], ys[iy + 1])
            )

    def _eid(ix, iy):
        return iy * nx + ix

    faces: list[Face] = []
    elem_faces: list[list[int]] = [[] for _ in elements]

    def _add(face: Face):
        faces.append(face)
        elem_faces[face.owner].append(face.index)
        if face.neighbour is not None:
            elem_faces[face.neighbour].append(face.index)

    # vertical faces: constant x = xs[i], span in y
    for i in range(nx + 1):
        for j in range(ny):
            idx = len(faces)
            if i == 0:
                _add(Face(idx, False, xs[0], ys[j], ys[j + 1], _eid(0, j), None, (-1.0, 0.0)))
            elif i == nx:
                _add(Face(idx, False, xs[nx], ys[j], ys[j + 1], _eid(nx - 1, j), None, (1.0, 0.0)))
            else:
                # owner = right cell (higher index); its outward normal points left
                _add(Face(idx, False, xs[i], ys[j], ys[j + 1], _eid(i, j), _eid(i - 1, j), (-1.0, 0.0)))
    # horizontal faces: constant y = ys[j], span in x
    for j in range(ny + 1):
        for i in range(nx):
            idx = len(faces)
            if j == 0:
                _add(Face(idx, True, ys[0], xs[i], xs[i + 1], _eid(i, 0), None, (0.0, -1.0)))
            elif j == ny:
                _add(Face(idx, True, ys[ny], xs[i], xs[i + 1], _eid(i, ny - 1), None, (0.0, 1.0)))
            else:
                # owner = upper cell; outward normal points down
                _add(Face(idx, True, ys[j], xs[i], xs[i + 1], _eid(i, j), _eid(i, j - 1), (0.0, -1.0)))

    return Mesh(domain, nx, ny, xs, ys, elements, faces, elem_faces)


def _drift_sign(face: Face, normal: tuple[float, float]) -> float:
    """Sign-defining value of x*n2 on the face interior (0 on vertical faces)."""
    if not face.horizontal:
        return 0.0
    xmid = 0.5 * (face.lo + face.hi)
    return xmid * normal[1]


@dataclass
class FaceClass:
    """Boundary tags, per-element side tags, and cached drift magnitudes."""

    tags: list[str]
    side_owner: list[str]  # INFLOW/OUTFLOW of each face relative to its owner
    side_neighbour: list[str | None]
    n1_face: np.ndarray  # sup of |n1| per face (1 on vertical faces, else 0)
    x_n2_elem: np.ndarray  # sup of |x n2| over the inflow part of each element boundary
    n1_max_elem: np.ndarray  # max of n1_face over the interior faces of each element

    def side(self, face: Face, elem: int) -> str:
        if elem == face.owner:
            return self.side_owner[face.index]
        if elem == face.neighbour:
            return self.side_neighbour[face.index]
        raise ValueError(f"element {elem} is not adjacent to face {face.index}")


def classify(mesh: Mesh) -> FaceClass:
    """Tag faces against the drift field and split element boundaries."""
    n = mesh.n_faces
    tags = [INTERIOR] * n
    side_owner = [OUTFLOW] * n
    side_neighbour: list[str | None] = [None] * n
    n1_face = np.zeros(n)
    x_n2_elem = np.zeros(mesh.n_elements)
    n1_max_elem = np.zeros(mesh.n_elements)

    for f in mesh.faces:
        n1_face[f.index] = abs(f.normal[0])
        s_owner = _drift_sign(f, f.normal)
        side_owner[f.index] = INFLOW if s_owner < 0.0 else OUTFLOW
        if f.is_boundary:
            if f.normal[0] != 0.0:
                tags[f.index] = GAMMA_0
            else:
                tags[f.index] = GAMMA_MINUS if s_owner < 0.0 else GAMMA_PLUS
        else:
            # the neighbour sees the opposite normal: inflow iff -s_owner < 0;
            # vertical faces (s_owner = 0) are outflow on both sides
            side_neighbour[f.index] = INFLOW if s_owner > 0.0 else OUTFLOW
            n1_max_elem[f.owner] = max(n1_max_elem[f.owner], n1_face[f.index])
            n1_max_elem[f.neighbour] = max(n1_max_elem[f.neighbour], n1_face[f.index])

    for f in mesh.faces:
        if not f.horizontal:
            continue
        sup = max(abs(f.lo), abs(f.hi))  # sup of |x| on the face
        if side_owner[f.index] == INFLOW:
            x_n2_elem[f.owner] = max(x_n2_elem[f.owner], sup)
        if f.neighbour is not None and side_neighbour[f.index] == INFLOW:
            x_n2_elem[f.neighbour] = max(x_n2_elem[f.neighbour], sup)

    return FaceClass(tags, side_owner, side_neighbour, n1_face, x_n2_elem, n1_max_elem)


def regularity(mesh: Mesh) -> tuple[float, float, float]:
    """(C_rho, h_min, hbar_min) by enumeration."""
    return mesh.c_rho, mesh.h_min, mesh.hbar_min
