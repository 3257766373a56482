"""Interface-aligned structured triangulations of the rectangle [0,0.5]x[0,1].

The solid phase occupies the region below the interface polyline, the liquid
phase the region above.  The interface is an explicit chain of mesh vertices
spanning the width, so it stays a set of aligned facets under mesh movement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

WIDTH = 0.5
HEIGHT = 1.0

SOLID = 0
LIQUID = 1

#: Fraction of the initial minimum triangle area below which a moved mesh
#: is rejected as tangled.
AREA_MIN_FRACTION = 1e-3


class MeshError(Exception):
    pass


class TangleError(MeshError):
    """A mesh move produced a (nearly) inverted triangle."""


@dataclass(frozen=True)
class SegmentLayout:
    """Placement of the marked boundary segments.

    ``cool_segments`` are (x_lo, x_hi) intervals on the bottom edge,
    ``input_segments`` are (edge, lo, hi) with edge one of "top", "left",
    "right" (lo/hi are x on "top", y on the sides).  The heating input sits
    on the top edge by default so that a vertically flux-balanced state is a
    steady state of the discrete problem.
    """

    cool_segments: tuple = ((0.0, 0.25), (0.25, 0.5))
    input_segments: tuple = tuple(
        ("top", i * WIDTH / 6.0, (i + 1) * WIDTH / 6.0) for i in range(6)
    )

    def n_inputs(self):
        return len(self.input_segments)


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangulation with phase tags and marked boundary facets.

    vertices          (nv, 2) coordinates
    triangles         (nt, 3) CCW vertex triples
    phase             (nt,) SOLID/LIQUID per triangle
    interface_chain   ordered vertex indices from x=0 to x=WIDTH
    boundary_facets   (nb, 2) vertex pairs on the outer boundary
    boundary_markers  list of marker strings, one per boundary facet
    """

    vertices: np.ndarray
    triangles: np.ndarray
    phase: np.ndarray
    interface_chain: np.ndarray
    boundary_facets: np.ndarray
    boundary_markers: tuple
    layout: SegmentLayout
    nx: int
    ny: int
    initial_min_area: float

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def interface_facets(self):
        c = self.interface_chain
        return np.column_stack([c[:-1], c[1:]])

    def facets_with_marker(self, marker: str) -> np.ndarray:
        idx = [i for i, m in enumerate(self.boundary_markers) if m == marker]
        return self.boundary_facets[idx]


def triangle_areas(vertices, triangles):
    """Signed areas (positive for CCW triangles)."""
    p = vertices[triangles]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def _segment_marker(mid, segments, prefix):
    for k, (lo, hi) in enumerate(segments):
        if lo <= mid < hi or (mid == hi == segments[-1][1] and k == len(segments) - 1):
            return f"{prefix}-{k + 1}"
    return None


def build_rect_mesh(nx: int, ny: int, interface_height: float,
                    layout: SegmentLayout | None = None) -> TriMesh:
    """Structured triangulation with an interface row at ``interface_height``.

    Every grid cell is split along the same diagonal; the row of vertices at
    the interface height becomes the interface chain.  Raises ``MeshError``
    if the interface height does not coincide with a grid row.
    """
    if nx < 1:
        raise MeshError("nx must be >= 1")
    if ny < 2 or ny % 2 != 0:
        raise MeshError("ny must be an even integer >= 2")
    if not (0.0 < interface_height < HEIGHT):
        raise MeshError("interface height must lie strictly inside the domain")
    j_float = interface_height * ny / HEIGHT
    j_int = round(j_float)
    if abs(j_float - j_int) > 1e-12 or not (0 < j_int < ny):
        raise MeshError(
            f"interface height {interface_height} does not coincide with a grid row")
    layout = layout or SegmentLayout()

    xs = np.linspace(0.0, WIDTH, nx + 1)
    ys = np.linspace(0.0, HEIGHT, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    phase = []
    for j in range(ny):
        cell_phase = SOLID if j < j_int else LIQUID
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
            phase.extend((cell_phase, cell_phase))
    triangles = np.array(tris, dtype=np.int64)
    phase = np.array(phase, dtype=np.int8)

    chain = np.array([vid(i, j_int) for i in range(nx + 1)], dtype=np.int64)

    facets = []
    markers = []
    for i in range(nx):  # bottom edge
        mid = 0.5 * (xs[i] + xs[i + 1])
        facets.append((vid(i, 0), vid(i + 1, 0)))
        markers.append(_segment_marker(mid, layout.cool_segments, "GammaCool")
                       or "GammaN")
    input_names = {}
    for k, (edge, lo, hi) in enumerate(layout.input_segments):
        input_names[(edge, lo, hi)] = f"GammaU-{k + 1}"
    for i in range(nx):  # top edge
        mid = 0.5 * (xs[i] + xs[i + 1])
        name = None
        for edge, lo, hi in layout.input_segments:
            if edge == "top" and lo <= mid < hi:
                name = input_names[(edge, lo, hi)]
                break
        facets.append((vid(i, ny), vid(i + 1, ny)))
        markers.append(name or "GammaN")
    for j in range(ny):  # vertical sides
        mid = 0.5 * (ys[j] + ys[j + 1])
        for edge, i_col in (("left", 0), ("right", nx)):
            name = None
            for e, lo, hi in layout.input_segments:
                if e == edge and lo <= mid < hi:
                    name = input_names[(e, lo, hi)]
                    break
            facets.append((vid(i_col, j), vid(i_col, j + 1)))
            markers.append(name or "GammaN")

    mesh = TriMesh(
        vertices=vertices, triangles=triangles, phase=phase,
        interface_chain=chain, boundary_facets=np.array(facets, dtype=np.int64),
        boundary_markers=tuple(markers), layout=layout, nx=nx, ny=ny,
        initial_min_area=0.0,
    )
    min_area = float(triangle_areas(vertices, triangles).min())
    return replace(mesh, initial_min_area=min_area)


def move_mesh(m: TriMesh, displacement: np.ndarray, dt: float) -> TriMesh:
    """Advect all vertices by dt * displacement, keeping connectivity.

    Rejects moves that tangle the mesh (any area below the fraction
    ``AREA_MIN_FRACTION`` of the initial minimum) or break the interface
    height-graph property.
    """
    displacement = np.asarray(displacement, dtype=float)
    if displacement.shape != m.vertices.shape:
        raise MeshError(f"displacement shape {displacement.shape} does not match "
                        f"vertex array {m.vertices.shape}")
    if dt <= 0:
        raise MeshError("dt must be positive")
    new_vertices = m.vertices + dt * displacement
    areas = triangle_areas(new_vertices, m.triangles)
    area_min = AREA_MIN_FRACTION * m.initial_min_area
    worst = int(np.argmin(areas))
    if areas[worst] <= area_min:
        raise TangleError(
            f"triangle {worst} has area {areas[worst]:.3e} <= {area_min:.3e}")
    chain_x = new_vertices[m.interface_chain, 0]
    if not np.all(np.diff(chain_x) > 0):
        raise TangleError("interface chain is no longer a height graph over x")
    return replace(m, vertices=new_vertices)


def mesh_quality(m: TriMesh):
    """Minimum triangle area and minimum interior angle in degrees."""
    p = m.vertices[m.triangles]
    areas = triangle_areas(m.vertices, m.triangles)
    min_angle = 180.0
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
    lengths = np.linalg.norm(e, axis=2)
    for k in range(3):
        a = e[(k + 1) % 3]
        b = -e[k]
        cosang = np.sum(a * b, axis=1) / (lengths[(k + 1) % 3] * lengths[k])
        ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        min_angle = min(min_angle, float(ang.min()))
    return float(areas.min()), min_angle


@dataclass(frozen=True)
class InterfaceDeviation:
    """Largest deviation of the interface from a reference height profile."""

    t: float
    x_star: float
    gamma_delta: float


def interface_deviation(m: TriMesh, ref_height, t: float = 0.0) -> InterfaceDeviation:
    """Scan interface vertices for the largest |reference - actual| height."""
    chain = m.interface_chain
    x = m.vertices[chain, 0]
    y = m.vertices[chain, 1]
    ref = np.array([ref_height(xi) for xi in x]) if callable(ref_height) \
        else np.full(x.shape, float(ref_height))
    diff = ref - y
    k = int(np.argmax(np.abs(diff)))
    return InterfaceDeviation(t=t, x_star=float(x[k]), gamma_delta=float(diff[k]))


def total_area(m: TriMesh) -> float:
    return float(triangle_areas(m.vertices, m.triangles).sum())


def dump_mesh(m: TriMesh) -> str:
    """Deterministic text dump: header, coordinates, triangles, marker table."""
    lines = [f"vertices {m.n_vertices} triangles {m.n_triangles}"]
    for x, y in m.vertices:
        lines.append(f"{x!r} {y!r}")
    for a, b, c in m.triangles:
        lines.append(f"{a} {b} {c}")
    for (a, b), marker in zip(m.boundary_facets, m.boundary_markers):
        lines.append(f"{a} {b} {marker}")
    lines.append("interface " + " ".join(str(v) for v in m.interface_chain))
    return "\n".join(lines) + "\n"
