"""P1 finite element assembly for the linearized two-phase Stefan system.

Assembles the block matrices of the coupled temperature / mesh-velocity
system on a given mesh: mass, diffusion, convection coupling, harmonic
extension with weak interface data, boundary control, and output operators.
The interface Dirichlet condition is replaced by an auxiliary decay ODE on
the interface temperature dofs ("tilde" modification), which keeps those
dofs in the state vector.  The two chain endpoints sit on the slip walls
as much as on the interface; they are classified as live heat dofs, so a
wall measurement at the interface height stays coupled to the interface
motion through the mesh-velocity convection term instead of being frozen
by the decay ODE.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
import json

import numpy as np
import scipy.sparse as sp

from .mesh import LIQUID, SOLID, TriMesh, triangle_areas
from . import linalg


@dataclass(frozen=True)
class PhysicalParams:
    """Material and horizon parameters of the Stefan model."""

    k_s: float = 6.0
    k_l: float = 10.0
    theta_cool: float = -1.0
    theta_melt: float = 0.0
    latent_heat: float = 10.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.k_s <= 0 or self.k_l <= 0 or self.latent_heat <= 0:
            raise ValueError("conductivities and latent heat must be positive")
        if self.theta_cool >= self.theta_melt:
            raise ValueError("theta_cool must lie below theta_melt")

    def theta_initial(self, vertices: np.ndarray) -> np.ndarray:
        """Initial field theta_cool * (1 - 2 x2): cold bottom, warm top."""
        return self.theta_cool * (1.0 - 2.0 * vertices[:, 1])


def alpha_field(m: TriMesh, params: PhysicalParams) -> np.ndarray:
    """Per-triangle conductivity: k_s on solid cells, k_l on liquid cells."""
    return np.where(m.phase == SOLID, params.k_s, params.k_l)


# ---------------------------------------------------------------------------
# Output specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointOutput:
    x: float
    y: float


@dataclass(frozen=True)
class IntervalOutput:
    """Average of the temperature over a boundary interval.

    ``edge`` is one of "left", "right", "bottom", "top"; lo/hi are the
    coordinates along that edge.
    """

    edge: str
    lo: float
    hi: float


@dataclass(frozen=True)
class InterfaceJumpOutput:
    """Net conductive-flux jump across the interface (interface speed scale)."""


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DofMap:
    """Retained degrees of freedom after outer Dirichlet elimination.

    Temperature dofs are ordered interior-first, interface-chain-last, so
    the tilde modification operates on a trailing block.  Mesh-velocity
    dofs are the retained (vertex, component) pairs in lexicographic order.
    """

    n_vertices: int
    theta_vertices: np.ndarray      # vertex index per retained theta dof
    n_interface: int                # trailing dofs that sit on the interface
    ups_components: np.ndarray      # retained global indices 2*vertex + comp
    theta_eliminated: np.ndarray
    ups_eliminated: np.ndarray

    @property
    def n_theta(self):
        return self.theta_vertices.size

    @property
    def n_interior(self):
        return self.n_theta - self.n_interface

    @property
    def n_ups(self):
        return self.ups_components.size

    def vertex_to_theta(self) -> np.ndarray:
        """Inverse map vertex -> theta dof index, -1 for eliminated."""
        inv = np.full(self.n_vertices, -1, dtype=np.int64)
        inv[self.theta_vertices] = np.arange(self.n_theta)
        return inv


def _boundary_vertex_sets(m: TriMesh):
    cool, heat, neumann = set(), set(), set()
    for (a, b), marker in zip(m.boundary_facets, m.boundary_markers):
        target = cool if marker.startswith("GammaCool") else \
            heat if marker.startswith("GammaU") else neumann
        target.update((int(a), int(b)))
    return cool, heat, neumann


def build_dofmap(m: TriMesh, eliminate: bool = True) -> DofMap:
    """Classify dofs: theta is eliminated on the cooling boundary; mesh
    velocity on the cooling and heating boundaries (both components) and in
    the wall-normal direction elsewhere on the outer boundary (slip)."""
    nv = m.n_vertices
    # the chain endpoints are triple points shared with the slip walls and
    # stay live heat dofs; only the open part of the chain carries the
    # interface decay ODE
    interface = m.interface_chain[1:-1]
    if not eliminate:
        mask = np.ones(nv, dtype=bool)
        mask[interface] = False
        theta_vertices = np.concatenate([np.flatnonzero(mask), interface])
        return DofMap(nv, theta_vertices, interface.size,
                      np.arange(2 * nv), np.array([], dtype=np.int64),
                      np.array([], dtype=np.int64))

    cool, heat, neumann = _boundary_vertex_sets(m)
    dirichlet_theta = np.array(sorted(cool), dtype=np.int64)

    ups_elim = set()
    for v in cool | heat:
        ups_elim.update((2 * v, 2 * v + 1))
    # slip on the remaining outer boundary: kill the wall-normal component,
    # identified from the facet orientation (vertical wall -> e_x normal)
    for (a, b), marker in zip(m.boundary_facets, m.boundary_markers):
        if marker != "GammaN":
            continue
        d = m.vertices[b] - m.vertices[a]
        comp = 0 if abs(d[0]) < abs(d[1]) else 1
        for v in (int(a), int(b)):
            if v not in cool and v not in heat:
                ups_elim.add(2 * v + comp)

    theta_keep = np.ones(nv, dtype=bool)
    theta_keep[dirichlet_theta] = False
    on_interface = np.zeros(nv, dtype=bool)
    on_interface[interface] = True
    if not theta_keep[interface].all():
        raise ValueError("interface dofs collide with the Dirichlet boundary")
    interior = np.flatnonzero(theta_keep & ~on_interface)
    theta_vertices = np.concatenate([interior, interface])

    ups_elim = np.array(sorted(ups_elim), dtype=np.int64)
    ups_keep = np.ones(2 * nv, dtype=bool)
    ups_keep[ups_elim] = False
    return DofMap(nv, theta_vertices, interface.size,
                  np.flatnonzero(ups_keep), dirichlet_theta, ups_elim)


# ---------------------------------------------------------------------------
# Element kernels (vectorized over all triangles)
# ---------------------------------------------------------------------------

_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0],
                           [1.0, 2.0, 1.0],
                           [1.0, 1.0, 2.0]]) / 12.0


def _p1_gradients(m: TriMesh):
    """Per-triangle constant basis gradients (nt, 3, 2) and areas (nt,)."""
    p = m.vertices[m.triangles]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    areas = triangle_areas(m.vertices, m.triangles)
    grads = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    return grads, areas


def _scatter(rows, cols, vals, shape):
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return A.tocsr()


def mass_matrix(m: TriMesh) -> sp.csr_matrix:
    """Vertex mass matrix, exact for P1 products."""
    tri = m.triangles
    _, areas = _p1_gradients(m)
    vals = areas[:, None, None] * _MASS_TEMPLATE
    rows = np.broadcast_to(tri[:, :, None], vals.shape)
    cols = np.broadcast_to(tri[:, None, :], vals.shape)
    return _scatter(rows, cols, vals, (m.n_vertices, m.n_vertices))


def stiffness_matrix(m: TriMesh, coeff: np.ndarray | float = 1.0) -> sp.csr_matrix:
    """Stiffness matrix int coeff grad(u).grad(v) with per-triangle coeff."""
    tri = m.triangles
    grads, areas = _p1_gradients(m)
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), areas.shape)
    vals = np.einsum("tid,tjd->tij", grads, grads) * (coeff * areas)[:, None, None]
    rows = np.broadcast_to(tri[:, :, None], vals.shape)
    cols = np.broadcast_to(tri[:, None, :], vals.shape)
    return _scatter(rows, cols, vals, (m.n_vertices, m.n_vertices))


def convection_matrix(m: TriMesh, velocity: np.ndarray) -> sp.csr_matrix:
    """Matrix of int (velocity . grad(theta)) v for a given nodal velocity."""
    tri = m.triangles
    grads, areas = _p1_gradients(m)
    vel = velocity[tri]                                   # (nt, 3, 2)
    # int (w . grad phi_j) phi_i = sum_k Mloc_ik (w_k . grad phi_j)
    wdotg = np.einsum("tkd,tjd->tkj", vel, grads)
    vals = areas[:, None, None] * np.einsum("ik,tkj->tij", _MASS_TEMPLATE, wdotg)
    rows = np.broadcast_to(tri[:, :, None], vals.shape)
    cols = np.broadcast_to(tri[:, None, :], vals.shape)
    return _scatter(rows, cols, vals, (m.n_vertices, m.n_vertices))


def _facet_lengths(m: TriMesh, facets: np.ndarray) -> np.ndarray:
    d = m.vertices[facets[:, 1]] - m.vertices[facets[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def _interface_normals(m: TriMesh):
    """Unit normals per interface facet, pointing from solid into liquid."""
    facets = m.interface_facets
    t = m.vertices[facets[:, 1]] - m.vertices[facets[:, 0]]
    lengths = np.hypot(t[:, 0], t[:, 1])
    normals = np.column_stack([-t[:, 1], t[:, 0]]) / lengths[:, None]
    return facets, normals, lengths


def _interface_adjacency(m: TriMesh):
    """Per interface facet: (solid triangle, liquid triangle) sharing it."""
    edge_map: dict = {}
    for t, tri in enumerate(m.triangles):
        for k in range(3):
            e = frozenset((int(tri[k]), int(tri[(k + 1) % 3])))
            edge_map.setdefault(e, []).append(t)
    pairs = []
    for a, b in m.interface_facets:
        tris = edge_map[frozenset((int(a), int(b)))]
        if len(tris) != 2:
            raise ValueError("interface facet is not interior to the mesh")
        phases = [m.phase[t] for t in tris]
        if sorted(phases) != [SOLID, LIQUID]:
            raise ValueError("phase tags inconsistent with the interface")
        solid = tris[0] if phases[0] == SOLID else tris[1]
        liquid = tris[1] if phases[0] == SOLID else tris[0]
        pairs.append((solid, liquid))
    return pairs


def _jump_row_coefficients(m: TriMesh, params: PhysicalParams):
    """For each interface facet, the map theta -> conductive-flux jump.

    Returns per facet: (vertex indices, coefficients) so that
    sum_j coeff_j * theta_j = (1/latent_heat) [k grad theta] . n on the facet
    (piecewise constant per facet), plus facet normals and lengths.
    """
    grads, _ = _p1_gradients(m)
    facets, normals, lengths = _interface_normals(m)
    pairs = _interface_adjacency(m)
    entries = []
    for f, (ts, tl) in enumerate(pairs):
        n = normals[f]
        verts = np.concatenate([m.triangles[ts], m.triangles[tl]])
        coeff = np.concatenate([
            params.k_s * grads[ts] @ n,
            -params.k_l * grads[tl] @ n,
        ]) / params.latent_heat
        entries.append((verts, coeff))
    return facets, normals, lengths, entries


# ---------------------------------------------------------------------------
# Block system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSystem:
    """FEM blocks of the linearized Stefan system at one instant.

    Plain blocks act on retained dofs; the tilde blocks additionally carry
    the interface decay ODE in the trailing theta dofs.
    """

    t: float
    dofmap: DofMap
    M_theta: sp.csr_matrix
    A_theta_theta: sp.csr_matrix
    A_theta_V: sp.csr_matrix
    A_V_V: sp.csr_matrix
    A_V_theta: sp.csr_matrix
    B_theta: sp.csr_matrix
    C_theta: sp.csr_matrix
    M_tilde: sp.csr_matrix | None = None
    A_tt_tilde: sp.csr_matrix | None = None
    A_tV_tilde: sp.csr_matrix | None = None
    A_Vt_tilde: sp.csr_matrix | None = None

    @property
    def n(self):
        return self.dofmap.n_theta

    @property
    def n_ups(self):
        return self.dofmap.n_ups


def build_tilde(bs: BlockSystem) -> BlockSystem:
    """Replace the interface Dirichlet rows by the decay ODE block form.

    On the (interior, interface) split the mass becomes blkdiag(M_II, I),
    the drift gains a -I interface diagonal with the interior->interface
    coupling kept only in the interior rows, and the velocity coupling rows
    of the interface dofs are zeroed.
    """
    dm = bs.dofmap
    ni, ng = dm.n_interior, dm.n_interface
    M = bs.M_theta.tocsr()
    A = bs.A_theta_theta.tocsr()
    if ng == 0:
        return replace(bs, M_tilde=M, A_tt_tilde=A,
                       A_tV_tilde=bs.A_theta_V, A_Vt_tilde=bs.A_V_theta)
    M_tilde = sp.bmat([
        [M[:ni, :ni], None],
        [None, sp.identity(ng, format="csr")],
    ], format="csr")
    A_tt = sp.bmat([
        [A[:ni, :ni], A[:ni, ni:]],
        [None, -sp.identity(ng, format="csr")],
    ], format="csr")
    A_tV = sp.bmat([
        [bs.A_theta_V.tocsr()[:ni]],
        [sp.csr_matrix((ng, dm.n_ups))],
    ], format="csr")
    return replace(bs, M_tilde=M_tilde, A_tt_tilde=A_tt,
                   A_tV_tilde=A_tV, A_Vt_tilde=bs.A_V_theta.tocsr())


def assemble_blocks(m: TriMesh, theta_ref: np.ndarray,
                    alpha_ref: np.ndarray, params: PhysicalParams,
                    input_segments: list | None = None,
                    output_spec: list | None = None,
                    t: float = 0.0, eliminate: bool = True) -> BlockSystem:
    """Assemble all blocks of the linearized system around ``theta_ref``.

    ``theta_ref`` is nodal over all vertices, ``alpha_ref`` per triangle.
    ``input_segments`` defaults to the mesh's marked heating segments.
    """
    theta_ref = np.asarray(theta_ref, dtype=float)
    if theta_ref.shape != (m.n_vertices,):
        raise ValueError("theta_ref must be nodal over all vertices")
    if input_segments is None:
        input_segments = [f"GammaU-{k + 1}"
                          for k in range(m.layout.n_inputs())]
    if len(input_segments) == 0:
        raise ValueError("at least one input segment is required")
    dm = build_dofmap(m, eliminate=eliminate)
    nv = m.n_vertices

    grads, areas = _p1_gradients(m)
    tri = m.triangles

    M_full = mass_matrix(m)
    A_tt_full = -stiffness_matrix(m, alpha_ref)

    # convection coupling: velocity trial against the reference gradient
    g_ref = np.einsum("tjd,tj->td", grads, theta_ref[tri])   # (nt, 2)
    rows, cols, vals = [], [], []
    for comp in range(2):
        v = areas[:, None, None] * _MASS_TEMPLATE \
            * g_ref[:, comp][:, None, None]
        rows.append(np.broadcast_to(tri[:, :, None], v.shape).ravel())
        cols.append((2 * np.broadcast_to(tri[:, None, :], v.shape) + comp).ravel())
        vals.append(v.ravel())
    A_tV_full = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, 2 * nv)).tocsr()

    # harmonic extension in the interior rows; the interface-component rows
    # carry only the chain edge mass, so solving the velocity constraint
    # imposes the flux-jump velocity on the chain (a weak Dirichlet
    # condition) and extends it harmonically into the bulk.  Keeping the
    # stiffness in the interface rows would turn the constraint into a
    # Robin condition and scale the interface response of the model away
    # from that of the nonlinear plant.
    K1 = stiffness_matrix(m, 1.0).tocoo()
    rows = np.concatenate([2 * K1.row, 2 * K1.row + 1])
    cols = np.concatenate([2 * K1.col, 2 * K1.col + 1])
    vals = np.concatenate([K1.data, K1.data])
    iface_comp = np.zeros(2 * nv, dtype=bool)
    iface_comp[2 * m.interface_chain] = True
    iface_comp[2 * m.interface_chain + 1] = True
    keep = ~iface_comp[rows]
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    facets, normals, lengths, jump_entries = _jump_row_coefficients(m, params)
    edge_template = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for f, (a, b) in enumerate(facets):
        loc = -lengths[f] * edge_template
        for comp in range(2):
            ids = np.array([2 * a + comp, 2 * b + comp])
            rows = np.append(rows, np.repeat(ids, 2))
            cols = np.append(cols, np.tile(ids, 2))
            vals = np.append(vals, loc.ravel())
    A_VV_full = sp.coo_matrix((vals, (rows, cols)),
                              shape=(2 * nv, 2 * nv)).tocsr()

    # interface data rows: flux jump paired with the normal test component
    rows, cols, vals = [], [], []
    for f, (a, b) in enumerate(facets):
        verts, coeff = jump_entries[f]
        n = normals[f]
        for w, wweight in ((a, 0.5 * lengths[f]), (b, 0.5 * lengths[f])):
            for comp in range(2):
                rows.extend([2 * w + comp] * verts.size)
                cols.extend(verts)
                vals.extend(coeff * (n[comp] * wweight))
    A_Vt_full = sp.coo_matrix((vals, (rows, cols)),
                              shape=(2 * nv, nv)).tocsr()

    # boundary control: int_{segment} k_l u v per input column
    rows, cols, vals = [], [], []
    for j, marker in enumerate(input_segments):
        seg = m.facets_with_marker(marker)
        if seg.size == 0:
            raise ValueError(f"input segment {marker!r} has no facets")
        lens = _facet_lengths(m, seg)
        for (a, b), ln in zip(seg, lens):
            rows.extend([a, b])
            cols.extend([j, j])
            vals.extend([0.5 * params.k_l * ln] * 2)
    B_full = sp.coo_matrix((vals, (rows, cols)),
                           shape=(nv, len(input_segments))).tocsr()

    C_full = _output_matrix_full(m, output_spec or [], params)

    tv, uc = dm.theta_vertices, dm.ups_components
    bs = BlockSystem(
        t=t, dofmap=dm,
        M_theta=M_full[tv][:, tv],
        A_theta_theta=A_tt_full[tv][:, tv],
        A_theta_V=A_tV_full[tv][:, uc],
        A_V_V=A_VV_full[uc][:, uc],
        A_V_theta=A_Vt_full[uc][:, tv],
        B_theta=B_full[tv],
        C_theta=C_full[:, tv],
    )
    return build_tilde(bs)


def _output_matrix_full(m: TriMesh, spec: list,
                        params: PhysicalParams) -> sp.csr_matrix:
    nv = m.n_vertices
    rows, cols, vals = [], [], []
    xmax = m.vertices[:, 0].max()
    ymax = m.vertices[:, 1].max()
    for r, out in enumerate(spec):
        if isinstance(out, PointOutput):
            d = np.hypot(m.vertices[:, 0] - out.x, m.vertices[:, 1] - out.y)
            v = int(np.argmin(d))
            if d[v] > 1e-10:
                raise ValueError(f"output point ({out.x}, {out.y}) "
                                 "is not a mesh vertex")
            rows.append(r)
            cols.append(v)
            vals.append(1.0)
        elif isinstance(out, IntervalOutput):
            axis, fixed = (1, {"left": 0.0, "right": xmax}[out.edge]) \
                if out.edge in ("left", "right") \
                else (0, {"bottom": 0.0, "top": ymax}[out.edge])
            weights = np.zeros(nv)
            total = 0.0
            for a, b in m.boundary_facets:
                pa, pb = m.vertices[a], m.vertices[b]
                if abs(pa[1 - axis] - fixed) > 1e-12 \
                        or abs(pb[1 - axis] - fixed) > 1e-12:
                    continue
                sa, sb = pa[axis], pb[axis]
                if min(sa, sb) < out.lo - 1e-12 or max(sa, sb) > out.hi + 1e-12:
                    continue
                ln = np.hypot(*(pb - pa))
                weights[a] += 0.5 * ln
                weights[b] += 0.5 * ln
                total += ln
            if total == 0.0:
                raise ValueError(f"interval output {out} matches no facets")
            nz = np.flatnonzero(weights)
            rows.extend([r] * nz.size)
            cols.extend(nz)
            vals.extend(weights[nz] / total)
        elif isinstance(out, InterfaceJumpOutput):
            facets, _, lengths, entries = _jump_row_coefficients(m, params)
            for f in range(len(facets)):
                verts, coeff = entries[f]
                rows.extend([r] * verts.size)
                cols.extend(verts)
                vals.extend(coeff * lengths[f])
        else:
            raise TypeError(f"unknown output spec entry {out!r}")
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(len(spec), nv)).tocsr()


def output_matrix(m: TriMesh, spec: list,
                  params: PhysicalParams | None = None) -> sp.csr_matrix:
    """Output operator C with one row per requested measurement.

    Columns follow the retained-theta dof ordering of :func:`build_dofmap`.
    """
    params = params or PhysicalParams()
    dm = build_dofmap(m)
    return _output_matrix_full(m, spec, params)[:, dm.theta_vertices]


def jump_velocity(m: TriMesh, theta: np.ndarray,
                  params: PhysicalParams) -> np.ndarray:
    """Interface velocity vectors from the Stefan condition.

    Per interface vertex: (1/latent_heat) (k_s grad(theta)|_solid
    - k_l grad(theta)|_liquid) . n, times the unit normal n (pointing from
    solid to liquid).  One-sided gradients are area-weighted averages over
    the adjacent triangles of each phase.
    """
    theta = np.asarray(theta, dtype=float)
    chain = m.interface_chain
    melt_err = np.abs(theta[chain] - params.theta_melt).max()
    if melt_err > 1e-8:
        raise ValueError(f"interface temperature violates the melt "
                         f"condition by {melt_err:.2e}")
    grads, areas = _p1_gradients(m)
    g_tri = np.einsum("tjd,tj->td", grads, theta[m.triangles])

    on_chain = np.zeros(m.n_vertices, dtype=bool)
    on_chain[chain] = True
    chain_pos = np.full(m.n_vertices, -1, dtype=np.int64)
    chain_pos[chain] = np.arange(chain.size)

    acc = np.zeros((2, chain.size, 2))   # per side: sum of area*gradient
    wsum = np.zeros((2, chain.size))
    touching = np.flatnonzero(on_chain[m.triangles].any(axis=1))
    for t in touching:
        side = 0 if m.phase[t] == SOLID else 1
        for v in m.triangles[t]:
            k = chain_pos[v]
            if k >= 0:
                acc[side, k] += areas[t] * g_tri[t]
                wsum[side, k] += areas[t]
    if (wsum == 0).any():
        raise ValueError("interface vertex lacks an adjacent phase triangle")
    g_s = acc[0] / wsum[0][:, None]
    g_l = acc[1] / wsum[1][:, None]

    # vertex normals: average of adjacent facet normals
    _, fnormals, flengths = _interface_normals(m)
    vn = np.zeros((chain.size, 2))
    vn[:-1] += fnormals * flengths[:, None]
    vn[1:] += fnormals * flengths[:, None]
    vn /= np.linalg.norm(vn, axis=1)[:, None]

    speed = np.einsum("kd,kd->k", params.k_s * g_s - params.k_l * g_l, vn) \
        / params.latent_heat
    return speed[:, None] * vn


def dump_blocks(bs: BlockSystem, directory) -> None:
    """Write every block as a Matrix Market file plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blocks = {
        "M_theta": bs.M_theta, "A_theta_theta": bs.A_theta_theta,
        "A_theta_V": bs.A_theta_V, "A_V_V": bs.A_V_V,
        "A_V_theta": bs.A_V_theta, "B_theta": bs.B_theta,
        "C_theta": bs.C_theta, "M_tilde": bs.M_tilde,
        "A_tt_tilde": bs.A_tt_tilde, "A_tV_tilde": bs.A_tV_tilde,
        "A_Vt_tilde": bs.A_Vt_tilde,
    }
    manifest = {"t": bs.t, "blocks": {}}
    for name, block in blocks.items():
        if block is None:
            continue
        linalg.save_matrix_market(directory / f"{name}.mtx", block)
        manifest["blocks"][name] = {"rows": block.shape[0],
                                    "cols": block.shape[1],
                                    "file": f"{name}.mtx"}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_blocks(directory) -> dict:
    """Load a dumped block set back as a name -> CSR matrix dict."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {"t": manifest["t"]}
    for name, info in manifest["blocks"].items():
        out[name] = linalg.load_matrix_market(directory / info["file"])
    return out
