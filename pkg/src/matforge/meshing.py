"""Built-in triangulators for the square-plate geometries.

Points come from an offset-row lattice (no cocircular degeneracies, so the
Delaunay triangulation is unique and deterministic) plus concentric node
rings on each hole boundary for local refinement.  Triangles whose centroid
falls inside a hole are dropped.  Hole-boundary nodes sit exactly on their
circles.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .fem import Mesh, MeshError, shape_gradients

EDGE_TOL = 1e-9


def structured_node_count(n):
    """Node count of the plain offset-row lattice on [0,1]^2 with n divisions."""
    n_rows = n + 1
    n_odd = n_rows // 2
    n_even = n_rows - n_odd
    return n_even * (n + 1) + n_odd * (n + 2)


def _lattice_points(n):
    h = 1.0 / n
    pts = []
    for j in range(n + 1):
        y = j * h
        if j % 2 == 0:
            xs = np.linspace(0.0, 1.0, n + 1)
        else:
            xs = np.concatenate([[0.0], (np.arange(n) + 0.5) * h, [1.0]])
        pts.append(np.column_stack([xs, np.full(xs.size, y)]))
    return np.vstack(pts)


def _ring_points(center, radius, n_points, offset):
    theta = offset + 2.0 * np.pi * np.arange(n_points) / n_points
    return np.column_stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)]
    )


def triangulate_plate(n, holes=(), refine=2):
    """Unit-square triangulation with optional circular holes.

    holes: iterable of ((cx, cy), r).  refine is the number of node rings per
    hole; ring spacing is half the lattice spacing.  Returns (nodes, elements)
    with counterclockwise elements.
    """
    if n < 2:
        raise MeshError("need at least 2 divisions per side")
    h = 1.0 / n
    hr = 0.5 * h
    holes = [((float(cx), float(cy)), float(r)) for (cx, cy), r in holes]
    ring_extent = (refine - 1) * hr if holes else 0.0
    for (cx, cy), r in holes:
        if r < 0:
            raise MeshError("hole radius must be nonnegative")
        clearance = r + ring_extent + hr
        if min(cx, cy, 1.0 - cx, 1.0 - cy) < clearance:
            raise MeshError(
                f"hole at ({cx}, {cy}) with radius {r} comes within {clearance:.3f} "
                "of the plate boundary"
            )
    holes = [hole for hole in holes if hole[1] > 0.0]

    points = [_lattice_points(n)]
    keep = np.ones(points[0].shape[0], dtype=bool)
    for (cx, cy), r in holes:
        d = np.hypot(points[0][:, 0] - cx, points[0][:, 1] - cy)
        keep &= d > r + ring_extent + 0.45 * h
        for k in range(refine):
            rho = r + k * hr
            n_ring = max(12, int(np.ceil(2.0 * np.pi * rho / hr)))
            points.append(_ring_points((cx, cy), rho, n_ring, offset=0.5 * k * np.pi / n_ring))
    points[0] = points[0][keep]
    nodes = np.vstack(points)

    tri = Delaunay(nodes)
    elements = tri.simplices.astype(int)
    centroids = nodes[elements].mean(axis=1)
    inside = np.zeros(elements.shape[0], dtype=bool)
    for (cx, cy), r in holes:
        inside |= np.hypot(centroids[:, 0] - cx, centroids[:, 1] - cy) < r
    elements = elements[~inside]

    # enforce counterclockwise orientation
    x = nodes[elements]
    cross = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (
        x[:, 1, 1] - x[:, 0, 1]
    ) * (x[:, 2, 0] - x[:, 0, 0])
    flip = cross < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]

    # drop unreferenced nodes (interior hole nodes are gone with their triangles)
    used = np.unique(elements)
    remap = -np.ones(nodes.shape[0], dtype=int)
    remap[used] = np.arange(used.size)
    return nodes[used], remap[elements]


def _edge_nodes(nodes, axis, value):
    return np.flatnonzero(np.abs(nodes[:, axis] - value) < EDGE_TOL)


def _group(nodes_idx, axis):
    return np.column_stack([nodes_idx, np.full(nodes_idx.size, axis, dtype=int)])


def training_mesh(n=24, hole_center=(0.25, 0.25), hole_radius=0.15, refine=2):
    """Square plate with an off-centre hole for the biaxial-tension experiment.

    Fixed-dof groups follow the loading: bottom edge u_y, left edge u_x,
    top edge u_y (pulled), right edge u_x (pulled at half rate).
    """
    nodes, elements = triangulate_plate(n, holes=[(hole_center, hole_radius)], refine=refine)
    groups = {
        "bottom-y": _group(_edge_nodes(nodes, 1, 0.0), 1),
        "left-x": _group(_edge_nodes(nodes, 0, 0.0), 0),
        "top-y": _group(_edge_nodes(nodes, 1, 1.0), 1),
        "right-x": _group(_edge_nodes(nodes, 0, 1.0), 0),
    }
    mesh = Mesh(nodes=nodes, elements=elements, groups=groups)
    shape_gradients(mesh)  # validates element areas
    return mesh


BENCHMARKS = {
    "square": [],
    "one-hole": [((0.5, 0.5), 0.2)],
    "three-holes": [((0.2, 0.2), 0.1), ((0.8, 0.2), 0.1), ((0.5, 0.8), 0.1)],
}


def benchmark_mesh(kind, resolution=64, refine=2):
    """The three deployment plates: clamped bottom edge, pressure-loaded top."""
    try:
        holes = BENCHMARKS[kind]
    except KeyError:
        raise MeshError(f"unknown benchmark {kind!r}; choose from {sorted(BENCHMARKS)}")
    nodes, elements = triangulate_plate(resolution, holes=holes, refine=refine)
    bottom = _edge_nodes(nodes, 1, 0.0)
    groups = {
        "bottom-x": _group(bottom, 0),
        "bottom-y": _group(bottom, 1),
    }
    mesh = Mesh(nodes=nodes, elements=elements, groups=groups)
    shape_gradients(mesh)
    return mesh


def top_edge_segments(mesh):
    """Consecutive (node_a, node_b, length) along the y = 1 edge."""
    top = _edge_nodes(mesh.nodes, 1, 1.0)
    order = np.argsort(mesh.nodes[top, 0])
    top = top[order]
    xs = mesh.nodes[top, 0]
    return [(int(top[i]), int(top[i + 1]), float(xs[i + 1] - xs[i])) for i in range(top.size - 1)]
