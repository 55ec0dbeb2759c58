"""Plane-strain finite elements on linear triangles with one-point quadrature.

Constant shape-function gradients make the internal-force integral exact for
the constant per-element stress, matching the full-field nodal data the rest
of the package consumes.  Degrees of freedom are numbered 2*node + axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kinematics import EYE2

AREA_FLOOR = 1e-12


class MeshError(ValueError):
    pass


class NewtonError(RuntimeError):
    """Newton iteration failed; carries the residual history."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


@dataclass
class Mesh:
    """Triangulated reference geometry with named boundary-dof groups.

    groups maps a name to an integer array of (node, axis) rows; those dofs
    are the fixed ones, and each doubles as a reaction-force "load cell".
    """

    nodes: np.ndarray  # (N, 2) reference coordinates
    elements: np.ndarray  # (E, 3) node triples, counterclockwise
    groups: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    def group_dofs(self, name):
        pairs = self.groups[name]
        return 2 * pairs[:, 0] + pairs[:, 1]

    def fixed_dofs(self):
        """All grouped dofs; raises if a dof appears in two groups."""
        if not self.groups:
            return np.empty(0, dtype=int)
        parts = [self.group_dofs(name) for name in self.groups]
        all_dofs = np.concatenate(parts)
        if np.unique(all_dofs).size != all_dofs.size:
            raise MeshError("a fixed dof belongs to more than one group")
        return all_dofs

    def free_mask(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.fixed_dofs()] = False
        return mask


def validate_mesh(mesh):
    if mesh.elements.min(initial=0) < 0 or mesh.elements.max(initial=-1) >= mesh.n_nodes:
        raise MeshError("element references a node out of range")
    _, areas = shape_gradients(mesh)
    if np.any(areas <= AREA_FLOOR):
        raise MeshError(f"{int(np.sum(areas <= AREA_FLOOR))} degenerate element(s)")
    mesh.fixed_dofs()
    return mesh


def shape_gradients(mesh):
    """Constant gradients of the linear shape functions, (E, 3, 2), and areas.

    For the unit right triangle the rows are (-1,-1), (1,0), (0,1).
    """
    x = mesh.nodes[mesh.elements]  # (E, 3, 2)
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * det
    if np.any(areas <= AREA_FLOOR):
        bad = int(np.argmin(areas))
        raise MeshError(f"element {bad} has area {areas[bad]:.3e}")
    # grad N_r = J^{-T} grad_ref N_r with reference gradients (-1,-1), (1,0), (0,1)
    inv_t = np.empty((mesh.n_elements, 2, 2))
    inv_t[:, 0, 0] = e2[:, 1]
    inv_t[:, 0, 1] = -e1[:, 1]
    inv_t[:, 1, 0] = -e2[:, 0]
    inv_t[:, 1, 1] = e1[:, 0]
    inv_t /= det[:, None, None]
    grads = np.empty((mesh.n_elements, 3, 2))
    grads[:, 1] = inv_t[:, :, 0]
    grads[:, 2] = inv_t[:, :, 1]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return grads, areas


def element_deformation_gradients(mesh, u, grads=None):
    """F = I + sum_r u_r (x) grad N_r per element, shape (E, 2, 2)."""
    if grads is None:
        grads, _ = shape_gradients(mesh)
    ue = u.reshape(-1, 2)[mesh.elements]  # (E, 3, 2)
    return EYE2 + np.einsum("eri,erk->eik", ue, grads)


def internal_forces(mesh, u, model, grads=None, areas=None):
    """Assembled internal nodal forces, shape (n_dofs,)."""
    if grads is None:
        grads, areas = shape_gradients(mesh)
    F = element_deformation_gradients(mesh, u, grads)
    P = model.stress(F)
    contrib = np.einsum("e,ejk,erk->erj", areas, P, grads)
    out = np.zeros(mesh.n_dofs)
    np.add.at(out, 2 * mesh.elements[:, :, None] + np.arange(2), contrib)
    return out


def assembly_operator(mesh, grads=None, areas=None):
    """Sparse map from per-element stress entries to nodal forces.

    Columns are indexed by (element, j, k) in C order; entry weights are
    A_e dN_r/dX_k at row dof (node r, j).  forces = B @ vec(P).
    """
    if grads is None:
        grads, areas = shape_gradients(mesh)
    E = mesh.n_elements
    rows = (2 * mesh.elements[:, :, None, None] + np.arange(2)[None, None, :, None]) * np.ones(
        (1, 1, 1, 2), dtype=int
    )
    cols = (
        4 * np.arange(E)[:, None, None, None]
        + 2 * np.arange(2)[None, None, :, None]
        + np.arange(2)[None, None, None, :]
    ) * np.ones((1, 3, 1, 1), dtype=int)
    vals = np.einsum("e,erk->erk", areas, grads)[:, :, None, :] * np.ones((1, 1, 2, 1))
    B = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_dofs, 4 * E)
    )
    return B.tocsr()


def assemble_tangent(mesh, u, model, grads=None, areas=None):
    """Global stiffness dF_int/du as CSR, (n_dofs, n_dofs)."""
    if grads is None:
        grads, areas = shape_gradients(mesh)
    F = element_deformation_gradients(mesh, u, grads)
    C4 = model.tangent(F)
    ke = np.einsum("e,erk,ejkln,ebn->erjbl", areas, grads, C4, grads)
    dofs = 2 * mesh.elements[:, :, None] + np.arange(2)  # (E, 3, 2)
    dofs = dofs.reshape(-1, 6)
    rows = np.repeat(dofs, 6, axis=1)
    cols = np.tile(dofs, (1, 6))
    K = sp.coo_matrix(
        (ke.reshape(-1, 36).ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_dofs, mesh.n_dofs),
    )
    return K.tocsr()


def newton_solve(
    mesh,
    model,
    bc_values,
    u0=None,
    external=None,
    tol=1e-8,
    max_iter=25,
):
    """Solve equilibrium with prescribed fixed-dof values.

    bc_values: full-length dof array; entries at fixed dofs are prescribed,
    the rest are ignored.  Returns (u as (N, 2), residual history).
    """
    grads, areas = shape_gradients(mesh)
    free = mesh.free_mask()
    u = np.zeros(mesh.n_dofs) if u0 is None else np.asarray(u0, dtype=float).ravel().copy()
    u[~free] = bc_values[~free]
    f_ext = np.zeros(mesh.n_dofs) if external is None else external

    def residual_at(v):
        return internal_forces(mesh, v, model, grads, areas) - f_ext

    residuals = []
    try:
        r = residual_at(u)
    except Exception as err:
        raise NewtonError(f"initial state not evaluable: {err}", residuals)
    for _ in range(max_iter):
        res = np.max(np.abs(r[free])) if free.any() else 0.0
        residuals.append(float(res))
        if res <= tol:
            return u.reshape(-1, 2), residuals
        K = assemble_tangent(mesh, u, model, grads, areas)
        Kff = K[free][:, free].tocsc()
        try:
            du = spla.spsolve(Kff, -r[free])
        except RuntimeError as err:
            raise NewtonError(f"singular tangent: {err}", residuals)
        if not np.all(np.isfinite(du)):
            raise NewtonError("Newton update is not finite", residuals)
        # full step unless it lands on an inverted element or a non-finite
        # state; then halve (plain Newton otherwise)
        step = 1.0
        for _ in range(8):
            trial = u.copy()
            trial[free] += step * du
            try:
                r_trial = residual_at(trial)
            except Exception:
                step *= 0.5
                continue
            if np.all(np.isfinite(r_trial[free])):
                break
            step *= 0.5
        else:
            raise NewtonError(
                f"step rejected after backtracking (residual {res:.3e})", residuals
            )
        u, r = trial, r_trial
    raise NewtonError(
        f"no convergence in {max_iter} iterations (last residual {residuals[-1]:.3e})",
        residuals,
    )


def reaction_forces(mesh, u, model, grads=None, areas=None):
    """Group-summed internal forces at the fixed dofs (one scalar per group)."""
    f = internal_forces(mesh, u, model, grads, areas)
    return {name: float(np.sum(f[mesh.group_dofs(name)])) for name in mesh.groups}


# --- mesh text format ---------------------------------------------------------


def save_mesh(mesh, path_or_file):
    if hasattr(path_or_file, "write"):
        _write_mesh(mesh, path_or_file)
    else:
        with open(path_or_file, "w") as f:
            _write_mesh(mesh, f)


def _write_mesh(mesh, f):
    f.write("mesh v1\n")
    f.write(f"nodes {mesh.n_nodes}\n")
    for x, y in mesh.nodes:
        f.write(f"{float(x)!r} {float(y)!r}\n")
    f.write(f"elements {mesh.n_elements}\n")
    for a, b, c in mesh.elements:
        f.write(f"{a} {b} {c}\n")
    for name, pairs in mesh.groups.items():
        f.write(f"group {name} {len(pairs)}\n")
        for node, axis in pairs:
            f.write(f"{node} {axis}\n")


def load_mesh(path_or_file):
    if hasattr(path_or_file, "read"):
        return _read_mesh(path_or_file)
    with open(path_or_file) as f:
        return _read_mesh(f)


def _read_mesh(f, sentinel=None):
    header = f.readline().strip()
    if header != "mesh v1":
        raise MeshError(f"unsupported mesh header {header!r}")
    tok = f.readline().split()
    assert tok[0] == "nodes"
    n = int(tok[1])
    nodes = np.array([[float(v) for v in f.readline().split()] for _ in range(n)])
    tok = f.readline().split()
    assert tok[0] == "elements"
    e = int(tok[1])
    elements = np.array(
        [[int(v) for v in f.readline().split()] for _ in range(e)], dtype=int
    )
    groups = {}
    while True:
        line = f.readline()
        if not line.strip():
            break
        if sentinel is not None and line.strip() == sentinel:
            break
        tok = line.split()
        if tok[0] != "group":
            raise MeshError(f"unexpected line in mesh file: {line!r}")
        name, count = tok[1], int(tok[2])
        pairs = np.array(
            [[int(v) for v in f.readline().split()] for _ in range(count)], dtype=int
        )
        groups[name] = pairs.reshape(count, 2)
    return Mesh(nodes=nodes, elements=elements, groups=groups)
