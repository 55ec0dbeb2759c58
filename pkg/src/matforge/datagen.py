"""Training-experiment builder: plate with a hole under displacement-controlled
asymmetric biaxial tension, solved with the chosen ground-truth model and
corrupted with Gaussian displacement noise.

The loading at step parameter g prescribes u_y = g on the top edge, u_x = g/2
on the right edge and zero normal motion on the bottom/left edges.  Reaction
forces are recorded from the clean solution (they emulate load-cell readings),
noise lands on the free displacement dofs only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .meshing import training_mesh

DATASET_HEADER = "dataset v1"

build_training_geometry = training_mesh


@dataclass
class LoadStep:
    gamma: float
    u: np.ndarray  # (N, 2) nodal displacements, noisy on free dofs
    reactions: dict  # group name -> clean reaction force


@dataclass
class ExperimentDataset:
    mesh: fem.Mesh
    steps: list
    provenance: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.steps)


def boundary_values(mesh, gamma):
    """Prescribed fixed-dof values for load parameter gamma."""
    bc = np.zeros(mesh.n_dofs)
    bc[mesh.group_dofs("top-y")] = gamma
    bc[mesh.group_dofs("right-x")] = 0.5 * gamma
    return bc


def _continue_to(mesh, model, u, gamma_from, gamma_to, tol, min_step=1e-4):
    """Advance the solution from one load level to the next.

    The previous solution scaled by the load ratio is a good predictor for
    this proportional loading; when Newton still fails the increment is
    bisected.
    """
    spans = [(gamma_from, gamma_to)]
    while spans:
        a, b = spans.pop(0)
        u0 = u * (b / a) if a > 0 else u
        try:
            u, _ = fem.newton_solve(mesh, model, boundary_values(mesh, b), u0=u0, tol=tol)
        except fem.NewtonError:
            if b - a < min_step:
                raise
            mid = 0.5 * (a + b)
            spans = [(a, mid), (mid, b)] + spans
            continue
    return u


def generate_dataset(
    mesh,
    truth_model,
    n_steps=8,
    gamma_max=1.0,
    noise=1e-4,
    seed=0,
    noise_reactions=0.0,
    newton_tol=1e-11,
):
    """Solve the loading programme and return the noisy dataset.

    Steps use equal gamma increments with solution continuation.  The Newton
    tolerance is kept tight so the clean data is an exact zero of the
    force-balance loss.
    """
    rng = np.random.default_rng(seed)
    grads, areas = fem.shape_gradients(mesh)
    free = mesh.free_mask()
    steps = []
    u = np.zeros((mesh.n_nodes, 2))
    gamma_prev = 0.0
    for t in range(1, n_steps + 1):
        gamma = gamma_max * t / n_steps
        try:
            u = _continue_to(mesh, truth_model, u, gamma_prev, gamma, newton_tol)
        except fem.NewtonError as err:
            raise fem.NewtonError(
                f"ground-truth solve failed at step {t} (gamma={gamma:g}): {err}",
                err.residuals,
            )
        gamma_prev = gamma
        reactions = fem.reaction_forces(mesh, u, truth_model, grads, areas)
        if noise_reactions:
            reactions = {
                k: v + rng.normal(0.0, noise_reactions) for k, v in reactions.items()
            }
        u_noisy = u.copy().ravel()
        if noise:
            u_noisy[free] += rng.normal(0.0, noise, size=int(free.sum()))
        steps.append(LoadStep(gamma=gamma, u=u_noisy.reshape(-1, 2), reactions=reactions))
    provenance = {
        "truth": truth_model.config,
        "n_steps": n_steps,
        "gamma_max": gamma_max,
        "noise": noise,
        "noise_reactions": noise_reactions,
        "seed": seed,
        "loading": "top-y: gamma, right-x: gamma/2",
    }
    return ExperimentDataset(mesh=mesh, steps=steps, provenance=provenance)


def subsample_steps(dataset, count=None, fraction=None):
    """Keep the first k steps (prefix selection)."""
    if (count is None) == (fraction is None):
        raise ValueError("give exactly one of count or fraction")
    if fraction is not None:
        count = int(round(fraction * dataset.n_steps))
    if count < 1:
        raise ValueError("subsampling would leave no steps")
    if count > dataset.n_steps:
        raise ValueError(f"asked for {count} of {dataset.n_steps} steps")
    provenance = dict(dataset.provenance)
    provenance["subsampled_to"] = count
    return ExperimentDataset(
        mesh=dataset.mesh, steps=dataset.steps[:count], provenance=provenance
    )


# --- dataset text format --------------------------------------------------------


def save_dataset(dataset, path_or_file):
    if hasattr(path_or_file, "write"):
        _write_dataset(dataset, path_or_file)
    else:
        with open(path_or_file, "w") as f:
            _write_dataset(dataset, f)


def _write_dataset(ds, f):
    f.write(DATASET_HEADER + "\n")
    f.write("provenance " + json.dumps(ds.provenance, sort_keys=True) + "\n")
    f.write("mesh-begin\n")
    fem.save_mesh(ds.mesh, f)
    f.write("mesh-end\n")
    f.write(f"steps {ds.n_steps}\n")
    for step in ds.steps:
        f.write(f"step gamma {float(step.gamma)!r}\n")
        for ux, uy in step.u:
            f.write(f"{float(ux)!r} {float(uy)!r}\n")
        names = sorted(step.reactions)
        f.write(
            "reactions "
            + " ".join(f"{n} {float(step.reactions[n])!r}" for n in names)
            + "\n"
        )


def load_dataset(path_or_file):
    if hasattr(path_or_file, "read"):
        return _read_dataset(path_or_file)
    with open(path_or_file) as f:
        return _read_dataset(f)


def _read_dataset(f):
    header = f.readline().strip()
    if header != DATASET_HEADER:
        raise ValueError(f"unsupported dataset header {header!r}")
    line = f.readline()
    if not line.startswith("provenance "):
        raise ValueError("missing provenance block")
    provenance = json.loads(line[len("provenance ") :])
    if f.readline().strip() != "mesh-begin":
        raise ValueError("missing mesh block")
    mesh = fem._read_mesh(f, sentinel="mesh-end")
    n_steps = int(f.readline().split()[1])
    steps = []
    for _ in range(n_steps):
        tok = f.readline().split()
        if tok[:2] != ["step", "gamma"]:
            raise ValueError("malformed step header")
        gamma = float(tok[2])
        u = np.array(
            [[float(v) for v in f.readline().split()] for _ in range(mesh.n_nodes)]
        )
        rtok = f.readline().split()
        if rtok[0] != "reactions":
            raise ValueError("missing reactions line")
        reactions = {rtok[i]: float(rtok[i + 1]) for i in range(1, len(rtok), 2)}
        steps.append(LoadStep(gamma=gamma, u=u, reactions=reactions))
    return ExperimentDataset(mesh=mesh, steps=steps, provenance=provenance)
