"""Force-balance training of the hybrid model.

The loss per load step sums squared internal forces at the free dofs and the
squared mismatch between group-summed internal forces and the recorded
reaction at the fixed dofs.  Gradients flow analytically from the residuals
through the per-element stress into the network's mixed second derivative
d(dpsi/dx)/dtheta and, when the fibre angle is learnable, through the feature
panels' alpha derivatives.  Everything is assembled with fixed-order numpy
reductions, so a (seed, config, dataset) triple reproduces bit-identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from . import icnn as net
from . import kinematics as kin
from . import materials as mat
from .hybrid import HybridModel


class TrainingDivergedError(RuntimeError):
    pass


class EnsembleError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    total: float
    free: float
    fixed: float
    per_step: np.ndarray  # (S, 2) free/fixed parts per load step


@dataclass
class TrainConfig:
    known: str = "nh"
    known_options: dict = field(default_factory=dict)
    epochs: int | None = None  # default 1000, or 2000 when learning alpha
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 64
    gamma1: float = 1.0
    gamma2: float = 1.0
    alpha: float | None = None  # fibre angle fed to the network (radians)
    learn_alpha: bool = False
    alpha_init: float = np.deg2rad(30.0)  # deliberately off-truth start
    dropout_rate: float = 0.0  # training-time dropout, off by default
    linear_volumetric: bool = False

    def resolved_epochs(self):
        if self.epochs is not None:
            return self.epochs
        return 2000 if self.learn_alpha else 1000


@dataclass
class TrainRun:
    seed: int
    config: TrainConfig
    model: HybridModel
    history: np.ndarray  # (epochs, 3): total, free, fixed
    wall_time: float
    alpha_history: np.ndarray | None = None

    @property
    def final_loss(self):
        return float(self.history[-1, 0])

    @property
    def initial_loss(self):
        return float(self.history[0, 0])


class Adam:
    """Classic bias-corrected Adam on a flat parameter vector."""

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Workspace:
    """Per-dataset arrays reused across epochs: geometry, data deformation
    gradients, the known model's stress (all training-constant) and, for a
    fixed fibre angle, the feature panels."""

    def __init__(self, dataset, model, steps=None):
        mesh = dataset.mesh
        self.mesh = mesh
        self.steps = dataset.steps if steps is None else [dataset.steps[i] for i in steps]
        self.grads, self.areas = fem.shape_gradients(mesh)
        self.B = fem.assembly_operator(mesh, self.grads, self.areas)
        self.free = mesh.free_mask()
        self.group_dofs = {name: mesh.group_dofs(name) for name in mesh.groups}
        self.F = np.stack(
            [fem.element_deformation_gradients(mesh, s.u, self.grads) for s in self.steps]
        )  # (S, E, 2, 2)
        self.R = {name: np.array([s.reactions[name] for s in self.steps]) for name in mesh.groups}
        self.P_known = model.known.stress(self.F)
        self.n_steps = len(self.steps)
        self.n_elements = mesh.n_elements
        self._alpha_cached = None
        self._feats = None
        self._feats0 = None
        self.refresh_features(model)

    def refresh_features(self, model):
        if self._feats is not None and model.alpha == self._alpha_cached:
            return
        want_da = model.learn_alpha
        self._feats = kin.features(
            self.F,
            alpha=model.alpha,
            linear_volumetric=model.linear_volumetric,
            want_alpha_derivs=want_da,
        )
        self._feats0 = kin.features(
            np.eye(2),
            alpha=model.alpha,
            linear_volumetric=model.linear_volumetric,
            want_alpha_derivs=want_da,
        )
        self._alpha_cached = model.alpha

    def forces(self, P):
        """Assemble nodal forces from per-element stress, (S, n_dofs)."""
        vec = P.reshape(self.n_steps, -1)
        return (self.B @ vec.T).T

    def residual_weights(self, forces):
        """dL/d(force) per dof, plus the loss breakdown."""
        w = np.zeros_like(forces)
        free_part = forces[:, self.free]
        w[:, self.free] = 2.0 * free_part
        per_step = np.empty((self.n_steps, 2))
        per_step[:, 0] = np.sum(free_part**2, axis=1)
        per_step[:, 1] = 0.0
        for name, dofs in self.group_dofs.items():
            gap = forces[:, dofs].sum(axis=1) - self.R[name]
            per_step[:, 1] += gap**2
            w[:, dofs] = 2.0 * gap[:, None]
        return w, per_step


def _breakdown(per_step):
    free = float(per_step[:, 0].sum())
    fixed = float(per_step[:, 1].sum())
    return LossBreakdown(total=free + fixed, free=free, fixed=fixed, per_step=per_step)


def loss(model, dataset, steps=None):
    """Force-balance loss of any constitutive model on a dataset."""
    if isinstance(model, HybridModel):
        return _loss_only(Workspace(dataset, model, steps=steps), model)
    else:
        # closed-form models carry no features to cache; build a light path
        mesh = dataset.mesh
        grads, areas = fem.shape_gradients(mesh)
        sel = dataset.steps if steps is None else [dataset.steps[i] for i in steps]
        F = np.stack([fem.element_deformation_gradients(mesh, s.u, grads) for s in sel])
        B = fem.assembly_operator(mesh, grads, areas)
        forces = (B @ model.stress(F).reshape(len(sel), -1).T).T
        per_step = np.empty((len(sel), 2))
        free = mesh.free_mask()
        per_step[:, 0] = np.sum(forces[:, free] ** 2, axis=1)
        per_step[:, 1] = 0.0
        for name in mesh.groups:
            R = np.array([s.reactions[name] for s in sel])
            gap = forces[:, mesh.group_dofs(name)].sum(axis=1) - R
            per_step[:, 1] += gap**2
        return _breakdown(per_step)


def _loss_only(ws, model):
    P = _stress_on_data(ws, model)[0]
    _, per_step = ws.residual_weights(ws.forces(P))
    return _breakdown(per_step)


def _stress_on_data(ws, model, mask=None):
    """Hybrid stress on every (step, element) state plus the pieces the
    backward pass reuses: the feature gradient g and the forward tape.
    The identity state rides along as the last row (it feeds the stress
    correction H)."""
    ws.refresh_features(model)
    feats, feats0 = ws._feats, ws._feats0
    S, E, d = ws.n_steps, ws.n_elements, feats.x.shape[-1]
    X = np.concatenate([feats.x.reshape(-1, d), feats0.x.reshape(1, d)])
    tape = net.Tape(model.nn, X, mask=mask)
    G = net.grad_from_tape(tape)
    g = G[:-1].reshape(S, E, d)
    g0 = G[-1]
    H = -np.einsum("d,dij->ij", g0, feats0.d_f)
    H = 0.5 * (H + H.T)
    P = ws.P_known + np.einsum("sed,sedij->seij", g, feats.d_f)
    P += np.einsum("seik,kj->seij", ws.F, H)
    return P, g, g0, tape


def loss_and_gradient(model, ws, mask=None):
    """Loss plus d(loss)/d(theta_flat) and, when learnable, d(loss)/d(alpha)."""
    P, g, g0, tape = _stress_on_data(ws, model, mask=mask)
    feats, feats0 = ws._feats, ws._feats0
    w, per_step = ws.residual_weights(ws.forces(P))
    # adjoint of assembly: dL/dP per element, then seeds per feature
    V = (w @ ws.B).reshape(ws.n_steps, ws.n_elements, 2, 2)
    U = np.einsum("seij,sedij->sed", V, feats.d_f)
    # the identity state enters through H; its seed is the (negated,
    # symmetrised) accumulation of F^T V over all states
    M = np.einsum("seki,sekj->ij", ws.F, V)
    M = 0.5 * (M + M.T)
    u0 = -np.einsum("ij,dij->d", M, feats0.d_f)

    d = feats.x.shape[-1]
    T = np.concatenate([U.reshape(-1, d), u0.reshape(1, d)])
    _, grads, dX = net.backprop_from_tape(tape, tangent=T, seed_dot=np.ones(T.shape[0]))
    grad_theta = net.pack(grads)

    grad_alpha = None
    if model.learn_alpha:
        dxa = np.concatenate([feats.d_alpha.reshape(-1, d), feats0.d_alpha.reshape(1, d)])
        grad_alpha = float(np.sum(dX * dxa))
        grad_alpha += float(np.einsum("sed,seij,sedij->", g, V, feats.d_f_dalpha))
        grad_alpha += float(-np.einsum("d,ij,dij->", g0, M, feats0.d_f_dalpha))
    return _breakdown(per_step), grad_theta, grad_alpha


def _diverged_diagnostics(ws, model, epoch):
    P = _stress_on_data(ws, model)[0]
    bad = ~np.isfinite(P)
    where = ""
    if bad.any():
        s, e = np.argwhere(bad.any(axis=(2, 3)))[0]
        where = f" (step {int(s) + 1}, element {int(e)})"
    norm = float(np.linalg.norm(net.pack(model.nn)))
    return f"non-finite loss at epoch {epoch}{where}; |theta| = {norm:.3e}"


def train_one(dataset, config, seed):
    """Full-batch Adam over all elements and selected steps of one dataset."""
    t0 = time.perf_counter()
    known = mat.make_model(config.known, **config.known_options)
    alpha = config.alpha
    learn = config.learn_alpha
    if learn and alpha is None:
        alpha = config.alpha_init
    d = 3 if alpha is None else 4
    nn = net.init_params(
        seed, d, hidden=config.hidden, gamma1=config.gamma1, gamma2=config.gamma2
    )
    model = HybridModel(
        known, nn, alpha=alpha, learn_alpha=learn, linear_volumetric=config.linear_volumetric
    )
    ws = Workspace(dataset, model)
    epochs = config.resolved_epochs()
    n_theta = net.n_params(nn)
    adam = Adam(n_theta + (1 if learn else 0), config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(seed + 7919) if config.dropout_rate else None

    history = np.empty((epochs, 3))
    alpha_history = np.empty(epochs) if learn else None
    theta = net.pack(nn)
    if learn:
        theta = np.append(theta, model.alpha)
    for epoch in range(epochs):
        mask = net.draw_mask(rng, nn, config.dropout_rate) if rng is not None else None
        breakdown, grad_theta, grad_alpha = loss_and_gradient(model, ws, mask=mask)
        history[epoch] = (breakdown.total, breakdown.free, breakdown.fixed)
        if learn:
            alpha_history[epoch] = model.alpha
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(_diverged_diagnostics(ws, model, epoch))
        grad = np.append(grad_theta, grad_alpha) if learn else grad_theta
        theta = adam.step(theta, grad)
        net.set_flat(nn, theta[:n_theta])
        if learn:
            model.alpha = float(theta[n_theta])
        model.invalidate()
    return TrainRun(
        seed=seed,
        config=config,
        model=model,
        history=history,
        wall_time=time.perf_counter() - t0,
        alpha_history=alpha_history,
    )


def train_ensemble(dataset, config, seeds, threads=1):
    """Independent runs from different seeds; lowest final loss wins, ties
    broken by the lowest seed.  Returns (best_run, all_runs)."""
    if len(seeds) < 1:
        raise EnsembleError("need at least one seed")
    runs = {}
    failures = {}

    def run(seed):
        try:
            return train_one(dataset, config, seed)
        except TrainingDivergedError as err:
            return err

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    for seed, result in zip(seeds, results):
        if isinstance(result, TrainingDivergedError):
            failures[seed] = str(result)
        else:
            runs[seed] = result
    if not runs:
        report = "; ".join(f"seed {s}: {msg}" for s, msg in failures.items())
        raise EnsembleError(f"all {len(seeds)} runs diverged: {report}")
    best_seed = min(runs, key=lambda s: (runs[s].final_loss, s))
    ordered = [runs[s] if s in runs else failures[s] for s in seeds]
    return runs[best_seed], ordered


def save_loss_history(run, path):
    """CSV of (epoch, total, free, fixed) per epoch."""
    with open(path, "w") as f:
        f.write("epoch,total,free,fixed\n")
        for i, (total, free, fixed) in enumerate(run.history):
            f.write(f"{i},{float(total)!r},{float(free)!r},{float(fixed)!r}\n")
