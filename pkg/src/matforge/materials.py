"""Closed-form hyperelastic strain-energy models.

Every model here is a smooth function of the shifted-invariant feature vector
(see kinematics.features), so stress and tangent follow from one shared chain
rule: P = sum_k (dpsi/dx_k) dx_k/dF and one further differentiation for the
tangent.  Models are selected by string id from MODEL_REGISTRY.
"""

from __future__ import annotations

import numpy as np

from . import kinematics as kin


class ChainLockError(ValueError):
    """Chain stretch reached the inverse-Langevin singularity."""


def softplus_inv(y):
    return np.log(np.expm1(y))


# --- inverse Langevin machinery -------------------------------------------
#
# Runtime default is the Pade approximant y(3 - y^2)/(1 - y^2); a bisection
# mode inverting L(b) = coth b - 1/b to near machine precision is available
# for cross-checking.  Derivatives always differentiate the chosen branch so
# energy/stress/tangent stay mutually consistent.


def langevin(b):
    """L(b) = coth(b) - 1/b, series-stabilised near zero."""
    b = np.asarray(b, dtype=float)
    out = np.empty_like(b)
    small = np.abs(b) < 0.05
    bs = b[small]
    out[small] = bs / 3.0 - bs**3 / 45.0 + 2.0 * bs**5 / 945.0
    bb = b[~small]
    out[~small] = 1.0 / np.tanh(bb) - 1.0 / bb
    return out


def langevin_d(b):
    """L'(b) = 1/b^2 - 1/sinh(b)^2."""
    b = np.asarray(b, dtype=float)
    out = np.empty_like(b)
    small = np.abs(b) < 0.05
    bs = b[small]
    out[small] = 1.0 / 3.0 - bs**2 / 15.0 + 2.0 * bs**4 / 189.0
    bb = b[~small]
    out[~small] = 1.0 / bb**2 - 1.0 / np.sinh(bb) ** 2
    return out


def inv_langevin_pade(y):
    """Pade approximant y(3 - y^2)/(1 - y^2) with first two derivatives."""
    y = np.asarray(y, dtype=float)
    denom = 1.0 - y * y
    b = y * (3.0 - y * y) / denom
    b1 = (3.0 + y**4) / denom**2
    b2 = 4.0 * y * (3.0 + y * y) / denom**3
    return b, b1, b2


def inv_langevin_bisect(y, tol=1e-14, max_iter=200):
    """Invert L by bisection bracketing from the Pade guess."""
    y = np.asarray(y, dtype=float)
    b0 = inv_langevin_pade(y)[0]
    lo = np.maximum(b0 * 0.5, 1e-12)
    hi = b0 * 2.0 + 1.0
    # widen until bracketed
    for _ in range(60):
        need = langevin(lo) > y
        if not np.any(need):
            break
        lo = np.where(need, lo * 0.5, lo)
    for _ in range(60):
        need = langevin(hi) < y
        if not np.any(need):
            break
        hi = np.where(need, hi * 2.0, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        high = langevin(mid) > y
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
        if np.max(hi - lo) < tol * np.maximum(1.0, np.min(lo)):
            break
    b = 0.5 * (lo + hi)
    b1 = 1.0 / langevin_d(b)
    # b'' = -L''(b) / L'(b)^3 with L''(b) = -2/b^3 + 2 cosh(b)/sinh(b)^3
    d2 = -2.0 / b**3 + 2.0 * np.cosh(b) / np.sinh(b) ** 3
    b2 = -d2 * b1**3
    return b, b1, b2


def log_sinh_over(b):
    """log(sinh(b)/b), overflow-safe, with first derivative L(b)."""
    b = np.asarray(b, dtype=float)
    out = np.empty_like(b)
    small = np.abs(b) < 1e-4
    bs = b[small]
    out[small] = bs**2 / 6.0 - bs**4 / 180.0
    mid = (~small) & (b < 20.0)
    out[mid] = np.log(np.sinh(b[mid]) / b[mid])
    big = b >= 20.0
    bb = b[big]
    out[big] = bb - np.log(2.0 * bb) + np.log1p(-np.exp(-2.0 * bb))
    return out


# --- feature-space energies -------------------------------------------------


class FeatureEnergy:
    """Energy as a function of the feature vector; subclasses fill in
    value/grad/hess.  Columns: x1 = I1_dev-3, x2 = I2_dev-3, x3 = vol term,
    x4 = fibre term (when present)."""

    name = "base"

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def _zeros_grad(self, x):
        return np.zeros_like(x)

    def _zeros_hess(self, x):
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))


class NeoHookean(FeatureEnergy):
    """psi = 0.5 (I1_dev - 3) + 1.5 (J - 1)^2."""

    name = "nh"

    def value(self, x):
        return 0.5 * x[..., 0] + 1.5 * x[..., 2]

    def grad(self, x):
        g = self._zeros_grad(x)
        g[..., 0] = 0.5
        g[..., 2] = 1.5
        return g

    def hess(self, x):
        return self._zeros_hess(x)


class Isihara(FeatureEnergy):
    """psi = 0.5 (I1_dev-3) + (I2_dev-3) + (I1_dev-3)^2 + 1.5 (J-1)^2."""

    name = "isihara"

    def value(self, x):
        return 0.5 * x[..., 0] + x[..., 1] + x[..., 0] ** 2 + 1.5 * x[..., 2]

    def grad(self, x):
        g = self._zeros_grad(x)
        g[..., 0] = 0.5 + 2.0 * x[..., 0]
        g[..., 1] = 1.0
        g[..., 2] = 1.5
        return g

    def hess(self, x):
        h = self._zeros_hess(x)
        h[..., 0, 0] = 2.0
        return h


class ArrudaBoyce(FeatureEnergy):
    """Eight-chain model with N_c = 28 segments and quadratic volumetric term.

    psi = 2.5 sqrt(N) [b lam - sqrt(N) log(sinh b / b)] - c + 1.5 (J-1)^2
    with lam = sqrt(I1_dev / 3) and b the inverse Langevin of lam/sqrt(N).
    The published offset c = 3.7910 is the default; offset=None recomputes it
    so psi(I) = 0 exactly under the chosen inverse-Langevin branch.
    """

    name = "ab"
    LOCK_MARGIN = 1e-9

    def __init__(self, n_chain=28.0, offset=3.7910, inverse="pade"):
        if inverse not in ("pade", "bisect"):
            raise ValueError(f"unknown inverse-Langevin mode {inverse!r}")
        self.n_chain = float(n_chain)
        self.inverse = inverse
        if offset is None:
            y0 = np.array(1.0 / np.sqrt(self.n_chain))
            offset = float(self._chain_energy(y0)[0])
        self.offset = float(offset)

    @property
    def config(self):
        return {"n_chain": self.n_chain, "offset": self.offset, "inverse": self.inverse}

    def _invert(self, y):
        if self.inverse == "pade":
            return inv_langevin_pade(y)
        return inv_langevin_bisect(y)

    def _chain_energy(self, y):
        """2.5 N (b y - log(sinh b / b)) and its first two y-derivatives."""
        if np.any(y >= 1.0 - self.LOCK_MARGIN):
            raise ChainLockError(
                f"chain stretch ratio {float(np.max(y)):.6f} at the inverse-Langevin singularity"
            )
        N = self.n_chain
        b, b1, b2 = self._invert(y)
        gap = y - langevin(b)  # zero for an exact inverse, small for Pade
        e = 2.5 * N * (b * y - log_sinh_over(b))
        e1 = 2.5 * N * (b + b1 * gap)
        e2 = 2.5 * N * (b1 + b2 * gap + b1 * (1.0 - langevin_d(b) * b1))
        return e, e1, e2

    def value(self, x):
        y = np.sqrt((x[..., 0] + 3.0) / (3.0 * self.n_chain))
        return self._chain_energy(y)[0] - self.offset + 1.5 * x[..., 2]

    def grad(self, x):
        y = np.sqrt((x[..., 0] + 3.0) / (3.0 * self.n_chain))
        _, e1, _ = self._chain_energy(y)
        g = self._zeros_grad(x)
        g[..., 0] = e1 / (6.0 * self.n_chain * y)
        g[..., 2] = 1.5
        return g

    def hess(self, x):
        y = np.sqrt((x[..., 0] + 3.0) / (3.0 * self.n_chain))
        _, e1, e2 = self._chain_energy(y)
        dy = 1.0 / (6.0 * self.n_chain * y)
        d2y = -dy / (y * 6.0 * self.n_chain * y)
        h = self._zeros_hess(x)
        h[..., 0, 0] = e2 * dy * dy + e1 * d2y
        return h


class AnisotropicFibre(FeatureEnergy):
    """psi = 0.5 (I1_dev-3) + 0.75 (J-1)^2 + 0.5 (I_fib-1)^2, one fibre family."""

    name = "ai45"

    def value(self, x):
        return 0.5 * x[..., 0] + 0.75 * x[..., 2] + 0.5 * x[..., 3]

    def grad(self, x):
        g = self._zeros_grad(x)
        g[..., 0] = 0.5
        g[..., 2] = 0.75
        g[..., 3] = 0.5
        return g

    def hess(self, x):
        return self._zeros_hess(x)


class ZeroEnergy(FeatureEnergy):
    """psi = 0; prior for the purely data-driven baseline."""

    name = "zero"

    def value(self, x):
        return np.zeros(x.shape[:-1])

    def grad(self, x):
        return self._zeros_grad(x)

    def hess(self, x):
        return self._zeros_hess(x)


MODEL_REGISTRY = {
    "nh": NeoHookean,
    "isihara": Isihara,
    "ab": ArrudaBoyce,
    "ai45": AnisotropicFibre,
    "zero": ZeroEnergy,
}

# fibre angle baked into each registry entry (radians); None = isotropic
_DEFAULT_ALPHA = {"ai45": np.deg2rad(45.0)}


class PhenomModel:
    """A closed-form model evaluated through the feature chain rule.

    Exposes the shared constitutive contract: energy(F), stress(F),
    stress3(F) and tangent(F), batched over leading axes of F.
    """

    def __init__(self, energy: FeatureEnergy, alpha=None):
        self.feature_energy = energy
        self.alpha = alpha

    @property
    def name(self):
        return self.feature_energy.name

    @property
    def config(self):
        cfg = {"name": self.name, "alpha": self.alpha}
        if isinstance(self.feature_energy, ArrudaBoyce):
            cfg.update(self.feature_energy.config)
        return cfg

    def _features(self, F, want_hessian=False):
        return kin.features(F, alpha=self.alpha, want_hessian=want_hessian)

    def energy(self, F):
        return self.feature_energy.value(self._features(F).x)

    def stress(self, F):
        feats = self._features(F)
        g = self.feature_energy.grad(feats.x)
        return np.einsum("...d,...dij->...ij", g, feats.d_f)

    def stress3(self, F):
        feats = self._features(F)
        g = self.feature_energy.grad(feats.x)
        P = np.zeros(np.asarray(F).shape[:-2] + (3, 3))
        P[..., :2, :2] = np.einsum("...d,...dij->...ij", g, feats.d_f)
        P[..., 2, 2] = np.einsum("...d,...d->...", g, feats.d_f33)
        return P

    def tangent(self, F):
        feats = self._features(F, want_hessian=True)
        g = self.feature_energy.grad(feats.x)
        h = self.feature_energy.hess(feats.x)
        C4 = np.einsum("...de,...dij,...ekl->...ijkl", h, feats.d_f, feats.d_f)
        C4 += np.einsum("...d,...dijkl->...ijkl", g, feats.d2_f)
        return C4


def make_model(name, **kwargs):
    """Instantiate a registered model; kwargs go to the energy constructor."""
    try:
        cls = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_REGISTRY)}")
    alpha = kwargs.pop("alpha", _DEFAULT_ALPHA.get(name))
    return PhenomModel(cls(**kwargs), alpha=alpha)
