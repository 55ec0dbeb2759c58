"""Hybrid constitutive model: known phenomenological energy plus a convex
network correction plus normalisation terms.

    psi(F) = psi_known(F) + psi_nn(x(F)) + psi_energy + psi_stress

psi_energy = -psi_nn(x(I)) cancels the network's residual energy at the
undeformed state, and psi_stress = H : E with E = (F^T F - I)/2 and
H = -d psi_nn/dF at F = I cancels its residual stress, so psi(I) = 0 and
P(I) = 0 hold for every parameter draw.  With the default feature set all
feature derivatives vanish at the identity, making H exactly zero; it is
still computed as a guard and carries the load for alternative feature sets.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import icnn as net
from . import kinematics as kin
from . import materials as mat

_MAGIC = b"MFCK"
_VERSION = 1


class HybridModel:
    """Fused model exposing the shared constitutive contract.

    Evaluations are thread-safe against a fixed parameter snapshot.  The
    training loop mutates ``nn`` in place and must call ``invalidate()``
    after each update so the cached corrections are recomputed lazily.
    """

    def __init__(self, known, nn, alpha=None, learn_alpha=False, linear_volumetric=False):
        self.known = known
        self.nn = nn
        self._alpha = alpha
        self.learn_alpha = learn_alpha
        self.linear_volumetric = linear_volumetric
        if alpha is None and nn.n_features != 3:
            raise ValueError("isotropic hybrid needs a 3-feature network")
        if alpha is not None and nn.n_features != 4:
            raise ValueError("anisotropic hybrid needs a 4-feature network")
        self._corr = None

    # -- parameters ------------------------------------------------------

    @property
    def alpha(self):
        return self._alpha

    @alpha.setter
    def alpha(self, value):
        self._alpha = value
        self.invalidate()

    def invalidate(self):
        self._corr = None

    @property
    def feature_tag(self):
        return kin.feature_tag(self._alpha, self.linear_volumetric)

    def _features(self, F, **kw):
        return kin.features(
            F, alpha=self._alpha, linear_volumetric=self.linear_volumetric, **kw
        )

    # -- corrections -----------------------------------------------------

    def _compute_corrections(self, mask):
        feats = self._features(np.eye(2))
        psi0, g0 = net.forward_grad(self.nn, feats.x, mask=mask)
        e0 = float(psi0)
        H = -np.einsum("d,dij->ij", g0, feats.d_f)
        H = 0.5 * (H + H.T)
        H33 = -float(np.dot(g0, feats.d_f33))
        return e0, H, H33

    def corrections(self, mask=None):
        """(e0, H, H33): energy offset and stress-correction tensor."""
        if mask is not None:
            return self._compute_corrections(mask)
        if self._corr is None:
            self._corr = self._compute_corrections(None)
        return self._corr

    # -- constitutive contract -------------------------------------------

    def energy(self, F, mask=None):
        psi, _ = self.energy_and_stress(F, mask=mask)
        return psi

    def energy_and_stress(self, F, mask=None):
        """psi (...,) and in-plane P (..., 2, 2) from one feature evaluation."""
        F = np.asarray(F, dtype=float)
        feats = self._features(F)
        e0, H, _ = self.corrections(mask)
        psi_nn, g = net.forward_grad(self.nn, feats.x, mask=mask)
        C2 = np.einsum("...ki,...kj->...ij", F, F)
        E = 0.5 * (C2 - kin.EYE2)
        psi = self.known.energy(F) + psi_nn - e0 + np.einsum("ij,...ij->...", H, E)
        P = self.known.stress(F)
        P = P + np.einsum("...d,...dij->...ij", g, feats.d_f)
        P = P + np.einsum("...ik,kj->...ij", F, H)
        return psi, P

    def stress(self, F, mask=None):
        return self.energy_and_stress(F, mask=mask)[1]

    def stress3(self, F, mask=None):
        F = np.asarray(F, dtype=float)
        feats = self._features(F)
        _, H, H33 = self.corrections(mask)
        _, g = net.forward_grad(self.nn, feats.x, mask=mask)
        P = self.known.stress3(F)
        P[..., :2, :2] += np.einsum("...d,...dij->...ij", g, feats.d_f)
        P[..., :2, :2] += np.einsum("...ik,kj->...ij", F, H)
        P[..., 2, 2] += np.einsum("...d,...d->...", g, feats.d_f33) + H33
        return P

    def tangent(self, F, mask=None):
        F = np.asarray(F, dtype=float)
        feats = self._features(F, want_hessian=True)
        _, H, _ = self.corrections(mask)
        _, g = net.forward_grad(self.nn, feats.x, mask=mask)
        Hx = net.input_hessian(self.nn, feats.x, mask=mask)
        C4 = self.known.tangent(F)
        C4 = C4 + np.einsum("...de,...dij,...ekl->...ijkl", Hx, feats.d_f, feats.d_f)
        C4 = C4 + np.einsum("...d,...dijkl->...ijkl", g, feats.d2_f)
        C4 = C4 + np.einsum("ik,lj->ijkl", kin.EYE2, H)
        return C4

    # -- fibre-angle sensitivity ------------------------------------------

    def angle_gradient(self, F, mask=None):
        """(dpsi/dalpha, dP/dalpha) through the fibre feature and the
        alpha-dependence of the correction caches."""
        if not self.learn_alpha:
            raise ValueError("fibre angle is fixed; build the model with learn_alpha=True")
        F = np.asarray(F, dtype=float)
        feats = self._features(F, want_alpha_derivs=True)
        _, g = net.forward_grad(self.nn, feats.x, mask=mask)
        Hx = net.input_hessian(self.nn, feats.x, mask=mask)

        dpsi = np.einsum("...d,...d->...", g, feats.d_alpha)
        dP = np.einsum("...de,...e,...dij->...ij", Hx, feats.d_alpha, feats.d_f)
        dP += np.einsum("...d,...dij->...ij", g, feats.d_f_dalpha)

        # alpha-dependence of e0 and H (vanishes for stationary feature sets,
        # recomputed anyway as a guard)
        f0 = self._features(np.eye(2), want_alpha_derivs=True)
        _, g0 = net.forward_grad(self.nn, f0.x, mask=mask)
        H0x = net.input_hessian(self.nn, f0.x, mask=mask)
        de0 = float(np.einsum("d,d->", g0, f0.d_alpha))
        dH = -(
            np.einsum("de,e,dij->ij", H0x, f0.d_alpha, f0.d_f)
            + np.einsum("d,dij->ij", g0, f0.d_f_dalpha)
        )
        dH = 0.5 * (dH + dH.T)
        C2 = np.einsum("...ki,...kj->...ij", F, F)
        E = 0.5 * (C2 - kin.EYE2)
        dpsi = dpsi - de0 + np.einsum("ij,...ij->...", dH, E)
        dP += np.einsum("...ik,kj->...ij", F, dH)
        return dpsi, dP


def nn_only_model(nn, alpha=None, learn_alpha=False):
    """Purely data-driven baseline: zero prior, same correction machinery."""
    return HybridModel(mat.make_model("zero"), nn, alpha=alpha, learn_alpha=learn_alpha)


# --- checkpoint container -----------------------------------------------------
#
# Self-describing binary layout: magic, u32 version, u64 header length, JSON
# header (sorted keys), then the arrays as little-endian float64 in manifest
# order.  Identical models serialize to identical bytes.


def _array_items(nn):
    items = []
    for l in range(net.N_LAYERS):
        items.append((f"weights_{l}", nn.weights[l]))
        items.append((f"skips_{l}", nn.skips[l]))
        items.append((f"biases_{l}", nn.biases[l]))
    items.append(("readout", nn.readout))
    return items


def save_checkpoint(model, path):
    nn = model.nn
    items = _array_items(nn)
    header = {
        "format": "matforge-checkpoint",
        "known": model.known.config,
        "alpha": model.alpha,
        "learn_alpha": model.learn_alpha,
        "feature_set": model.feature_tag,
        "linear_volumetric": model.linear_volumetric,
        "gamma1": nn.gamma1,
        "gamma2": nn.gamma2,
        "hidden": nn.hidden,
        "n_features": nn.n_features,
        "nonneg_skips": nn.nonneg_skips,
        "arrays": [[name, list(a.shape)] for name, a in items],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in items:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    nn = net.IcnnParams(
        weights=[arrays[f"weights_{l}"] for l in range(net.N_LAYERS)],
        skips=[arrays[f"skips_{l}"] for l in range(net.N_LAYERS)],
        biases=[arrays[f"biases_{l}"] for l in range(net.N_LAYERS)],
        readout=arrays["readout"],
        gamma1=header["gamma1"],
        gamma2=header["gamma2"],
        nonneg_skips=header["nonneg_skips"],
    )
    kcfg = dict(header["known"])
    name = kcfg.pop("name")
    known = mat.make_model(name, **{k: v for k, v in kcfg.items() if v is not None or k == "alpha"})
    return HybridModel(
        known,
        nn,
        alpha=header["alpha"],
        learn_alpha=header["learn_alpha"],
        linear_volumetric=header["linear_volumetric"],
    )
