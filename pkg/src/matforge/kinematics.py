"""Plane-strain tensor algebra: deformation measures, invariants and the
shifted-invariant feature vector with exact derivatives in F.

All public functions accept a single 2x2 in-plane deformation gradient or a
batch of them (shape (..., 2, 2)) and broadcast over the leading axes.  The
out-of-plane stretch is fixed at one, so 3D invariants are evaluated on the
embedded block-diagonal tensor diag(F, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DET_FLOOR = 1e-8

EYE2 = np.eye(2)

# fourth-order identity d(F_ij)/d(F_kl) and the (constant) 2D determinant Hessian
_EYE4 = np.einsum("ik,jl->ijkl", EYE2, EYE2)
_DET_HESS = np.zeros((2, 2, 2, 2))
_DET_HESS[0, 0, 1, 1] = _DET_HESS[1, 1, 0, 0] = 1.0
_DET_HESS[0, 1, 1, 0] = _DET_HESS[1, 0, 0, 1] = -1.0


class DegenerateDeformationError(ValueError):
    """det F at or below the positivity floor; the deformation is not admissible."""


def _check_det(J):
    bad = ~(J > DET_FLOOR)
    if np.any(bad):
        worst = float(np.min(J))
        raise DegenerateDeformationError(
            f"det F = {worst:.3e} <= {DET_FLOOR:g} for {int(np.sum(bad))} state(s)"
        )


def det2(F):
    """Determinant of the in-plane block (equals J under plane strain)."""
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def inv_transpose2(F, J=None):
    """F^{-T} of the in-plane block."""
    if J is None:
        J = det2(F)
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1]
    out[..., 0, 1] = -F[..., 1, 0]
    out[..., 1, 0] = -F[..., 0, 1]
    out[..., 1, 1] = F[..., 0, 0]
    return out / J[..., None, None]


def embed_plane_strain(F):
    """Embed the in-plane 2x2 block as a 3x3 tensor with F33 = 1."""
    F = np.asarray(F, dtype=float)
    out = np.zeros(F.shape[:-2] + (3, 3))
    out[..., :2, :2] = F
    out[..., 2, 2] = 1.0
    return out


def fibre_direction(alpha):
    """Unit fibre direction (cos a, sin a, 0); only the in-plane part is returned."""
    return np.array([np.cos(alpha), np.sin(alpha)])


def right_cauchy_green(F):
    """C = F^T F as the embedded 3x3 tensor (C33 = 1)."""
    F = np.asarray(F, dtype=float)
    _check_det(det2(F))
    C2 = np.einsum("...ki,...kj->...ij", F, F)
    out = np.zeros(F.shape[:-2] + (3, 3))
    out[..., :2, :2] = C2
    out[..., 2, 2] = 1.0
    return out


@dataclass
class InvariantSet:
    """Principal and deviatoric invariants of C (plane-strain embedded)."""

    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    J: np.ndarray
    I1_dev: np.ndarray
    I2_dev: np.ndarray
    I_fib: np.ndarray | None = None


def invariants(F, alpha=None):
    """Invariants of C = F^T F; I_fib is included when a fibre angle is given."""
    F = np.asarray(F, dtype=float)
    J = det2(F)
    _check_det(J)
    C2 = np.einsum("...ki,...kj->...ij", F, F)
    trC2 = C2[..., 0, 0] + C2[..., 1, 1]
    detC2 = det2(C2)
    I1 = trC2 + 1.0
    I2 = detC2 + trC2
    I3 = J * J
    I_fib = None
    if alpha is not None:
        a = fibre_direction(alpha)
        I_fib = J ** (-2.0 / 3.0) * np.einsum("i,...ij,j->...", a, C2, a)
    return InvariantSet(
        I1=I1,
        I2=I2,
        I3=I3,
        J=J,
        I1_dev=J ** (-2.0 / 3.0) * I1,
        I2_dev=J ** (-4.0 / 3.0) * I2,
        I_fib=I_fib,
    )


# ---------------------------------------------------------------------------
# second-order expansions of scalar functions of the in-plane F
#
# Each _Expansion carries value, gradient (..., 2, 2) and optionally the
# Hessian (..., 2, 2, 2, 2) w.r.t. the in-plane F components.  Arithmetic is
# the usual product/chain rule, so every invariant below reads like its
# defining formula and derivative bookkeeping lives in one place.
# ---------------------------------------------------------------------------


def _outer4(a, b):
    return np.einsum("...ij,...kl->...ijkl", a, b)


class _Expansion:
    __slots__ = ("val", "g", "h")

    def __init__(self, val, g, h=None):
        self.val = val
        self.g = g
        self.h = h

    def __add__(self, other):
        if isinstance(other, _Expansion):
            h = None
            if self.h is not None and other.h is not None:
                h = self.h + other.h
            return _Expansion(self.val + other.val, self.g + other.g, h)
        return _Expansion(self.val + other, self.g, self.h)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, _Expansion):
            return self + (other * -1.0)
        return _Expansion(self.val - other, self.g, self.h)

    def __mul__(self, other):
        if isinstance(other, _Expansion):
            val = self.val * other.val
            g = self.g * other.val[..., None, None] + other.g * self.val[..., None, None]
            h = None
            if self.h is not None and other.h is not None:
                h = (
                    self.h * other.val[..., None, None, None, None]
                    + other.h * self.val[..., None, None, None, None]
                    + _outer4(self.g, other.g)
                    + _outer4(other.g, self.g)
                )
            return _Expansion(val, g, h)
        h = None if self.h is None else self.h * other
        return _Expansion(self.val * other, self.g * other, h)

    __rmul__ = __mul__

    def compose(self, f, f1, f2):
        """Chain rule through a scalar map with supplied f(u), f'(u), f''(u)."""
        g = f1[..., None, None] * self.g
        h = None
        if self.h is not None:
            h = f2[..., None, None, None, None] * _outer4(self.g, self.g) + (
                f1[..., None, None, None, None] * self.h
            )
        return _Expansion(f, g, h)

    def powf(self, p):
        v = self.val
        return self.compose(v**p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))


def _broadcast4(t, shape):
    return np.broadcast_to(t, shape + (2, 2, 2, 2)).copy()


def _exp_I1(F, want_h):
    """3D first invariant tr C = |F|^2 + 1."""
    val = np.einsum("...ij,...ij->...", F, F) + 1.0
    h = _broadcast4(2.0 * _EYE4, val.shape) if want_h else None
    return _Expansion(val, 2.0 * F, h)


def _exp_trCsq(F, C2, want_h):
    """3D tr(C^2) = tr(C2^2) + 1."""
    val = np.einsum("...ij,...ij->...", C2, C2) + 1.0
    g = 4.0 * np.einsum("...ik,...kj->...ij", F, C2)
    h = None
    if want_h:
        B = np.einsum("...ik,...jk->...ij", F, F)
        h = 4.0 * (
            np.einsum("ik,...lj->...ijkl", EYE2, C2)
            + np.einsum("...il,...kj->...ijkl", F, F)
            + np.einsum("...ik,jl->...ijkl", B, EYE2)
        )
    return _Expansion(val, g, h)


def _exp_J(F, J, want_h):
    g = np.empty_like(F)
    g[..., 0, 0] = F[..., 1, 1]
    g[..., 0, 1] = -F[..., 1, 0]
    g[..., 1, 0] = -F[..., 0, 1]
    g[..., 1, 1] = F[..., 0, 0]
    h = _broadcast4(_DET_HESS, J.shape) if want_h else None
    return _Expansion(J, g, h)


def _exp_fibre(F, C2, a, want_h):
    """Squared fibre stretch a.C a for the in-plane unit direction a."""
    Ca = np.einsum("...ij,j->...i", C2, a)
    val = np.einsum("i,...i->...", a, Ca)
    aa = np.outer(a, a)
    g = 2.0 * np.einsum("...ik,kj->...ij", F, aa)
    h = None
    if want_h:
        h = _broadcast4(2.0 * np.einsum("ik,lj->ijkl", EYE2, aa), val.shape)
    return _Expansion(val, g, h)


@dataclass
class Features:
    """Shifted-invariant inputs to the convex correction network.

    x       feature values, shape (..., d)
    d_f     dx_k/dF over the in-plane block, shape (..., d, 2, 2)
    d_f33   dx_k/dF33 of the plane-strain embedding, shape (..., d)
    d2_f    d2x_k/dF dF, shape (..., d, 2, 2, 2, 2); None unless requested
    d_alpha     dx_k/dalpha, shape (..., d); None unless requested
    d_f_dalpha  d(dx_k/dF)/dalpha, shape (..., d, 2, 2); None unless requested
    """

    x: np.ndarray
    d_f: np.ndarray
    d_f33: np.ndarray
    d2_f: np.ndarray | None = None
    d_alpha: np.ndarray | None = None
    d_f_dalpha: np.ndarray | None = None

    @property
    def n_features(self):
        return self.x.shape[-1]


def feature_names(alpha=None, linear_volumetric=False):
    vol = "J-1" if linear_volumetric else "(J-1)^2"
    names = ["I1_dev-3", "I2_dev-3", vol]
    if alpha is not None:
        names.append("(I_fib-1)^2")
    return names


def feature_tag(alpha=None, linear_volumetric=False):
    tag = "iso" if alpha is None else "aniso"
    if linear_volumetric:
        tag += "+linvol"
    return tag


def features(
    F,
    alpha=None,
    *,
    linear_volumetric=False,
    want_hessian=False,
    want_alpha_derivs=False,
):
    """Feature vector x(F) and its exact derivatives.

    Default set: [I1_dev - 3, I2_dev - 3, (J - 1)^2] plus (I_fib - 1)^2 when a
    fibre angle is given.  Values and dx/dF all vanish at F = I.  The
    ``linear_volumetric`` variant replaces (J - 1)^2 by J - 1, whose derivative
    does not vanish at the identity; it exists to exercise the stress
    correction machinery downstream.
    """
    F = np.asarray(F, dtype=float)
    J = det2(F)
    _check_det(J)
    lead = F.shape[:-2]
    C2 = np.einsum("...ki,...kj->...ij", F, F)

    I1 = _exp_I1(F, want_hessian)
    trCsq = _exp_trCsq(F, C2, want_hessian)
    Je = _exp_J(F, J, want_hessian)
    I2 = (I1 * I1 - trCsq) * 0.5

    Jm23 = Je.powf(-2.0 / 3.0)
    Jm43 = Je.powf(-4.0 / 3.0)

    x1 = I1 * Jm23 - 3.0
    x2 = I2 * Jm43 - 3.0
    if linear_volumetric:
        x3 = Je - 1.0
    else:
        jm1 = Je.val - 1.0
        x3 = Je.compose(jm1 * jm1, 2.0 * jm1, np.full_like(jm1, 2.0))

    cols = [x1, x2, x3]

    # plane-strain embedding direction: dx_k/dF33 from the 3D formulas
    d33 = [
        Jm23.val * (2.0 - (2.0 / 3.0) * I1.val),
        Jm43.val * (2.0 * (I1.val - 1.0) - (4.0 / 3.0) * I2.val),
        J if linear_volumetric else 2.0 * (J - 1.0) * J,
    ]

    d_alpha = None
    d_f_dalpha = None
    if alpha is not None:
        a = fibre_direction(alpha)
        aCa = _exp_fibre(F, C2, a, want_hessian)
        I_fib = aCa * Jm23
        fm1 = I_fib.val - 1.0
        x4 = I_fib.compose(fm1 * fm1, 2.0 * fm1, np.full_like(fm1, 2.0))
        cols.append(x4)
        d33.append(2.0 * fm1 * (-(2.0 / 3.0) * Jm23.val * aCa.val))
        if want_alpha_derivs:
            ap = np.array([-np.sin(alpha), np.cos(alpha)])
            Ca = np.einsum("...ij,j->...i", C2, a)
            aCa_da = 2.0 * np.einsum("i,...i->...", ap, Ca)
            ifib_da = Jm23.val * aCa_da
            # d(I_fib)/dF and its alpha derivative
            FinvT = inv_transpose2(F, J)
            aa_sym = np.outer(a, ap) + np.outer(ap, a)
            G = I_fib.g
            G_da = Jm23.val[..., None, None] * (
                2.0 * np.einsum("...ik,kj->...ij", F, aa_sym)
                - (2.0 / 3.0) * aCa_da[..., None, None] * FinvT
            )
            d_alpha = np.zeros(lead + (4,))
            d_alpha[..., 3] = 2.0 * fm1 * ifib_da
            d_f_dalpha = np.zeros(lead + (4, 2, 2))
            d_f_dalpha[..., 3, :, :] = (
                2.0 * ifib_da[..., None, None] * G + 2.0 * fm1[..., None, None] * G_da
            )
    elif want_alpha_derivs:
        raise ValueError("alpha derivatives require a fibre angle")

    x = np.stack([c.val for c in cols], axis=-1)
    d_f = np.stack([c.g for c in cols], axis=-3)
    d_f33 = np.stack(d33, axis=-1)
    d2_f = None
    if want_hessian:
        d2_f = np.stack([c.h for c in cols], axis=-5)
    return Features(x=x, d_f=d_f, d_f33=d_f33, d2_f=d2_f, d_alpha=d_alpha, d_f_dalpha=d_f_dalpha)


def pk2_from_pk1(P, F):
    """Second Piola-Kirchhoff stress S = F^{-1} P on the 3x3 embedding."""
    F3 = embed_plane_strain(np.asarray(F, dtype=float))
    _check_det(det2(np.asarray(F, dtype=float)))
    return np.einsum("...ij,...jk->...ik", np.linalg.inv(F3), np.asarray(P, dtype=float))


def cauchy_from_pk1(P, F):
    """Cauchy stress sigma = J^{-1} P F^T on the 3x3 embedding."""
    F = np.asarray(F, dtype=float)
    J = det2(F)
    _check_det(J)
    F3 = embed_plane_strain(F)
    return np.einsum("...ij,...kj->...ik", np.asarray(P, dtype=float), F3) / J[..., None, None]
