"""Input-convex correction network over the feature vector.

Three hidden blocks of squared-softplus units with softplus-positivised
hidden-path weights, free-sign skip connections from the input, and a
positivised linear readout:

    z^l = s1(s2(W^l) z^{l-1} + Ws^l x + b^l),   psi = s2(w) . z^3

with s1(t) = g1 log(1+e^t)^2 and s2(t) = g2 log(1+e^t).  Positivised weights
on every nonlinear path make psi convex in x for any parameter values and any
dropout mask.  The graph is fixed and tiny, so all derivatives (input
gradient, input Hessian, parameter gradients and the mixed parameter
derivative of the input gradient) are hand-rolled reverse-mode over batches;
no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .materials import softplus_inv

N_LAYERS = 3


def softplus(t):
    return np.logaddexp(0.0, t)


@dataclass
class IcnnParams:
    """Raw (pre-softplus) parameters; effective weights are derived on use."""

    weights: list  # [W1 (h,d), W2 (h,h), W3 (h,h)] softplus-transformed on use
    skips: list  # [S1..S3 (h,d)] free sign unless nonneg_skips
    biases: list  # [b1..b3 (h,)]
    readout: np.ndarray  # (h,) softplus-transformed on use
    gamma1: float = 1.0
    gamma2: float = 1.0
    nonneg_skips: bool = False

    @property
    def hidden(self):
        return self.readout.shape[0]

    @property
    def n_features(self):
        return self.skips[0].shape[1]

    def copy(self):
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            skips=[s.copy() for s in self.skips],
            biases=[b.copy() for b in self.biases],
            readout=self.readout.copy(),
        )


def init_params(
    seed,
    n_features,
    hidden=64,
    gamma1=1.0,
    gamma2=1.0,
    nonneg_skips=False,
    weight_gain=0.1,
    skip_std=0.1,
    readout_gain=0.3,
):
    """Deterministic random initialisation.

    Raw positivised weights are centred at softplus_inv(gain/fan_in), so
    each hidden block's path gain starts around ``weight_gain`` and the
    three squared-softplus blocks stay bounded over the strain range seen in
    training data; a zero-centred raw draw would put every effective weight
    near log(2) and blow the tower up.  The correction therefore starts
    small, leaving the hybrid near its phenomenological prior.
    """
    rng = np.random.default_rng(seed)
    weights, skips, biases = [], [], []
    for layer in range(N_LAYERS):
        fan = n_features if layer == 0 else hidden
        mu = softplus_inv(weight_gain / fan) / gamma2
        weights.append(rng.normal(mu, 0.5, size=(hidden, fan)))
        skips.append(rng.normal(0.0, skip_std / np.sqrt(n_features), size=(hidden, n_features)))
        biases.append(np.full(hidden, -0.5))
    readout = rng.normal(softplus_inv(readout_gain / hidden) / gamma2, 0.5, size=hidden)
    return IcnnParams(
        weights=weights,
        skips=skips,
        biases=biases,
        readout=readout,
        gamma1=gamma1,
        gamma2=gamma2,
        nonneg_skips=nonneg_skips,
    )


# --- dropout -----------------------------------------------------------------


@dataclass
class DropoutMask:
    """Bernoulli keep indicators per hidden unit, with inverted scaling."""

    keep: list  # [(h,) float arrays of 0/1] per hidden block
    rate: float

    @property
    def scale(self):
        return 1.0 / (1.0 - self.rate)


def identity_mask(params):
    return DropoutMask(keep=[np.ones(params.hidden) for _ in range(N_LAYERS)], rate=0.0)


def draw_mask(rng, params, rate):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = [(rng.random(params.hidden) >= rate).astype(float) for _ in range(N_LAYERS)]
    return DropoutMask(keep=keep, rate=rate)


def _keep_scaled(params, mask):
    if mask is None:
        return [None] * N_LAYERS
    return [k * mask.scale for k in mask.keep]


# --- forward and derivatives ---------------------------------------------------


def _softplus_sigmoid(t):
    """softplus(t) and sigmoid(t) from a single exp evaluation."""
    neg = t < 0.0
    e = np.exp(np.where(neg, t, -t))
    l1p = np.log1p(e)
    sp = np.where(neg, l1p, t + l1p)
    sig = np.where(neg, e / (1.0 + e), 1.0 / (1.0 + e))
    return sp, sig


def _effective(params):
    A = [params.gamma2 * softplus(w) for w in params.weights]
    if params.nonneg_skips:
        S = [params.gamma2 * softplus(s) for s in params.skips]
    else:
        S = list(params.skips)
    w_out = params.gamma2 * softplus(params.readout)
    return A, S, w_out


class Tape:
    """Cached forward pass: effective weights plus per-layer activations.

    The training loop evaluates the input gradient first (to build the
    stress residuals) and only then knows the tangent seeds for the
    parameter-gradient pass; the tape lets both passes share one forward
    evaluation.
    """

    __slots__ = ("params", "X", "km", "A", "S", "w_out", "sp", "sig", "zs", "psi", "lead", "d")

    def __init__(self, params, x, mask=None):
        x = np.asarray(x, dtype=float)
        self.params = params
        self.lead = x.shape[:-1]
        self.d = x.shape[-1]
        X = x.reshape(-1, self.d)
        self.X = X
        self.km = _keep_scaled(params, mask)
        self.A, self.S, self.w_out = _effective(params)
        self.sp, self.sig, self.zs = [], [], [X]
        Z = X
        for l in range(N_LAYERS):
            pre = Z @ self.A[l].T + X @ self.S[l].T + params.biases[l]
            sp, sig = _softplus_sigmoid(pre)
            z = params.gamma1 * sp * sp
            if self.km[l] is not None:
                z = z * self.km[l]
            self.sp.append(sp)
            self.sig.append(sig)
            self.zs.append(z)
            Z = z
        self.psi = Z @ self.w_out

    def act_d1(self, l):
        return 2.0 * self.params.gamma1 * self.sp[l] * self.sig[l]

    def act_d2(self, l):
        sg = self.sig[l]
        return 2.0 * self.params.gamma1 * (sg * sg + self.sp[l] * sg * (1.0 - sg))


def forward(params, x, mask=None):
    """psi for a batch of feature vectors x (..., d)."""
    tape = Tape(params, x, mask=mask)
    return tape.psi.reshape(tape.lead)


def forward_grad(params, x, mask=None):
    """psi (...,) and dpsi/dx (..., d)."""
    tape = Tape(params, x, mask=mask)
    return tape.psi.reshape(tape.lead), grad_from_tape(tape).reshape(tape.lead + (tape.d,))


def grad_from_tape(tape):
    dZ = np.broadcast_to(tape.w_out, tape.zs[-1].shape)
    dX = np.zeros_like(tape.X)
    for l in reversed(range(N_LAYERS)):
        if tape.km[l] is not None:
            dZ = dZ * tape.km[l]
        dPre = dZ * tape.act_d1(l)
        dX += dPre @ tape.S[l]
        dZ = dPre @ tape.A[l]
    return dX + dZ  # z0 = x also enters layer 1 through A[0]


def backprop(params, x, tangent=None, seed_dot=None, seed_val=None, mask=None, want_params=True):
    """Reverse mode through the (optionally tangent-augmented) forward pass.

    For per-sample input tangents u the augmented output is
    psi_dot = dpsi/dx . u.  With scalar seeds (c_val on psi, c_dot on
    psi_dot) this returns the gradient of

        Phi = sum_i c_val_i psi_i + c_dot_i psi_dot_i

    with respect to all raw parameters and to x.  Seeding psi_dot yields the
    mixed second derivative d(dpsi/dx . u)/dtheta needed by the training
    loss, and d_x of the same seed is the Hessian-vector product.

    Returns (psi, psi_dot, param_grads or None, dX).
    """
    tape = Tape(params, x, mask=mask)
    psi_dot, grads, dX = backprop_from_tape(
        tape, tangent=tangent, seed_dot=seed_dot, seed_val=seed_val, want_params=want_params
    )
    psi = tape.psi.reshape(tape.lead)
    if psi_dot is not None:
        psi_dot = psi_dot.reshape(tape.lead)
    return psi, psi_dot, grads, dX.reshape(tape.lead + (tape.d,))


def backprop_from_tape(tape, tangent=None, seed_dot=None, seed_val=None, want_params=True):
    params = tape.params
    X = tape.X
    n = X.shape[0]
    km, A, S, w_out = tape.km, tape.A, tape.S, tape.w_out

    with_tangent = tangent is not None
    U = np.asarray(tangent, dtype=float).reshape(n, tape.d) if with_tangent else None
    cv = None if seed_val is None else np.asarray(seed_val, dtype=float).reshape(n)
    cd = None if seed_dot is None else np.asarray(seed_dot, dtype=float).reshape(n)
    if cd is not None and not with_tangent:
        raise ValueError("seed_dot requires a tangent")

    # tangent stream over the cached activations
    psi_dot = None
    prets, zts = [], [U]
    if with_tangent:
        Zt = U
        for l in range(N_LAYERS):
            pret = Zt @ A[l].T + U @ S[l].T
            zt = tape.act_d1(l) * pret
            if km[l] is not None:
                zt = zt * km[l]
            prets.append(pret)
            zts.append(zt)
            Zt = zt
        psi_dot = Zt @ w_out

    dZ = np.zeros((n, params.hidden))
    dZt = np.zeros((n, params.hidden)) if with_tangent else None
    if cv is not None:
        dZ += cv[:, None] * w_out
    if cd is not None:
        dZt += cd[:, None] * w_out

    grads = None
    if want_params:
        grads = IcnnParams(
            weights=[np.zeros_like(w) for w in params.weights],
            skips=[np.zeros_like(s) for s in params.skips],
            biases=[np.zeros_like(b) for b in params.biases],
            readout=np.zeros_like(params.readout),
            gamma1=params.gamma1,
            gamma2=params.gamma2,
            nonneg_skips=params.nonneg_skips,
        )
        d_wout = np.zeros_like(w_out)
        if cv is not None:
            d_wout += tape.zs[-1].T @ cv
        if cd is not None:
            d_wout += zts[-1].T @ cd

    dX = np.zeros_like(X)
    for l in reversed(range(N_LAYERS)):
        if km[l] is not None:
            dZ = dZ * km[l]
            if with_tangent:
                dZt = dZt * km[l]
        a1 = tape.act_d1(l)
        dPre = dZ * a1
        dPret = None
        if with_tangent:
            dPre = dPre + dZt * prets[l] * tape.act_d2(l)
            dPret = dZt * a1
        if want_params:
            dA = dPre.T @ tape.zs[l]
            dS = dPre.T @ X
            if with_tangent:
                dA += dPret.T @ zts[l]
                dS += dPret.T @ U
            grads.weights[l] += dA
            grads.skips[l] += dS
            grads.biases[l] += dPre.sum(axis=0)
        dX += dPre @ S[l]
        nxt = dPre @ A[l]
        nxt_t = dPret @ A[l] if with_tangent else None
        if l > 0:
            dZ = nxt
            dZt = nxt_t
        else:
            dX += nxt

    if want_params:
        # chain through the softplus reparameterisations to raw values
        for l in range(N_LAYERS):
            grads.weights[l] *= params.gamma2 * expit(params.weights[l])
            if params.nonneg_skips:
                grads.skips[l] *= params.gamma2 * expit(params.skips[l])
        grads.readout = d_wout * params.gamma2 * expit(params.readout)
    return psi_dot, grads, dX


def input_hessian(params, x, mask=None):
    """d2 psi / dx dx (..., d, d), symmetric positive semidefinite."""
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    d = x.shape[-1]
    X = x.reshape(-1, d)
    cols = []
    ones = np.ones(X.shape[0])
    for j in range(d):
        U = np.zeros_like(X)
        U[:, j] = 1.0
        _, _, _, dX = backprop(params, X, tangent=U, seed_dot=ones, mask=mask, want_params=False)
        cols.append(dX)
    H = np.stack(cols, axis=-1)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return H.reshape(lead + (d, d))


# --- flat parameter vector -----------------------------------------------------


def _fields(params):
    return params.weights + params.skips + params.biases + [params.readout]


def n_params(params):
    return sum(f.size for f in _fields(params))


def pack(params):
    return np.concatenate([f.ravel() for f in _fields(params)])


def unpack_like(params, vec):
    """Rebuild an IcnnParams with the same shapes from a flat vector."""
    out = params.copy()
    set_flat(out, vec)
    return out


def set_flat(params, vec):
    """Write a flat vector into the parameter arrays in place."""
    i = 0
    for f in _fields(params):
        f[...] = vec[i : i + f.size].reshape(f.shape)
        i += f.size
    if i != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, expected {i}")
