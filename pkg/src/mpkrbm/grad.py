"""Analytic free-energy gradients and a finite-difference check harness.

The derivative of F with respect to the patch drives the leapfrog
integrator; derivatives with respect to every learnable tensor drive
learning. Both are hand-derived chain rules through the sigmoid gates,
the patch normalization, the pooled subspace norm and the regularized
unit-circle map, and are locked in by the central-difference harness
at the bottom of this module.
"""

from dataclasses import dataclass, field

import numpy as np

from .energy import EPS_R, free_energy, sigmoid
from .errors import DataError, ParameterError
from .params import LEARNABLE_TENSORS, ModelShape, init_params
from .preprocess import EPS_NORM


@dataclass
class ParamGradient:
    """One gradient tensor per learnable ModelParams field."""

    C: np.ndarray
    P: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    b_c: np.ndarray
    b_m: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray

    def as_dict(self):
        return {name: getattr(self, name) for name in LEARNABLE_TENSORS}

    def norms(self):
        return {name: float(np.linalg.norm(t)) for name, t in self.as_dict().items()}


def _forward(v, params, with_phase):
    """Shared intermediates for both gradient routes, batched over rows."""
    V = np.atleast_2d(np.asarray(v, dtype=np.float64))
    norm = np.linalg.norm(V, axis=1, keepdims=True)
    nu = np.maximum(norm, EPS_NORM)
    U = V / nu

    Y = np.einsum("ifl,bi->bfl", params.C, U)
    abs_y = np.abs(Y)
    s_pow = np.sum(abs_y ** params.alpha, axis=-1)           # (B, F)
    s = s_pow ** (1.0 / params.alpha)
    phi = 0.5 * s @ params.P + params.b_c
    m = V @ params.W + params.b_m

    out = {
        "V": V, "U": U, "norm": norm, "nu": nu, "Y": Y, "s": s,
        "sig_p": sigmoid(phi), "sig_m": sigmoid(m),
    }
    # d s_f / d y_fl = (|y|/s)^(alpha-1) * sign(y); zero subspaces contribute 0
    safe_s = np.where(s > 0, s, 1.0)[..., None]
    out["dsdy"] = np.where(
        s[..., None] > 0,
        (abs_y / safe_s) ** (params.alpha - 1.0) * np.sign(Y),
        0.0,
    )
    if with_phase:
        if params.C.shape[2] != 2:
            raise ParameterError("phase gradients require subspace dimension L = 2")
        a, b = Y[..., 0], Y[..., 1]
        r = np.sqrt(a * a + b * b + EPS_R * EPS_R)
        x = np.stack([a / r, b / r], axis=-1)                # (B, F, 2)
        q = np.einsum("flg,bfl->bg", params.Q, x)
        psi = 0.5 * (q * q) @ params.R + params.b_k
        out.update({"a": a, "b": b, "r": r, "x": x, "q": q, "sig_k": sigmoid(psi)})
    return out


def _dF_dy(fw, params, with_phase):
    """Derivative of F w.r.t. the subspace projections y, shape (B, F, L)."""
    g_s = -0.5 * fw["sig_p"] @ params.P.T                    # (B, F)
    dy = g_s[..., None] * fw["dsdy"]
    if with_phase:
        g_q = -(fw["sig_k"] @ params.R.T) * fw["q"]          # (B, G)
        g_x = np.einsum("flg,bg->bfl", params.Q, g_q)        # (B, F, 2)
        a, b, r = fw["a"], fw["b"], fw["r"]
        r3 = r ** 3
        g_a = g_x[..., 0] * (b * b + EPS_R * EPS_R) / r3 - g_x[..., 1] * a * b / r3
        g_b = -g_x[..., 0] * a * b / r3 + g_x[..., 1] * (a * a + EPS_R * EPS_R) / r3
        dy = dy + np.stack([g_a, g_b], axis=-1)
    return dy


def grad_free_energy_v(v, params, with_phase=True):
    """dF/dv, same shape as v (single vector or batch of rows).

    Finite for any finite v: the amplitude regularizer and the
    constant-scale treatment below the normalization floor keep every
    path differentiable almost everywhere.
    """
    v = np.asarray(v, dtype=np.float64)
    fw = _forward(v, params, with_phase)
    dy = _dF_dy(fw, params, with_phase)
    g_u = np.einsum("bfl,ifl->bi", dy, params.C)

    # Jacobian of u = v / max(||v||, eps): tangential projection above the
    # floor, plain 1/eps scaling below it.
    U, nu = fw["U"], fw["nu"]
    above = fw["norm"] >= EPS_NORM
    tangential = (g_u - U * np.sum(g_u * U, axis=1, keepdims=True)) / nu
    g_v = np.where(above, tangential, g_u / EPS_NORM)

    g_v = g_v + fw["V"] - params.b_v - fw["sig_m"] @ params.W.T
    return g_v if v.ndim > 1 else g_v[0]


def grad_free_energy_params(v_batch, params, with_phase=True):
    """Mean over batch rows of dF/dTheta for every learnable tensor.

    Tensors of the phase family come back zero when `with_phase` is off.
    """
    V = np.atleast_2d(np.asarray(v_batch, dtype=np.float64))
    if V.shape[0] == 0:
        raise DataError("empty batch")
    B = V.shape[0]
    fw = _forward(V, params, with_phase)
    dy = _dF_dy(fw, params, with_phase)

    g = ParamGradient(
        C=np.einsum("bi,bfl->ifl", fw["U"], dy) / B,
        P=-0.5 * fw["s"].T @ fw["sig_p"] / B,
        W=-V.T @ fw["sig_m"] / B,
        Q=np.zeros_like(params.Q),
        R=np.zeros_like(params.R),
        b_c=-fw["sig_p"].mean(axis=0),
        b_m=-fw["sig_m"].mean(axis=0),
        b_k=np.zeros_like(params.b_k),
        b_v=-V.mean(axis=0),
    )
    if with_phase:
        q, sig_k = fw["q"], fw["sig_k"]
        g_q = -(sig_k @ params.R.T) * q
        g.Q = np.einsum("bfl,bg->flg", fw["x"], g_q) / B
        g.R = -0.5 * (q * q).T @ sig_k / B
        g.b_k = -sig_k.mean(axis=0)
    return g


# --- finite-difference verification -------------------------------------

def finite_diff_v(v, params, step=1e-5, with_phase=True):
    """Central differences of free_energy w.r.t. each visible coordinate."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    for i in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[i] += step
        vm[i] -= step
        out[i] = (free_energy(vp, params, with_phase=with_phase)
                  - free_energy(vm, params, with_phase=with_phase)) / (2 * step)
    return out


def finite_diff_param(v_batch, params, name, step=1e-5, with_phase=True):
    """Central differences of mean batch free energy w.r.t. one tensor."""
    V = np.atleast_2d(np.asarray(v_batch, dtype=np.float64))
    tensor = getattr(params, name)
    out = np.zeros_like(tensor)
    flat = out.reshape(-1)
    for idx in range(tensor.size):
        for sign in (1.0, -1.0):
            p = params.copy()
            t = getattr(p, name).reshape(-1)
            t[idx] += sign * step
            fe = np.mean(free_energy(V, p, with_phase=with_phase))
            flat[idx] += sign * fe / (2 * step)
    return out


def _rel_err(analytic, fd):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_err: dict = field(default_factory=dict)
    passed: bool = True

    def lines(self):
        rows = [f"gradient check (tolerance {self.tolerance:g})"]
        for name, err in self.max_rel_err.items():
            status = "ok" if err < self.tolerance else "FAIL"
            rows.append(f"  {name:<6} max rel err {err:.3e}  {status}")
        rows.append("PASS" if self.passed else "FAIL")
        return rows


TINY_SHAPE = ModelShape(n_visible=4, n_subspaces=2, subspace_dim=2,
                        n_pool_hidden=3, n_mean_hidden=3,
                        n_phase_factors=3, n_phase_hidden=3)


def random_tiny_params(seed, shape=None, alpha=2.0, scale=0.8):
    """Small random model with the sign conventions of a trained one
    (P <= 0, unit R columns); used by oracles and smoke tests."""
    shape = shape or TINY_SHAPE
    params = init_params(shape, seed, alpha=alpha)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    params.C = rng.standard_normal(params.C.shape)
    params.P = -np.abs(rng.standard_normal(params.P.shape)) * scale
    params.W = rng.standard_normal(params.W.shape) * scale
    params.Q = rng.standard_normal(params.Q.shape) * scale
    params.R = rng.standard_normal(params.R.shape)
    params.R /= np.linalg.norm(params.R, axis=0, keepdims=True)
    params.b_c = rng.standard_normal(params.b_c.shape) * scale
    params.b_m = rng.standard_normal(params.b_m.shape) * scale
    params.b_k = rng.standard_normal(params.b_k.shape) * scale
    params.b_v = rng.standard_normal(params.b_v.shape) * scale
    return params


def check_gradients(shape=None, seed=0, tolerance=1e-5, n_vectors=10,
                    batch_size=3, step=1e-5, alpha=2.0,
                    grad_v_fn=None, grad_params_fn=None):
    """Compare both analytic gradient routes against central differences
    on a random tiny model. Failure is a report outcome, not an error."""
    v_fn = grad_v_fn if grad_v_fn is not None else grad_free_energy_v
    p_fn = grad_params_fn if grad_params_fn is not None else grad_free_energy_params

    params = random_tiny_params(seed, shape=shape, alpha=alpha)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFD]))
    D = params.C.shape[0]

    report = GradCheckReport(tolerance=tolerance)
    err_v = 0.0
    for _ in range(n_vectors):
        v = rng.standard_normal(D)
        err_v = max(err_v, _rel_err(v_fn(v, params), finite_diff_v(v, params, step=step)))
    report.max_rel_err["v"] = err_v

    batch = rng.standard_normal((batch_size, D))
    analytic = p_fn(batch, params)
    for name in LEARNABLE_TENSORS:
        fd = finite_diff_param(batch, params, name, step=step)
        report.max_rel_err[name] = _rel_err(getattr(analytic, name), fd)

    report.passed = all(err < tolerance for err in report.max_rel_err.values())
    return report
