"""Energy terms, free energy and hidden conditionals.

Three families of binary hidden units act on an image patch v:

  pooling units   E_p = -1/2 sum_n h_p[n] sum_f P[f,n] * s_f  -  b_c . h_p
                  with s_f = [ sum_l |C[:,f,l] . v|^alpha ]^(1/alpha)
                  evaluated on the unit-normalized patch;
  mean units      E_m = -h_m . (W' v) - b_m . h_m   on the raw patch;
  phase units     E_k = -1/2 sum_t h_k[t] sum_g R[g,t] * q_g^2 - b_k . h_k
                  with q_g = sum_{f,l} Q[f,l,g] * x[f,l], where x holds the
                  unit-circle coordinates (cos, sin) of each subspace angle.

The total energy adds a quadratic penalty 1/2 ||v||^2 - b_v . v on the
visibles. Free energy marginalizes the hiddens analytically:
F(v) = -sum softplus(drive) over all three families + the visible terms,
so p(v) is proportional to exp(-F(v)).

All operations are pure functions of (v, params); v may be a single vector
(D,) or a batch of rows (B, D).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .preprocess import normalize_visible

EPS_R = 1e-6


def softplus(y):
    """log(1 + exp(y)) computed without overflow."""
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(y, 0.0) + np.log1p(np.exp(-np.abs(y)))


def sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    z = np.exp(np.where(y >= 0, -y, y))     # exp of a non-positive value
    return np.where(y >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _check_visible(v, params):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.C.shape[0]:
        raise ShapeError(f"visible dim {v.shape[-1]} != model D={params.C.shape[0]}")
    return v


def projections(v, params):
    """Per-subspace filter responses C[:,f,l] . v, shape (..., F, L)."""
    v = _check_visible(v, params)
    return np.einsum("ifl,...i->...fl", params.C, v)


def subspace_pool(v, params):
    """Pooled subspace response s_f = [ sum_l |y_fl|^alpha ]^(1/alpha).

    Expects v already normalized by the caller. For alpha=2, L=2 this is
    the quadrature-pair amplitude.
    """
    if params.alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {params.alpha}")
    return _pool_from_projections(projections(v, params), params.alpha)


def _pool_from_projections(y, alpha):
    return np.power(np.sum(np.abs(y) ** alpha, axis=-1), 1.0 / alpha)


@dataclass
class PhaseFeatures:
    """Quadrature projections (a, b), regularized amplitude r, angle theta
    and unit-circle coordinates x = (a/r, b/r). Batched inputs give an
    extra leading axis on every field."""

    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    x: np.ndarray   # (..., F, 2)


def phase_features(v, params):
    """Per-subspace amplitude/angle decomposition; requires L = 2.

    The angle is scale invariant, so v need not be normalized; the
    amplitude regularizer eps_r keeps everything finite at v = 0.
    """
    if params.C.shape[2] != 2:
        raise ParameterError("phase features require subspace dimension L = 2")
    y = projections(v, params)
    a, b = y[..., 0], y[..., 1]
    r = np.sqrt(a * a + b * b + EPS_R * EPS_R)
    theta = np.arctan2(b, a)
    x = np.stack([a / r, b / r], axis=-1)
    return PhaseFeatures(a=a, b=b, r=r, theta=theta, x=x)


def _phase_factor_projection(x, params):
    """q_g = sum_{f,l} Q[f,l,g] x[f,l], shape (..., G)."""
    return np.einsum("flg,...fl->...g", params.Q, x)


# --- hidden drives: the argument of the sigmoid/softplus for each family ---

def pool_drive(v_normalized, params):
    s = subspace_pool(v_normalized, params)
    return 0.5 * s @ params.P + params.b_c


def mean_drive(v, params):
    return _check_visible(v, params) @ params.W + params.b_m


def phase_drive(v_normalized, params):
    q = _phase_factor_projection(phase_features(v_normalized, params).x, params)
    return 0.5 * (q * q) @ params.R + params.b_k


def _check_hidden(h, n, what):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != n:
        raise ShapeError(f"{what} has dim {h.shape[-1]}, expected {n}")
    return h


def energy_p(v, h_p, params):
    """Pooling-unit energy. v must already be normalized; h_p may be a
    single binary vector (N,) or a stack of configurations (..., N)."""
    h_p = _check_hidden(h_p, params.P.shape[1], "h_p")
    return -h_p @ pool_drive(v, params)


def energy_m(v, h_m, params):
    """Mean-unit energy on the raw (unnormalized) patch."""
    h_m = _check_hidden(h_m, params.W.shape[1], "h_m")
    return -h_m @ mean_drive(v, params)


def energy_k(v, h_k, params):
    """Phase-coupling energy; v should be normalized by the caller."""
    h_k = _check_hidden(h_k, params.R.shape[1], "h_k")
    return -h_k @ phase_drive(v, params)


def total_energy(v, h_p, h_m, h_k, params, with_phase=True):
    """E_p + E_m + E_k + 1/2 ||v||^2 - b_v . v.

    The pooling and phase terms receive the normalized patch, matching
    their definitions; the mean and visible terms use v as given.
    """
    v = _check_visible(v, params)
    u = normalize_visible(v)
    total = (
        energy_p(u, h_p, params)
        + energy_m(v, h_m, params)
        + 0.5 * np.sum(v * v)
        - params.b_v @ v
    )
    if with_phase:
        total = total + energy_k(u, h_k, params)
    return total


def free_energy(v, params, with_phase=True, check=True):
    """-log sum_h exp(-E(v, h)) with all binary hiddens summed out.

    Returns a scalar for a single v or a vector for a batch. With
    `check`, any non-finite drive raises NumericError naming the term.
    """
    v = _check_visible(v, params)
    with np.errstate(over="ignore", invalid="ignore"):
        u = normalize_visible(v)
        phi = pool_drive(u, params)
        m = mean_drive(v, params)
        quad = 0.5 * np.sum(v * v, axis=-1) - v @ params.b_v
        if check:
            for name, term in (("pooling drive", phi), ("mean drive", m),
                               ("visible term", quad)):
                if not np.all(np.isfinite(term)):
                    raise NumericError(f"free_energy: non-finite {name}")
        out = -softplus(phi).sum(axis=-1) - softplus(m).sum(axis=-1) + quad
        if with_phase:
            psi = phase_drive(u, params)
            if check and not np.all(np.isfinite(psi)):
                raise NumericError("free_energy: non-finite phase drive")
            out = out - softplus(psi).sum(axis=-1)
    return out


@dataclass
class HiddenActivations:
    """Conditional on-probabilities of each hidden family given v."""

    p_hp: np.ndarray
    p_hm: np.ndarray
    p_hk: np.ndarray


def hidden_conditionals(v, params, with_phase=True):
    v = _check_visible(v, params)
    u = normalize_visible(v)
    p_hk = sigmoid(phase_drive(u, params)) if with_phase else None
    return HiddenActivations(
        p_hp=sigmoid(pool_drive(u, params)),
        p_hm=sigmoid(mean_drive(v, params)),
        p_hk=p_hk,
    )


# --- diagnostics ---

def inverse_covariance(h_p, params):
    """Gated precision-style matrix C_flat diag(repeat(P h_p)) C_flat'.

    Each subspace's pooled weight applies to all L of its filter vectors;
    symmetric by construction.
    """
    D, F, L = params.C.shape
    h_p = _check_hidden(h_p, params.P.shape[1], "h_p")
    weights = np.repeat(params.P @ h_p, L)
    c_flat = params.C.reshape(D, F * L)
    return (c_flat * weights) @ c_flat.T


def phase_coupling_matrix(h_k, params):
    """Phase coupling matrix K = Q_flat diag(R h_k) Q_flat' in the
    stacked (cos, sin) coordinate space; symmetric."""
    F, L, G = params.Q.shape
    h_k = _check_hidden(h_k, params.R.shape[1], "h_k")
    q_flat = params.Q.reshape(F * L, G)
    return (q_flat * (params.R @ h_k)) @ q_flat.T
