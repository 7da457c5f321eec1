"""Model parameters, initialization, constraint projections, checkpoints.

The model family is parameterized by

    C    (D, F, L)  subspace filters in the whitened pixel domain
    P    (F, N)     subspace-to-hidden pooling weights, entries <= 0
    W    (D, M)     mean-unit filters
    Q    (F, L, G)  phase-feature projection weights
    R    (G, T)     phase-factor-to-hidden weights, unit-norm columns
    b_c  (N,)       pooling hidden biases
    b_m  (M,)       mean hidden biases
    b_k  (T,)       phase hidden biases
    b_v  (D,)       visible biases

plus the pooling exponent alpha and the subspace dimension L. Everything is
float64; ModelParams is treated as an immutable value between updates.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import container
from .errors import ShapeError

LEARNABLE_TENSORS = ("C", "P", "W", "Q", "R", "b_c", "b_m", "b_k", "b_v")


@dataclass(frozen=True)
class ModelShape:
    """Structural hyperparameters: all dimensions strictly positive."""

    n_visible: int          # D
    n_subspaces: int        # F
    subspace_dim: int       # L
    n_pool_hidden: int      # N
    n_mean_hidden: int      # M
    n_phase_factors: int    # G
    n_phase_hidden: int     # T

    def validate(self):
        for name, value in self.__dict__.items():
            if int(value) < 1:
                raise ShapeError(f"ModelShape.{name} must be >= 1, got {value}")


@dataclass
class ModelParams:
    C: np.ndarray
    P: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    b_c: np.ndarray
    b_m: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    alpha: float = 2.0
    subspace_dim: int = field(default=2)

    @property
    def shape(self):
        D, F, L = self.C.shape
        return ModelShape(
            n_visible=D,
            n_subspaces=F,
            subspace_dim=L,
            n_pool_hidden=self.P.shape[1],
            n_mean_hidden=self.W.shape[1],
            n_phase_factors=self.Q.shape[2],
            n_phase_hidden=self.R.shape[1],
        )

    def copy(self):
        return ModelParams(
            C=self.C.copy(), P=self.P.copy(), W=self.W.copy(), Q=self.Q.copy(),
            R=self.R.copy(), b_c=self.b_c.copy(), b_m=self.b_m.copy(),
            b_k=self.b_k.copy(), b_v=self.b_v.copy(),
            alpha=self.alpha, subspace_dim=self.subspace_dim,
        )

    def tensors(self):
        return {name: getattr(self, name) for name in LEARNABLE_TENSORS}

    def all_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.tensors().values())


def banded_identity(rows, cols, sign=1.0):
    """Banded identity pattern: entry `sign` where col == row mod cols,
    columns rescaled to unit L2-norm. Reduces to sign*I when rows == cols."""
    out = np.zeros((rows, cols))
    out[np.arange(rows), np.arange(rows) % cols] = sign
    norms = np.linalg.norm(out, axis=0)
    norms[norms == 0] = 1.0
    return out / norms


def init_params(shape, seed, alpha=2.0):
    """Fresh parameters: unit-norm random C, small random W and Q, banded
    negative identity P, banded identity R, biases (2, -2, 0, 0).

    Deterministic for a fixed seed.
    """
    shape.validate()
    rng = np.random.default_rng(seed)
    D, F, L = shape.n_visible, shape.n_subspaces, shape.subspace_dim
    N, M = shape.n_pool_hidden, shape.n_mean_hidden
    G, T = shape.n_phase_factors, shape.n_phase_hidden

    C = rng.standard_normal((D, F, L))
    C /= np.linalg.norm(C, axis=0, keepdims=True)
    W = rng.standard_normal((D, M)) * np.sqrt(0.05)
    Q = rng.standard_normal((F, L, G)) * np.sqrt(0.1)
    P = banded_identity(F, N, sign=-1.0)
    R = banded_identity(G, T, sign=1.0)

    return ModelParams(
        C=C, P=P, W=W, Q=Q, R=R,
        b_c=np.full(N, 2.0),
        b_m=np.full(M, -2.0),
        b_k=np.zeros(T),
        b_v=np.zeros(D),
        alpha=float(alpha),
        subspace_dim=L,
    )


# scale factors within a few ulps of 1 are snapped to 1 so that the
# projection is exactly idempotent and frozen tensors keep their bits
_SNAP = 8 * np.finfo(np.float64).eps


def _unit_columns(mat, what):
    norms = np.linalg.norm(mat, axis=0)
    zero = norms == 0
    if np.any(zero):
        warnings.warn(f"{what}: {int(zero.sum())} all-zero column(s) left unnormalized")
        norms = np.where(zero, 1.0, norms)
    norms = np.where(np.abs(norms - 1.0) <= _SNAP, 1.0, norms)
    return mat / norms


def project_constraints(params):
    """Post-update projection: clamp P to <= 0 and unit-normalize its
    columns, rescale every C filter vector to the mean pre-projection
    length, unit-normalize R columns. Returns a new ModelParams."""
    P = _unit_columns(np.minimum(params.P, 0.0), "P")
    R = _unit_columns(params.R.copy(), "R")

    lengths = np.linalg.norm(params.C, axis=0)          # (F, L)
    mean_len = lengths.mean()
    scale = np.where(lengths > 0, mean_len / np.where(lengths > 0, lengths, 1.0), 1.0)
    scale = np.where(np.abs(scale - 1.0) <= _SNAP, 1.0, scale)
    C = params.C * scale

    return replace(params, C=C, P=P, R=R)


def save_checkpoint(params, optimizer_state, path):
    """Serialize params plus a flat name->scalar optimizer state."""
    tensors = dict(params.tensors())
    tensors["alpha"] = np.float64(params.alpha)
    tensors["L"] = np.float64(params.subspace_dim)
    for key, value in (optimizer_state or {}).items():
        tensors[f"opt.{key}"] = np.float64(value)
    container.write_container(path, tensors)


def load_checkpoint(path):
    """Inverse of save_checkpoint; validates tensor shape consistency."""
    tensors = container.read_container(path)
    missing = [n for n in LEARNABLE_TENSORS + ("alpha", "L") if n not in tensors]
    if missing:
        raise ShapeError(f"{path}: checkpoint missing tensors {missing}")
    params = ModelParams(
        **{name: tensors[name] for name in LEARNABLE_TENSORS},
        alpha=float(tensors["alpha"]),
        subspace_dim=int(tensors["L"]),
    )
    _check_consistent(params, path)
    optimizer_state = {
        name[len("opt."):]: float(value)
        for name, value in tensors.items()
        if name.startswith("opt.")
    }
    return params, optimizer_state


def _check_consistent(params, path):
    if params.C.ndim != 3 or params.Q.ndim != 3:
        raise ShapeError(f"{path}: C and Q must be rank 3")
    D, F, L = params.C.shape
    N, M, T = params.b_c.shape[0], params.b_m.shape[0], params.b_k.shape[0]
    G = params.Q.shape[2]
    expected = {
        "P": (F, N),
        "W": (D, M),
        "Q": (F, L, G),
        "R": (G, T),
        "b_v": (D,),
    }
    for name, shape in expected.items():
        actual = getattr(params, name).shape
        if actual != shape:
            raise ShapeError(f"{path}: tensor {name} has shape {actual}, expected {shape}")
    if L != params.subspace_dim:
        raise ShapeError(f"{path}: header L={params.subspace_dim} but C has L={L}")
