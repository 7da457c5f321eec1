"""Hybrid Monte Carlo over the visible space.

Each batch row is an independent chain. One simulation draws a fresh
momentum, runs a fixed number of leapfrog steps on the Hamiltonian
H = F(v) + 1/2 ||p||^2 and applies a Metropolis correction; a shared step
size adapts multiplicatively toward a target rejection rate after every
simulation. Rows whose Hamiltonian turns non-finite are rejected and
counted as divergences, and the step size is halved for that batch.
"""

from dataclasses import dataclass, field

import numpy as np

from .energy import free_energy
from .grad import grad_free_energy_v

STEP_FLOOR = 1e-12


@dataclass
class HmcConfig:
    n_leapfrog: int = 20
    target_rejection: float = 0.10
    step_size: float = 0.01
    adapt_rate: float = 0.02
    seed: int = 0

    def validate(self):
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if not 0.0 < self.target_rejection < 1.0:
            raise ValueError("target_rejection must be in (0, 1)")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


@dataclass
class HmcStats:
    accepted: int = 0
    proposed: int = 0
    divergences: int = 0
    current_step_size: float = 0.0
    mean_delta_h: float = 0.0
    # one (step_size, rejection_rate, mean_delta_h) triple per simulation
    trace: list = field(default_factory=list)

    @property
    def rejection_rate(self):
        return 1.0 - self.accepted / self.proposed if self.proposed else 0.0

    @staticmethod
    def csv_header():
        return "step_size,rejection_rate,mean_delta_h"

    def csv_lines(self):
        return [f"{s:.8g},{r:.6g},{dh:.8g}" for s, r, dh in self.trace]


def leapfrog(v, p, grad_fn, step_size, n_steps):
    """Standard leapfrog integration; volume preserving and reversible
    up to floating-point roundoff."""
    v = v.copy()
    p = p - 0.5 * step_size * grad_fn(v)
    for i in range(n_steps):
        v = v + step_size * p
        if i < n_steps - 1:
            p = p - step_size * grad_fn(v)
    p = p - 0.5 * step_size * grad_fn(v)
    return v, p


def hmc_chain(v0, params, config, n_simulations, rng=None, with_phase=True,
              step_size=None):
    """Run `n_simulations` HMC simulations on every row of v0.

    Returns the final positions and an HmcStats whose current_step_size
    carries the adapted value (pass it back via `step_size` to continue a
    chain across calls). A caller-supplied `rng` preserves its stream, so
    repeated 1-simulation calls match one n-simulation call exactly.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    v = np.atleast_2d(np.asarray(v0, dtype=np.float64)).copy()
    B, D = v.shape
    eps = config.step_size if step_size is None else step_size
    stats = HmcStats()

    def grad_fn(x):
        return grad_free_energy_v(x, params, with_phase=with_phase)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(n_simulations):
            p0 = rng.standard_normal((B, D))
            h0 = free_energy(v, params, with_phase=with_phase, check=False) \
                + 0.5 * np.sum(p0 * p0, axis=1)
            v1, p1 = leapfrog(v, p0, grad_fn, eps, config.n_leapfrog)
            h1 = free_energy(v1, params, with_phase=with_phase, check=False) \
                + 0.5 * np.sum(p1 * p1, axis=1)
            delta_h = h1 - h0

            finite = np.isfinite(delta_h)
            accept = finite & (np.log(rng.uniform(size=B)) < -delta_h)
            v = np.where(accept[:, None], v1, v)

            n_acc = int(accept.sum())
            n_div = int(B - finite.sum())
            stats.accepted += n_acc
            stats.proposed += B
            stats.divergences += n_div
            rejection = 1.0 - n_acc / B
            mean_dh = float(np.mean(delta_h[finite])) if finite.any() else float("nan")
            stats.trace.append((eps, rejection, mean_dh))

            if n_div > 0:
                eps = max(eps * 0.5, STEP_FLOOR)
            elif rejection < config.target_rejection:
                eps *= 1.0 + config.adapt_rate
            else:
                eps *= 1.0 - config.adapt_rate

    stats.current_step_size = eps
    finite_dh = [dh for _, _, dh in stats.trace if np.isfinite(dh)]
    stats.mean_delta_h = float(np.mean(finite_dh)) if finite_dh else float("nan")
    return (v if np.ndim(v0) > 1 else v[0]), stats


def gaussian_moment_probe(n_chains=500, burn=400, keep=100, seed=0, dim=10,
                          config=None):
    """Sample the standard Gaussian reached when every model parameter is
    zero and report moment errors with honest standard errors.

    Chains are independent, so the SE of each pooled moment comes from the
    spread of per-chain estimates (batch means); successive states within
    a chain may be strongly autocorrelated on this target and iid formulas
    would understate the error.
    """
    from .params import ModelParams

    params = ModelParams(
        C=np.zeros((dim, 1, 2)), P=np.zeros((1, 1)), W=np.zeros((dim, 1)),
        Q=np.zeros((1, 2, 1)), R=np.zeros((1, 1)),
        b_c=np.zeros(1), b_m=np.zeros(1), b_k=np.zeros(1), b_v=np.zeros(dim),
    )
    config = config or HmcConfig(seed=seed)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_chains, dim))

    v, stats = hmc_chain(v, params, config, burn, rng=rng)
    step = stats.current_step_size

    states = np.empty((keep, n_chains, dim))
    rejections = []
    for k in range(keep):
        v, stats = hmc_chain(v, params, config, 1, rng=rng, step_size=step)
        step = stats.current_step_size
        states[k] = v
        rejections.append(stats.rejection_rate)

    chain_mean = states.mean(axis=0)                     # (n_chains, dim)
    chain_m2 = (states ** 2).mean(axis=0)
    grand_mean = chain_mean.mean(axis=0)
    grand_m2 = chain_m2.mean(axis=0)
    se_mean = chain_mean.std(axis=0, ddof=1) / np.sqrt(n_chains)
    se_m2 = chain_m2.std(axis=0, ddof=1) / np.sqrt(n_chains)

    return {
        "n_samples": keep * n_chains,
        "mean_abs": np.abs(grand_mean),
        "mean_4se": 4.0 * se_mean,
        "var_abs_err": np.abs(grand_m2 - 1.0),
        "var_4se": 4.0 * se_m2,
        "rejection_rate": float(np.mean(rejections)),
        "step_size": step,
    }
