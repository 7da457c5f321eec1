"""CD-1 training: stochastic gradient steps on the free-energy difference
between data and one-simulation HMC samples started at the data, with the
constraint projection applied after every update and a staged schedule
that brings parameter groups online sequentially.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import free_energy
from .errors import DataError, NumericError
from .grad import grad_free_energy_params
from .params import LEARNABLE_TENSORS, banded_identity, project_constraints, save_checkpoint
from .sampler import HmcConfig, hmc_chain

ALL_TENSORS = frozenset(LEARNABLE_TENSORS)


@dataclass
class TrainerConfig:
    lr_C: float = 0.15
    lr_P: float = 0.0015
    lr_W: float = 0.015
    lr_Q: float = 0.1
    lr_R: float = 0.0015
    lr_b_c: float = 0.0015
    lr_b_m: float = 0.0075
    lr_b_k: float = 0.0005
    lr_b_v: float = 0.0015
    batch_size: int = 128
    stage_iterations: tuple = (10000, 30000, 20000, 20000, 40000)
    checkpoint_every: int = 1000
    seed: int = 0

    def lr_for(self, name):
        return getattr(self, f"lr_{name}")

    def validate(self):
        for name in LEARNABLE_TENSORS:
            if self.lr_for(name) < 0:
                raise ValueError(f"negative learning rate for {name}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class StageSpec:
    """One schedule stage: which tensors adapt, whether the phase units
    participate, and tensors reset to their banded pattern at entry."""

    name: str
    iterations: int
    trainable: frozenset
    phase_enabled: bool
    overrides: tuple = ()


def default_stages(stage_iterations=(10000, 30000, 20000, 20000, 40000)):
    """Five-stage schedule: subspace model with fixed pooling, full
    subspace model, phase projections with fixed banded coupling,
    coupling weights, then everything jointly."""
    it = list(stage_iterations)
    if len(it) != 5:
        raise ValueError(f"expected 5 stage iteration counts, got {len(it)}")
    base = frozenset({"C", "W", "b_c", "b_m", "b_v"})
    return [
        StageSpec("subspace-fixed-pool", it[0], base, False, overrides=("P",)),
        StageSpec("subspace-full", it[1], base | {"P"}, False),
        StageSpec("phase-projections", it[2], frozenset({"Q", "b_k"}), True, overrides=("R",)),
        StageSpec("phase-coupling", it[3], frozenset({"R", "b_k"}), True),
        StageSpec("joint", it[4], ALL_TENSORS, True),
    ]


def apply_stage_overrides(params, stage):
    """Reset the named tensors to their banded identity pattern."""
    updates = {}
    for name in stage.overrides:
        if name == "P":
            updates["P"] = banded_identity(*params.P.shape, sign=-1.0)
        elif name == "R":
            updates["R"] = banded_identity(*params.R.shape, sign=1.0)
        else:
            raise ValueError(f"no override rule for tensor {name}")
    return replace(params, **updates) if updates else params


@dataclass
class StepMetrics:
    iteration: int
    stage: int
    f_data: float
    f_model: float
    rejection_rate: float
    step_size: float
    grad_norms: dict = field(default_factory=dict)

    CSV_COLUMNS = ("iteration", "stage", "f_data", "f_model", "rejection_rate",
                   "step_size") + tuple(f"grad_norm_{n}" for n in LEARNABLE_TENSORS)

    @classmethod
    def csv_header(cls):
        return ",".join(cls.CSV_COLUMNS)

    def csv_line(self):
        fields = [str(self.iteration), str(self.stage), f"{self.f_data:.8g}",
                  f"{self.f_model:.8g}", f"{self.rejection_rate:.6g}",
                  f"{self.step_size:.8g}"]
        fields += [f"{self.grad_norms.get(n, 0.0):.6g}" for n in LEARNABLE_TENSORS]
        return ",".join(fields)


def _hmc_negative_sampler(batch, params, hmc_config, step_size, rng, with_phase):
    return hmc_chain(batch, params, hmc_config, 1, rng=rng,
                     with_phase=with_phase, step_size=step_size)


def cd1_step(batch, params, config, hmc_config, step_size, rng,
             trainable=ALL_TENSORS, with_phase=True, negative_sampler=None,
             iteration=0, stage=0):
    """One CD-1 update. Returns (new params, new step size, metrics).

    A NaN anywhere in the proposed update aborts the step with the
    original params intact. `negative_sampler` is an injection point for
    tests (defaults to one HMC simulation started at the data).
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise DataError("empty batch")
    sampler_fn = negative_sampler or _hmc_negative_sampler
    model_batch, stats = sampler_fn(batch, params, hmc_config, step_size, rng, with_phase)

    g_data = grad_free_energy_params(batch, params, with_phase=with_phase)
    g_model = grad_free_energy_params(model_batch, params, with_phase=with_phase)

    updates, norms = {}, {}
    for name in LEARNABLE_TENSORS:
        diff = getattr(g_model, name) - getattr(g_data, name)
        norms[name] = float(np.linalg.norm(diff))
        if name in trainable:
            proposed = getattr(params, name) + config.lr_for(name) * diff
            if not np.all(np.isfinite(proposed)):
                raise NumericError(f"cd1_step: non-finite update for tensor {name}")
            updates[name] = proposed

    new_params = project_constraints(replace(params, **updates))
    metrics = StepMetrics(
        iteration=iteration,
        stage=stage,
        f_data=float(np.mean(free_energy(batch, params, with_phase=with_phase))),
        f_model=float(np.mean(free_energy(model_batch, params, with_phase=with_phase))),
        rejection_rate=stats.rejection_rate,
        step_size=stats.current_step_size,
        grad_norms=norms,
    )
    return new_params, stats.current_step_size, metrics


class PatchCycler:
    """Deterministic minibatch stream: one seeded permutation per pass
    over the data, reshuffled on exhaustion; resumable from a global
    iteration index alone."""

    def __init__(self, patches, batch_size, seed):
        self.patches = np.asarray(patches, dtype=np.float64)
        if self.patches.ndim != 2 or self.patches.shape[0] == 0:
            raise DataError("patch dataset must be a nonempty 2-D matrix")
        self.batch_size = batch_size
        self.seed = seed
        self._perm_cache = {}

    def _perm(self, epoch):
        if epoch not in self._perm_cache:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5E4F, epoch]))
            self._perm_cache[epoch] = rng.permutation(self.patches.shape[0])
            if len(self._perm_cache) > 4:
                oldest = min(k for k in self._perm_cache if k != epoch)
                del self._perm_cache[oldest]
        return self._perm_cache[epoch]

    def batch(self, iteration):
        n = self.patches.shape[0]
        start = iteration * self.batch_size
        positions = np.arange(start, start + self.batch_size)
        rows = np.empty(self.batch_size, dtype=np.int64)
        for k, pos in enumerate(positions):
            rows[k] = self._perm(int(pos // n))[int(pos % n)]
        return self.patches[rows]


def train(patches, config, stages, hmc_config=None, checkpoint_path=None,
          metrics_path=None, start_iteration=0, initial_params=None,
          initial_step_size=None, max_iterations=None, log_fn=None):
    """Run the staged schedule over a patch matrix.

    Resume by passing the checkpointed params, iteration and step size;
    the minibatch stream and per-iteration RNGs are derived from the
    config seed and the global iteration index, so a resumed run matches
    an uninterrupted one exactly.
    """
    config.validate()
    hmc_config = hmc_config or HmcConfig()
    cycler = PatchCycler(patches, config.batch_size, config.seed)
    boundaries = np.cumsum([s.iterations for s in stages])
    total = int(boundaries[-1])
    if max_iterations is not None:
        total = min(total, start_iteration + max_iterations)

    if initial_params is None:
        raise DataError("train() needs initial params (use init_params)")
    params = initial_params
    step_size = hmc_config.step_size if initial_step_size is None else initial_step_size

    metrics_fh = None
    if metrics_path is not None:
        fresh = start_iteration == 0
        metrics_fh = open(metrics_path, "a")
        if fresh:
            metrics_fh.write(StepMetrics.csv_header() + "\n")

    history = []
    consecutive_failures = 0
    stage_idx = int(np.searchsorted(boundaries, start_iteration, side="right")) \
        if start_iteration < boundaries[-1] else len(stages) - 1
    try:
        for it in range(start_iteration, total):
            stage_idx = int(np.searchsorted(boundaries, it, side="right"))
            stage = stages[stage_idx]
            stage_start = 0 if stage_idx == 0 else int(boundaries[stage_idx - 1])
            if it == stage_start:
                params = apply_stage_overrides(params, stage)
                if log_fn:
                    log_fn(f"stage {stage_idx} ({stage.name}) starting at iteration {it}")

            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x4C1D, it]))
            batch = cycler.batch(it)
            try:
                params, step_size, metrics = cd1_step(
                    batch, params, config, hmc_config, step_size, rng,
                    trainable=stage.trainable, with_phase=stage.phase_enabled,
                    iteration=it, stage=stage_idx,
                )
                consecutive_failures = 0
            except NumericError as exc:
                consecutive_failures += 1
                warnings.warn(f"iteration {it}: {exc}; parameters unchanged")
                if consecutive_failures > 10:
                    raise
                continue

            history.append(metrics)
            if metrics_fh:
                metrics_fh.write(metrics.csv_line() + "\n")
            if checkpoint_path and (it + 1) % config.checkpoint_every == 0:
                _write_checkpoint(params, checkpoint_path, it + 1, stage_idx, step_size)
    finally:
        if metrics_fh:
            metrics_fh.close()

    if checkpoint_path:
        _write_checkpoint(params, checkpoint_path, total, stage_idx, step_size)
    return params, history


def _write_checkpoint(params, path, iteration, stage, step_size):
    save_checkpoint(params, {
        "iteration": float(iteration),
        "stage": float(stage),
        "step_size": float(step_size),
    }, path)
