"""Four-phase curriculum training.

Tasks are introduced by condition count: phase 1 sees one-condition
tasks only, phase 2 adds two-condition tasks at half mass, phase 3 adds
three-condition restoration at half mass, and phase 4 balances all
counts. The learning rate steps down at a fixed fraction of the first
phase and again for the final phase. Ablation flags revert each
mechanism: disable_lrs freezes the learning rate, disable_tbc trains
each phase only on its newly introduced condition count, disable_tam
removes the attention masks.

Batches are task-homogeneous because the attention mask is shared
across a batch.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule, forward_marginal, make_schedule, noise_prediction_loss
from .errors import NonFiniteSignalError, ParameterError, TrainingDiverged
from .model import ModelConfig, UniCardioNet, save_checkpoint
from .signals import NormStats, gen_gap_mask, noise_at_snr
from .tasks import (
    SIGNAL_MODALITIES,
    Degradation,
    Modality,
    N_SLOTS,
    TaskSpec,
    make_restoration,
    make_translation,
)


@dataclass(frozen=True)
class CurriculumConfig:
    epochs: int = 40
    k_phases: int = 4
    lr_values: tuple[float, float, float] = (1e-3, 1e-4, 1e-5)
    lr_drop_fraction: float = 0.7
    batch_size: int = 16
    noise_snr_db: float = 15.0
    gap_fraction: tuple[float, float] = (0.1, 0.5)
    #: per-phase probability that a (non 3-condition) draw is restoration
    task_type_threshold: tuple[float, ...] = (0.5, 0.5, 0.5, 0.5)
    #: phase-3 mass on each of the 1- and 2-condition groups
    phase3_low_count_mass: float = 0.25
    #: phase-3 three-condition draws use the masked degradation only
    phase3_threecond_imputation_only: bool = True
    momentum: float = 0.0
    #: cap on the global gradient norm; None leaves updates unclipped
    grad_clip_norm: float | None = None
    disable_lrs: bool = False
    disable_tbc: bool = False
    disable_tam: bool = False

    def __post_init__(self):
        if self.k_phases != 4:
            raise ParameterError("the curriculum is defined for 4 phases")
        if self.epochs < self.k_phases:
            raise ParameterError(
                f"need at least one epoch per phase, got {self.epochs}"
            )
        if len(self.lr_values) != 3 or any(v <= 0 for v in self.lr_values):
            raise ParameterError("lr_values must be three positive rates")
        if not (0.0 < self.lr_drop_fraction < 1.0):
            raise ParameterError("lr_drop_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if len(self.task_type_threshold) != self.k_phases:
            raise ParameterError("need one task-type threshold per phase")
        if any(not (0.0 <= v <= 1.0) for v in self.task_type_threshold):
            raise ParameterError("task-type thresholds must lie in [0, 1]")
        if not (0.0 < self.phase3_low_count_mass <= 0.5):
            raise ParameterError("phase3_low_count_mass must lie in (0, 0.5]")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0.0:
            raise ParameterError(
                f"grad_clip_norm must be positive, got {self.grad_clip_norm}"
            )


def phase_of_epoch(epoch: int, cfg: CurriculumConfig) -> int:
    """Phase 1..k_phases; boundaries at multiples of epochs/k_phases."""
    if not (0 <= epoch < cfg.epochs):
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return min(cfg.k_phases, epoch * cfg.k_phases // cfg.epochs + 1)


def lr_at_epoch(epoch: int, cfg: CurriculumConfig) -> float:
    """Stepwise rate: drops at lr_drop_fraction of the first phase
    length, and again at the start of the final phase."""
    if not (0 <= epoch < cfg.epochs):
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.disable_lrs:
        return cfg.lr_values[0]
    phase_len = cfg.epochs / cfg.k_phases
    first_drop = cfg.lr_drop_fraction * cfg.epochs / cfg.k_phases
    if epoch < first_drop:
        return cfg.lr_values[0]
    if epoch < cfg.epochs - phase_len:
        return cfg.lr_values[1]
    return cfg.lr_values[2]


def condition_count_mixture(phase: int, cfg: CurriculumConfig) -> dict[int, float]:
    """Probability of drawing each condition count in a phase."""
    if phase not in range(1, cfg.k_phases + 1):
        raise ParameterError(f"phase must be 1..{cfg.k_phases}, got {phase}")
    if cfg.disable_tbc:
        return {min(phase, 3): 1.0}
    if phase == 1:
        return {1: 1.0}
    if phase == 2:
        return {1: 0.5, 2: 0.5}
    if phase == 3:
        m = cfg.phase3_low_count_mass
        return {1: m, 2: m, 3: 1.0 - 2.0 * m}
    third = 1.0 / 3.0
    return {1: third, 2: third, 3: third}


def sample_task(phase: int, rng: np.random.Generator, cfg: CurriculumConfig) -> TaskSpec:
    """Draw one task per the phase mixture. Three-condition tasks are
    restoration by construction (translation cannot use the target);
    otherwise family follows the phase's restoration threshold. Target
    and condition subsets are uniform over the legal choices."""
    mix = condition_count_mixture(phase, cfg)
    counts = sorted(mix)
    n_cond = int(rng.choice(counts, p=[mix[c] for c in counts]))
    if n_cond == 3:
        restoration = True
    else:
        restoration = rng.random() < cfg.task_type_threshold[phase - 1]
    target = SIGNAL_MODALITIES[int(rng.integers(0, len(SIGNAL_MODALITIES)))]
    others = [m for m in SIGNAL_MODALITIES if m is not target]
    if not restoration:
        if n_cond == 2:
            sources = tuple(others)
        else:
            sources = (others[int(rng.integers(0, 2))],)
        return make_translation(target, sources)
    n_extra = n_cond - 1
    if n_extra == 0:
        extras: tuple[Modality, ...] = ()
    elif n_extra == 1:
        extras = (others[int(rng.integers(0, 2))],)
    else:
        extras = tuple(others)
    if n_cond == 3 and phase == 3 and cfg.phase3_threecond_imputation_only:
        kind = Degradation.MASKED
    else:
        kind = Degradation.MASKED if rng.random() < 0.5 else Degradation.NOISY
    return make_restoration(target, kind, extras)


@dataclass(frozen=True)
class TrainingData:
    """Aligned normalized segments, one array per signal modality."""

    arrays: dict[Modality, np.ndarray]  # (n, L) each
    fs: float
    stats: dict[Modality, NormStats] | None = None

    def __post_init__(self):
        shapes = {m: np.asarray(a).shape for m, a in self.arrays.items()}
        if len(set(shapes.values())) != 1:
            raise ParameterError(f"misaligned modality arrays: {shapes}")
        for m in SIGNAL_MODALITIES:
            if m not in self.arrays:
                raise ParameterError(f"missing modality {m.name}")

    @property
    def n_segments(self) -> int:
        return len(next(iter(self.arrays.values())))

    @property
    def L(self) -> int:
        return next(iter(self.arrays.values())).shape[1]


@dataclass(frozen=True)
class TrainingBatch:
    slot_inputs: np.ndarray  # (B, k, L) float32
    eps: np.ndarray  # (B, L) float32
    t: np.ndarray  # (B,) int64
    mask: torch.Tensor | None
    task: TaskSpec
    x0: np.ndarray  # clean generation target, for inspection


def build_training_batch(
    dataset: TrainingData,
    task: TaskSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    B: int,
    noise_snr_db: float = 15.0,
    gap_fraction=(0.1, 0.5),
    model_cfg: ModelConfig | None = None,
) -> TrainingBatch:
    """Assemble one task-homogeneous batch: clean/degraded conditions in
    their slots, the noised target in the generation slot, zeros in
    blocked slots."""
    n = dataset.n_segments
    if B < 1:
        raise ParameterError(f"B must be >= 1, got {B}")
    if B > n:
        raise ParameterError(f"batch of {B} exceeds the {n}-segment dataset")
    L = dataset.L
    idx = rng.choice(n, size=B, replace=False)
    t = rng.integers(1, sched.n_steps + 1, size=B)
    eps = rng.standard_normal((B, L))
    x0 = np.asarray(dataset.arrays[task.target], dtype=np.float64)[idx]

    slots = np.zeros((B, N_SLOTS, L), dtype=np.float64)
    for c in task.conditions:
        source = np.asarray(dataset.arrays[c.modality], dtype=np.float64)[idx]
        if c.degradation is Degradation.CLEAN:
            slots[:, int(c.modality), :] = source
        elif c.degradation is Degradation.NOISY:
            for i in range(B):
                slots[i, int(c.modality), :] = noise_at_snr(source[i], noise_snr_db, rng)
        else:
            for i in range(B):
                mask = gen_gap_mask(L, gap_fraction, rng)
                slots[i, int(c.modality), :] = np.where(mask.observed, source[i], 0.0)
    g = int(task.generation_slot)
    for i in range(B):
        slots[i, g, :] = forward_marginal(x0[i], int(t[i]), eps[i], sched)

    attn_mask = None
    if model_cfg is not None:
        from .model import build_attention_mask

        attn_mask = build_attention_mask(task, model_cfg)
    return TrainingBatch(
        slot_inputs=slots.astype(np.float32),
        eps=eps.astype(np.float32),
        t=t.astype(np.int64),
        mask=attn_mask,
        task=task,
        x0=x0,
    )


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    epoch: int
    phase: int
    lr: float
    task: str
    loss: float


@dataclass
class TrainResult:
    model: UniCardioNet
    records: list[TrainRecord]
    #: state dict snapshot at the end of each phase
    phase_states: dict[int, dict]
    checkpoint_paths: dict[int, Path] = field(default_factory=dict)


def write_training_log(records, path) -> None:
    """CSV log: iter,epoch,phase,lr,task,loss."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "epoch", "phase", "lr", "task", "loss"])
        for r in records:
            writer.writerow([r.iteration, r.epoch, r.phase, repr(r.lr), r.task,
                             repr(r.loss)])


def train(
    model_cfg: ModelConfig,
    cur_cfg: CurriculumConfig,
    dataset: TrainingData,
    seed: int = 0,
    out_dir=None,
    log_path=None,
    init_state: dict | None = None,
) -> TrainResult:
    """Run the curriculum with plain SGD. Deterministic given the seed.
    Phase-boundary checkpoints are kept in memory and, when ``out_dir``
    is given, written as UCKPT1 files. ``init_state`` resumes from an
    earlier parameter snapshot instead of a fresh initialization."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = UniCardioNet(model_cfg)
    if init_state is not None:
        model.load_state_dict(init_state)
    sched = make_schedule(model_cfg.n_diffusion_steps)
    opt = torch.optim.SGD(
        model.parameters(), lr=cur_cfg.lr_values[0], momentum=cur_cfg.momentum
    )
    iters_per_epoch = max(1, dataset.n_segments // cur_cfg.batch_size)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    records: list[TrainRecord] = []
    phase_states: dict[int, dict] = {}
    checkpoint_paths: dict[int, Path] = {}
    last_good: dict | None = None
    iteration = 0
    for epoch in range(cur_cfg.epochs):
        lr = lr_at_epoch(epoch, cur_cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        phase = phase_of_epoch(epoch, cur_cfg)
        for _ in range(iters_per_epoch):
            task = sample_task(phase, rng, cur_cfg)
            batch = build_training_batch(
                dataset, task, sched, rng, cur_cfg.batch_size,
                noise_snr_db=cur_cfg.noise_snr_db,
                gap_fraction=cur_cfg.gap_fraction,
            )
            x = torch.from_numpy(batch.slot_inputs)
            eps = torch.from_numpy(batch.eps)
            t = torch.from_numpy(batch.t)
            try:
                eps_hat = model(task, x, t, disable_mask=cur_cfg.disable_tam)
                loss = noise_prediction_loss(eps_hat, eps)
            except NonFiniteSignalError:
                loss = None
            if loss is None or not torch.isfinite(loss):
                if out_dir is not None and last_good is not None:
                    model.load_state_dict(last_good)
                    save_checkpoint(model, out_dir / "last_good.uckpt")
                raise TrainingDiverged(
                    f"non-finite loss at iteration {iteration} "
                    f"(epoch {epoch}, task {task.name()})"
                )
            opt.zero_grad()
            loss.backward()
            if cur_cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(
                    model.parameters(), cur_cfg.grad_clip_norm
                )
            opt.step()
            records.append(
                TrainRecord(iteration, epoch, phase, lr, task.name(), loss.item())
            )
            if iteration % 100 == 0:
                last_good = copy.deepcopy(model.state_dict())
            iteration += 1
        end_of_phase = (
            epoch + 1 == cfg_phase_end(epoch, cur_cfg) or epoch + 1 == cur_cfg.epochs
        )
        if end_of_phase:
            phase_states[phase] = copy.deepcopy(model.state_dict())
            if out_dir is not None:
                path = out_dir / f"phase{phase}.uckpt"
                save_checkpoint(model, path, extra={"phase": phase, "epoch": epoch})
                checkpoint_paths[phase] = path
    if log_path is not None:
        write_training_log(records, log_path)
    return TrainResult(
        model=model,
        records=records,
        phase_states=phase_states,
        checkpoint_paths=checkpoint_paths,
    )


def cfg_phase_end(epoch: int, cfg: CurriculumConfig) -> int:
    """First epoch index after the phase that contains ``epoch``."""
    phase = phase_of_epoch(epoch, cfg)
    for e in range(epoch + 1, cfg.epochs):
        if phase_of_epoch(e, cfg) != phase:
            return e
    return cfg.epochs
