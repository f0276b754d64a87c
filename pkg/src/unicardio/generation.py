"""Inference: run the reverse process for any task.

The generation slot starts from standard normal noise and is walked
down a descending timestep list (a linearly spaced subset for the ddim
sampler, the full chain for ddpm) while condition slots stay pinned to
their clean or degraded signals. Network evaluations are counted
exactly, one per visited nonzero timestep.

``generate`` is batched: condition arrays may be (L,) or (n, L).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .diffusion import (
    SamplerConfig,
    ddim_step,
    ddpm_step,
    make_schedule,
    select_subset_timesteps,
)
from .errors import ParameterError, TaskError
from .model import UniCardioNet
from .signals import NormStats, ObservationMask, SignalSegment, denormalize
from .tasks import Modality, N_SLOTS, TaskSpec

#: modalities whose generated output is mapped back to source units
DENORMALIZE_OUTPUT = {Modality.BP}


@dataclass(frozen=True)
class GenerationResult:
    samples: np.ndarray  # (n, L), or (L,) when a single segment came in
    task: TaskSpec
    sampler: SamplerConfig
    seed: int
    nfe: int
    wall_clock_s: float
    unit_space: str
    trajectory: list[tuple[int, np.ndarray]] | None = None

    @property
    def wall_clock_per_segment_s(self) -> float:
        n = self.samples.shape[0] if self.samples.ndim == 2 else 1
        return self.wall_clock_s / n


def _condition_array(value, L: int) -> np.ndarray:
    if isinstance(value, SignalSegment):
        value = value.samples
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != L:
        raise ParameterError(f"condition of shape {arr.shape} does not match L={L}")
    return arr


def generate(
    params: UniCardioNet,
    task: TaskSpec,
    conditions: dict[Modality, np.ndarray | SignalSegment],
    sampler: SamplerConfig | None = None,
    seed: int = 0,
    stats: dict[Modality, NormStats] | None = None,
    return_trajectory: bool = False,
) -> GenerationResult:
    """Run the reverse process; returns the decoded clean-signal sample.

    ``conditions`` maps each condition modality of ``task`` to its
    (normalized-space) signal, degraded copies included for restoration
    tasks. BP outputs are mapped back to mmHg when stats are given;
    minmax-normalized modalities stay in minmax space.
    """
    sampler = sampler or SamplerConfig()
    cfg = params.config
    L = cfg.L
    want = {c.modality for c in task.conditions}
    got = set(conditions)
    if want != got:
        raise TaskError(
            f"task {task.name()} needs conditions {sorted(m.name for m in want)}, "
            f"got {sorted(m.name for m in got)}"
        )
    arrays = {m: _condition_array(v, L) for m, v in conditions.items()}
    batch_sizes = {a.shape[0] for a in arrays.values()}
    if len(batch_sizes) != 1:
        raise ParameterError("conditions disagree on segment count")
    n = batch_sizes.pop()
    single = all(
        (v.samples if isinstance(v, SignalSegment) else np.asarray(v)).ndim == 1
        for v in conditions.values()
    )

    sched = make_schedule(cfg.n_diffusion_steps)
    if sampler.kind == "ddim":
        steps = select_subset_timesteps(sched.n_steps, sampler.n_steps)
    else:
        steps = list(range(sched.n_steps, -1, -1))

    slots = np.zeros((n, N_SLOTS, L), dtype=np.float64)
    for m, arr in arrays.items():
        slots[:, int(m), :] = arr
    g = int(task.generation_slot)

    rng = np.random.default_rng(seed if sampler.seed is None else sampler.seed)
    x = rng.standard_normal((n, L))
    nfe = 0
    trajectory: list[tuple[int, np.ndarray]] | None = (
        [(sched.n_steps, x.copy())] if return_trajectory else None
    )
    start = time.perf_counter()
    with torch.no_grad():
        for t, t_prev in zip(steps[:-1], steps[1:]):
            slots[:, g, :] = x
            inp = torch.from_numpy(slots.astype(np.float32))
            eps_hat = params(task, inp, t).cpu().numpy().astype(np.float64)
            nfe += 1
            if sampler.kind == "ddim":
                x = ddim_step(x, eps_hat, t, t_prev, sched, eta=sampler.eta, rng=rng)
            else:
                x = ddpm_step(
                    x, eps_hat, t, sched, rng=rng,
                    posterior_variance=sampler.posterior_variance,
                )
            if trajectory is not None:
                trajectory.append((t_prev, x.copy()))
    wall = time.perf_counter() - start

    unit_space = "minmax"
    out = x
    if task.target in DENORMALIZE_OUTPUT:
        unit_space = "zscored"
        if stats is not None and task.target in stats:
            st = stats[task.target]
            out = denormalize(out, st)
            unit_space = st.source_space
    if single:
        out = out[0]
        if trajectory is not None:
            trajectory = [(t, arr[0]) for t, arr in trajectory]
    return GenerationResult(
        samples=out,
        task=task,
        sampler=sampler,
        seed=seed,
        nfe=nfe,
        wall_clock_s=wall,
        unit_space=unit_space,
        trajectory=trajectory,
    )


def impute_composite(generated, condition, mask: ObservationMask, composite: bool):
    """Merge observed samples from the degraded condition with the
    generated values in the gap; pass-through when composite is off."""
    gen_arr = generated.samples if isinstance(generated, SignalSegment) else np.asarray(generated, dtype=np.float64)
    cond_arr = condition.samples if isinstance(condition, SignalSegment) else np.asarray(condition, dtype=np.float64)
    if not composite:
        return generated
    if gen_arr.shape[-1] != len(mask) or cond_arr.shape[-1] != len(mask):
        raise ParameterError(
            f"mask length {len(mask)} does not match segments "
            f"{gen_arr.shape[-1]}/{cond_arr.shape[-1]}"
        )
    merged = np.where(mask.observed, cond_arr, gen_arr)
    if isinstance(generated, SignalSegment):
        from dataclasses import replace

        return replace(generated, samples=merged)
    return merged


def write_generation_sidecar(result: GenerationResult, path) -> None:
    """JSON sidecar: task, sampler, seed, NFE, wall-clock."""
    n = result.samples.shape[0] if result.samples.ndim == 2 else 1
    payload = {
        "task": result.task.name(),
        "sampler": asdict(result.sampler),
        "seed": result.seed,
        "nfe": result.nfe,
        "n_segments": n,
        "wall_clock_s": result.wall_clock_s,
        "wall_clock_per_segment_s": result.wall_clock_per_segment_s,
        "unit_space": result.unit_space,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
