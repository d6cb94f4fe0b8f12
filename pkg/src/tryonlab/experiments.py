"""Batch experiment drivers and JSON configuration behind the CLI.

A config fully determines every output byte: model seed and dims, noise
schedule, sampler and energy settings, dataset manifest, trial count.
Runs execute paired corrected/baseline trajectories per trial with shared
seeds; sweeps re-run the trials over fixed ablation grids and reduce each
grid point to mean final metrics.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .denoiser import LAYER_FULL, LAYER_HALF, ToyAttentionDenoiser, toy_init
from .energy import EnergyConfig, EnergyError
from .grids import BinaryMask, Grid, GridError, grid_read, mask_read, resample_mask
from .rng import RandomStream
from .sampler import (
    NoiseSchedule,
    SamplerConfig,
    SamplerError,
    TrajectoryRecord,
    make_schedule,
)
from .sampler import sample as run_sampler
from .schedule import ScheduleError
from .vtid import FeatureExtractor, SceneImage, pixel_extractor, scene_read, vtid_score

__all__ = [
    "ConfigError",
    "ModelConfig",
    "ScheduleConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "config_to_dict",
    "DatasetSample",
    "load_dataset",
    "TrialResult",
    "run_trials",
    "paired_run",
    "run_summary",
    "SCALE_GRID",
    "GUIDANCE_GRID",
    "LAYER_GRID",
    "LAYER_SELECTIONS",
    "SWEEP_METRIC_COLUMNS",
    "point_metrics",
    "sweep_rows",
]

# Ablation grids; rows are emitted exactly in this order.
SCALE_GRID = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
GUIDANCE_GRID = (1.0, 1.5, 2.0, 2.5, 3.0, 5.0)
LAYER_GRID = ("both", "full_only", "half_only")
LAYER_SELECTIONS = {
    "both": None,
    "full_only": frozenset({LAYER_FULL}),
    "half_only": frozenset({LAYER_HALF}),
}

# toy_vtid compares the clamped final latent against the dataset's exact
# composite ground truth: a stand-in for perceptual try-on metrics.
SWEEP_METRIC_COLUMNS = (
    "mean_final_e_attract",
    "mean_final_in_mask_fraction_full",
    "mean_final_in_mask_fraction_half",
    "mean_toy_vtid_vs_reference",
)


class ConfigError(ValueError):
    """User-facing configuration problem; messages carry the field path."""


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 7
    h: int = 48
    w: int = 36
    channels: int = 4


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 20
    beta_1: float = 0.05
    beta_T: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    schedule: ScheduleConfig
    sampler: SamplerConfig
    dataset: str | None
    trials: int
    out: str
    seed: int


def _require_dict(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected an object, got {type(node).__name__}")
    return node


def _reject_unknown(sec: dict, path: str, known: set[str]) -> None:
    for key in sec:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")


def _get_int(sec: dict, path: str, key: str, default: int) -> int:
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    return v


def _get_num(sec: dict, path: str, key: str, default: float) -> float:
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def _get_bool(sec: dict, path: str, key: str, default: bool) -> bool:
    v = sec.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{path}.{key}: expected true/false, got {v!r}")
    return v


def _parse_energy(sec: dict) -> EnergyConfig:
    _reject_unknown(
        sec, "energy", {"lam", "delta", "support_tau", "epsilon_den", "layer_select"}
    )
    select = sec.get("layer_select")
    if select is not None:
        if not isinstance(select, list) or not all(isinstance(s, str) for s in select):
            raise ConfigError(
                f"energy.layer_select: expected null or a list of layer ids, got {select!r}"
            )
        select = frozenset(select)
    try:
        return EnergyConfig(
            lam=_get_num(sec, "energy", "lam", 0.01),
            delta=_get_num(sec, "energy", "delta", 0.02),
            support_tau=_get_num(sec, "energy", "support_tau", 0.01),
            epsilon_den=_get_num(sec, "energy", "epsilon_den", 1e-8),
            layer_select=select,
        )
    except EnergyError as e:
        raise ConfigError(f"energy: {e}") from e


def _parse_sampler(sec: dict, energy: EnergyConfig) -> SamplerConfig:
    _reject_unknown(
        sec,
        "sampler",
        {"rho", "guidance_scale", "steps", "csc_enabled", "record_snapshots", "csc_step_range"},
    )
    rng_range = sec.get("csc_step_range")
    if rng_range is not None:
        ok = (
            isinstance(rng_range, list)
            and len(rng_range) == 2
            and all(isinstance(v, int) and not isinstance(v, bool) for v in rng_range)
        )
        if not ok:
            raise ConfigError(
                f"sampler.csc_step_range: expected null or [start, stop], got {rng_range!r}"
            )
        rng_range = (rng_range[0], rng_range[1])
    try:
        return SamplerConfig(
            rho=_get_num(sec, "sampler", "rho", 0.2),
            guidance_scale=_get_num(sec, "sampler", "guidance_scale", 2.0),
            steps=_get_int(sec, "sampler", "steps", 20),
            csc_enabled=_get_bool(sec, "sampler", "csc_enabled", True),
            energy_cfg=energy,
            record_snapshots=_get_bool(sec, "sampler", "record_snapshots", False),
            csc_step_range=rng_range,
        )
    except SamplerError as e:
        raise ConfigError(f"sampler: {e}") from e


def parse_config(doc) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON object.

    Every violation is reported with the offending field's path; unknown
    fields are rejected so typos cannot silently fall back to defaults.
    """
    top = _require_dict(doc, "config")
    _reject_unknown(
        top,
        "config",
        {"model", "schedule", "sampler", "energy", "dataset", "trials", "out", "seed"},
    )
    model_sec = _require_dict(top.get("model", {}), "model")
    _reject_unknown(model_sec, "model", {"seed", "h", "w", "channels"})
    model = ModelConfig(
        seed=_get_int(model_sec, "model", "seed", 7),
        h=_get_int(model_sec, "model", "h", 48),
        w=_get_int(model_sec, "model", "w", 36),
        channels=_get_int(model_sec, "model", "channels", 4),
    )
    sched_sec = _require_dict(top.get("schedule", {}), "schedule")
    _reject_unknown(sched_sec, "schedule", {"T", "beta_1", "beta_T"})
    sched = ScheduleConfig(
        T=_get_int(sched_sec, "schedule", "T", 20),
        beta_1=_get_num(sched_sec, "schedule", "beta_1", 0.05),
        beta_T=_get_num(sched_sec, "schedule", "beta_T", 0.3),
    )
    energy = _parse_energy(_require_dict(top.get("energy", {}), "energy"))
    sampler = _parse_sampler(_require_dict(top.get("sampler", {}), "sampler"), energy)

    dataset = top.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise ConfigError(f"dataset: expected a manifest path string, got {dataset!r}")
    trials = _get_int(top, "config", "trials", 8)
    if trials < 1:
        raise ConfigError(f"config.trials: must be >= 1, got {trials}")
    out = top.get("out", "out")
    if not isinstance(out, str):
        raise ConfigError(f"config.out: expected a path string, got {out!r}")
    return ExperimentConfig(
        model=model,
        schedule=sched,
        sampler=sampler,
        dataset=dataset,
        trials=trials,
        out=out,
        seed=_get_int(top, "config", "seed", 0),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: invalid JSON ({e})") from e
    cfg = parse_config(doc)
    if cfg.dataset is not None and not Path(cfg.dataset).is_absolute():
        # dataset paths resolve relative to the config file, not the CWD
        cfg = replace(cfg, dataset=str((path.parent / cfg.dataset)))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-ready echo of a config (sets become sorted lists)."""
    e = cfg.sampler.energy_cfg
    return {
        "model": {"seed": cfg.model.seed, "h": cfg.model.h, "w": cfg.model.w,
                  "channels": cfg.model.channels},
        "schedule": {"T": cfg.schedule.T, "beta_1": cfg.schedule.beta_1,
                     "beta_T": cfg.schedule.beta_T},
        "sampler": {
            "rho": cfg.sampler.rho,
            "guidance_scale": cfg.sampler.guidance_scale,
            "steps": cfg.sampler.steps,
            "csc_enabled": cfg.sampler.csc_enabled,
            "record_snapshots": cfg.sampler.record_snapshots,
            "csc_step_range": list(cfg.sampler.csc_step_range)
            if cfg.sampler.csc_step_range
            else None,
        },
        "energy": {
            "lam": e.lam,
            "delta": e.delta,
            "support_tau": e.support_tau,
            "epsilon_den": e.epsilon_den,
            "layer_select": sorted(e.layer_select) if e.layer_select is not None else None,
        },
        "dataset": cfg.dataset,
        "trials": cfg.trials,
        "out": cfg.out,
        "seed": cfg.seed,
    }


@dataclass(frozen=True)
class DatasetSample:
    person: SceneImage
    garment: SceneImage
    mask: BinaryMask
    flow_x: Grid
    flow_y: Grid
    generated: SceneImage
    gen_mask: BinaryMask


def load_dataset(manifest_path) -> list[DatasetSample]:
    """Read every sample referenced by a dataset manifest.

    Paths are relative to the manifest's directory. Missing or malformed
    files are reported with their path; an empty manifest is an error.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"dataset: manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"dataset: {manifest_path}: invalid JSON ({e})") from e
    roles = ("person", "garment", "flow_x", "flow_y", "generated", "mask", "gen_mask")
    lists = {}
    for role in roles:
        v = manifest.get(role)
        if not isinstance(v, list) or not all(isinstance(p, str) for p in v):
            raise ConfigError(f"dataset: manifest field {role!r} must be a list of paths")
        lists[role] = v
    n = len(lists["person"])
    if n == 0:
        raise ConfigError("dataset: manifest lists no samples")
    if any(len(lists[r]) != n for r in roles):
        raise ConfigError("dataset: manifest role lists have differing lengths")
    root = manifest_path.parent
    samples = []
    for i in range(n):
        def _path(role: str) -> Path:
            p = root / lists[role][i]
            if not p.exists():
                raise ConfigError(f"dataset: file not found: {p}")
            return p

        try:
            samples.append(
                DatasetSample(
                    person=scene_read(_path("person")),
                    garment=scene_read(_path("garment")),
                    mask=mask_read(_path("mask")),
                    flow_x=grid_read(_path("flow_x")),
                    flow_y=grid_read(_path("flow_y")),
                    generated=scene_read(_path("generated")),
                    gen_mask=mask_read(_path("gen_mask")),
                )
            )
        except GridError as e:
            raise ConfigError(f"dataset: sample {i}: {e}") from e
    return samples


@dataclass(frozen=True)
class TrialResult:
    trial: int
    final_x: Grid
    record: TrajectoryRecord
    toy_vtid: float | None


def _toy_vtid(sample: DatasetSample, final_x: Grid, fx: FeatureExtractor) -> float:
    if sample.person.shape != final_x.shape:
        raise ConfigError(
            f"model dims {final_x.shape} != dataset canvas {sample.person.shape}; "
            "the try-on proxy metric needs them equal"
        )
    report = vtid_score(
        person=sample.person,
        garment=sample.garment,
        flow_x=sample.flow_x,
        flow_y=sample.flow_y,
        generated=SceneImage.gray(final_x),
        clothing_mask=sample.mask,
        gen_clothing_mask=sample.mask,
        fx=fx,
    )
    return report.vtid


def run_trials(
    model,
    schedule: NoiseSchedule,
    samp_cfg: SamplerConfig,
    dataset: list[DatasetSample],
    trials: int,
    seed: int,
    jobs: int = 1,
    fx: FeatureExtractor | None = None,
) -> list[TrialResult]:
    """Run `trials` independent trajectories, one child stream per trial.

    Trial i uses dataset sample i mod n, with the mask resampled to the
    model's latent resolution. The child stream depends only on (seed, i),
    so two arms (or two sweep points) at the same seed share noise draws.
    Trials are embarrassingly parallel; results are returned in trial
    order regardless of jobs.
    """
    n = len(dataset)
    if n == 0:
        raise ConfigError("dataset: no samples")
    latent_h = getattr(model, "h", None)
    latent_w = getattr(model, "w", None)

    def one(i: int) -> TrialResult:
        sample_i = dataset[i % n]
        mask = sample_i.mask
        if latent_h is not None and mask.shape != (latent_h, latent_w):
            mask = resample_mask(mask, latent_h, latent_w)
        rng = RandomStream(seed).child(f"trial-{i}")
        x, record = run_sampler(model, mask, samp_cfg, schedule, rng)
        vt = _toy_vtid(sample_i, x, fx) if fx is not None else None
        return TrialResult(trial=i, final_x=x, record=record, toy_vtid=vt)

    if jobs <= 1 or trials == 1:
        return [one(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(trials)))


FINAL_METRICS = (
    "final_e_total",
    "final_e_attract",
    "final_e_repel",
    "final_in_mask_fraction_full",
    "final_in_mask_fraction_half",
)


def _final_metric(result: TrialResult, name: str) -> float:
    final = result.record.final
    if name == "final_e_total":
        return final.e_total
    if name == "final_e_attract":
        return final.e_attract
    if name == "final_e_repel":
        return final.e_repel
    if name == "final_in_mask_fraction_full":
        return final.in_mask_fraction.get(LAYER_FULL, float("nan"))
    if name == "final_in_mask_fraction_half":
        return final.in_mask_fraction.get(LAYER_HALF, float("nan"))
    raise KeyError(name)


def paired_run(
    model,
    schedule: NoiseSchedule,
    samp_cfg: SamplerConfig,
    dataset: list[DatasetSample],
    trials: int,
    seed: int,
    jobs: int = 1,
) -> tuple[list[TrialResult], list[TrialResult]]:
    """(corrected, baseline) trial lists with shared per-trial seeds."""
    csc = run_trials(
        model, schedule, replace(samp_cfg, csc_enabled=True), dataset, trials, seed, jobs
    )
    base = run_trials(
        model, schedule, replace(samp_cfg, csc_enabled=False), dataset, trials, seed, jobs
    )
    return csc, base


def _paired_effect_size(deltas: np.ndarray) -> float:
    """Paired Cohen's d: mean delta over its sample standard deviation."""
    if deltas.size < 2:
        return 0.0
    sd = float(deltas.std(ddof=1))
    if sd == 0.0:
        return 0.0
    return float(deltas.mean()) / sd


def run_summary(
    csc: list[TrialResult], base: list[TrialResult], cfg: ExperimentConfig
) -> dict:
    """Aggregate a paired run: per-arm means, deltas, paired effect sizes.

    With rho = 0 the two arms are bit-identical, so every delta is
    exactly 0.
    """
    out: dict = {"trials": len(csc), "arms": {}, "delta": {}, "effect_size": {}}
    values = {
        "csc": {m: np.array([_final_metric(r, m) for r in csc]) for m in FINAL_METRICS},
        "baseline": {m: np.array([_final_metric(r, m) for r in base]) for m in FINAL_METRICS},
    }
    for arm in ("csc", "baseline"):
        out["arms"][arm] = {m: float(values[arm][m].mean()) for m in FINAL_METRICS}
    for m in FINAL_METRICS:
        deltas = values["csc"][m] - values["baseline"][m]
        out["delta"][m] = float(deltas.mean())
        out["effect_size"][m] = _paired_effect_size(deltas)
    out["config"] = config_to_dict(cfg)
    return out


def point_metrics(
    model,
    schedule: NoiseSchedule,
    samp_cfg: SamplerConfig,
    dataset: list[DatasetSample],
    trials: int,
    seed: int,
    jobs: int = 1,
    fx: FeatureExtractor | None = None,
) -> dict[str, float]:
    """Mean final metrics of one sweep grid point."""
    if fx is None:
        fx = pixel_extractor()
    results = run_trials(model, schedule, samp_cfg, dataset, trials, seed, jobs, fx=fx)
    return {
        "mean_final_e_attract": float(
            np.mean([_final_metric(r, "final_e_attract") for r in results])
        ),
        "mean_final_in_mask_fraction_full": float(
            np.mean([_final_metric(r, "final_in_mask_fraction_full") for r in results])
        ),
        "mean_final_in_mask_fraction_half": float(
            np.mean([_final_metric(r, "final_in_mask_fraction_half") for r in results])
        ),
        "mean_toy_vtid_vs_reference": float(np.mean([r.toy_vtid for r in results])),
    }


def _sweep_cfg(kind: str, value, samp_cfg: SamplerConfig) -> SamplerConfig:
    if kind == "scale_factor":
        return replace(samp_cfg, rho=value, csc_enabled=True)
    if kind == "guidance":
        return replace(samp_cfg, guidance_scale=value)
    if kind == "layers":
        energy = replace(samp_cfg.energy_cfg, layer_select=LAYER_SELECTIONS[value])
        return replace(samp_cfg, energy_cfg=energy)
    raise ConfigError(f"unknown sweep kind {kind!r} (use scale_factor, guidance, layers)")


def sweep_value_column(kind: str) -> str:
    return {"scale_factor": "rho", "guidance": "guidance_scale", "layers": "layers"}[kind]


def sweep_rows(
    kind: str,
    model,
    schedule: NoiseSchedule,
    samp_cfg: SamplerConfig,
    dataset: list[DatasetSample],
    trials: int,
    seed: int,
    jobs: int = 1,
) -> list[dict]:
    """One row per grid point, in grid order, keyed by the value column."""
    grids = {"scale_factor": SCALE_GRID, "guidance": GUIDANCE_GRID, "layers": LAYER_GRID}
    if kind not in grids:
        raise ConfigError(f"unknown sweep kind {kind!r} (use scale_factor, guidance, layers)")
    rows = []
    for value in grids[kind]:
        cfg = _sweep_cfg(kind, value, samp_cfg)
        metrics = point_metrics(model, schedule, cfg, dataset, trials, seed, jobs)
        rows.append({sweep_value_column(kind): value, **metrics})
    return rows


def build_model(cfg: ExperimentConfig) -> ToyAttentionDenoiser:
    try:
        return toy_init(cfg.model.seed, cfg.model.h, cfg.model.w, cfg.model.channels)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e


def build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    try:
        schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_1, cfg.schedule.beta_T)
    except ScheduleError as e:
        raise ConfigError(f"schedule: {e}") from e
    if schedule.T < cfg.sampler.steps:
        raise ConfigError(
            f"schedule.T: {schedule.T} is shorter than sampler.steps {cfg.sampler.steps}"
        )
    return schedule
