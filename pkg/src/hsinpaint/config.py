"""Experiment configuration: one strict JSON document covering synthesis,
degradation, patching, dictionary learning, the denoiser and the solver.

Unknown keys are rejected everywhere so typos fail loudly instead of
silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import HsiError, PatchScheme
from .degrade import DegradeSpec, SynthSpec
from .solver import SolverConfig
from .sparse import Denoiser, NonLocalMeans, SoftThreshold


@dataclass(frozen=True)
class DictParams:
    atoms: int = 160
    sparsity: int = 8
    sweeps: int = 15
    seed: int = 3

    def __post_init__(self):
        if self.atoms < 1 or self.sparsity < 1 or self.sweeps < 0:
            raise HsiError("bad-config", "dictionary atoms/sparsity must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthSpec
    degrade: DegradeSpec
    scheme: PatchScheme
    dictionary: DictParams
    denoiser: Denoiser
    solver: SolverConfig
    runs: int = 20
    output_cube: str | None = None
    output_trace: str | None = None


def _strict(section: dict, allowed: set[str], where: str) -> None:
    if not isinstance(section, dict):
        raise HsiError("bad-config", f"{where} must be a JSON object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise HsiError("config-unknown-key", f"unknown key(s) in {where}: {unknown}")


def _synth_from(d: dict) -> SynthSpec:
    _strict(d, {"rows", "cols", "bands", "rank", "abundance_smoothness", "seed"}, "synth")
    return SynthSpec(**d)


def _degrade_from(d: dict) -> DegradeSpec:
    _strict(d, {"mask_kind", "missing_fraction", "noise_sigma", "seed"}, "degrade")
    return DegradeSpec(**d)


def _scheme_from(d: dict) -> PatchScheme:
    _strict(d, {"mode", "patch_edge", "stride"}, "patch_scheme")
    return PatchScheme(**d)


def _dict_from(d: dict) -> DictParams:
    _strict(d, {"atoms", "sparsity", "sweeps", "seed"}, "dictionary")
    return DictParams(**d)


def _denoiser_from(d: dict) -> Denoiser:
    _strict(d, {"kind", "threshold", "window", "search", "h"}, "denoiser")
    kind = d.get("kind", "soft_threshold")
    rest = {k: v for k, v in d.items() if k != "kind"}
    if kind == "soft_threshold":
        _strict(rest, {"threshold"}, "denoiser(soft_threshold)")
        return SoftThreshold(**rest)
    if kind == "nlm":
        _strict(rest, {"window", "search", "h"}, "denoiser(nlm)")
        return NonLocalMeans(**rest)
    raise HsiError("bad-config", f"unknown denoiser kind {kind!r}")


_SOLVER_KEYS = {
    "gamma", "w_lr", "w_s", "lambda1_init", "lambda2_init", "mu1_init", "mu2_init",
    "rho1", "rho2", "outer_max", "inner_ista", "dip_inner", "tol", "seed",
    "u_prior", "sparse_enabled", "dip_lr", "dip_channels", "wmv_window",
    "wmv_patience", "wmv_enabled", "dip_reinit_per_outer",
}


def _solver_from(d: dict) -> SolverConfig:
    _strict(d, _SOLVER_KEYS, "solver")
    if "dip_channels" in d:
        d = dict(d, dip_channels=tuple(d["dip_channels"]))
    return SolverConfig(**d)


def experiment_from_dict(doc: dict) -> ExperimentConfig:
    _strict(doc, {"synth", "degrade", "patch_scheme", "dictionary", "denoiser",
                  "solver", "runs", "output"}, "experiment config")
    runs = doc.get("runs", 20)
    if not isinstance(runs, int) or runs < 1:
        raise HsiError("bad-config", "runs must be a positive integer")
    output = doc.get("output", {})
    _strict(output, {"cube", "trace"}, "output")
    return ExperimentConfig(
        synth=_synth_from(doc.get("synth", {})),
        degrade=_degrade_from(doc.get("degrade", {})),
        scheme=_scheme_from(doc.get("patch_scheme", {})),
        dictionary=_dict_from(doc.get("dictionary", {})),
        denoiser=_denoiser_from(doc.get("denoiser", {})),
        solver=_solver_from(doc.get("solver", {})),
        runs=runs,
        output_cube=output.get("cube"),
        output_trace=output.get("trace"),
    )


def load_experiment_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise HsiError("bad-config", f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise HsiError("bad-config", f"{path}: config must be a JSON object")
    return experiment_from_dict(doc)


def default_experiment() -> ExperimentConfig:
    return experiment_from_dict({})
