"""YAML run configuration.

Example::

    profile: raw
    seed: 0
    lexicon: lexicon.txt
    out_dir: out
    threshold: 1.5            # length-abstention ratio
    abstain_target: null      # if set, calibrate the threshold to this rate
    contrastive: {alpha: 1.0, beta: 0.1, gamma: 0.02}
    corpus: {gt: gt/, predictions: [preds.jsonl], metadata: meta.csv}
    rq2: {gt: perturbed/, predictions: [rq2.jsonl]}
    rq3: {pairs: {mask: greedy, vcd: hf_greedy, m3id: hf_greedy, lmc: clean},
          abstain_baseline: greedy}

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..interventions import ContrastiveParams
from ..textnorm import NormProfile, get_profile


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusPaths:
    gt: Path
    predictions: tuple[Path, ...] = ()
    metadata: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    profile: NormProfile = field(default_factory=lambda: get_profile("raw"))
    lexicon: Path | None = None
    seed: int = 0
    contrastive: ContrastiveParams = field(default_factory=ContrastiveParams)
    threshold: float = 1.5
    abstain_target: float | None = None
    out_dir: Path = Path("out")
    corpus: CorpusPaths | None = None
    rq2: CorpusPaths | None = None
    rq3_pairs: Mapping[str, str] = field(default_factory=dict)
    abstain_baseline: str | None = None


_TOP_KEYS = {
    "profile", "lexicon", "seed", "contrastive", "threshold", "abstain_target",
    "out_dir", "corpus", "rq2", "rq3",
}


def _path(base: Path, value: Any, key: str, must_exist: bool = True) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{key}: path does not exist: {p}")
    return p


def _corpus_paths(base: Path, data: Any, key: str) -> CorpusPaths:
    if not isinstance(data, dict) or "gt" not in data:
        raise ConfigError(f"{key} needs a 'gt' entry")
    unknown = set(data) - {"gt", "predictions", "metadata"}
    if unknown:
        raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
    preds = data.get("predictions") or []
    if isinstance(preds, str):
        preds = [preds]
    return CorpusPaths(
        _path(base, data["gt"], f"{key}.gt"),
        tuple(_path(base, p, f"{key}.predictions") for p in preds),
        _path(base, data["metadata"], f"{key}.metadata") if data.get("metadata") else None,
    )


def config_from_mapping(data: Mapping[str, Any], base: Path = Path(".")) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        profile = data.get("profile", "raw")
        profile = NormProfile.from_mapping(profile) if isinstance(profile, dict) else get_profile(profile)
        contrastive = ContrastiveParams(**(data.get("contrastive") or {}))
    except (TypeError, ValueError, KeyError) as err:
        raise ConfigError(str(err)) from None
    rq3 = data.get("rq3") or {}
    if set(rq3) - {"pairs", "abstain_baseline"}:
        raise ConfigError(f"rq3: unknown keys {sorted(set(rq3) - {'pairs', 'abstain_baseline'})}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(
        profile=profile,
        lexicon=_path(base, data["lexicon"], "lexicon") if data.get("lexicon") else None,
        seed=seed,
        contrastive=contrastive,
        threshold=float(data.get("threshold", 1.5)),
        abstain_target=None if data.get("abstain_target") is None else float(data["abstain_target"]),
        out_dir=_path(base, data.get("out_dir", "out"), "out_dir", must_exist=False),
        corpus=_corpus_paths(base, data["corpus"], "corpus") if data.get("corpus") else None,
        rq2=_corpus_paths(base, data["rq2"], "rq2") if data.get("rq2") else None,
        rq3_pairs=dict(rq3.get("pairs") or {}),
        abstain_baseline=rq3.get("abstain_baseline"),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data or {}, path.parent)
