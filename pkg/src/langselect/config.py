"""Run configuration: one JSON document describing a whole pipeline run.

Secrets never live in the config: endpoint blocks name the environment
variable holding the API key, and any ``${VAR}`` placeholder in a string
value is interpolated from the environment at load time.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

from .datasets import DatasetId, SplitSpec
from .gateway import ModelEndpoint
from .languages import DEFAULT_LANGUAGES, Language

_VAR_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


def _interpolate(value):
    if isinstance(value, str):
        def replace(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"config references unset environment variable {name!r}")
            return os.environ[name]

        return _VAR_PATTERN.sub(replace, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


def _endpoint(block: dict | None, name: str) -> ModelEndpoint | None:
    if block is None:
        return None
    try:
        return ModelEndpoint(
            base_url=block["base_url"],
            model_name=block["model_name"],
            api_key_ref=block.get("api_key_ref", ""),
            max_retries=int(block.get("max_retries", 3)),
            timeout=float(block.get("timeout", 60.0)),
            max_in_flight=int(block.get("max_in_flight", 4)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} endpoint block: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    dataset_path: Path
    dataset_id: DatasetId
    output_dir: Path
    languages: tuple[Language, ...]
    split: SplitSpec
    chat_endpoint: ModelEndpoint | None = None
    translation_endpoint: ModelEndpoint | None = None
    embedding_endpoint: ModelEndpoint | None = None
    k_list: tuple[int, ...] = (12,)
    seeds: tuple[int, ...] = (0,)
    country_map_path: Path | None = None
    template_dir: Path | None = None

    def require_endpoint(self, which: str) -> ModelEndpoint:
        endpoint = getattr(self, f"{which}_endpoint")
        if endpoint is None:
            raise ConfigError(f"config has no {which}_endpoint block, required by this command")
        return endpoint


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = _interpolate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None

    dataset = data.get("dataset")
    if not isinstance(dataset, dict) or "path" not in dataset or "id" not in dataset:
        raise ConfigError(f"{path}: 'dataset' block with 'path' and 'id' is required")
    dataset_path = (path.parent / dataset["path"]).resolve() if not Path(dataset["path"]).is_absolute() else Path(dataset["path"])
    if not dataset_path.exists():
        raise ConfigError(f"dataset file not found: {dataset_path}")
    try:
        dataset_id = DatasetId(dataset["id"])
    except ValueError:
        raise ConfigError(f"unknown dataset id {dataset['id']!r}") from None

    codes = data.get("languages")
    if codes is None:
        languages = DEFAULT_LANGUAGES
    else:
        try:
            languages = tuple(Language(c) for c in codes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not languages:
            raise ConfigError("language set must be non-empty")
        if len(set(languages)) != len(languages):
            raise ConfigError("language set has duplicates")

    split_block = data.get("split") or {}
    split = SplitSpec(
        seed=int(split_block.get("seed", 0)),
        train_count=int(split_block.get("train_count", 0)),
        test_count=int(split_block.get("test_count", 0)),
    )

    output_dir = data.get("output_dir")
    if not output_dir:
        raise ConfigError(f"{path}: 'output_dir' is required")
    output_path = (path.parent / output_dir) if not Path(output_dir).is_absolute() else Path(output_dir)

    country_map = data.get("country_map")
    country_map_path = None
    if country_map:
        country_map_path = (path.parent / country_map) if not Path(country_map).is_absolute() else Path(country_map)
        if not country_map_path.exists():
            raise ConfigError(f"country map file not found: {country_map_path}")

    template_dir = data.get("template_dir")
    template_path = None
    if template_dir:
        template_path = (path.parent / template_dir) if not Path(template_dir).is_absolute() else Path(template_dir)
        if not template_path.is_dir():
            raise ConfigError(f"template directory not found: {template_path}")

    k_list = tuple(int(k) for k in data.get("k_list", [12]))
    if not k_list or any(k < 1 for k in k_list):
        raise ConfigError("k_list must contain positive integers")
    seeds = tuple(int(s) for s in data.get("seeds", [0]))
    if not seeds:
        raise ConfigError("seeds must be non-empty")

    return RunConfig(
        dataset_path=dataset_path,
        dataset_id=dataset_id,
        output_dir=output_path,
        languages=languages,
        split=split,
        chat_endpoint=_endpoint(data.get("chat_endpoint"), "chat"),
        translation_endpoint=_endpoint(data.get("translation_endpoint"), "translation"),
        embedding_endpoint=_endpoint(data.get("embedding_endpoint"), "embedding"),
        k_list=k_list,
        seeds=seeds,
        country_map_path=country_map_path,
        template_dir=template_path,
    )
