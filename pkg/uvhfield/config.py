# --------------------------------------------------------------------
# config.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Saturday March 15, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Layered run configuration.  Built-in defaults are overlaid by JSON
config files and then by command line flags; the result is a flat map
of dotted keys whose canonical text is hashed into every artifact.

Canonical flattening: one `key=value` line per dotted key, keys sorted,
values as compact JSON with sorted object keys, each line ending in a
newline.  The config hash is the SHA-256 of that text.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Optional

from uvhfield.datagen import SceneSpec
from uvhfield.encodings import FreqEncoding, HashConfig
from uvhfield.errors import ConfigurationError
from uvhfield.field import FieldConfig
from uvhfield.render import RenderConfig
from uvhfield.surface_map import DEFAULT_H_MAX
from uvhfield.trainer import TrainConfig
from uvhfield.typedefs import JsonDict, PathSpec

# --------------------------------------------------------------------
NULLABLE = frozenset({"data.light"})
MODEL_SECTIONS = ("mapping.", "encoding.", "pose.", "field.")
MODEL_KEYS = frozenset({"train.ablate"})


# --------------------------------------------------------------------
def defaults() -> JsonDict:
    train = TrainConfig().to_dict()
    del train["seed"]
    data = SceneSpec().to_dict()
    del data["seed"]
    render = RenderConfig()
    return {
        "seed": 0,
        "mapping": {"h_max": DEFAULT_H_MAX, "dispersed": True, "fallback": True},
        "encoding": {
            "hash": {
                "levels": HashConfig.levels,
                "features": HashConfig.features,
                "table_size_log2": HashConfig.table_size_log2,
                "base_res": HashConfig.base_res,
                "max_res": HashConfig.max_res,
            },
            "freq": {"bands": FreqEncoding.bands},
        },
        "pose": {"latent_dim": FieldConfig.latent_dim},
        "field": {
            "remap_scale": FieldConfig.remap_scale,
            "width": FieldConfig.width,
            "blocks": FieldConfig.blocks,
        },
        "train": train,
        "render": {
            "background": list(render.background),
            "samples": render.samples,
            "chunk": render.chunk,
        },
        "data": data,
    }


# --------------------------------------------------------------------
def flatten(tree: JsonDict, prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        dotted = prefix + str(key)
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


# --------------------------------------------------------------------
def unflatten(flat: dict[str, Any]) -> JsonDict:
    tree: JsonDict = {}
    for dotted, value in flat.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for name in parents:
            node = node.setdefault(name, {})
        node[leaf] = value
    return tree


# --------------------------------------------------------------------
def kind_of(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (list, tuple)):
        return "list"
    return type(value).__name__


# --------------------------------------------------------------------
def _accepts(expected: str, found: str) -> bool:
    return expected == found or (expected == "number" and found == "integer")


# --------------------------------------------------------------------
def parse_value(text: str) -> Any:
    """A flag value: JSON when it parses, otherwise the bare string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# --------------------------------------------------------------------
class RunConfig:
    def __init__(self):
        self._defaults = flatten(defaults())
        self.values = dict(self._defaults)
        self.file_kinds: dict[str, tuple[str, str]] = {}

    def keys(self) -> list[str]:
        return sorted(self.values)

    def get(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigurationError(key, "unknown key")
        return self.values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def _check(self, key: str, value: Any) -> Any:
        if key not in self._defaults:
            raise ConfigurationError(key, "unknown key")
        expected = kind_of(self._defaults[key])
        found = kind_of(value)
        if found == "null" and key in NULLABLE:
            return None
        if not _accepts(expected, found):
            raise ConfigurationError(key, f"expected a {expected}, found a {found}")
        if isinstance(value, tuple):
            value = list(value)
        return value

    def load_file(self, path: PathSpec) -> "RunConfig":
        path = Path(path)
        try:
            tree = json.loads(path.read_text())
        except OSError as e:
            raise ConfigurationError(str(path), f"cannot read config file: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(str(path), f"not valid JSON: {e}") from e
        if not isinstance(tree, dict):
            raise ConfigurationError(str(path), "a config file must hold a JSON object")

        for key, value in flatten(tree).items():
            value = self._check(key, value)
            kind = kind_of(value)
            if key in self.file_kinds:
                prev_kind, prev_path = self.file_kinds[key]
                if prev_kind != kind:
                    raise ConfigurationError(
                        key, f"set to a {prev_kind} in {prev_path} and a {kind} in {path}"
                    )
            self.file_kinds[key] = (kind, str(path))
            self.values[key] = value
        return self

    def load_files(self, paths: Iterable[PathSpec]) -> "RunConfig":
        for path in paths:
            self.load_file(path)
        return self

    def set(self, key: str, value: Any) -> "RunConfig":
        """Flag layer: overrides any file value for the key."""
        self.values[key] = self._check(key, value)
        return self

    def set_assignment(self, text: str) -> "RunConfig":
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigurationError(text, "expected KEY=VALUE")
        return self.set(key.strip(), parse_value(value))

    def copy(self) -> "RunConfig":
        other = RunConfig()
        other.values = dict(self.values)
        other.file_kinds = dict(self.file_kinds)
        return other

    def tree(self) -> JsonDict:
        return unflatten(self.values)

    def canonical(self, keys: Optional[Iterable[str]] = None) -> str:
        keys = sorted(self.values if keys is None else keys)
        return "".join(
            f"{key}={json.dumps(self.values[key], sort_keys=True, separators=(',', ':'))}\n"
            for key in keys
        )

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def model_keys(self) -> list[str]:
        return [k for k in self.values if k.startswith(MODEL_SECTIONS) or k in MODEL_KEYS]

    def model_hash(self) -> str:
        """Hash of the keys that determine the shape of the field's parameters."""
        return hashlib.sha256(self.canonical(self.model_keys()).encode("utf-8")).hexdigest()

    def field_config(self, n_joints: int) -> FieldConfig:
        v = self.values
        cfg = FieldConfig(
            n_joints=n_joints,
            latent_dim=v["pose.latent_dim"],
            width=v["field.width"],
            blocks=v["field.blocks"],
            remap_scale=float(v["field.remap_scale"]),
            h_max=float(v["mapping.h_max"]),
            dispersed=v["mapping.dispersed"],
            fallback=v["mapping.fallback"],
            hash=HashConfig(
                levels=v["encoding.hash.levels"],
                features=v["encoding.hash.features"],
                table_size_log2=v["encoding.hash.table_size_log2"],
                base_res=v["encoding.hash.base_res"],
                max_res=v["encoding.hash.max_res"],
            ),
            freq=FreqEncoding(bands=v["encoding.freq.bands"]),
        )
        return cfg.with_ablation(v["train.ablate"])

    def train_config(self) -> TrainConfig:
        section = self.tree()["train"]
        return TrainConfig(**section, seed=self.values["seed"]).validate()

    def render_config(self) -> RenderConfig:
        v = self.values
        if v["render.samples"] < 1 or v["render.chunk"] < 1:
            raise ConfigurationError("render.samples", "sample and chunk counts must be positive")
        background = v["render.background"]
        if len(background) != 3:
            raise ConfigurationError("render.background", "expected an RGB triple")
        return RenderConfig(
            samples=v["render.samples"],
            background=tuple(float(c) for c in background),
            seed=v["seed"],
            chunk=v["render.chunk"],
        )

    def scene_spec(self) -> SceneSpec:
        data = self.tree()["data"]
        return SceneSpec.from_dict({**data, "seed": self.values["seed"]}).validate()
