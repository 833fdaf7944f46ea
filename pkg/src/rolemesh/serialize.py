"""Canonical structured-text encoding.

YAML is the human-facing format (scenario files, snapshots, golden files);
compact JSON with sorted keys is used for digests and line-delimited logs.
Both are byte-stable for equal values as long as callers build mappings in
a fixed field order.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

import yaml


class _Dumper(yaml.SafeDumper):
    pass


_OTHER_BREAKS = ("\r", "\x85", "\u2028", "\u2029")


def _str_presenter(dumper, value: str):
    # the loader folds non-"\n" line breaks inside plain/quoted scalars; double quotes escape them
    if any(b in value for b in _OTHER_BREAKS):
        style = '"'
    else:
        style = "|" if "\n" in value else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", value, style=style)


_Dumper.add_representer(str, _str_presenter)
_Dumper.add_representer(tuple, _Dumper.represent_list)


def dump_yaml(data: Any) -> str:
    return yaml.dump(
        data,
        Dumper=_Dumper,
        sort_keys=False,
        default_flow_style=False,
        allow_unicode=True,
        width=4096,
    )


def load_yaml(text: str) -> Any:
    return yaml.safe_load(text)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=_default)


def _default(obj: Any) -> Any:
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "to_data"):
        return obj.to_data()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def digest(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()
