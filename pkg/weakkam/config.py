import logging
import os
import sys
from collections.abc import Mapping
from typing import IO, Dict, List, Optional, Union

import yaml

from . import utils
from .schema import AttrDict, plain, schema_experiment

logger = logging.getLogger("weakkam.config")

paths = [
    os.getenv("WEAKKAM_ROOT_CONFIG", "/etc/weakkam"),
    os.path.join(sys.prefix, "etc", "weakkam"),
    os.path.join(os.path.expanduser("~"), ".config", "weakkam"),
    os.path.join(os.path.expanduser("~"), ".weakkam"),
]

if "WEAKKAM_CONFIG" in os.environ:
    paths.append(os.environ["WEAKKAM_CONFIG"])

# command line flag -> (section, key); section None means top level
OVERRIDES = {
    "n": ("grid", "n"),
    "dt": ("semigroup", "dt"),
    "lam": (None, "lambda"),
    "out": ("output", "dir"),
}


def canonical_name(k, config):
    """Spelling of ``k`` already used in ``config``.

    ``max_iters`` and ``max-iters`` name the same option; whichever form is
    present in ``config`` wins, otherwise ``k`` is returned unchanged.
    """
    try:
        candidates = (k, k.replace("_", "-"), k.replace("-", "_"))
        return next((c for c in candidates if c in config), k)
    except TypeError:
        return k


def update(old, new, priority="new"):
    """Recursively fold ``new`` into ``old`` and return ``old``.

    Nested mappings are merged key by key. On a conflict of plain values
    ``new`` wins unless ``priority`` is ``"old"``.
    """
    for key, value in new.items():
        key = canonical_name(key, old)
        if isinstance(value, Mapping):
            if old.get(key) is None:
                old[key] = AttrDict()
            update(old[key], value, priority=priority)
        elif priority == "new" or key not in old:
            old[key] = value
    return old


def merge(*dicts):
    """Fold ``dicts`` left to right into a fresh mapping."""
    result = {}
    for d in dicts:
        update(result, d)
    return result


CONFIG_SUFFIXES = (".json", ".yaml", ".yml")


def _config_files(path: str) -> List[str]:
    if os.path.isfile(path):
        return [path]
    try:
        names = sorted(os.listdir(path))
    except OSError:
        return []
    return [
        os.path.join(path, name)
        for name in names
        if os.path.splitext(name)[1].lower() in CONFIG_SUFFIXES
    ]


def collect_yaml(paths: List[str] = paths) -> List[Dict]:
    """Parsed configuration documents found under ``paths``.

    A directory contributes its yaml and json files in name order. Missing
    or unreadable entries are ignored.
    """
    configs = []
    for path in (f for p in paths for f in _config_files(p)):
        try:
            with open(path) as f:
                configs.append(yaml.safe_load(f) or {})
        except OSError:
            continue
        logger.debug("Read configuration from %s", path)
    return configs


def collect(paths: List[str] = paths) -> Dict:
    """Merged configuration from the site and user configuration paths."""
    return merge(*collect_yaml(paths=paths))


def apply_overrides(conf: Dict, overrides: Optional[Dict] = None) -> Dict:
    """Set command line overrides (None values are ignored) on ``conf``."""
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = OVERRIDES[flag]
        if section is None:
            conf[key] = value
        else:
            conf.setdefault(section, {})
            conf[section][key] = value
    return conf


def load_experiment(
    config: Union[str, IO[str], None] = None,
    overrides: Optional[Dict] = None,
    search_paths: Optional[List[str]] = None,
) -> AttrDict:
    """Validated experiment configuration.

    Sources are merged in order: site and user files under ``search_paths``
    (default: the module level ``paths``), the experiment file or stream
    ``config``, then command line ``overrides``.

    Raises
    ------
    voluptuous.Invalid
        when the merged configuration does not validate
    """
    layers = [collect(paths=paths if search_paths is None else search_paths)]
    if config is not None:
        if isinstance(config, str):
            with open(config) as f:
                layers.append(utils.read_config(f))
        else:
            layers.append(utils.read_config(config))
    conf = apply_overrides(merge(*layers), overrides)
    return schema_experiment(plain(conf))


def dump_config(cfg: Dict) -> str:
    """Normalized YAML text of a configuration, keys sorted."""
    return yaml.safe_dump(plain(cfg), sort_keys=True, default_flow_style=False)
