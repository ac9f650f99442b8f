"""Plain-text configuration: dotted keys, typed round-trips, profiles.

A config file is one `key value` pair per line with `#` comments.
Nested sections use dotted keys (train.batch_size 64). Values are typed
by the schema's defaults, so parse(serialize(cfg)) == cfg exactly and
unknown keys are rejected instead of silently ignored.
"""

import dataclasses

from .errors import SchemaError


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def _coerce(raw, template):
    if isinstance(template, bool):
        if raw not in ("true", "false"):
            raise SchemaError(f"expected true/false, got {raw!r}")
        return raw == "true"
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, (tuple, list)):
        if not template:
            raise SchemaError("cannot type an empty tuple default")
        parts = raw.split(",") if raw else []
        return tuple(_coerce(p, template[0]) for p in parts)
    return raw


def flatten_config(cfg, prefix=""):
    """Dataclass (possibly nested) -> {dotted key: value}."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.update(flatten_config(v, key + "."))
        else:
            out[key] = v
    return out


def serialize_config(cfg):
    flat = flatten_config(cfg)
    return "".join(f"{k} {format_value(flat[k])}\n" for k in sorted(flat))


def parse_config_text(text):
    """Config text -> {dotted key: raw string}; duplicate keys rejected."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        if not value.strip():
            raise SchemaError(f"line {lineno}: expected 'key value', got {line!r}")
        if key in raw:
            raise SchemaError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def apply_config(cfg, raw):
    """A copy of dataclass cfg with dotted raw-string overrides applied.

    Raises SchemaError for keys that do not name a field of the schema.
    """
    flat = flatten_config(cfg)
    unknown = set(raw) - set(flat)
    if unknown:
        raise SchemaError(f"unknown config keys: {sorted(unknown)}")
    updates = {k: _coerce(v, flat[k]) for k, v in raw.items()}

    def rebuild(obj, prefix=""):
        kwargs = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = prefix + f.name
            if dataclasses.is_dataclass(v):
                kwargs[f.name] = rebuild(v, key + ".")
            else:
                kwargs[f.name] = updates.get(key, v)
        return dataclasses.replace(obj, **kwargs)

    return rebuild(cfg)


def load_config(cfg, path):
    with open(path) as fh:
        return apply_config(cfg, parse_config_text(fh.read()))


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))
