"""Run configuration: `key = value` text files and architecture strings.

A config file is plain lines of `key = value`; blank lines and `#` comments
are skipped, keys may not repeat, and values keep their inner spacing. The
Settings wrapper does typed access and remembers which keys were read, so a
command can reject options it does not understand instead of ignoring them.
"""

from __future__ import annotations

from .gnet import ASU, RASU, TASU
from .train import ArchSpec, LayerSpec

__all__ = ["ConfigError", "Settings", "parse_config", "build_arch"]

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


class ConfigError(Exception):
    """Malformed configuration file or value."""


class Settings:
    """Typed view over parsed key/value pairs with read tracking."""

    def __init__(self, raw: dict):
        self.raw = dict(raw)
        self._seen = set()

    def _fetch(self, key: str, default):
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"missing config key {key!r}")
            return None
        self._seen.add(key)
        return self.raw[key]

    def get_str(self, key: str, default=None) -> str:
        val = self._fetch(key, _REQUIRED if default is None else default)
        return default if val is None else val

    def get_int(self, key: str, default=None):
        val = self._fetch(key, _REQUIRED if default is None else default)
        if val is None:
            return default
        try:
            return int(val)
        except ValueError as e:
            raise ConfigError(f"config key {key!r} is not an integer: {val!r}") from e

    def get_float(self, key: str, default=None):
        val = self._fetch(key, _REQUIRED if default is None else default)
        if val is None:
            return default
        try:
            return float(val)
        except ValueError as e:
            raise ConfigError(f"config key {key!r} is not a number: {val!r}") from e

    def get_bool(self, key: str, default=None):
        val = self._fetch(key, _REQUIRED if default is None else default)
        if val is None:
            return default
        if isinstance(val, bool):
            return val
        low = val.strip().lower()
        if low not in _BOOL:
            raise ConfigError(f"config key {key!r} is not a boolean: {val!r}")
        return _BOOL[low]

    def unused(self) -> tuple:
        return tuple(k for k in self.raw if k not in self._seen)


_REQUIRED = object()


def parse_config(path) -> Settings:
    """Read a `key = value` file into Settings; duplicates are errors."""
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno} is not `key = value`")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}: line {lineno} has an empty key")
        if key in raw:
            raise ConfigError(f"{path}: duplicate key {key!r} at line {lineno}")
        raw[key] = value
    return Settings(raw)


def _parse_dims(text: str, what: str) -> tuple:
    try:
        dims = tuple(int(d) for d in text.split("x"))
    except ValueError as e:
        raise ConfigError(f"bad {what} {text!r}") from e
    if not dims or any(d < 0 for d in dims):
        raise ConfigError(f"bad {what} {text!r}")
    return dims


def _activation(name: str, kappa):
    if name == "asu":
        return ASU
    if name == "rasu":
        return RASU
    if name == "tasu":
        if kappa is None:
            raise ConfigError("tasu activation needs a gain (kappa)")
        return TASU(float(kappa))
    raise ConfigError(f"unknown activation {name!r}")


def build_arch(text: str, input_shape, act_name: str, kappa) -> ArchSpec:
    """Architecture string -> layer specs.

    Comma-separated entries: `dense:<units>`, `conv:<filters>:<kxk>` with
    optional `:s<axb>` stride and `:p<axb>` padding suffixes, `head:<classes>`
    last. The activation applies to every non-head layer.
    """
    entries = [e.strip() for e in text.split(",") if e.strip()]
    if not entries:
        raise ConfigError("empty architecture string")
    act = _activation(act_name, kappa)
    layers = []
    try:
        _collect_layers(entries, act, layers)
    except ValueError as e:
        raise ConfigError(f"bad architecture: {e}") from e
    if layers[-1].kind != "head":
        raise ConfigError("architecture must end with a head entry")
    try:
        return ArchSpec(tuple(int(d) for d in input_shape), tuple(layers))
    except ValueError as e:
        raise ConfigError(f"bad architecture: {e}") from e


def _collect_layers(entries, act, layers) -> None:
    for i, entry in enumerate(entries):
        parts = entry.split(":")
        kind = parts[0]
        last = i == len(entries) - 1
        if kind == "head":
            if not last:
                raise ConfigError("head must be the final architecture entry")
            if len(parts) != 2:
                raise ConfigError(f"bad head entry {entry!r}")
            layers.append(LayerSpec("head", _int_field(parts[1], entry)))
        elif kind == "dense":
            if len(parts) != 2:
                raise ConfigError(f"bad dense entry {entry!r}")
            layers.append(LayerSpec("dense", _int_field(parts[1], entry), act=act))
        elif kind == "conv":
            if len(parts) < 3:
                raise ConfigError(f"bad conv entry {entry!r}")
            filters = _int_field(parts[1], entry)
            kernel = _parse_dims(parts[2], "kernel")
            stride = (1,) * len(kernel)
            padding = (0,) * len(kernel)
            for extra in parts[3:]:
                if extra.startswith("s"):
                    stride = _parse_dims(extra[1:], "stride")
                elif extra.startswith("p"):
                    padding = _parse_dims(extra[1:], "padding")
                else:
                    raise ConfigError(f"bad conv option {extra!r} in {entry!r}")
            layers.append(
                LayerSpec("conv", filters, act=act, kernel=kernel, stride=stride, padding=padding)
            )
        else:
            raise ConfigError(f"unknown layer kind {kind!r} in {entry!r}")


def _int_field(text: str, entry: str) -> int:
    try:
        return int(text)
    except ValueError as e:
        raise ConfigError(f"bad width in {entry!r}") from e
