"""Experiment configuration files.

INI-style ``key = value`` text with the sections ``[network]``,
``[coefficients]``, ``[grid]``, ``[solver]``, ``[experiment]`` and the optional
``[seeds]``. Every key has a default; unknown sections or keys, malformed values
and out-of-range numbers raise :class:`ConfigError` carrying the line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

import numpy as np

from .coefficients import BoundedFn, CoefficientSet, InitialLaw, parse_law
from .connectivity import StepKernel
from .trees import Tree, parse_tree


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


# (default, parser, check) per key; the check returns an error message or None
def _positive(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _int_ge(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _one_of(*opts):
    return lambda v: None if v in opts else f"must be one of {', '.join(opts)}"


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def parse_kernel(text: str) -> StepKernel:
    """Rows separated by ``;``, entries by ``,``: ``"1.0, -0.6; 0.8, -0.4"``."""
    rows = [_floats(r) for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValueError("kernel must be a square matrix written row;row")
    return StepKernel(np.array(rows))


def format_kernel(K: StepKernel) -> str:
    return "; ".join(", ".join(repr(float(v)) for v in row) for row in K.values)


_FN_ARGS = {"saturated_leak": ("kappa", "scale"), "sigmoid": ("nu_max", "theta", "beta"), "constant": ("c",)}


def parse_fn(text: str) -> BoundedFn:
    """``kind:p1,p2,...`` with ``saturated_leak:kappa,scale``, ``sigmoid:nu_max,theta,beta``
    or ``constant:c``."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip()
    if kind not in _FN_ARGS:
        raise ValueError(f"unknown function family {kind!r}")
    vals = _floats(rest)
    if len(vals) != len(_FN_ARGS[kind]):
        raise ValueError(f"{kind} takes {len(_FN_ARGS[kind])} parameters ({', '.join(_FN_ARGS[kind])})")
    return BoundedFn(kind, dict(zip(_FN_ARGS[kind], vals)))


def format_fn(fn: BoundedFn) -> str:
    return f"{fn.kind}:" + ",".join(repr(float(fn.params[k])) for k in _FN_ARGS[fn.kind])


def parse_laws(text: str) -> tuple:
    return tuple(parse_law(t) for t in text.split(";") if t.strip())


def parse_trees(text: str) -> tuple:
    return tuple(parse_tree(t) for t in text.split(";"))


def _nonneg_tuple(v):
    return None if v and all(x >= 0 for x in v) else "must be a nonempty list of nonnegative numbers"


SCHEMA: dict[str, dict[str, tuple]] = {
    "network": {
        "family": ("complete", str, _one_of("complete", "block_sparse", "sparse", "file")),
        "N": ("1000", int, _int_ge(2)),
        "kernel": ("1.0", parse_kernel, None),
        "degree": ("8", int, _int_ge(1)),
        "degree_exponent": ("0.5", float, _nonneg),
        "strength": ("1.0", float, _nonneg),
        "sign_mix": ("0.0", float, lambda v: None if 0 <= v <= 1 else "must lie in [0, 1]"),
        "matrix_file": ("", str, None),
    },
    "coefficients": {
        "mu": ("saturated_leak:1.0,2.0", parse_fn, None),
        "nu": ("sigmoid:2.0,1.0,0.3", parse_fn, None),
        "sigma": ("0.5", float, _nonneg),
        "init": ("normal:0.0,0.5", parse_laws, lambda v: None if v else "needs at least one law"),
    },
    "grid": {
        "L": ("10.0", float, _positive),
        "G": ("1025", int, lambda v: None if v >= 3 and v % 2 == 1 else "must be odd and >= 3"),
        "alpha": ("0.25", float, _positive),
        "subcells": ("16", int, _int_ge(1)),
    },
    "solver": {
        "R": ("20", int, _int_ge(1)),
        "dt_particle": ("0.001", float, _positive),
        "dt_vlasov": ("0.001", float, _positive),
        "t_star": ("1.0", float, _positive),
        "scheme": ("centered", str, _one_of("upwind", "centered")),
    },
    "experiment": {
        "ladder": ("125,250,500,1000,2000", _ints, lambda v: None if v and min(v) >= 2 else "sizes must be >= 2"),
        "reseeds": ("32", int, _int_ge(2)),
        "times": ("1.0", _floats, _nonneg_tuple),
        "trees": ("singleton", parse_trees, None),
    },
    "seeds": {
        "root": ("0", int, lambda v: None if 0 <= v < 2 ** 64 else "must be an unsigned 64-bit integer"),
    },
}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section:
            m = re.match(r"^([^=:#;]+?)\s*[=:]", line)
            if m and m.group(1).strip() == key:
                return n
    return None


@dataclass
class ExperimentConfig:
    """Parsed configuration: ``raw[section][key]`` keeps the text, ``values`` the parsed values."""

    raw: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["seeds"]["root"]

    def override(self, section: str, key: str, text: str) -> ExperimentConfig:
        """Copy with one key replaced (given as text), validated like the file."""
        raw = {s: dict(kv) for s, kv in self.raw.items()}
        raw[section][key] = text
        return parse_config_text(_render(raw), self.source)

    def coefficients(self) -> CoefficientSet:
        c = self.values["coefficients"]
        return CoefficientSet(c["mu"], c["nu"], c["sigma"])

    @property
    def kernel(self) -> StepKernel:
        return self.values["network"]["kernel"]

    @property
    def laws(self) -> tuple[InitialLaw, ...]:
        return self.values["coefficients"]["init"]

    @property
    def trees(self) -> tuple[Tree, ...]:
        return self.values["experiment"]["trees"]

    def echo(self) -> str:
        """Fully resolved configuration in the input format; parsing it reproduces this object."""
        return _render(self.raw)


def _render(raw: dict) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {raw[section][key]}")
        lines.append("")
    return "\n".join(lines)


def _canonical(section: str, key: str, value) -> str:
    """Text form written back by :meth:`ExperimentConfig.echo`."""
    if isinstance(value, BoundedFn):
        return format_fn(value)
    if isinstance(value, StepKernel):
        return format_kernel(value)
    if key == "init":
        return "; ".join(str(v) for v in value)
    if key == "trees":
        return "; ".join(str(t) for t in value)
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive (N, G, L, R)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno, source) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, source) from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section), source)
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", _line_of(text, section, key), source)
    raw, values = {}, {}
    for section, keys in SCHEMA.items():
        raw[section], values[section] = {}, {}
        for key, (default, conv, check) in keys.items():
            given = parser.has_option(section, key)
            text_val = parser.get(section, key) if given else default
            line = _line_of(text, section, key) if given else None
            try:
                val = conv(text_val)
            except (ValueError, TypeError, KeyError) as exc:
                raise ConfigError(f"[{section}] {key} = {text_val!r}: {exc}", line, source) from None
            if check is not None:
                msg = check(val)
                if msg:
                    raise ConfigError(f"[{section}] {key} = {text_val!r} {msg}", line, source)
            values[section][key] = val
            raw[section][key] = _canonical(section, key, val)
    cfg = ExperimentConfig(raw, values, source)
    _cross_checks(cfg, text)
    return cfg


def _cross_checks(cfg: ExperimentConfig, text: str) -> None:
    net = cfg["network"]
    src = cfg.source
    M = net["kernel"].M
    if net["family"] == "complete" and M != 1:
        raise ConfigError("family = complete needs a 1x1 kernel", _line_of(text, "network", "kernel"), src)
    if net["family"] == "file" and not net["matrix_file"]:
        raise ConfigError("family = file needs matrix_file", _line_of(text, "network", "family"), src)
    if len(cfg.laws) not in (1, M):
        raise ConfigError(f"init needs 1 or {M} laws (one per kernel block)",
                          _line_of(text, "coefficients", "init"), src)
    try:
        cfg.coefficients()
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "coefficients", "nu"), src) from None
    t_star = cfg["solver"]["t_star"]
    if max(cfg["experiment"]["times"]) > t_star + 1e-12:
        raise ConfigError("times must not exceed t_star", _line_of(text, "experiment", "times"), src)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config_text(text, str(path))


def default_config() -> ExperimentConfig:
    return parse_config_text("", "<defaults>")
