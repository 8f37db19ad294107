"""Experiment configuration files.

A config is an INI file with one section per concern. Matrices are written
as bracketed row lists and sequences as comma separated values::

    [experiment]
    command = simulate
    output = out

    [system]
    kind = linear
    A = [[-1.0]]
    B = [[[0.5]]]
    C = [[0.2]]
    D = [[[0.1]]]
    x0 = [1.0]

    [grid]
    tau = 0.5
    m_sub = 50
    horizon = 2.0

:func:`dumps` writes every field in a fixed order, so ``dumps(loads(s))``
reproduces any file that :func:`dumps` produced.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .certificates import KINDS, NODES
from .errors import ValidationError
from .integrators import EM_SDE, EM_SDEPCA, SCHEMES
from .model import GridSpec, system_from_description

COMMANDS = ("simulate", "certify", "threshold", "convergence", "lyapunov", "chain")
PAIR_SOURCES = ("assumed", "lyapunov")


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10_000
    seed: int = 0
    p: float = 2.0
    threads: int = 1
    schemes: tuple = (EM_SDE, EM_SDEPCA)
    dump_paths: int = 0


@dataclass(frozen=True)
class CertificateConfig:
    kind: str = "Q1"
    delta: float = 0.5
    M: float = 1.0
    gamma: float = 1.75
    tau: float = 0.1
    h: float = 0.01
    optimise_delta: bool = False
    start: str = "SDE"
    pair_source: str = "lyapunov"


@dataclass(frozen=True)
class ThresholdConfig:
    kinds: tuple = KINDS
    deltas: tuple = (0.5,)
    gammas: tuple = (1.75,)


@dataclass(frozen=True)
class ConvergenceConfig:
    alpha: float = -0.5
    beta: float = 0.5
    T: float = 1.0
    levels: tuple = (4, 5, 6, 7, 8, 9)


@dataclass(frozen=True)
class LyapunovConfig:
    resolution: int = 0  # 0 picks a default per dimension
    n_random: int = 10_000
    seed: int = 0


def _default_system():
    return {"kind": "linear", "A": [[-1.0]], "B": [[[0.5]]], "C": [[0.2]], "D": [[[0.1]]]}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "simulate"
    system: dict = field(default_factory=_default_system)
    x0: tuple = (1.0,)
    grid: GridSpec = GridSpec(0.5, 50, 2.0)
    mc: McConfig = McConfig()
    certificate: CertificateConfig = CertificateConfig()
    threshold: ThresholdConfig = ThresholdConfig()
    convergence: ConvergenceConfig = ConvergenceConfig()
    lyapunov: LyapunovConfig = LyapunovConfig()
    output: str = "out"

    def spec(self):
        return system_from_description(self.system)

    def with_overrides(self, **kw):
        """Copy with CLI flag overrides (``out``, ``seed``, ``paths``, ``threads``)."""
        cfg = self
        if kw.get("out") is not None:
            cfg = dataclasses.replace(cfg, output=str(kw["out"]))
        mc = {}
        if kw.get("seed") is not None:
            mc["seed"] = int(kw["seed"])
        if kw.get("paths") is not None:
            mc["n_paths"] = int(kw["paths"])
        if kw.get("threads") is not None:
            mc["threads"] = int(kw["threads"])
        if mc:
            cfg = dataclasses.replace(cfg, mc=dataclasses.replace(cfg.mc, **mc))
        if kw.get("command") is not None:
            cfg = dataclasses.replace(cfg, command=kw["command"])
        validate(cfg)
        return cfg


# Value encoding -------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _bool(s):
    s = s.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tuple(conv):
    def parse(s):
        s = s.strip()
        if s.startswith("["):
            items = json.loads(s)
        else:
            items = [x for x in (t.strip() for t in s.split(",")) if x]
        return tuple(conv(x) if not isinstance(x, str) else conv(x.strip()) for x in items)
    return parse


_FIELD_PARSERS = {int: int, float: float, str: str, bool: _bool}


def _parse_dataclass(cls, items, section):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    for key, raw in items.items():
        if key not in fields:
            raise ValidationError(f"unknown key {key!r} in [{section}]")
        default = getattr(defaults, key)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else str
            conv = _tuple(elem)
        else:
            conv = _FIELD_PARSERS[type(default)]
        try:
            kwargs[key] = conv(raw)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"bad value for {key} in [{section}]: {raw!r} ({exc})") from None
    return cls(**kwargs)


def loads(text) -> ExperimentConfig:
    """Parse and validate a config file's contents."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep A, B, C, D as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse config: {exc}") from None
    known = {"experiment", "system", "grid", "mc", "certificate", "threshold", "convergence",
             "lyapunov"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValidationError(f"unknown section(s): {sorted(extra)}")
    kw = {}
    if cp.has_section("experiment"):
        ex = dict(cp["experiment"])
        for key in list(ex):
            if key not in ("command", "output"):
                raise ValidationError(f"unknown key {key!r} in [experiment]")
        kw.update(ex)
    if cp.has_section("system"):
        sysd = dict(cp["system"])
        x0 = sysd.pop("x0", None)
        kw["system"] = _parse_system(sysd)
        if x0 is not None:
            try:
                kw["x0"] = tuple(float(v) for v in json.loads(x0))
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"bad x0 {x0!r}: {exc}") from None
    if cp.has_section("grid"):
        g = dict(cp["grid"])
        try:
            kw["grid"] = GridSpec(float(g.pop("tau", 0.5)), int(g.pop("m_sub", 50)),
                                  float(g.pop("horizon", 2.0)))
        except ValueError as exc:
            raise ValidationError(f"bad [grid]: {exc}") from None
        if g:
            raise ValidationError(f"unknown key(s) in [grid]: {sorted(g)}")
    for name, cls in (("mc", McConfig), ("certificate", CertificateConfig),
                      ("threshold", ThresholdConfig), ("convergence", ConvergenceConfig),
                      ("lyapunov", LyapunovConfig)):
        if cp.has_section(name):
            kw[name] = _parse_dataclass(cls, dict(cp[name]), name)
    cfg = ExperimentConfig(**kw)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def _parse_system(d):
    kind = d.get("kind", "linear").strip()
    out = {"kind": kind}
    for key, raw in d.items():
        if key == "kind":
            continue
        if kind == "linear":
            if key not in ("A", "B", "C", "D"):
                raise ValidationError(f"unknown key {key!r} in [system]")
            try:
                out[key] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"matrix {key} is not a bracketed list: {exc}") from None
        else:
            if key not in ("f", "g", "u1", "u2"):
                raise ValidationError(f"unknown key {key!r} in [system]")
            out[key] = raw.strip()
    return out


def _matrix_text(m):
    return json.dumps(_floatify(m))


def _floatify(m):
    if isinstance(m, (list, tuple)):
        return [_floatify(x) for x in m]
    return float(m)


def dumps(cfg: ExperimentConfig) -> str:
    """Canonical text of a config."""
    lines = ["[experiment]", f"command = {cfg.command}", f"output = {cfg.output}", "",
             "[system]"]
    desc = cfg.system
    lines.append(f"kind = {desc.get('kind', 'linear')}")
    if desc.get("kind", "linear") == "linear":
        for key in ("A", "B", "C", "D"):
            lines.append(f"{key} = {_matrix_text(desc[key])}")
    else:
        for key in ("f", "g", "u1", "u2"):
            lines.append(f"{key} = {desc.get(key, 'linear:0.0')}")
    lines.append(f"x0 = {json.dumps([float(v) for v in cfg.x0])}")
    g = cfg.grid
    lines += ["", "[grid]", f"tau = {g.tau!r}", f"m_sub = {g.m_sub}", f"horizon = {g.horizon!r}"]
    for name in ("mc", "certificate", "threshold", "convergence", "lyapunov"):
        obj = getattr(cfg, name)
        lines += ["", f"[{name}]"]
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def dump(cfg, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps(cfg))


def config_hash(cfg) -> str:
    return hashlib.sha256(dumps(cfg).encode("utf-8")).hexdigest()


def validate(cfg: ExperimentConfig):
    """Check every field before any work starts; raises ValidationError."""
    if cfg.command not in COMMANDS:
        raise ValidationError(f"unknown command {cfg.command!r}; choose from {COMMANDS}")
    spec = cfg.spec()
    if len(cfg.x0) != spec.d or not all(math.isfinite(v) for v in cfg.x0):
        raise ValidationError(f"x0 must be {spec.d} finite numbers")
    mc = cfg.mc
    if mc.n_paths < 2:
        raise ValidationError("mc.n_paths must be >= 2")
    if not 0 <= mc.seed < 2**64:
        raise ValidationError("mc.seed must be an unsigned 64-bit integer")
    if not (math.isfinite(mc.p) and mc.p >= 2):
        raise ValidationError("mc.p must be >= 2")
    if mc.threads < 1:
        raise ValidationError("mc.threads must be >= 1")
    if mc.dump_paths < 0:
        raise ValidationError("mc.dump_paths must be >= 0")
    for s in mc.schemes:
        if s not in SCHEMES:
            raise ValidationError(f"unknown scheme {s!r}; choose from {SCHEMES}")
    c = cfg.certificate
    if c.kind not in KINDS:
        raise ValidationError(f"certificate.kind must be one of {KINDS}")
    if not 0 < c.delta < 1:
        raise ValidationError("certificate.delta must lie in (0, 1)")
    for name in ("M", "gamma", "tau", "h"):
        v = getattr(c, name)
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"certificate.{name} must be positive")
    if c.start not in NODES:
        raise ValidationError(f"certificate.start must be one of {NODES}")
    if c.pair_source not in PAIR_SOURCES:
        raise ValidationError(f"certificate.pair_source must be one of {PAIR_SOURCES}")
    t = cfg.threshold
    if not t.kinds or any(k not in KINDS for k in t.kinds):
        raise ValidationError(f"threshold.kinds must be drawn from {KINDS}")
    if not t.deltas or any(not 0 < v < 1 for v in t.deltas):
        raise ValidationError("threshold.deltas must lie in (0, 1)")
    if not t.gammas or any(not v > 0 for v in t.gammas):
        raise ValidationError("threshold.gammas must be positive")
    cv = cfg.convergence
    if len(cv.levels) < 2 or any(k < 0 for k in cv.levels) or not cv.T > 0:
        raise ValidationError("convergence needs two or more levels >= 0 and T > 0")
    ly = cfg.lyapunov
    if ly.resolution < 0 or ly.n_random < 0:
        raise ValidationError("lyapunov.resolution and n_random must be >= 0")
    return cfg
