"""Engine configuration: INI-style sections of ``key = value`` pairs.

Sections: ``[camera]``, ``[matching]``, ``[ransac]``, ``[rto]``,
``[phantom]`` and ``[paths]``. Every key is optional; missing keys take the
defaults of the owning dataclass.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from liverreg.correspondence import DEFAULT_LAMBDA_CFE, DEFAULT_OVERLAP_THRESHOLD
from liverreg.deform import RtoConfig
from liverreg.evaluate import ExperimentConfig
from liverreg.errors import InvalidParams, InvariantViolation, IoFailure, ParseError, RegistrationError
from liverreg.geom import CameraModel
from liverreg.phantom import PhantomParams
from liverreg.pnp import RansacConfig


@dataclass
class EngineConfig:
    camera: CameraModel | None = None
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD
    lambda_cfe: float = DEFAULT_LAMBDA_CFE
    ransac: RansacConfig = field(default_factory=RansacConfig)
    rto: RtoConfig = field(default_factory=RtoConfig)
    phantom: PhantomParams = field(default_factory=PhantomParams)
    paths: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "EngineConfig":
        return dataclasses.replace(
            self,
            ransac=dataclasses.replace(self.ransac, rng_seed=seed),
            rto=dataclasses.replace(self.rto, seed=seed),
        )

    def experiment(self, run_deformation: bool = True) -> ExperimentConfig:
        return ExperimentConfig(self.overlap_threshold, self.lambda_cfe, self.ransac, self.rto,
                                run_deformation)


def _coerce(kind, raw: str, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise InvalidParams(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _section_to(cls, section, where: str, base=None):
    hints = {f.name: f.type for f in dataclasses.fields(cls)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for key, raw in section.items():
        if key not in hints:
            raise InvalidParams(f"{where}: unknown key {key!r}")
        kwargs[key] = _coerce(types.get(str(hints[key]), str), raw, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except RegistrationError as exc:
        raise InvariantViolation(cls.__name__, str(exc)) from exc


def parse_config(text: str, source: str = "<config>") -> EngineConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0) or 0
        raise ParseError(source, line, str(exc).splitlines()[0]) from exc
    known = {"camera", "matching", "ransac", "rto", "phantom", "paths"}
    for name in cp.sections():
        if name not in known:
            raise InvalidParams(f"{source}: unknown section [{name}]")
    cfg = EngineConfig()
    if cp.has_section("camera"):
        sec = cp["camera"]
        need = ("fx", "fy", "cx", "cy", "width", "height")
        missing = [k for k in need if k not in sec]
        if missing:
            raise InvalidParams(f"{source}: [camera] is missing {', '.join(missing)}")
        cfg.camera = _section_to(CameraModel, sec, f"{source}[camera]")
    if cp.has_section("matching"):
        for key, raw in cp["matching"].items():
            if key == "overlap_threshold":
                cfg.overlap_threshold = _coerce(float, raw, f"{source}[matching].{key}")
                if not 0 < cfg.overlap_threshold < 1:
                    raise InvalidParams(f"{source}: overlap_threshold must lie in (0, 1)")
            elif key == "lambda_cfe":
                cfg.lambda_cfe = _coerce(float, raw, f"{source}[matching].{key}")
            else:
                raise InvalidParams(f"{source}[matching]: unknown key {key!r}")
    if cp.has_section("ransac"):
        cfg.ransac = _section_to(RansacConfig, cp["ransac"], f"{source}[ransac]", cfg.ransac)
    if cp.has_section("rto"):
        cfg.rto = _section_to(RtoConfig, cp["rto"], f"{source}[rto]", cfg.rto)
    if cp.has_section("phantom"):
        cfg.phantom = _section_to(PhantomParams, cp["phantom"], f"{source}[phantom]", cfg.phantom)
    if cp.has_section("paths"):
        cfg.paths = dict(cp["paths"])
    return cfg


def load_config(path) -> EngineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def _fmt(v) -> str:
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        s = repr(v)
        return s[:-2] if s.endswith(".0") else s
    return str(v)


def _section_lines(name, obj) -> list[str]:
    lines = [f"[{name}]"]
    for f in dataclasses.fields(obj):
        lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return lines + [""]


def format_config(cfg: EngineConfig) -> str:
    lines = []
    if cfg.camera is not None:
        lines += _section_lines("camera", cfg.camera)
    lines += ["[matching]", f"overlap_threshold = {_fmt(cfg.overlap_threshold)}",
              f"lambda_cfe = {_fmt(cfg.lambda_cfe)}", ""]
    lines += _section_lines("ransac", cfg.ransac)
    lines += _section_lines("rto", cfg.rto)
    lines += _section_lines("phantom", cfg.phantom)
    if cfg.paths:
        lines += ["[paths]"] + [f"{k} = {v}" for k, v in sorted(cfg.paths.items())] + [""]
    return "\n".join(lines)


def format_camera(cam: CameraModel) -> str:
    return "\n".join(_section_lines("camera", cam))
