"""Engine configuration: one JSON document holding every tunable table and threshold."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .composites import DEFAULT_RULE_SETS, CombinationRule, RuleSet
from .emotions import DEFAULT_EMOTION_TABLE, DEFAULT_NEUTRAL_THRESHOLD, ConfigError, EmotionWeightTable
from .expressive import ExpressiveConfig
from .postprocess import PostprocessConfig, SigmoidParams
from .quality import QualityConfig
from .tracking import DEFAULT_TEMPLATE, PoseTemplate

CONFIG_VERSION = 1


@dataclass(frozen=True)
class SchedulerConfig:
    interval_ms: int = 500
    iou_min: float = 0.3
    miss_limit: int = 2

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ConfigError("scheduler interval_ms must be positive")
        if not 0.0 < self.iou_min < 1.0:
            raise ConfigError("scheduler iou_min must lie in (0, 1)")
        if self.miss_limit < 1:
            raise ConfigError("scheduler miss_limit must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    emotions: EmotionWeightTable = DEFAULT_EMOTION_TABLE
    neutral_threshold: float = DEFAULT_NEUTRAL_THRESHOLD
    rule_sets: tuple[RuleSet, ...] = DEFAULT_RULE_SETS
    expressive: ExpressiveConfig = field(default_factory=ExpressiveConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    pose_template: PoseTemplate = DEFAULT_TEMPLATE

    def __post_init__(self):
        if not 0.0 < self.neutral_threshold < 100.0:
            raise ConfigError("neutral_threshold must lie in (0, 100)")
        names = [r.state for r in self.rule_sets]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate rule set names: {names}")

    def to_dict(self) -> dict:
        pp = self.postprocess
        return {
            "config_version": CONFIG_VERSION,
            "postprocess": {
                "smooth_window_frames": pp.smooth_window_frames,
                "baseline_window_ms": pp.baseline_window_ms,
                "baseline_quantile": pp.baseline_quantile,
                "k": pp.k,
                "t": pp.t,
                "per_au": {au: {"k": p.k, "t": p.t} for au, p in pp.per_au.items()},
                "causal": pp.causal,
            },
            "emotions": self.emotions.to_dict(),
            "neutral_threshold": self.neutral_threshold,
            "rule_sets": {rs.state: rs.to_list() for rs in self.rule_sets},
            "expressive": {k: dict(v) if isinstance(v, Mapping) else v for k, v in asdict(self.expressive).items()},
            "quality": asdict(self.quality),
            "scheduler": asdict(self.scheduler),
            "pose_template": {k: list(v) for k, v in asdict(self.pose_template).items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


_TOP_KEYS = {"config_version", "postprocess", "emotions", "neutral_threshold", "rule_sets", "expressive",
             "quality", "scheduler", "pose_template"}


def _check_keys(section: str, d: Any, allowed) -> None:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")


def _dc_kwargs(section: str, d: Mapping, cls) -> dict:
    _check_keys(section, d, [f.name for f in fields(cls)])
    return dict(d)


def config_from_dict(doc: Mapping) -> EngineConfig:
    """Build and validate an :class:`EngineConfig`; omitted sections keep their defaults."""
    _check_keys("config", doc, _TOP_KEYS)
    version = doc.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    kw: dict[str, Any] = {}
    try:
        if "postprocess" in doc:
            pp = _dc_kwargs("postprocess", doc["postprocess"], PostprocessConfig)
            if "per_au" in pp:
                per = pp["per_au"]
                _check_keys("postprocess.per_au", per, per.keys())
                for au, p in per.items():
                    _check_keys(f"postprocess.per_au.{au}", p, ("k", "t"))
                pp["per_au"] = {au: SigmoidParams(**p) for au, p in per.items()}
            kw["postprocess"] = PostprocessConfig(**pp)
        if "emotions" in doc:
            kw["emotions"] = EmotionWeightTable(doc["emotions"])
        if "neutral_threshold" in doc:
            kw["neutral_threshold"] = float(doc["neutral_threshold"])
        if "rule_sets" in doc:
            rs = doc["rule_sets"]
            _check_keys("rule_sets", rs, rs.keys() if isinstance(rs, Mapping) else ())
            kw["rule_sets"] = tuple(
                RuleSet(state, tuple(CombinationRule.from_dict(r) for r in rules)) for state, rules in rs.items()
            )
        if "expressive" in doc:
            kw["expressive"] = ExpressiveConfig(**_dc_kwargs("expressive", doc["expressive"], ExpressiveConfig))
        if "quality" in doc:
            kw["quality"] = QualityConfig(**_dc_kwargs("quality", doc["quality"], QualityConfig))
        if "scheduler" in doc:
            kw["scheduler"] = SchedulerConfig(**_dc_kwargs("scheduler", doc["scheduler"], SchedulerConfig))
        if "pose_template" in doc:
            pt = _dc_kwargs("pose_template", doc["pose_template"], PoseTemplate)
            kw["pose_template"] = PoseTemplate.from_dict(pt)
        return EngineConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> EngineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    try:
        return config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
