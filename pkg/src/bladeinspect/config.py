"""Run configuration: one JSON file, paths resolved against the file's directory."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bridge import DEFAULT_CONF_FLOOR, DEFAULT_PROTOCOL_MAX_CHARS, BridgeSettings, PromptTemplates
from .generation.client import GenerationConfig
from .generation.report import DEFAULT_CORNER_TOL
from .ingest import DatasetManifest, load_manifest_file
from .knowledge import KnowledgeBase, RemoteEmbedder, Retriever, bundled_kb, lexical_embedder, load_kb

ENDPOINT_ROLES = ("generate", "teacher", "judge")
_TOP_KEYS = {
    "manifest", "detections_dir", "kb", "prompts", "tile", "nms", "bridge", "validation", "endpoints",
    "output_dir", "annotations_dir", "references_dir", "equivalence",
}


class ConfigError(ValueError):
    exit_code = 2


def _section(raw: dict, key: str, allowed: set[str]) -> dict:
    block = raw.get(key, {})
    if not isinstance(block, dict):
        raise ConfigError(f"{key!r} must be an object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{key}: unknown settings {sorted(unknown)}")
    return block


@dataclass(frozen=True)
class EmbedEndpoint:
    endpoint_url: str
    model: str
    api_key_env: str = "PIPELINE_API_KEY"
    timeout_s: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    detections_dir: Path
    output_dir: Path
    kb_path: Path | None = None
    system_preamble_path: Path | None = None
    query_suffix_path: Path | None = None
    annotations_dir: Path | None = None
    references_dir: Path | None = None
    equivalence_path: Path | None = None
    tile_size_px: int = 640
    tile_overlap: float = 0.2
    iou_threshold: float = 0.5
    conf_floor: float = DEFAULT_CONF_FLOOR
    protocol_max_chars: int = DEFAULT_PROTOCOL_MAX_CHARS
    raft: bool = False
    corner_tol: float = DEFAULT_CORNER_TOL
    endpoints: dict[str, GenerationConfig] = field(default_factory=dict)
    embed: EmbedEndpoint | None = None

    def __post_init__(self):
        if not 0.0 <= self.conf_floor <= 1.0:
            raise ConfigError(f"bridge.conf_floor = {self.conf_floor} is outside [0, 1]")
        if self.protocol_max_chars < 1:
            raise ConfigError("bridge.protocol_max_chars must be positive")
        if not 0.0 <= self.tile_overlap < 1.0:
            raise ConfigError(f"tile.overlap = {self.tile_overlap} is outside [0, 1)")
        if self.tile_size_px < 1:
            raise ConfigError("tile.size must be positive")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"nms.iou_threshold = {self.iou_threshold} is outside [0, 1]")
        if self.corner_tol <= 0:
            raise ConfigError("validation.corner_tol must be positive")

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def endpoint(self, role: str) -> GenerationConfig:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ConfigError(f"no {role!r} endpoint configured under 'endpoints'") from None

    def manifest(self) -> DatasetManifest:
        return load_manifest_file(self.manifest_path)

    def kb(self) -> KnowledgeBase:
        return load_kb(self.kb_path) if self.kb_path else bundled_kb()

    def embedder(self):
        if self.embed is None:
            return lexical_embedder()
        e = self.embed
        return RemoteEmbedder(e.endpoint_url, e.model, api_key_env=e.api_key_env, timeout_s=e.timeout_s)

    def templates(self) -> PromptTemplates:
        bundled = PromptTemplates.bundled()
        system = self.system_preamble_path.read_text(encoding="utf-8") if self.system_preamble_path else bundled.system_preamble
        query = self.query_suffix_path.read_text(encoding="utf-8") if self.query_suffix_path else bundled.query_suffix
        return PromptTemplates(system, query)

    def bridge(self, kb: KnowledgeBase | None = None, raft: bool | None = None) -> BridgeSettings:
        use_raft = self.raft if raft is None else raft
        retriever = Retriever(kb or self.kb(), self.embedder()) if use_raft else None
        return BridgeSettings(self.templates(), self.conf_floor, self.protocol_max_chars, retriever)


def _path(base: Path, value, what: str, must_exist: bool = True) -> Path | None:
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{what} must be a non-empty path string")
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def parse_config(raw: dict, base_dir: str | Path) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    base = Path(base_dir)
    for required in ("manifest", "detections_dir"):
        if required not in raw:
            raise ConfigError(f"config is missing {required!r}")

    prompts = _section(raw, "prompts", {"system_preamble", "query_suffix"})
    tile = _section(raw, "tile", {"size", "overlap"})
    nms = _section(raw, "nms", {"iou_threshold"})
    bridge = _section(raw, "bridge", {"conf_floor", "protocol_max_chars", "raft"})
    validation = _section(raw, "validation", {"corner_tol"})
    endpoints_raw = _section(raw, "endpoints", set(ENDPOINT_ROLES) | {"embed"})

    endpoints = {}
    for role in ENDPOINT_ROLES:
        if role in endpoints_raw:
            try:
                endpoints[role] = GenerationConfig.from_dict(endpoints_raw[role])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"endpoints.{role}: {exc}") from None
    embed = None
    if "embed" in endpoints_raw:
        try:
            embed = EmbedEndpoint(**endpoints_raw["embed"])
        except TypeError as exc:
            raise ConfigError(f"endpoints.embed: {exc}") from None

    try:
        return RunConfig(
            manifest_path=_path(base, raw["manifest"], "manifest"),
            detections_dir=_path(base, raw["detections_dir"], "detections_dir"),
            output_dir=_path(base, raw.get("output_dir", "out"), "output_dir", must_exist=False),
            kb_path=_path(base, raw.get("kb"), "kb"),
            system_preamble_path=_path(base, prompts.get("system_preamble"), "prompts.system_preamble"),
            query_suffix_path=_path(base, prompts.get("query_suffix"), "prompts.query_suffix"),
            annotations_dir=_path(base, raw.get("annotations_dir"), "annotations_dir"),
            references_dir=_path(base, raw.get("references_dir"), "references_dir"),
            equivalence_path=_path(base, raw.get("equivalence"), "equivalence"),
            tile_size_px=int(tile.get("size", 640)),
            tile_overlap=float(tile.get("overlap", 0.2)),
            iou_threshold=float(nms.get("iou_threshold", 0.5)),
            conf_floor=float(bridge.get("conf_floor", DEFAULT_CONF_FLOOR)),
            protocol_max_chars=int(bridge.get("protocol_max_chars", DEFAULT_PROTOCOL_MAX_CHARS)),
            raft=bool(bridge.get("raft", False)),
            corner_tol=float(validation.get("corner_tol", DEFAULT_CORNER_TOL)),
            endpoints=endpoints,
            embed=embed,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(raw, path.parent)
