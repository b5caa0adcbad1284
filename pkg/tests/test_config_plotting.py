import json

import pytest

from bladeinspect import plotting
from bladeinspect.config import ConfigError, load_config, parse_config
from bladeinspect.generation import GenerationConfig
from helpers import build_workspace, endpoint_block

PNG = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def ws(tmp_path):
    cfg = build_workspace(tmp_path, [("a", "test", [])])
    return tmp_path, json.loads(cfg.read_text())


class TestConfig:
    def test_paths_relative_to_config(self, ws):
        root, raw = ws
        cfg = parse_config(raw, root)
        assert cfg.manifest_path == root / "manifest.json" and cfg.output_dir == root / "out"
        assert cfg.kb().__len__() == 42 and cfg.endpoints == {}

    def test_sections(self, ws):
        root, raw = ws
        raw.update(tile={"size": 512, "overlap": 0.25}, nms={"iou_threshold": 0.4},
                   bridge={"conf_floor": 0.5, "raft": True}, validation={"corner_tol": 0.02},
                   endpoints={"judge": endpoint_block("http://127.0.0.1:1/v1", seed=3)})
        cfg = parse_config(raw, root)
        assert (cfg.tile_size_px, cfg.tile_overlap, cfg.iou_threshold) == (512, 0.25, 0.4)
        assert cfg.raft and cfg.conf_floor == 0.5 and cfg.corner_tol == 0.02
        assert isinstance(cfg.endpoint("judge"), GenerationConfig) and cfg.endpoint("judge").seed == 3
        with pytest.raises(ConfigError, match="'generate'"):
            cfg.endpoint("generate")

    @pytest.mark.parametrize("patch,match", [
        ({"kb": "nope.json"}, "kb not found"),
        ({"surprise": 1}, "unknown config keys"),
        ({"tile": {"size": 640, "stride": 3}}, "unknown settings"),
        ({"bridge": {"conf_floor": 1.5}}, "conf_floor"),
        ({"tile": {"overlap": 1.0}}, "overlap"),
        ({"endpoints": {"generate": {"endpoint_url": "x"}}}, "endpoints.generate"),
        ({"endpoints": {"embed": {"url": "x"}}}, "endpoints.embed"),
        ({"manifest": ""}, "manifest"),
    ])
    def test_rejects(self, ws, patch, match):
        root, raw = ws
        raw.update(patch)
        with pytest.raises(ConfigError, match=match):
            parse_config(raw, root)

    def test_missing_required_and_file_errors(self, ws, tmp_path):
        root, raw = ws
        del raw["detections_dir"]
        with pytest.raises(ConfigError, match="detections_dir"):
            parse_config(raw, root)
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(bad)
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json")

    def test_overrides_ignore_none(self, ws):
        root, raw = ws
        cfg = parse_config(raw, root)
        assert cfg.with_overrides(raft=None, conf_floor=0.9).conf_floor == 0.9
        with pytest.raises(ConfigError):
            cfg.with_overrides(conf_floor=-1.0)


DRAWERS = {
    "text": lambda p: plotting.text_metrics_figure([0.1, 0.5, 1.0], [0.3, 0.6, 1.0], p),
    "recall": lambda p: plotting.recall_figure({"dirt": 1.0, "coating": 0.5}, 0.75, p),
    "violations": lambda p: plotting.violations_figure(["grid_mismatch", "corner_drift", "grid_mismatch"], 0.1, 0.2, p),
    "pcr": lambda p: plotting.pcr_figure({"dirt": (3, 4), "markings": (1, 1)}, 0.8, p),
    "judge": lambda p: plotting.judge_figure([{"factuality": 7, "domain_alignment": 8, "actionability": 6,
                                               "mean": 7.0}] * 3, p),
    "agreement": lambda p: plotting.agreement_figure([6, 7, 8, 9], [6.5, 7, 8.5, 9], 0.97, (0.3, 0.99), p),
    "agreement_no_ci": lambda p: plotting.agreement_figure([1, 2, 3], [1, 2, 3], 1.0, (None, None), p),
}


@pytest.mark.parametrize("name", DRAWERS)
def test_figures_are_png_and_deterministic(tmp_path, name):
    a = DRAWERS[name](tmp_path / "a" / f"{name}.png").read_bytes()
    b = DRAWERS[name](tmp_path / "b" / f"{name}.png").read_bytes()
    assert a[:8] == PNG and a == b
