import hashlib
import json

import numpy as np
import pytest

from fd_cases import TINY_ENV, TINY_NET
from roiscope.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, box_colors, main, render_overlay
from roiscope.imaging import QMAX, read_raster


def read_ppm(path):
    data = path.read_bytes()
    head = b"P6\n"
    assert data.startswith(head)
    dims, rest = data[len(head):].split(b"\n", 1)
    maxval, payload = rest.split(b"\n", 1)
    w, h = map(int, dims.split())
    assert maxval == b"65535"
    return np.frombuffer(payload, dtype=">u2").reshape(h, w, 3) / QMAX


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {"env": TINY_ENV.to_dict(), "net": dict(TINY_NET), "policy": {"T": 3}, "batch_size": 4,
           "eval_batch": 8, "epochs": 1}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(root / "data"),
                 "--n-train", "3", "--n-val", "1"]) == EXIT_OK
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == EXIT_OK
    return root


class TestPipeline:
    def test_gen_data_layout(self, workspace):
        assert (workspace / "data" / "3" / "0.img").exists()
        manifest = json.loads((workspace / "data" / "run_gen-data.json").read_text())
        assert manifest["command"] == "gen-data"
        assert sum(p.endswith(".img") for p in manifest["outputs"]) == 16

    def test_train_outputs(self, workspace):
        for name in ("checkpoint.bin", "checkpoint.json", "report.json", "run_train.json"):
            assert (workspace / "run" / name).exists()
        report = json.loads((workspace / "run" / "report.json").read_text())
        assert len(report["epochs"]) == 1

    def test_train_reproducible(self, workspace):
        out = workspace / "run2"
        assert main(["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"),
                     "--out", str(out)]) == EXIT_OK
        for name in ("checkpoint.bin", "checkpoint.json", "report.json"):
            assert (out / name).read_bytes() == (workspace / "run" / name).read_bytes()

    def test_flags_override_config(self, workspace):
        out = workspace / "run_flags"
        assert main(["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"),
                     "--out", str(out), "--rois", "2", "--lambda", "0.1", "--steps", "0"]) == EXIT_OK
        cfg = json.loads((out / "report.json").read_text())["config"]
        assert cfg["policy"]["T"] == 2 and cfg["policy"]["lam"] == 0.1 and cfg["epochs"] == 0

    def test_eval(self, workspace):
        out = workspace / "eval"
        assert main(["eval", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                     "--data", str(workspace / "data"), "--out", str(out)]) == EXIT_OK
        result = json.loads((out / "eval.json").read_text())
        assert len(result["predictions"]) == 4 and 0 <= result["combined"] <= 1

    def test_score_slide(self, workspace):
        slide = workspace / "slide"
        assert main(["gen-slide", "--config", str(workspace / "cfg.json"), "--out", str(slide), "--score", "2",
                     "--rows", "2", "--cols", "2"]) == EXIT_OK
        out = workspace / "score"
        assert main(["score-slide", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                     "--slide", str(slide), "--out", str(out)]) == EXIT_OK
        record = json.loads((out / "slide_score.json").read_text())
        assert record["gt_score"] == 2 and len(record["slide"]["tile_scores"]) == 4
        assert abs(sum(record["slide"]["area_ratios"]) - 1) <= 1e-12
        c = record["contest"]
        assert c["combined"] == pytest.approx((c["points"] + c["bonus"]) * c["weighted_confidence"])

    def test_ablate_and_sweep(self, workspace):
        out = workspace / "tables"
        cfg = str(workspace / "cfg.json")
        assert main(["ablate", "--config", cfg, "--data", str(workspace / "data"), "--out", str(out),
                     "--arms", "full,random_uniform"]) == EXIT_OK
        table = (out / "ablation.txt").read_text().splitlines()
        assert table[1].split()[:6] == ["arm", "0", "1+", "2+", "3+", "Acc_comb"]
        assert [r.split()[0] for r in table[2:]] == ["full", "random_uniform"]
        assert main(["sweep", "--config", cfg, "--data", str(workspace / "data"), "--out", str(out),
                     "--name", "roi_size", "--values", "4;8"]) == EXIT_OK
        rows = json.loads((out / "sweep_roi_size.json").read_text())
        assert [r["arm"] for r in rows] == ["roi_size=4", "roi_size=8"]


class TestVisualize:
    def trace(self, tmp_path, locs):
        p = tmp_path / "trace.json"
        p.write_text(json.dumps({"locations": locs}))
        return p

    def test_empty_trace_copies_tile(self, workspace, tmp_path):
        tile = workspace / "data" / "2" / "0.img"
        out = tmp_path / "o.ppm"
        assert main(["visualize", "--tile", str(tile), "--trace", str(self.trace(tmp_path, [])),
                     "--out", str(out), "--roi-size", "8"]) == EXIT_OK
        assert np.array_equal(read_ppm(out), read_raster(tile).pixels)

    def test_six_boxes(self):
        img = render_overlay(np.zeros((64, 64, 3)), [(0.1, 0.1), (0.5, 0.1), (0.9, 0.1),
                                                     (0.1, 0.9), (0.5, 0.9), (0.9, 0.9)], 8)
        colors = box_colors(6)
        for c in colors:
            assert np.all(img == c, axis=2).sum() >= 4 * 7
        assert colors[0] == (0.0, 0.0, 1.0) and colors[-1] == (1.0, 0.0, 0.0)
        assert len({tuple(c) for c in colors}) == 6

    def test_byte_identical(self, workspace, tmp_path):
        tile = workspace / "data" / "1" / "0.img"
        trace = self.trace(tmp_path, [[0.2, 0.3], [0.7, 0.6]])
        digests = []
        for name in ("a.ppm", "b.ppm"):
            assert main(["visualize", "--tile", str(tile), "--trace", str(trace), "--out",
                         str(tmp_path / name), "--roi-size", "8"]) == EXIT_OK
            digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_from_checkpoint(self, workspace, tmp_path):
        out = tmp_path / "ck.ppm"
        assert main(["visualize", "--tile", str(workspace / "data" / "3" / "1.img"), "--checkpoint",
                     str(workspace / "run" / "checkpoint.bin"), "--out", str(out)]) == EXIT_OK
        trace = json.loads(out.with_suffix(".trace.json").read_text())
        assert len(trace["locations"]) == 3 and trace["roi_size"] == 8

    def test_location_outside_unit_square(self, workspace, tmp_path):
        trace = self.trace(tmp_path, [[1.5, 0.2]])
        assert main(["visualize", "--tile", str(workspace / "data" / "1" / "0.img"), "--trace", str(trace),
                     "--out", str(tmp_path / "x.ppm")]) == EXIT_DATA

    def test_trace_tile_mismatch(self, workspace, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps({"locations": [[0.5, 0.5]], "tile_shape": [256, 256]}))
        assert main(["visualize", "--tile", str(workspace / "data" / "1" / "0.img"), "--trace", str(p),
                     "--out", str(tmp_path / "x.ppm")]) == EXIT_DATA


class TestExitCodes:
    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_flag(self):
        assert main(["train", "--bogus"]) == EXIT_USAGE

    def test_bad_override(self, workspace, tmp_path):
        assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path),
                     "--set", "policy.nonexistent=1"]) == EXIT_DATA

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        bad = tmp_path / "c.bin"
        bad.write_bytes(b"nope")
        (tmp_path / "c.json").write_text((workspace / "run" / "checkpoint.json").read_text())
        assert main(["eval", "--checkpoint", str(bad), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "o")]) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure(self, workspace, tmp_path):
        assert main(["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path), "--set", "lr0=1e300", "--set", "momentum=0"]) == EXIT_NUMERIC
