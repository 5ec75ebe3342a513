"""End-to-end command-line driver: simulate, localize, score, errors."""

import json
from pathlib import Path

import numpy as np
import pytest

from tagloc.cli import EXIT_INPUT, EXIT_OK, EXIT_STAGE, main

SCENARIO = """\
duration = 20
receiver.waypoints = 0,0, 10,2, 20,0
receiver.speed = 1.0
target.position = 10,6
reflectors = 10,-40,0.5
gains.tag = 0.15
snr_db = 20
seed = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "scenario.cfg"
    cfg.write_text(SCENARIO)
    trace = d / "run.trace"
    assert main(["simulate", str(cfg), str(trace)]) == EXIT_OK
    est = d / "estimates.jsonl"
    assert main(["localize", str(trace), str(est)]) == EXIT_OK
    return d


class TestSimulate:
    def test_outputs_exist(self, workdir):
        assert (workdir / "run.trace").exists()
        assert (workdir / "run.trace.truth").exists()

    def test_byte_identical_reruns(self, workdir, tmp_path):
        a, b = tmp_path / "a.trace", tmp_path / "b.trace"
        cfg = workdir / "scenario.cfg"
        assert main(["simulate", str(cfg), str(a)]) == EXIT_OK
        assert main(["simulate", str(cfg), str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        assert Path(str(a) + ".truth").read_bytes() == Path(str(b) + ".truth").read_bytes()

    def test_bad_scenario_key_exits_input(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("durationn = 5\n")
        assert main(["simulate", str(cfg), str(tmp_path / "x.trace")]) == EXIT_INPUT
        assert "durationn" in capsys.readouterr().err

    def test_missing_config_exits_input(self, tmp_path):
        assert main(["simulate", str(tmp_path / "none.cfg"), str(tmp_path / "x.trace")]) == EXIT_INPUT


class TestLocalize:
    def test_estimates_nonempty_and_finite(self, workdir):
        lines = (workdir / "estimates.jsonl").read_text().strip().splitlines()
        assert len(lines) > 0
        for line in lines:
            rec = json.loads(line)
            assert np.isfinite([rec["t"], rec["x"], rec["y"]]).all()

    def test_missing_truth_sidecar_exits_input(self, workdir, tmp_path, capsys):
        bare = tmp_path / "bare.trace"
        bare.write_bytes((workdir / "run.trace").read_bytes())
        assert main(["localize", str(bare), str(tmp_path / "est.jsonl")]) == EXIT_INPUT
        assert "sidecar" in capsys.readouterr().err

    def test_bad_pipeline_config_exits_input(self, workdir, tmp_path, capsys):
        cfg = tmp_path / "pipe.cfg"
        cfg.write_text("decode.bitrrate = 300\n")
        code = main(["localize", str(workdir / "run.trace"),
                     str(tmp_path / "est.jsonl"), "--config", str(cfg)])
        assert code == EXIT_INPUT
        assert "decode.bitrrate" in capsys.readouterr().err

    def test_low_snr_fails_in_decode_stage(self, tmp_path, capsys):
        cfg = tmp_path / "weak.cfg"
        cfg.write_text("duration = 5\nreceiver.speed = 1\ntarget.position = 8,2\nsnr_db = -10\n")
        trace = tmp_path / "weak.trace"
        assert main(["simulate", str(cfg), str(trace)]) == EXIT_OK
        code = main(["localize", str(trace), str(tmp_path / "est.jsonl")])
        assert code == EXIT_STAGE
        assert "decode" in capsys.readouterr().err

    def test_dump_stage_writes_csv(self, workdir, tmp_path):
        out = tmp_path / "est.jsonl"
        code = main(["localize", str(workdir / "run.trace"), str(out),
                     "--dump-stage", "spectral", "--dump-dir", str(tmp_path)])
        assert code == EXIT_OK
        csvs = list(tmp_path.glob("*.csv"))
        assert csvs
        header = csvs[0].read_text().splitlines()[0]
        assert "," in header


class TestScore:
    def truth_records(self, workdir):
        return [json.loads(l) for l in
                (workdir / "run.trace.truth").read_text().strip().splitlines()]

    def write_estimates(self, path, records):
        path.write_text("".join(json.dumps(r) + "\n" for r in records))

    def test_truth_copy_scores_zero(self, workdir, tmp_path, capsys):
        recs = [{"t": r["t"], "x": r["target"][0], "y": r["target"][1]}
                for r in self.truth_records(workdir)[::20]]
        est = tmp_path / "perfect.jsonl"
        self.write_estimates(est, recs)
        out = tmp_path / "metrics.json"
        code = main(["score", str(est), str(workdir / "run.trace.truth"), "--out", str(out)])
        assert code == EXIT_OK
        metrics = json.loads(out.read_text())
        assert metrics["median"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["count"] == len(recs)

    def test_unit_offset_scores_one(self, workdir, tmp_path):
        recs = [{"t": r["t"], "x": r["target"][0] + 1.0, "y": r["target"][1]}
                for r in self.truth_records(workdir)[::20]]
        est = tmp_path / "off.jsonl"
        self.write_estimates(est, recs)
        out = tmp_path / "metrics.json"
        assert main(["score", str(est), str(workdir / "run.trace.truth"), "--out", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["median"] == pytest.approx(1.0, abs=1e-9)

    def test_no_overlap_exits_input(self, workdir, tmp_path, capsys):
        est = tmp_path / "late.jsonl"
        self.write_estimates(est, [{"t": 1e6, "x": 0.0, "y": 0.0}])
        assert main(["score", str(est), str(workdir / "run.trace.truth")]) == EXIT_INPUT
        assert "overlap" in capsys.readouterr().err

    def test_empty_estimates_exits_input(self, workdir, tmp_path):
        est = tmp_path / "empty.jsonl"
        est.write_text("")
        assert main(["score", str(est), str(workdir / "run.trace.truth")]) == EXIT_INPUT
