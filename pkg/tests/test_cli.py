import csv
import json

import pytest

from vortexnoise import __version__
from vortexnoise.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERDICT, main
from vortexnoise.config import DEFAULTS, SCHEMA, config_hash, load, validate
from vortexnoise.fields import ConfigurationError
from vortexnoise.structures import read_ensemble

BASE = {"dimension": 2, "seed": 5, "law": {"ell": 0.25, "sigma": 0.1}}


def write_cfg(tmp_path, name="c.json", **sections):
    cfg = json.loads(json.dumps(BASE))
    cfg.update(sections)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run(tmp_path, cmd, cfg, out="out", *extra):
    return main([cmd, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


class TestConfig:
    def test_defaults_merged(self):
        c = validate({"dimension": 3, "law": {"ell": 0.2}})
        assert c["law"]["sigma"] == DEFAULTS["law"]["sigma"] and c["law"]["ell"] == 0.2

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="law"):
            validate({"law": {"radius": 0.2}})

    def test_hash_is_canonical(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
        assert len(config_hash({})) == 16
        assert config_hash({"seed": 1, "threads": 4}) == config_hash({"seed": 1, "threads": 1})

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(ConfigurationError):
            load(tmp_path / "x.json")

    def test_schema_command(self, capsys):
        assert main(["schema"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["title"] == SCHEMA["title"]


class TestSample:
    def test_empty_ensemble(self, tmp_path):
        cfg = write_cfg(tmp_path, sample={"n_samples": 0, "k_max": 4})
        assert run(tmp_path, "sample", cfg) == EXIT_OK
        data = read_ensemble(tmp_path / "out" / "ensemble.bin")
        assert data["n_samples"] == 0 and data["coeffs"].shape[0] == 0

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_cfg(tmp_path, sample={"n_samples": 50, "k_max": 6})
        run(tmp_path, "sample", cfg, "a")
        run(tmp_path, "sample", cfg, "b", "--threads", "3")
        for name in ("ensemble.bin", "ensemble.bin.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_sidecar_stamped(self, tmp_path):
        cfg = write_cfg(tmp_path, sample={"n_samples": 3, "k_max": 2})
        run(tmp_path, "sample", cfg)
        meta = json.loads((tmp_path / "out" / "ensemble.bin.json").read_text())
        assert meta["version"] == __version__ and len(meta["config_hash"]) == 16

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_cfg(tmp_path, sample={"n_samples": 5, "k_max": 2})
        run(tmp_path, "sample", cfg, "a")
        run(tmp_path, "sample", cfg, "b", "--seed", "6")
        assert (tmp_path / "a/ensemble.bin").read_bytes() != (tmp_path / "b/ensemble.bin").read_bytes()

    def test_missing_section(self, tmp_path, capsys):
        assert run(tmp_path, "sample", write_cfg(tmp_path)) == EXIT_CONFIG
        assert "sample" in capsys.readouterr().err

    def test_moment_condition_checked(self, tmp_path):
        cfg = write_cfg(tmp_path, law={"length": "power", "beta": 0.0, "moment_p": 3.0},
                        sample={"n_samples": 5, "k_max": 2})
        assert run(tmp_path, "sample", cfg) == EXIT_CONFIG

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VORTEXNOISE_OUT", str(tmp_path / "env"))
        cfg = write_cfg(tmp_path, sample={"n_samples": 1, "k_max": 2})
        assert main(["sample", "--config", str(cfg)]) == EXIT_OK
        assert (tmp_path / "env" / "ensemble.bin").exists()


class TestJump:
    JUMP = {"N": 1, "probes": [[1.0, 2.0]], "out_times": [0.5, 1.0], "n_paths": 200, "k_max": 4}

    def test_reproducible_csv(self, tmp_path):
        cfg = write_cfg(tmp_path, jump=self.JUMP)
        run(tmp_path, "jump", cfg, "a")
        run(tmp_path, "jump", cfg, "b", "--threads", "2")
        a = (tmp_path / "a" / "jump_paths.csv").read_bytes()
        assert a == (tmp_path / "b" / "jump_paths.csv").read_bytes()
        rows = list(csv.reader(open(tmp_path / "a" / "jump_paths.csv", newline="")))
        assert rows[0][-2:] == ["config_hash", "version"]

    def test_out_times_outside(self, tmp_path):
        cfg = write_cfg(tmp_path, jump=dict(self.JUMP, out_times=[1.5]))
        assert run(tmp_path, "jump", cfg) == EXIT_CONFIG

    def test_summary_fields(self, tmp_path):
        cfg = write_cfg(tmp_path, jump=dict(self.JUMP, N=4))
        assert run(tmp_path, "jump", cfg) in (EXIT_OK, EXIT_VERDICT)
        s = json.loads((tmp_path / "out" / "jump_summary.json").read_text())
        assert {"covariance", "max_jump", "max_jump_h", "verdicts", "config_hash"} <= set(s)


class TestSpectrumEddy:
    def test_spectrum_verdicts(self, tmp_path):
        cfg = write_cfg(tmp_path, spectrum={"alpha": 1.0, "k0_list": [4, 8]})
        assert run(tmp_path, "spectrum", cfg) == EXIT_OK
        s = json.loads((tmp_path / "out" / "spectrum_comparison.json").read_text())
        assert abs(s["slope"] + 4) < 0.05
        assert all(s["verdicts"].values())

    def test_eddy_underresolved(self, tmp_path):
        cfg = write_cfg(tmp_path, eddy={"ell_list": [0.1, 0.05, 0.01], "k_max": 64})
        assert run(tmp_path, "eddy", cfg) == EXIT_CONFIG

    def test_eddy_2d(self, tmp_path):
        cfg = write_cfg(tmp_path, eddy={"ell_list": [0.125, 0.0625, 0.03125], "k_max": 256})
        assert run(tmp_path, "eddy", cfg) == EXIT_OK
        v = json.loads((tmp_path / "out" / "eddy_verdict.json").read_text())
        assert v["verdicts"]["scaling_2d_ok"]


class TestTransport:
    def test_unstable_is_config_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, law={"ell": 0.1, "sigma": 1.0}, transport={"n_traj": 100})
        assert run(tmp_path, "transport", cfg) == EXIT_CONFIG
        assert "unstable" in capsys.readouterr().err

    def test_small_run(self, tmp_path):
        cfg = write_cfg(tmp_path, transport={"n_traj": 100, "steps": 40, "dt": 0.01,
                                             "n_grid": 32, "out_every": 4})
        code = run(tmp_path, "transport", cfg)
        assert code in (EXIT_OK, EXIT_VERDICT)
        v = json.loads((tmp_path / "out" / "transport_verdict.json").read_text())
        assert v["verdicts"]["bound_ok"]
        header = (tmp_path / "out" / "transport_timeseries.csv").read_text().splitlines()[0]
        assert header.startswith("t,energy") and header.endswith("config_hash,version")


class TestReport:
    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["report", str(tmp_path / "empty")]) == EXIT_OK
        rep = json.loads((tmp_path / "empty" / "report.json").read_text())
        assert rep["sources"] == {} and rep["all_ok"]

    def test_failed_verdict(self, tmp_path):
        (tmp_path / "x.json").write_text(json.dumps({"verdicts": {"a": True, "b": False}}))
        assert main(["report", str(tmp_path)]) == EXIT_VERDICT
        assert "b: FAIL" in (tmp_path / "report.md").read_text()
