import json
from pathlib import Path

import numpy as np
import pytest

from geomflow.dynamics import load_dataset, make_pairs, save_dataset
from geomflow.harness import (
    MetricsReport,
    RunConfig,
    SweepEntry,
    evaluate_model,
    load_model_from_checkpoint,
    model_select,
    train_loop,
)
from geomflow.harness.cli import main


@pytest.fixture(scope="module")
def disk_data(tmp_path_factory):
    base = tmp_path_factory.mktemp("data") / "disk"
    save_dataset(make_pairs("disk", 300, seed=0), base)
    return base


@pytest.fixture(scope="module")
def sphere_data(tmp_path_factory):
    base = tmp_path_factory.mktemp("data") / "sphere"
    save_dataset(make_pairs("sphere", 200, seed=0), base)
    return base


def small_cfg(data, out, **kw):
    defaults = dict(
        data=str(data), variant="proj_faa", depth=2, epochs=20, batch_size=500,
        seed=0, out_dir=str(out), early_stop_patience=10_000,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


class TestTrainLoop:
    def test_zero_epochs_writes_initial_checkpoint(self, disk_data, tmp_path):
        cfg = small_cfg(disk_data, tmp_path / "run0", epochs=0)
        result = train_loop(cfg)
        assert result.history == []
        assert Path(result.best_path + ".json").exists()
        assert Path(result.best_path + ".bin").exists()
        hist = (tmp_path / "run0" / "history.csv").read_text().strip().splitlines()
        assert hist == ["epoch,train_loss,val_loss,lr"]

    def test_500_epoch_disk_run_improves_tenfold(self, tmp_path):
        # seed-fixed sanity: ProjFAA on disk pairs, final val at least 10x
        # below the initial val
        base = tmp_path / "disk1k"
        save_dataset(make_pairs("disk", 1000, seed=0), base)
        cfg = small_cfg(base, tmp_path / "run1", depth=4, epochs=500)
        result = train_loop(cfg)
        first_val = result.history[0][2]
        assert result.history[-1][2] < first_val / 10.0

    def test_reproducible_history(self, disk_data, tmp_path):
        r1 = train_loop(small_cfg(disk_data, tmp_path / "a", epochs=15))
        r2 = train_loop(small_cfg(disk_data, tmp_path / "b", epochs=15))
        assert r1.history == r2.history

    def test_interrupt_and_resume_exact(self, disk_data, tmp_path):
        full = train_loop(small_cfg(disk_data, tmp_path / "full", epochs=24))
        part = train_loop(small_cfg(disk_data, tmp_path / "part", epochs=11))
        resumed = train_loop(
            small_cfg(
                disk_data, tmp_path / "part", epochs=24,
                resume=str(Path(tmp_path / "part") / "ckpt_last"),
            )
        )
        assert len(resumed.history) == len(full.history)
        for a, b in zip(full.history, resumed.history):
            assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2] and a[3] == b[3]
        # parameters also agree bit-for-bit
        m_full, _, _ = load_model_from_checkpoint(full.last_path)
        m_res, _, _ = load_model_from_checkpoint(resumed.last_path)
        for (n1, p1), (n2, p2) in zip(m_full.parameters(), m_res.parameters()):
            assert n1 == n2 and np.array_equal(p1.data, p2.data)

    def test_best_checkpoint_reload_predicts_identically(self, disk_data, tmp_path):
        cfg = small_cfg(disk_data, tmp_path / "run2", epochs=30)
        result = train_loop(cfg)
        model, _, extra = load_model_from_checkpoint(result.best_path)
        ds = load_dataset(disk_data)
        x_test, _ = ds.subset("test")
        a = result.model.predict(x_test) if result.best_epoch == len(result.history) - 1 else None
        out = model.predict(x_test)
        assert np.all(np.isfinite(out))
        assert extra["spec"]["variant"] == "proj_faa"

    def test_prob_anchor_variant_trains(self, sphere_data, tmp_path):
        cfg = small_cfg(
            sphere_data, tmp_path / "run3", variant="prob_anchor", epochs=10,
            n_anchors=16,
        )
        result = train_loop(cfg)
        assert np.isfinite(result.best_val)
        model, anchors, _ = load_model_from_checkpoint(result.best_path)
        assert anchors is not None and anchors.Y.shape == (16, 3)


class TestMetrics:
    def test_report_schema_stable_across_variants(self, disk_data, sphere_data, tmp_path):
        from geomflow.harness.metrics import METRICS_FIELDS

        paths = []
        for data, variant in ((disk_data, "proj_faa"), (sphere_data, "regular"),
                              (sphere_data, "prob_anchor")):
            cfg = small_cfg(data, tmp_path / f"m_{variant}", variant=variant, epochs=3,
                            n_anchors=8)
            result = train_loop(cfg)
            model, anchors, _ = load_model_from_checkpoint(result.best_path)
            ds = load_dataset(data)
            x_test, y_test = ds.subset("test")
            report = evaluate_model(model, ds.kernel(), x_test, y_test, anchors=anchors,
                                    dataset=ds.generator)
            out = tmp_path / f"report_{variant}.json"
            report.write_json(out)
            paths.append(out)
        for p in paths:
            payload = json.loads(p.read_text())
            assert tuple(sorted(payload)) == tuple(sorted(METRICS_FIELDS))

    def test_model_select_rules(self):
        single = [SweepEntry(4, 0.0, 0.5, "a")]
        assert model_select(single) is single[0]
        two = [SweepEntry(4, 0.0, 0.2, "a"), SweepEntry(6, 0.0, 0.1, "b")]
        assert model_select(two).checkpoint == "b"
        ties = [
            SweepEntry(6, 0.0, 0.1, "c"),
            SweepEntry(4, 1e-4, 0.1, "d"),
            SweepEntry(4, 0.0, 0.1, "e"),
        ]
        assert model_select(ties).checkpoint == "e"

    def test_selection_ignores_test_data(self):
        # selection consumes only validation losses; a SweepEntry carries no
        # test metrics at all, so deleting test files cannot change the choice
        entries = [SweepEntry(4, 0.0, 0.3, "a"), SweepEntry(8, 1e-4, 0.2, "b")]
        assert model_select(entries).checkpoint == "b"
        assert not hasattr(entries[0], "test_mse")


class TestCLI:
    def test_gen_data_deterministic_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            code = main(["gen-data", "--dataset", "disk", "--n", "40", "--seed", "3",
                         "--out", str(out)])
            assert code == 0
        assert (a.with_suffix(".csv")).read_bytes() == (b.with_suffix(".csv")).read_bytes()

    def test_train_missing_data_exits_2(self, tmp_path, capsys):
        code = main(["train", "--variant", "proj_faa", "--out", str(tmp_path / "o")])
        assert code == 2
        assert "--data" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_train_eval_project_pipeline(self, tmp_path):
        data = tmp_path / "disk"
        assert main(["gen-data", "--dataset", "disk", "--n", "120", "--seed", "1",
                     "--out", str(data)]) == 0
        run = tmp_path / "run"
        assert main(["train", "--data", str(data), "--variant", "proj_faa",
                     "--depth", "2", "--epochs", "5", "--out", str(run)]) == 0
        report = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", str(run / "ckpt_best"), "--data",
                     str(data), "--out", str(report)]) == 0
        payload = json.loads(report.read_text())
        assert payload["variant"] == "proj_faa" and payload["n_test"] > 0

        pts = tmp_path / "pts.csv"
        pts.write_text("1.5,0.0\n0.25,0.25\n")
        out_csv = tmp_path / "proj.csv"
        assert main(["project", "--input", str(pts), "--output", str(out_csv),
                     "--kernel", "disk"]) == 0
        rows = np.array([[float(v) for v in line.split(",")]
                         for line in out_csv.read_text().strip().splitlines()])
        np.testing.assert_allclose(rows[0], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(rows[1], [0.25, 0.25], atol=1e-15)

    def test_eval_noise_sigma_writes_curve(self, tmp_path):
        data = tmp_path / "disk"
        main(["gen-data", "--dataset", "disk", "--n", "80", "--seed", "2",
              "--out", str(data)])
        run = tmp_path / "run"
        main(["train", "--data", str(data), "--variant", "proj_faa", "--depth", "2",
              "--epochs", "3", "--out", str(run)])
        curve = tmp_path / "curve.csv"
        code = main(["eval", "--checkpoint", str(run / "ckpt_best"), "--data", str(data),
                     "--noise-sigma", "0.05,0.1", "--curve-out", str(curve)])
        assert code == 0
        lines = curve.read_text().strip().splitlines()
        assert lines[0] == "sigma,mse,mean_residual,max_residual"
        assert len(lines) == 3

    def test_verify_varadhan_json(self, tmp_path, capsys):
        out = tmp_path / "verify.json"
        code = main(["verify", "--check", "varadhan", "--manifold", "circle",
                     "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["pass"] is True
        assert payload["measured"] >= 0.45

    def test_verify_faa2eps(self, tmp_path):
        out = tmp_path / "faa.json"
        assert main(["verify", "--check", "faa2eps", "--out", str(out)]) == 0
        rows = json.loads(out.read_text())
        assert len(rows) == 4 and all(r["pass"] for r in rows)

    def test_sweep_selects_and_reports(self, tmp_path):
        data = tmp_path / "disk"
        main(["gen-data", "--dataset", "disk", "--n", "100", "--seed", "4",
              "--out", str(data)])
        out = tmp_path / "sweep"
        code = main(["sweep", "--data", str(data), "--variant", "proj_faa",
                     "--depths", "2,3", "--wds", "0", "--epochs", "4",
                     "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "sweep_summary.json").read_text())
        assert len(summary["runs"]) == 2
        assert summary["selected"]["depth"] in (2, 3)
        assert "test_mse" in summary["test_metrics"]

    def test_output_root_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GEOMFLOW_OUT_ROOT", str(tmp_path))
        code = main(["gen-data", "--dataset", "disk", "--n", "10", "--seed", "0",
                     "--out", "nested/ds"])
        assert code == 0
        assert (tmp_path / "nested" / "ds.csv").exists()

    def test_sweep_parallel_jobs_match_sequential(self, tmp_path):
        data = tmp_path / "disk"
        main(["gen-data", "--dataset", "disk", "--n", "80", "--seed", "5",
              "--out", str(data)])
        seq, par = tmp_path / "seq", tmp_path / "par"
        for out, jobs in ((seq, "1"), (par, "2")):
            code = main(["sweep", "--data", str(data), "--variant", "proj_faa",
                         "--depths", "2,3", "--wds", "0", "--epochs", "3",
                         "--out", str(out), "--jobs", jobs])
            assert code == 0
        a = json.loads((seq / "sweep_summary.json").read_text())
        b = json.loads((par / "sweep_summary.json").read_text())
        assert [r["best_val"] for r in a["runs"]] == [r["best_val"] for r in b["runs"]]
        assert a["selected"]["depth"] == b["selected"]["depth"]
