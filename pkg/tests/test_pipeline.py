import json

import pytest

from shoplens._fmt import file_digest, read_csv
from shoplens.cli import main as cli_main
from shoplens.pipeline import (MissingStageError, PipelineConfig,
                               emit_plot_data, run_all, run_stage)


def fixture_config(fixture_csv, fixture_config_path, out_dir) -> PipelineConfig:
    cfg = PipelineConfig.load(fixture_config_path)
    return PipelineConfig.from_dict({
        **cfg.to_dict(), "input_path": str(fixture_csv), "output_dir": str(out_dir)})


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    """One shared full pipeline run over the bundled fixture."""
    from conftest import DATA_DIR
    out = tmp_path_factory.mktemp("full") / "run"
    cfg = fixture_config(DATA_DIR / "fixture_invoices.csv",
                         DATA_DIR / "fixture_config.json", out)
    entries = run_all(cfg)
    return cfg, out, entries


class TestStageOrdering:
    def test_rfm_before_ingest_names_ingest(self, fixture_csv,
                                            fixture_config_path, tmp_path):
        cfg = fixture_config(fixture_csv, fixture_config_path, tmp_path / "r")
        with pytest.raises(MissingStageError) as err:
            run_stage("rfm", cfg)
        assert err.value.required_stage == "ingest"
        assert "ingest" in str(err.value)

    def test_cluster_before_factorize_names_factorize(self, fixture_csv,
                                                      fixture_config_path,
                                                      tmp_path):
        cfg = fixture_config(fixture_csv, fixture_config_path, tmp_path / "r")
        run_stage("ingest", cfg)
        with pytest.raises(MissingStageError) as err:
            run_stage("cluster", cfg)
        assert err.value.required_stage == "factorize"

    def test_unknown_stage(self, fixture_csv, fixture_config_path, tmp_path):
        cfg = fixture_config(fixture_csv, fixture_config_path, tmp_path / "r")
        with pytest.raises(ValueError, match="unknown stage"):
            run_stage("shuffle", cfg)


class TestFullRun:
    def test_manifest_has_seven_stage_entries(self, full_run):
        _, out, entries = full_run
        assert len(entries) == 7
        manifest = json.loads((out / "manifest.json").read_text())
        assert [s["name"] for s in manifest["stages"]] == [
            "ingest", "rfm", "select-features", "grid-search",
            "factorize", "cluster", "export-graph"]

    def test_manifest_digests_verify(self, full_run):
        _, out, _ = full_run
        manifest = json.loads((out / "manifest.json").read_text())
        for stage in manifest["stages"]:
            for rel, digest in stage["outputs"].items():
                assert file_digest(out / rel) == digest, rel

    def test_rerun_single_stage_reproduces_digests(self, full_run):
        cfg, out, entries = full_run
        before = next(e for e in entries if e["name"] == "factorize")["outputs"]
        after = run_stage("factorize", cfg)["outputs"]
        assert before == after

    def test_config_written_canonically(self, full_run):
        cfg, out, _ = full_run
        stored = json.loads((out / "config.json").read_text())
        assert stored == json.loads(json.dumps(cfg.resolved().to_dict()))
        assert stored["lasso"]["seed"] is not None  # seeds are explicit

    def test_metrics_recorded(self, full_run):
        _, out, entries = full_run
        by_name = {e["name"]: e["metrics"] for e in entries}
        assert by_name["ingest"]["frequent_shoppers"] == 32
        assert by_name["rfm"]["lambda"] is not None
        assert by_name["select-features"]["m_prime"] >= 1
        assert by_name["cluster"]["n_clusters"] >= 0

    def test_scores_cover_frequent_members(self, full_run):
        _, out, _ = full_run
        _, rows = read_csv(out / "rfm" / "scores.csv")
        _, matrix_rows = read_csv(out / "ingest" / "matrix.triplets.csv")
        assert {r[0] for r in matrix_rows} <= {r[0] for r in rows}


class TestDeterminism:
    def test_run_all_byte_identical(self, fixture_csv, fixture_config_path,
                                    tmp_path, monkeypatch):
        digests = []
        for sub in ("one", "two"):
            base = tmp_path / sub
            base.mkdir()
            monkeypatch.chdir(base)
            cfg = fixture_config(fixture_csv, fixture_config_path, "run")
            run_all(cfg)
            per_file = {}
            for path in sorted((base / "run").rglob("*")):
                if path.is_file() and path.name != "manifest.json":
                    per_file[str(path.relative_to(base))] = file_digest(path)
            manifest = json.loads((base / "run" / "manifest.json").read_text())
            per_file["__manifest_digests__"] = json.dumps(
                [(s["name"], s["inputs"], s["outputs"]) for s in manifest["stages"]])
            digests.append(per_file)
        assert digests[0] == digests[1]


class TestPlotData:
    @pytest.mark.parametrize("kind,expected_header", [
        ("drop-curve", ["n_features", "holdout_mse"]),
        ("feature-importance", ["rank", "abs_beta", "stock_code"]),
        ("grid-mse", ["k", "alpha_m", "l1_ratio", "imputation_mse"]),
        ("dictionary-profile", ["element", "item", "weight"]),
        ("cluster-sizes", ["cluster_id", "size"]),
        ("centroid-profile", ["cluster_id", "element", "normalized"]),
    ])
    def test_kinds_emit_expected_schema(self, full_run, tmp_path, kind,
                                        expected_header):
        _, out, _ = full_run
        dest = tmp_path / f"{kind}.csv"
        emit_plot_data(out, kind, dest)
        header, rows = read_csv(dest)
        assert header == expected_header
        assert rows

    def test_cluster_sizes_rows_count_noise(self, full_run, tmp_path):
        _, out, entries = full_run
        metrics = next(e for e in entries if e["name"] == "cluster")["metrics"]
        dest = tmp_path / "sizes.csv"
        emit_plot_data(out, "cluster-sizes", dest)
        _, rows = read_csv(dest)
        expected = metrics["n_clusters"] + (1 if metrics["noise"] else 0)
        assert len(rows) == expected

    def test_unknown_kind_lists_valid_ids(self, full_run, tmp_path):
        _, out, _ = full_run
        with pytest.raises(ValueError, match="drop-curve"):
            emit_plot_data(out, "spiral", tmp_path / "x.csv")


class TestCli:
    def test_run_all_and_query_similar(self, fixture_csv, fixture_config_path,
                                       tmp_path, capsys):
        out = tmp_path / "run"
        rc = cli_main(["--config", str(fixture_config_path), "run-all",
                       "--input", str(fixture_csv), "--out", str(out)])
        assert rc == 0
        _, rows = read_csv(out / "ingest" / "matrix.triplets.csv")
        some_customer = rows[0][0]
        capsys.readouterr()
        rc = cli_main(["query-similar", "--out", str(out),
                       "--node", some_customer, "--top", "3"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert 1 <= len(lines) <= 3
        assert "\t" in lines[0]

    def test_plot_data_subcommand(self, fixture_csv, fixture_config_path,
                                  tmp_path, capsys):
        out = tmp_path / "run"
        cfg = fixture_config(fixture_csv, fixture_config_path, out)
        for stage in ("ingest", "rfm", "select-features"):
            run_stage(stage, cfg)
        dest = tmp_path / "curve.csv"
        rc = cli_main(["plot-data", "--out", str(out), "--kind", "drop-curve",
                       "--file", str(dest)])
        assert rc == 0
        assert dest.exists()

    def test_missing_upstream_is_a_clean_error(self, fixture_csv,
                                               fixture_config_path, tmp_path,
                                               capsys):
        rc = cli_main(["--config", str(fixture_config_path), "rfm",
                       "--input", str(fixture_csv),
                       "--out", str(tmp_path / "empty")])
        assert rc == 2
        assert "ingest" in capsys.readouterr().err

    def test_stage_flag_overrides(self, fixture_csv, fixture_config_path,
                                  tmp_path):
        out = tmp_path / "run"
        cfg = fixture_config(fixture_csv, fixture_config_path, out)
        for stage in ("ingest", "rfm", "select-features", "grid-search"):
            run_stage(stage, cfg)
        rc = cli_main(["--config", str(fixture_config_path), "factorize",
                       "--input", str(fixture_csv), "--out", str(out),
                       "--k", "2", "--alpha-m", "0.1", "--l1-ratio", "0.0"])
        assert rc == 0
        stored = json.loads((out / "factorize" / "nmf_config.json").read_text())
        assert stored["k"] == 2
        assert stored["alpha_m"] == 0.1

    def test_rfm_weight_flags(self, fixture_csv, fixture_config_path, tmp_path):
        out = tmp_path / "run"
        cfg = fixture_config(fixture_csv, fixture_config_path, out)
        run_stage("ingest", cfg)
        rc = cli_main(["--config", str(fixture_config_path), "rfm",
                       "--input", str(fixture_csv), "--out", str(out),
                       "--w-recency", "0.2", "--w-frequency", "0.3",
                       "--w-monetary", "0.5"])
        assert rc == 0
        stored = json.loads((out / "rfm" / "boxcox.json").read_text())
        assert stored["weights"] == {"recency": 0.2, "frequency": 0.3,
                                     "monetary": 0.5}

    def test_cluster_row_normalize_flag(self, fixture_csv, fixture_config_path,
                                        tmp_path):
        out = tmp_path / "run"
        cfg = fixture_config(fixture_csv, fixture_config_path, out)
        for stage in ("ingest", "rfm", "select-features", "grid-search",
                      "factorize"):
            run_stage(stage, cfg)
        rc = cli_main(["--config", str(fixture_config_path), "cluster",
                       "--input", str(fixture_csv), "--out", str(out),
                       "--min-cluster-size", "2", "--row-normalize"])
        assert rc == 0
        stored = json.loads((out / "config.json").read_text())
        assert stored["cluster"]["row_normalize"] is True
        assert (out / "cluster" / "labels.csv").exists()
