"""End-to-end command tests driven through the in-process entry point."""

from __future__ import annotations

import json

import pytest

from synthcorpus import make_corpus
from vic.cli import main
from vic.core import load_run_file
from vic.sgrid import load_sgrid


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("clicorpus"), n_videos=12, n_queries=30)


def run_paths(corpus):
    return [str(p) for p in corpus.run_paths]


# ---------------------------------------------------------------------------
# sgrid build
# ---------------------------------------------------------------------------


class TestSgridCommand:
    def test_build_all_grids(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "grids"
        code = main([
            "sgrid", "build",
            "--manifest", str(cli_corpus.manifest_path),
            "--out", str(out),
            "--grid-size", "2",
            "--canvas", "64",
        ])
        assert code == 0
        assert "built 12 grids, 0 failures" in capsys.readouterr().err
        for vid in cli_corpus.video_ids:
            grid = load_sgrid(out, vid)
            assert grid.canvas.size == (64, 64)
            assert len(grid.indices) == 4
        sidecar = json.loads((out / "vid000.sgrid.json").read_text())
        assert sidecar["s"] == 2
        assert sidecar["subtitle"] == "spoken transcript of clip 0"

    def test_single_cell_grid(self, cli_corpus, tmp_path):
        out = tmp_path / "grids"
        code = main([
            "sgrid", "build",
            "--manifest", str(cli_corpus.manifest_path),
            "--out", str(out),
            "--grid-size", "1",
            "--canvas", "32x48",
        ])
        assert code == 0
        grid = load_sgrid(out, "vid001")
        assert grid.canvas.size == (48, 32)  # PIL reports (w, h)
        assert grid.indices == (2,)

    def test_corrupt_video_fails_the_command(self, tmp_path, capsys):
        corpus = make_corpus(tmp_path / "c", n_videos=4, n_queries=4)
        bad_dir = corpus.root / "frames" / "vid001"
        for frame in bad_dir.iterdir():
            frame.unlink()
        (bad_dir / "frame00.png").write_bytes(b"junk")
        out = tmp_path / "grids"

        code = main([
            "sgrid", "build",
            "--manifest", str(corpus.manifest_path),
            "--out", str(out), "--canvas", "32", "--keep-going",
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert "vid001" in err
        assert "built 3 grids, 1 failures" in err
        # the healthy videos were all still built
        for vid in ("vid000", "vid002", "vid003"):
            assert (out / f"{vid}.sgrid.jpg").exists()

    def test_corrupt_video_without_keep_going(self, tmp_path, capsys):
        corpus = make_corpus(tmp_path / "c", n_videos=4, n_queries=4)
        bad_dir = corpus.root / "frames" / "vid000"
        for frame in bad_dir.iterdir():
            frame.unlink()
        (bad_dir / "frame00.png").write_bytes(b"junk")
        code = main([
            "sgrid", "build",
            "--manifest", str(corpus.manifest_path),
            "--out", str(tmp_path / "grids"), "--canvas", "32", "--jobs", "1",
        ])
        assert code == 1

    def test_missing_manifest_is_usage_error(self, tmp_path):
        code = main([
            "sgrid", "build", "--manifest", str(tmp_path / "absent.json"),
            "--out", str(tmp_path / "g"),
        ])
        assert code == 2

    def test_bad_canvas_is_usage_error(self, cli_corpus, tmp_path):
        code = main([
            "sgrid", "build", "--manifest", str(cli_corpus.manifest_path),
            "--out", str(tmp_path / "g"), "--canvas", "large",
        ])
        assert code == 2


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


class TestFuseCommand:
    @pytest.mark.parametrize("method", ["rrf", "combsum", "combmnz"])
    def test_methods_write_valid_runs(self, cli_corpus, tmp_path, method):
        out = tmp_path / f"{method}.run"
        code = main(["fuse", "--method", method, "--runs", *run_paths(cli_corpus),
                     "--out", str(out)])
        assert code == 0
        fused = load_run_file(out)
        assert len(fused) == len(cli_corpus.caption_ids)
        sample = next(iter(fused.values()))
        assert sample.retriever_tag == method

    def test_weights_accepted(self, cli_corpus, tmp_path):
        out = tmp_path / "w.run"
        code = main([
            "fuse", "--method", "combsum", "--runs", *run_paths(cli_corpus),
            "--weights", "r1=1.0,r2=0.5,r3=0.25", "--out", str(out),
        ])
        assert code == 0

    def test_uncovered_weights_rejected(self, cli_corpus, tmp_path):
        code = main([
            "fuse", "--method", "combsum", "--runs", *run_paths(cli_corpus),
            "--weights", "r1=1.0", "--out", str(tmp_path / "w.run"),
        ])
        assert code == 2

    def test_vic_is_not_a_fusion_method(self, cli_corpus, tmp_path, capsys):
        code = main(["fuse", "--method", "vic", "--runs", *run_paths(cli_corpus),
                     "--out", str(tmp_path / "x.run")])
        assert code == 2
        assert "rerank" in capsys.readouterr().err

    def test_disjoint_sources_have_nothing_to_fuse(self, tmp_path, capsys):
        a = tmp_path / "a.run"
        b = tmp_path / "b.run"
        a.write_text("qa Q0 x 1 1.0 ta\n")
        b.write_text("qb Q0 x 1 1.0 tb\n")
        code = main(["fuse", "--method", "rrf", "--runs", str(a), str(b),
                     "--out", str(tmp_path / "o.run")])
        assert code == 1
        assert "no query" in capsys.readouterr().err

    def test_missing_method_is_usage_error(self, cli_corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["fuse", "--runs", *run_paths(cli_corpus), "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


# ---------------------------------------------------------------------------
# rerank
# ---------------------------------------------------------------------------


def rerank_args(corpus, out, K=6, **extra):
    args = [
        "rerank",
        "--manifest", str(corpus.manifest_path),
        "--runs", *run_paths(corpus),
        "--K", str(K),
        "--backend", "mock",
        "--direction", "t2v",
        "--grid-size", "1",
        "--canvas", "32",
        "--out", str(out),
    ]
    for key, value in extra.items():
        flag = "--" + key.replace("_", "-")
        if value is True:
            args.append(flag)
        else:
            args.extend([flag, str(value)])
    return args


class TestRerankCommand:
    def test_mock_end_to_end(self, cli_corpus, tmp_path):
        out = tmp_path / "vic.run"
        assert main(rerank_args(cli_corpus, out)) == 0
        run = load_run_file(out)
        assert len(run) == len(cli_corpus.caption_ids)
        for query, lst in run.items():
            assert lst.retriever_tag == "vic"
            assert len(lst.entries) <= 6
            assert lst.entries[0].score == 1.0

    def test_mock_puts_assembled_gold_first(self, cli_corpus, tmp_path):
        out = tmp_path / "vic.run"
        main(rerank_args(cli_corpus, out))
        run = load_run_file(out)
        runs = [load_run_file(p) for p in cli_corpus.run_paths]
        k_max = 2  # ceil(6 / 3)
        for query, gold in cli_corpus.gold.items():
            assembled = set()
            for source in runs:
                assembled.update(source[query].items()[:k_max])
            if assembled & gold:
                assert run[query].entries[0].item in gold

    def test_identity_single_source_is_passthrough(self, cli_corpus, tmp_path):
        out = tmp_path / "ident.run"
        code = main([
            "rerank", "--manifest", str(cli_corpus.manifest_path),
            "--runs", str(cli_corpus.run_paths[0]),
            "--K", "6", "--backend", "identity", "--direction", "t2v",
            "--grid-size", "1", "--canvas", "32", "--out", str(out),
        ])
        assert code == 0
        run = load_run_file(out)
        first_stage = load_run_file(cli_corpus.run_paths[0])
        for query, lst in run.items():
            assert lst.items() == first_stage[query].items()[:6]

    def test_no_duplicates_assembles_more_distinct_items(self, cli_corpus, tmp_path):
        # K=7 with 3 sources interleaves 9 slots; the duplicate-keeping
        # variant truncates to 7 before item dedup, the other one after,
        # so only the latter can backfill distinct items from the tail
        dup_out = tmp_path / "dup.run"
        nodup_out = tmp_path / "nodup.run"
        main(rerank_args(cli_corpus, dup_out, K=7))
        main(rerank_args(cli_corpus, nodup_out, K=7, no_duplicates=True))
        dup = load_run_file(dup_out)
        nodup = load_run_file(nodup_out)
        assert any(
            len(nodup[q].entries) > len(dup[q].entries) for q in dup
        )
        assert all(
            len(nodup[q].entries) >= len(dup[q].entries) for q in dup
        )

    def test_priority_reorders_rounds(self, cli_corpus, tmp_path):
        out = tmp_path / "prio.run"
        code = main(rerank_args(
            cli_corpus, out, backend="identity", priority="r3,r2,r1",
        ))
        assert code == 0
        run = load_run_file(out)
        r3 = load_run_file(cli_corpus.run_paths[2])
        for query, lst in run.items():
            assert lst.entries[0].item == r3[query].entries[0].item

    def test_priority_must_cover_all_sources(self, cli_corpus, tmp_path):
        code = main(rerank_args(cli_corpus, tmp_path / "x.run", priority="r1,r2"))
        assert code == 2

    def test_config_file_with_set_and_flag_precedence(self, cli_corpus, tmp_path):
        config = tmp_path / "exp.json"
        config.write_text(json.dumps({
            "direction": "t2v",
            "K": 99,
            "sources": [{"path": str(p)} for p in cli_corpus.run_paths],
            "backend_kind": "mock",
            "grid": {"s": 1, "canvas_h": 32, "canvas_w": 32},
        }))
        out = tmp_path / "cfg.run"
        # --set overrides the file, the explicit flag overrides --set
        code = main([
            "rerank", "--config", str(config),
            "--set", "K=50",
            "--K", "6",
            "--manifest", str(cli_corpus.manifest_path),
            "--out", str(out),
        ])
        assert code == 0
        run = load_run_file(out)
        assert all(len(lst.entries) <= 6 for lst in run.values())

    def test_set_override_alone(self, cli_corpus, tmp_path):
        config = tmp_path / "exp.json"
        config.write_text(json.dumps({
            "direction": "t2v",
            "K": 99,
            "sources": [str(cli_corpus.run_paths[0])],
            "backend_kind": "identity",
            "grid": {"s": 1, "canvas_h": 32, "canvas_w": 32},
        }))
        out = tmp_path / "set.run"
        code = main([
            "rerank", "--config", str(config), "--set", "K=4",
            "--manifest", str(cli_corpus.manifest_path), "--out", str(out),
        ])
        assert code == 0
        assert all(len(lst.entries) <= 4 for lst in load_run_file(out).values())

    def test_transcript_log(self, cli_corpus, tmp_path):
        out = tmp_path / "vic.run"
        log = tmp_path / "transcript.jsonl"
        code = main(rerank_args(cli_corpus, out, log_transcripts=log))
        assert code == 0
        lines = log.read_text().splitlines()
        assert len(lines) == len(cli_corpus.caption_ids)
        record = json.loads(lines[0])
        assert record["backend"] == "mock"
        assert record["status"] == "clean"

    def test_missing_K_is_usage_error(self, cli_corpus, tmp_path):
        code = main([
            "rerank", "--manifest", str(cli_corpus.manifest_path),
            "--runs", str(cli_corpus.run_paths[0]),
            "--backend", "mock", "--direction", "t2v", "--out", str(tmp_path / "x"),
        ])
        assert code == 2


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


class TestEvalCommand:
    def make_run(self, cli_corpus, tmp_path):
        out = tmp_path / "vic.run"
        main(rerank_args(cli_corpus, out))
        return out

    def test_table_output(self, cli_corpus, tmp_path, capsys):
        run = self.make_run(cli_corpus, tmp_path)
        code = main(["eval", "--run", str(run), "--manifest", str(cli_corpus.manifest_path),
                     "--cutoffs", "1,5"])
        assert code == 0
        out = capsys.readouterr().out
        assert "R@1" in out and "R@5" in out
        assert "vic" in out  # label defaults to the run file stem

    def test_json_output(self, cli_corpus, tmp_path, capsys):
        run = self.make_run(cli_corpus, tmp_path)
        code = main(["eval", "--run", str(run), "--manifest", str(cli_corpus.manifest_path),
                     "--format", "json", "--label", "demo", "--no-timestamps"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["label"] == "demo"
        assert report["created_at"] == ""
        assert set(report["per_query"]) == set(cli_corpus.caption_ids)

    def test_csv_output_and_files(self, cli_corpus, tmp_path, capsys):
        run = self.make_run(cli_corpus, tmp_path)
        base = tmp_path / "reports" / "vic"
        code = main(["eval", "--run", str(run), "--manifest", str(cli_corpus.manifest_path),
                     "--format", "csv", "--out", str(base)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert stdout.splitlines()[0] == "query_id,hit_rank,status,latency_ms"
        assert (tmp_path / "reports" / "vic.report.json").exists()
        assert (tmp_path / "reports" / "vic.report.csv").exists()

    def test_unknown_run_queries_flagged(self, cli_corpus, tmp_path, capsys):
        run = tmp_path / "weird.run"
        run.write_text(
            "cap000 Q0 vid000 1 0.9 x\n"
            "zzz Q0 vid000 1 0.9 x\n"
        )
        code = main(["eval", "--run", str(run), "--manifest", str(cli_corpus.manifest_path)])
        assert code == 1
        assert "zzz" in capsys.readouterr().err

    def test_manifest_without_gold_rejected(self, cli_corpus, tmp_path):
        run = self.make_run(cli_corpus, tmp_path)
        manifest = tmp_path / "nogold.json"
        raw = json.loads(cli_corpus.manifest_path.read_text())
        raw["gold"] = {}
        # frame paths are relative to the manifest file, keep them valid
        for entry in raw["videos"].values():
            entry["frames_path"] = str(cli_corpus.root / entry["frames_path"])
        manifest.write_text(json.dumps(raw))
        code = main(["eval", "--run", str(run), "--manifest", str(manifest)])
        assert code == 2

    def test_bad_cutoffs_usage_error(self, cli_corpus, tmp_path):
        run = self.make_run(cli_corpus, tmp_path)
        code = main(["eval", "--run", str(run), "--manifest", str(cli_corpus.manifest_path),
                     "--cutoffs", "one,two"])
        assert code == 2


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def sweep_config(cli_corpus, tmp_path):
    config = tmp_path / "sweep.json"
    config.write_text(json.dumps({
        "direction": "t2v",
        "K": 6,
        "sources": [{"path": str(p)} for p in cli_corpus.run_paths],
        "method": "vic",
        "backend_kind": "mock",
        "grid": {"s": 1, "canvas_h": 32, "canvas_w": 32},
        "recall_cutoffs": [1, 5],
        "jobs": 2,
    }))
    return config


class TestSweepCommand:
    def test_grid_size_axis(self, cli_corpus, tmp_path, capsys):
        config = sweep_config(cli_corpus, tmp_path)
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--config", str(config),
            "--manifest", str(cli_corpus.manifest_path),
            "--axis", "grid-size", "--values", "1,2",
            "--out", str(out), "--no-timestamps",
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "grid-size=1" in stdout and "grid-size=2" in stdout
        for label in ("grid-size=1", "grid-size=2"):
            assert (out / f"{label}.report.json").exists()
            assert (out / f"{label}.report.csv").exists()
        sweep_csv = (out / "sweep.csv").read_text()
        assert sweep_csv.splitlines()[0].startswith("label,recall_at_1,recall_at_5")
        assert len(sweep_csv.splitlines()) == 3

    def test_no_timestamps_makes_sweeps_reproducible(self, cli_corpus, tmp_path):
        config = sweep_config(cli_corpus, tmp_path)
        outputs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            code = main([
                "sweep", "--config", str(config),
                "--manifest", str(cli_corpus.manifest_path),
                "--axis", "K", "--values", "4,6",
                "--out", str(out), "--no-timestamps",
            ])
            assert code == 0
            outputs.append({
                p.name: p.read_bytes() for p in sorted(out.iterdir())
            })
        assert outputs[0] == outputs[1]

    def test_backend_model_axis(self, cli_corpus, tmp_path):
        config = sweep_config(cli_corpus, tmp_path)
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--config", str(config),
            "--manifest", str(cli_corpus.manifest_path),
            "--axis", "backend-model", "--values", "model-a,model-b",
            "--out", str(out), "--no-timestamps",
        ])
        assert code == 0
        report = json.loads((out / "backend-model=model-a.report.json").read_text())
        assert report["label"] == "backend-model=model-a"

    def test_empty_values_rejected(self, cli_corpus, tmp_path):
        config = sweep_config(cli_corpus, tmp_path)
        code = main([
            "sweep", "--config", str(config),
            "--manifest", str(cli_corpus.manifest_path),
            "--axis", "K", "--values", ",,",
            "--out", str(tmp_path / "s"),
        ])
        assert code == 2

    def test_unknown_axis_rejected(self, cli_corpus, tmp_path):
        config = sweep_config(cli_corpus, tmp_path)
        with pytest.raises(SystemExit) as exc:
            main([
                "sweep", "--config", str(config),
                "--manifest", str(cli_corpus.manifest_path),
                "--axis", "moon-phase", "--values", "full",
                "--out", str(tmp_path / "s"),
            ])
        assert exc.value.code == 2


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2
