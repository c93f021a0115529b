"""End-to-end tests for the command line, all offline (synthetic judge, temp dirs)."""

import json
import math

import pytest

from promptopt.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from promptopt.schemas import EvalReport


# ── Fixtures ─────────────────────────────────────────────────────────────


@pytest.fixture(autouse=True)
def _workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def make_corpus(tmp_path):
    """Factory: write a synthetic corpus of ``n`` segments and return its path."""

    def _factory(n, seed=0):
        out = tmp_path / f"data-{n}-{seed}"
        assert main(["synth-corpus", "--segments", str(n), "--seed", str(seed), "--out", str(out)]) == EXIT_OK
        return out / "corpus.jsonl"

    return _factory


def _run(*argv, cache_dir):
    return main([*argv, "--cache-dir", str(cache_dir), "--log-level", "WARNING"])


def _reports(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("report_*.json"))}


# ── synth-corpus / build-sft ─────────────────────────────────────────────


class TestSynthCorpus:
    def test_writes_jsonl(self, make_corpus, capsys):
        path = make_corpus(30)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 30
        assert json.loads(lines[0])["lang_pair"] == "en-ru"
        assert "Wrote 30 synthetic segments" in capsys.readouterr().out


class TestBuildSft:
    def test_deterministic_output(self, make_corpus, tmp_path):
        corpus = make_corpus(5)
        for name in ("a", "b"):
            code = _run("build-sft", "--corpus", str(corpus), "--out", str(tmp_path / name),
                        cache_dir=tmp_path / "cache")
            assert code == EXIT_OK
        first = (tmp_path / "a" / "sft.jsonl").read_bytes()
        assert first == (tmp_path / "b" / "sft.jsonl").read_bytes()
        assert len(first.splitlines()) == 5
        assert (tmp_path / "a" / "config.resolved.json").exists()
        assert (tmp_path / "a" / "run.log").exists()

    def test_seed_changes_output(self, make_corpus, tmp_path):
        corpus = make_corpus(5)
        for name, seed in (("a", "1"), ("b", "2")):
            _run("build-sft", "--corpus", str(corpus), "--seed", seed, "--out", str(tmp_path / name),
                 cache_dir=tmp_path / "cache")
        assert (tmp_path / "a" / "sft.jsonl").read_bytes() != (tmp_path / "b" / "sft.jsonl").read_bytes()

    def test_fixed_rate(self, make_corpus, tmp_path):
        corpus = make_corpus(5)
        _run("build-sft", "--corpus", str(corpus), "--rate", "0.4", "--out", str(tmp_path / "o"),
             cache_dir=tmp_path / "cache")
        rows = [json.loads(line) for line in (tmp_path / "o" / "sft.jsonl").read_text().splitlines()]
        assert {row["rate"] for row in rows} == {0.4}

    def test_rejected_rows_exit_one(self, tmp_path):
        tsv = tmp_path / "mqm_ende.tsv"
        tsv.write_text(
            "system\tdomain\tdoc\tdoc_id\tseg_id\trater\tsource\ttarget\tcategory\tseverity\n"
            "A\tnews\td\t0\t1\tr1\tThe cat sat.\tDie <v>Katze</v> saß.\tAccuracy/Mistranslation\tMajor\n"
            "A\tnews\td\t0\tx\tr1\tThe cat sat.\tDie Katze saß.\tNo-error\tNo-error\n",
            encoding="utf-8",
        )
        code = _run("build-sft", "--corpus", str(tsv), "--out", str(tmp_path / "o"), cache_dir=tmp_path / "c")
        assert code == EXIT_DATA
        assert len((tmp_path / "o" / "sft.jsonl").read_text().splitlines()) == 1


# ── Configuration errors ─────────────────────────────────────────────────


class TestConfigErrors:
    def test_missing_corpus_file(self, tmp_path):
        out = tmp_path / "never"
        code = _run("build-sft", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(out),
                    cache_dir=tmp_path / "cache")
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_no_corpus_configured(self, tmp_path):
        assert _run("build-sft", "--out", str(tmp_path / "o"), cache_dir=tmp_path / "c") == EXIT_CONFIG

    def test_http_judge_without_key(self, make_corpus, tmp_path, monkeypatch):
        monkeypatch.setattr("promptopt.cli.JUDGE_API_KEY", "")
        corpus = make_corpus(12)
        code = _run("evaluate", "--corpus", str(corpus), "--judge", "http", "--out", str(tmp_path / "o"),
                    cache_dir=tmp_path / "cache")
        assert code == EXIT_CONFIG
        assert not list((tmp_path / "o").glob("report_*.json"))

    def test_label_must_differ_from_baseline(self, make_corpus, tmp_path, write_config):
        corpus = make_corpus(12)
        config = write_config(label="gemba-mqm")
        code = _run("evaluate", "--config", str(config), "--corpus", str(corpus), "--out", str(tmp_path / "o"),
                    cache_dir=tmp_path / "cache")
        assert code == EXIT_CONFIG

    def test_invalid_config_file(self, tmp_path, write_config):
        config = write_config(judge={"backend": "carrier-pigeon"})
        assert main(["cache", "inspect", "--config", str(config)]) == EXIT_CONFIG


# ── build-preferences ────────────────────────────────────────────────────


class TestBuildPreferences:
    def test_writes_pairs_and_report(self, make_corpus, tmp_path, capsys):
        corpus = make_corpus(12)
        out = tmp_path / "pref"
        code = _run("build-preferences", "--corpus", str(corpus), "--out", str(out), cache_dir=tmp_path / "cache")
        assert code == EXIT_OK

        report = json.loads((out / "preferences_report.json").read_text())
        rows = (out / "preferences.jsonl").read_text().splitlines()
        assert report["records_in"] == 12
        assert report["emitted"] == len(rows)
        assert report["quarantined"] == []
        for row in map(json.loads, rows):
            deltas = {float(k): v for k, v in row["deltas"].items()}
            assert deltas[1.0] == 0.0
            assert deltas[row["chosen"]["rate"]] == min(deltas.values())
            assert deltas[row["rejected"]["rate"]] == max(deltas.values())
        assert "Judge backend calls:" in capsys.readouterr().out

    def test_drop_degenerate(self, make_corpus, tmp_path, write_config):
        corpus = make_corpus(12)
        config = write_config(preferences={"span_protection": 1.0})
        out = tmp_path / "pref"
        code = _run("build-preferences", "--config", str(config), "--corpus", str(corpus),
                    "--drop-degenerate", "--out", str(out), cache_dir=tmp_path / "cache")
        assert code == EXIT_OK
        report = json.loads((out / "preferences_report.json").read_text())
        assert report["emitted"] == 0
        assert len(report["skipped"]) == 12


    def test_orpo_terms_use_configured_lambda(self, make_corpus, tmp_path, write_config):
        corpus = make_corpus(12)
        config = write_config(orpo={"lambda": 0.3})
        out = tmp_path / "pref"
        code = _run("build-preferences", "--config", str(config), "--corpus", str(corpus),
                    "--out", str(out), cache_dir=tmp_path / "cache")
        assert code == EXIT_OK

        report = json.loads((out / "preferences_report.json").read_text())
        orpo = report["orpo"]
        assert orpo["lam"] == 0.3
        assert orpo["uniform"] is True
        assert orpo["pairs_validated"] == report["emitted"] == 12
        assert orpo["mean_l_or"] == pytest.approx(math.log(2.0))
        assert orpo["mean_l_orpo"] == pytest.approx(0.3 * math.log(2.0))
        assert {t["lam"] for t in orpo["per_record"].values()} == {0.3}

    def test_orpo_terms_from_logprobs_file(self, make_corpus, tmp_path):
        corpus = make_corpus(12)
        first = tmp_path / "first"
        assert _run("build-preferences", "--corpus", str(corpus), "--out", str(first),
                    cache_dir=tmp_path / "cache") == EXIT_OK
        keys = [json.loads(line)["record_key"] for line in (first / "preferences.jsonl").read_text().splitlines()]
        logprobs = tmp_path / "logprobs.jsonl"
        logprobs.write_text("".join(
            json.dumps({"record_key": k, "chosen_logprobs": [-0.1, -0.3], "rejected_logprobs": [-1.5]}) + "\n"
            for k in keys[1:]
        ), encoding="utf-8")

        out = tmp_path / "second"
        assert _run("build-preferences", "--corpus", str(corpus), "--logprobs", str(logprobs),
                    "--out", str(out), cache_dir=tmp_path / "cache") == EXIT_OK
        orpo = json.loads((out / "preferences_report.json").read_text())["orpo"]
        assert orpo["uniform"] is False
        assert orpo["logprobs_path"] == str(logprobs)
        assert orpo["missing"] == [keys[0]]
        assert orpo["pairs_validated"] == len(keys) - 1
        assert orpo["mean_l_or"] < math.log(2.0)

    def test_missing_logprobs_file_is_config_error(self, make_corpus, tmp_path):
        corpus = make_corpus(4)
        out = tmp_path / "pref"
        code = _run("build-preferences", "--corpus", str(corpus), "--logprobs", str(tmp_path / "nope.jsonl"),
                    "--out", str(out), cache_dir=tmp_path / "cache")
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_prompt_flag_sets_preference_prompt(self, make_corpus, tmp_path):
        corpus = make_corpus(4)
        out = tmp_path / "pref"
        assert _run("build-preferences", "--corpus", str(corpus), "--prompt", "lite",
                    "--out", str(out), cache_dir=tmp_path / "cache") == EXIT_OK
        resolved = json.loads((out / "config.resolved.json").read_text())
        assert resolved["preferences"]["prompt_kind"] == "lite"


# ── evaluate / report / cache ────────────────────────────────────────────


class TestEvaluate:
    def test_end_to_end_with_cache_reuse(self, make_corpus, tmp_path, capsys):
        corpus = make_corpus(200)
        cache = tmp_path / "cache"

        first = tmp_path / "run1"
        code = _run("evaluate", "--corpus", str(corpus), "--prompt", "lite", "--rate", "0.5",
                    "--emit-table", "--out", str(first), cache_dir=cache)
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "Reduction Rate" in out

        baseline = EvalReport.model_validate_json((first / "report_gemba-mqm.json").read_text())
        variant = EvalReport.model_validate_json((first / "report_promptopt-lite.json").read_text())
        assert variant.reduction_rate >= 1.8
        assert variant.baseline_tokens == baseline.total_tokens
        assert variant.per_lp_tau == baseline.per_lp_tau
        assert set(variant.per_lp_tau) == {"en-ru", "en-de", "zh-en"}
        assert all(tau is not None for tau in variant.per_lp_tau.values())
        assert variant.pairwise_accuracy == baseline.pairwise_accuracy
        assert (first / "table.txt").read_text().startswith("Method")

        second = tmp_path / "run2"
        code = _run("evaluate", "--corpus", str(corpus), "--prompt", "lite", "--rate", "0.5",
                    "--out", str(second), cache_dir=cache)
        assert code == EXIT_OK
        assert "Judge backend calls: 0" in capsys.readouterr().out
        assert _reports(first) == _reports(second)

    def test_report_and_cache_commands(self, make_corpus, tmp_path, capsys):
        corpus = make_corpus(24)
        cache = tmp_path / "cache"
        out = tmp_path / "eval"
        assert _run("evaluate", "--corpus", str(corpus), "--rate", "0.5", "--out", str(out),
                    cache_dir=cache) == EXIT_OK
        capsys.readouterr()

        assert _run("report", "--out", str(out), cache_dir=cache) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[2].startswith("gemba-mqm")
        assert lines[3].startswith("promptopt-lite")

        assert _run("cache", "inspect", cache_dir=cache) == EXIT_OK
        assert "48 entries" in capsys.readouterr().out

        assert _run("cache", "clear", cache_dir=cache) == EXIT_OK
        assert "Removed 48" in capsys.readouterr().out
        assert not cache.exists()

    def test_report_without_files(self, tmp_path):
        assert _run("report", "--out", str(tmp_path / "empty"), cache_dir=tmp_path / "c") == EXIT_DATA
