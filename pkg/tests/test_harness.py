import json
import math
import random

import numpy as np
import pytest

from ctxlab.exceptions import ConfigError, CorpusError, DecodeError, EmptyInputError, UnsupportedCombinationError
from ctxlab.harness import (
    REPORT_COLUMNS,
    CompletionTask,
    ReportRow,
    RunConfig,
    corpus_stats,
    emit_report,
    load_corpus,
    nearest_rank,
    read_report,
    render_report,
    run_eval,
    write_corpus,
)
from ctxlab.tokenizer import detokenize, tokenize


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def task_line(i, lang="python"):
    return json.dumps({"id": f"t{i}", "language": lang, "context": f"x{i} = {i}\n", "ground_truth": f"y = x{i}"})


class TestCorpus:
    def test_three_lines(self, tmp_path):
        tasks = load_corpus(write_lines(tmp_path / "c.jsonl", [task_line(i) for i in range(3)]))
        assert [t.id for t in tasks] == ["t0", "t1", "t2"]

    def test_empty_file_warns(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        with pytest.warns(UserWarning):
            assert load_corpus(tmp_path / "e.jsonl") == []

    def test_malformed_line_named(self, tmp_path):
        p = write_lines(tmp_path / "c.jsonl", [task_line(0), "{not json", task_line(2)])
        with pytest.raises(CorpusError, match="line 2") as info:
            load_corpus(p)
        assert info.value.line == 2

    def test_missing_field(self, tmp_path):
        p = write_lines(tmp_path / "c.jsonl", [json.dumps({"id": "a", "language": "java", "context": "x"})])
        with pytest.raises(CorpusError, match="ground_truth"):
            load_corpus(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.jsonl")

    def test_empty_context_rejected(self):
        with pytest.raises(CorpusError):
            CompletionTask("a", "python", "", "x")

    def test_unknown_language_is_other(self):
        assert CompletionTask("a", "Rust", "x", "y").language == "other"

    def test_write_read_round_trip(self, tmp_path):
        tasks = [CompletionTask("a", "java", "int λ = 1;\n", "return λ;")]
        write_corpus(tasks, tmp_path / "c.jsonl")
        assert load_corpus(tmp_path / "c.jsonl") == tasks


class TestTokenizer:
    def test_byte_identity(self):
        assert tokenize("A") == [65]

    def test_round_trip(self):
        sample = "def f(x):\n    return x ** 2  # ünïcødé ✓\n"
        assert detokenize(tokenize(sample)) == sample

    def test_multibyte(self):
        assert tokenize("λ") == list("λ".encode("utf-8")) == [0xCE, 0xBB]
        assert detokenize([0xCE, 0xBB]) == "λ"

    def test_unknown_id(self):
        with pytest.raises(DecodeError):
            detokenize([300])

    def test_invalid_utf8_replaced(self):
        assert detokenize([0xCE]) == "�"


def manual_quartile(values, p):
    ordered = sorted(values)
    return ordered[max(1, math.ceil(p * len(ordered))) - 1]


class TestStats:
    def test_single_task(self):
        s = corpus_stats([CompletionTask("a", "python", "abcde", "x")])["python"]
        assert (s.average, s.q25, s.q50, s.q75) == (5.0, 5, 5, 5)

    def test_lengths_one_to_four(self):
        tasks = [CompletionTask(str(i), "java", "x" * i, "y") for i in (4, 2, 1, 3)]
        s = corpus_stats(tasks)["java"]
        assert (s.q25, s.q50, s.q75) == (1, 2, 3)
        assert s.average == 2.5

    def test_quartiles_against_sort_oracle(self):
        r = random.Random(3)
        for n in range(1, 51):
            values = [r.randint(1, 500) for _ in range(n)]
            ordered = sorted(values)
            for p in (25, 50, 75):
                assert nearest_rank(ordered, p) == manual_quartile(values, p / 100)

    def test_published_python_row_is_representable(self):
        # eight lengths whose nearest-rank summary is the published Python row
        lengths = [1444, 3000, 3000, 3207, 3207, 3802, 3802, 3802]
        tasks = [CompletionTask(str(i), "python", "x" * n, "y") for i, n in enumerate(lengths)]
        s = corpus_stats(tasks)["python"]
        assert (s.average, s.q25, s.q50, s.q75) == (3158.0, 3000, 3207, 3802)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            corpus_stats([])


def sample_rows():
    return [
        ReportRow("java", "rope", "flash", 50.0, 71.25, 2, 3.5, 40),
        ReportRow("python", "rope", "flash", 0.0, 33.333333333333336, 3, None, 12),
    ]


class TestReport:
    def test_empty_report_header_only(self, tmp_path):
        emit_report([], "csv", tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == ",".join(REPORT_COLUMNS) + "\n"

    def test_one_row_two_lines(self):
        text = render_report(sample_rows()[:1], "csv")
        lines = text.splitlines()
        assert len(lines) == 2
        assert lines[1] == "java,rope,flash,50.0,71.25,2,3.5,40"

    def test_json_csv_same_values(self, tmp_path):
        rows = sample_rows()
        emit_report(rows, "json", tmp_path / "r.json")
        emit_report(read_report(tmp_path / "r.json"), "csv", tmp_path / "r.csv")
        assert read_report(tmp_path / "r.csv") == read_report(tmp_path / "r.json") == rows

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            emit_report([], "csv", tmp_path / "missing" / "r.csv")


@pytest.fixture
def corpus():
    r = random.Random(2)
    tasks = []
    for i in range(4):
        lang = ["python", "java"][i % 2]
        body = "".join(r.choice("abcdefgh =()\n") for _ in range(30 + 5 * i))
        tasks.append(CompletionTask(f"task{i}", lang, body, "a = b"))
    return tasks


class TestRunEval:
    def test_gen_len_one(self, corpus, small_config):
        cfg = RunConfig(model_config=small_config, gen_len=1, stop_at_newline=False)
        _, records = run_eval(cfg, corpus)
        assert all(r.n_generated == 1 for r in records)

    def test_deterministic(self, corpus, small_config):
        cfg = RunConfig(model_config=small_config, gen_len=8, attn="paged", block_size=4)
        a, ra = run_eval(cfg, corpus, record_timing=False)
        b, rb = run_eval(cfg, corpus, record_timing=False)
        assert render_report(a, "csv") == render_report(b, "csv") and ra == rb

    def test_rows_sorted_and_counted(self, corpus, small_config):
        rows, records = run_eval(RunConfig(model_config=small_config, gen_len=4), corpus)
        assert [r.language for r in rows] == ["java", "python"]
        assert sum(r.task_count for r in rows) == 4
        assert [r.id for r in records] == sorted(r.id for r in records)
        assert all(r.mean_wall_ms > 0 for r in rows)

    def test_self_recorded_ground_truth(self, corpus, small_config):
        cfg = RunConfig(model_config=small_config, gen_len=12, attn="flash", tile=4)
        _, records = run_eval(cfg, corpus, record_timing=False)
        fixture = [CompletionTask(t.id, t.language, t.context, r.prediction)
                   for t, r in zip(sorted(corpus, key=lambda t: t.id), records) if r.prediction.strip()]
        assert fixture
        rows, _ = run_eval(cfg, fixture, record_timing=False)
        assert all(r.em_percent == 100.0 and r.mean_edit_sim == 100.0 for r in rows)

    def test_empty_corpus(self, small_config):
        with pytest.raises(EmptyInputError):
            run_eval(RunConfig(model_config=small_config), [])

    def test_cross_product_runs_or_rejects_upfront(self, corpus, small_config):
        for pe in ("rope", "rerope", "sinusoidal"):
            for attn in ("naive", "flash", "paged", "streaming"):
                cfg = RunConfig(model_config=small_config, pe=pe, attn=attn, gen_len=2, window=8, n_sink=2)
                if pe == "rerope" and attn != "naive":
                    with pytest.raises(UnsupportedCombinationError):
                        cfg.estimator().fit()
                    with pytest.raises(UnsupportedCombinationError):
                        run_eval(cfg, corpus)
                else:
                    rows, _ = run_eval(cfg, corpus)
                    assert rows

    def test_memory_regime(self, small_config):
        n_sink, window = 2, 10
        ctx = "abcdefgh" * (4 * (n_sink + window) // 8)
        tasks = [CompletionTask("m", "python", ctx, "x")]
        stream_rows, _ = run_eval(RunConfig(model_config=small_config, attn="streaming", n_sink=n_sink,
                                            window=window, gen_len=5), tasks)
        flat_rows, _ = run_eval(RunConfig(model_config=small_config, attn="naive", gen_len=1), tasks)
        assert stream_rows[0].peak_cache_slots == n_sink + window
        assert flat_rows[0].peak_cache_slots == len(ctx)

    def test_bad_gen_len(self, corpus, small_config):
        with pytest.raises(ConfigError):
            run_eval(RunConfig(model_config=small_config, gen_len=0), corpus)
