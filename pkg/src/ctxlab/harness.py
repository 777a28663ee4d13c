"""Corpus I/O, experiment runs, corpus statistics and report files."""

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .estimator import GreedyCompleter
from .exceptions import CorpusError, EmptyInputError
from .metrics import aggregate, score_pair
from .model import ModelConfig
from .tokenizer import tokenize

log = logging.getLogger(__name__)

LANGUAGES = ("python", "csharp", "java", "other")
REPORT_COLUMNS = (
    "language", "pe", "attn", "em_percent", "mean_edit_sim",
    "task_count", "mean_wall_ms", "peak_cache_slots",
)
STATS_COLUMNS = ("language", "count", "average", "q25", "q50", "q75")


@dataclass(frozen=True)
class CompletionTask:
    id: str
    language: str
    context: str
    ground_truth: str

    def __post_init__(self):
        if not self.context:
            raise CorpusError(f"task {self.id}: empty context")
        if not self.ground_truth:
            raise CorpusError(f"task {self.id}: empty ground_truth")
        lang = str(self.language).lower()
        object.__setattr__(self, "language", lang if lang in LANGUAGES else "other")


def load_corpus(path):
    """Read a JSONL corpus, failing fast on the first bad line (1-based)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    tasks = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: line {lineno}: expected a JSON object", line=lineno)
            missing = [k for k in ("id", "language", "context", "ground_truth") if k not in obj]
            if missing:
                raise CorpusError(f"{path}: line {lineno}: missing field(s) {missing}", line=lineno)
            try:
                tasks.append(CompletionTask(str(obj["id"]), obj["language"], obj["context"], obj["ground_truth"]))
            except CorpusError as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}", line=lineno) from None
    if not tasks:
        warnings.warn(f"corpus {path} holds no tasks", stacklevel=2)
    return tasks


def write_corpus(tasks, path):
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(asdict(task), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class RunConfig:
    weights: str = None
    seed: int = 0
    model_config: ModelConfig = field(default_factory=ModelConfig)
    pe: str = "rope"
    attn: str = "naive"
    window: int = 512
    leak_k: float = math.inf
    n_sink: int = 4
    block_size: int = 16
    tile: int = 16
    gen_len: int = 100
    stop_at_newline: bool = True
    max_blocks: int = None

    def estimator(self):
        params = {f.name: getattr(self, f.name) for f in fields(self)}
        return GreedyCompleter(**params)


@dataclass(frozen=True)
class TaskRecord:
    id: str
    language: str
    prediction: str
    ground_truth: str
    em: bool
    edit_sim: float
    n_context_tokens: int
    n_generated: int
    peak_cache_slots: int
    wall_ms: float


@dataclass(frozen=True)
class ReportRow:
    language: str
    pe: str
    attn: str
    em_percent: float
    mean_edit_sim: float
    task_count: int
    mean_wall_ms: float
    peak_cache_slots: int


def run_eval(config, corpus, record_timing=True):
    """Complete every task and aggregate per language.

    Returns ``(rows, records)``; records are sorted by task id. Strategy
    combinations are validated before the first task runs. With
    ``record_timing=False`` the wall-time fields are ``None`` so repeated runs
    produce byte-identical reports.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyInputError("run_eval needs a non-empty corpus")
    est = config.estimator().fit()
    records = []
    for task in sorted(corpus, key=lambda t: t.id):
        done = est.complete(task.context, timing=record_timing)
        pair = score_pair(done.text, task.ground_truth)
        records.append(TaskRecord(
            task.id, task.language, done.text, task.ground_truth, pair.em, pair.edit_sim,
            done.n_context_tokens, len(done.tokens), done.peak_cache_slots, done.wall_ms,
        ))
        log.debug("task %s: em=%s edit_sim=%.2f", task.id, pair.em, pair.edit_sim)
    scores = aggregate(
        [score_pair(r.prediction, r.ground_truth) for r in records],
        [(r.language,) for r in records],
    )
    rows = []
    for (lang,), group in scores.sorted_items():
        members = [r for r in records if r.language == lang]
        wall = None
        if record_timing:
            wall = math.fsum(r.wall_ms for r in members) / len(members)
        rows.append(ReportRow(
            lang, config.pe, config.attn, group.em_percent, group.mean_edit_sim,
            group.task_count, wall, max(r.peak_cache_slots for r in members),
        ))
    return rows, records


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_report(rows, fmt="csv"):
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in REPORT_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        body = {"columns": list(REPORT_COLUMNS), "rows": [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in rows]}
        return json.dumps(body, indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(rows, fmt, path):
    Path(path).write_text(render_report(rows, fmt), encoding="utf-8")


def _parse_csv_cell(column, text):
    if text == "":
        return None
    if column in ("task_count", "peak_cache_slots"):
        return int(text)
    if column in ("em_percent", "mean_edit_sim", "mean_wall_ms"):
        return float(text)
    return text


def read_report(path, fmt=None):
    """Load a report written by :func:`emit_report` back into rows."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    text = path.read_text(encoding="utf-8")
    if fmt == "json":
        return [ReportRow(**row) for row in json.loads(text)["rows"]]
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        return [ReportRow(**{c: _parse_csv_cell(c, row[c]) for c in REPORT_COLUMNS}) for row in reader]
    raise ValueError(f"unknown report format {fmt!r}")


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class LanguageStats:
    count: int
    average: float
    q25: int
    q50: int
    q75: int
    max: int


def nearest_rank(sorted_values, percent):
    """Value at 1-based rank ``ceil(percent/100 * n)`` of an ascending list."""
    n = len(sorted_values)
    rank = max(1, -(-percent * n // 100))
    return sorted_values[rank - 1]


def corpus_stats(corpus, tokenizer=tokenize):
    """Per-language token-length average and nearest-rank quartiles of the contexts."""
    corpus = list(corpus)
    if not corpus:
        raise EmptyInputError("corpus_stats needs a non-empty corpus")
    lengths = {}
    for task in corpus:
        lengths.setdefault(task.language, []).append(len(tokenizer(task.context)))
    stats = {}
    for lang in sorted(lengths):
        values = sorted(lengths[lang])
        stats[lang] = LanguageStats(
            count=len(values),
            average=math.fsum(values) / len(values),
            q25=nearest_rank(values, 25),
            q50=nearest_rank(values, 50),
            q75=nearest_rank(values, 75),
            max=values[-1],
        )
    return stats


def render_stats(stats, fmt="csv"):
    rows = [{"language": lang, **{c: getattr(s, c) for c in STATS_COLUMNS[1:]}} for lang, s in stats.items()]
    if fmt == "json":
        return json.dumps({"columns": list(STATS_COLUMNS), "rows": rows}, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STATS_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in STATS_COLUMNS])
    return buf.getvalue()
