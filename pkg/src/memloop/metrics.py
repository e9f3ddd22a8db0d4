"""Answer scoring, evidence recall, retrieval-distance analysis and reports."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from memloop.corpus import MemoryStore

CATEGORIES = ("single_hop", "multi_hop", "temporal", "open_domain", "other")
# Numeric category codes used by LoCoMo-style QA dumps.
LOCOMO_CATEGORY_CODES = {1: "multi_hop", 2: "temporal", 3: "open_domain", 4: "single_hop", 5: "other"}
BUCKETS = ("1-10", "11-100", ">100")
RECALL_NOTE = "recall denominator: all gold evidence dia_ids of the item"

REPORT_FORMAT = "memloop.report"
REPORT_VERSION = 1

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


class AlignmentError(ValueError):
    def __init__(self, missing: Sequence[str], extra: Sequence[str]):
        super().__init__(f"items without answers: {sorted(missing)}; answers without items: {sorted(extra)}")
        self.missing = sorted(missing)
        self.extra = sorted(extra)


class UnknownEvidenceError(KeyError):
    pass


def normalize_answer(s: str) -> str:
    s = "".join(ch for ch in s.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", s).split())


def f1(prediction: str, gold: str) -> float:
    """Token-overlap F1 between normalized prediction and gold answer."""
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        return float(pred == ref)
    same = sum((Counter(pred) & Counter(ref)).values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    rec = same / len(ref)
    return 2 * precision * rec / (precision + rec)


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_answer(prediction) == normalize_answer(gold))


def recall(evidence: Iterable[int], gold_dia_ids: Sequence[str], store: MemoryStore) -> float:
    """Share of gold dialogue ids that fall inside some retained chunk."""
    if not gold_dia_ids:
        raise ValueError("recall is undefined without gold evidence")
    unknown = [g for g in gold_dia_ids if g not in store.utterances]
    if unknown:
        raise UnknownEvidenceError(unknown)
    covered = {d for i in evidence for d in store.chunks[i].utterance_ids}
    return sum(g in covered for g in gold_dia_ids) / len(gold_dia_ids)


def gold_chunks(gold_dia_ids: Sequence[str], store: MemoryStore) -> list[int]:
    where = store.chunk_of()
    return sorted({where[d] for d in gold_dia_ids if d in where})


@dataclass
class DistanceProfile:
    distances: list[int] = field(default_factory=list)
    rows: list[tuple[int, int, float]] = field(default_factory=list)  # distance, count, cumulative %
    buckets: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))

    @property
    def total(self) -> int:
        return len(self.distances)

    @property
    def shares(self) -> dict[str, float]:
        if not self.total:
            return dict.fromkeys(BUCKETS, 0.0)
        return {b: 100.0 * n / self.total for b, n in self.buckets.items()}

    def share_within(self, radius: int) -> float:
        if not self.total:
            return 0.0
        return 100.0 * sum(d <= radius for d in self.distances) / self.total

    def to_csv(self) -> str:
        lines = ["distance,count,cumulative_pct"]
        lines += [f"{d},{n},{c:.4f}" for d, n, c in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"false_retrievals": self.total, "buckets": self.buckets, "shares_pct": self.shares,
                "within_10_pct": self.share_within(10), "within_100_pct": self.share_within(100)}


def _bucket(d: int) -> str:
    return "1-10" if d <= 10 else "11-100" if d <= 100 else ">100"


def chunk_distance_profile(runs: Iterable[tuple[Iterable[int], Iterable[int]]]) -> DistanceProfile:
    """Distances from each falsely retrieved chunk to its nearest gold chunk.

    ``runs`` holds (retrieved, gold) chunk-index collections per query.
    """
    distances: list[int] = []
    for retrieved, gold in runs:
        g = np.array(sorted(set(gold)), dtype=np.int64)
        if g.size == 0:
            raise ValueError("each run needs at least one gold chunk")
        for r in sorted(set(retrieved) - set(g.tolist())):
            # nearest gold by binary search
            pos = np.searchsorted(g, r)
            near = [abs(int(g[p]) - r) for p in (pos - 1, pos) if 0 <= p < g.size]
            distances.append(min(near))
    distances.sort()
    counts = Counter(distances)
    rows, cum = [], 0
    for d in sorted(counts):
        cum += counts[d]
        rows.append((d, counts[d], 100.0 * cum / len(distances)))
    buckets = dict.fromkeys(BUCKETS, 0)
    for d in distances:
        buckets[_bucket(d)] += 1
    return DistanceProfile(distances, rows, buckets)


@dataclass(frozen=True)
class EvalItem:
    query_id: str
    question: str
    gold_answer: str
    category: str
    evidence_dia_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.gold_answer.strip():
            raise ValueError(f"{self.query_id}: gold_answer is empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"{self.query_id}: unknown category {self.category!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalItem":
        cat = d.get("category")
        if isinstance(cat, int):
            cat = LOCOMO_CATEGORY_CODES.get(cat, "other")
        elif isinstance(cat, str):
            cat = cat.strip().lower().replace("-", "_").replace(" ", "_")
        gold = d.get("gold_answer", d.get("answer"))
        return cls(str(d["query_id"]), str(d["question"]), "" if gold is None else str(gold), cat,
                   tuple(d.get("evidence_dia_ids") or d.get("evidence") or ()))


def load_items(path) -> list[EvalItem]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, Mapping):
        data = data.get("items", [])
    items = [EvalItem.from_dict(d) for d in data]
    ids = [i.query_id for i in items]
    dup = sorted({q for q in ids if ids.count(q) > 1})
    if dup:
        raise ValueError(f"duplicate query_id(s): {dup}")
    return items


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    per_category: dict[str, dict] = field(default_factory=dict)
    overall_f1: float = 0.0
    overall_em: float = 0.0
    n: int = 0
    mean_recall: float | None = None
    n_recall: int = 0
    mean_iterations: float | None = None
    tokens_mean: float | None = None
    tokens_max: int | None = None
    per_tag_mean: dict[str, float] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)
    flagged: list[str] = field(default_factory=list)
    note: str = RECALL_NOTE

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_table(self) -> str:
        head = f"{'category':<12} {'n':>5} {'F1':>7} {'steps':>6}"
        lines = [f"# {self.note}", head, "-" * len(head)]
        for cat, c in self.per_category.items():
            steps = "-" if c["mean_iterations"] is None else f"{c['mean_iterations']:.2f}"
            lines.append(f"{cat:<12} {c['n']:>5} {100 * c['f1']:>7.2f} {steps:>6}")
        lines.append("-" * len(head))
        steps = "-" if self.mean_iterations is None else f"{self.mean_iterations:.2f}"
        lines.append(f"{'overall':<12} {self.n:>5} {100 * self.overall_f1:>7.2f} {steps:>6}")
        if self.mean_recall is not None:
            lines.append(f"recall {100 * self.mean_recall:.2f}% over {self.n_recall} items")
        if self.tokens_mean is not None:
            lines.append(f"tokens/query mean {self.tokens_mean:.1f} max {self.tokens_max}")
        if self.failed:
            lines.append(f"failed: {', '.join(self.failed)}")
        return "\n".join(lines) + "\n"


def aggregate(items: Sequence[EvalItem], answers: Mapping[str, object], store: MemoryStore | None = None,
              failures: Mapping[str, str] | None = None) -> EvalReport:
    """Score ``answers`` (query_id -> Answer) against ``items``.

    Items listed in ``failures`` (query_id -> error) score F1 0 and are left
    out of recall, step and token statistics.
    """
    failures = dict(failures or {})
    item_ids = {i.query_id for i in items}
    missing = [q for q in item_ids if q not in answers and q not in failures]
    extra = [q for q in set(answers) | set(failures) if q not in item_ids]
    if missing or extra:
        raise AlignmentError(missing, extra)

    report = EvalReport(n=len(items))
    by_cat: dict[str, list[dict]] = {}
    recalls, steps, tokens = [], [], []
    tag_totals: Counter = Counter()
    for item in items:
        row = {"query_id": item.query_id, "category": item.category, "gold": item.gold_answer}
        ans = answers.get(item.query_id)
        if ans is None:
            row.update(prediction="", f1=0.0, em=0.0, failed=True, error=failures[item.query_id])
            report.failed.append(item.query_id)
        else:
            row.update(prediction=ans.text, f1=f1(ans.text, item.gold_answer),
                       em=exact_match(ans.text, item.gold_answer), failed=False,
                       iterations=ans.iterations_used, terminated_by=ans.terminated_by,
                       tokens=ans.token_usage.total_tokens)
            steps.append(ans.iterations_used)
            tokens.append(ans.token_usage.total_tokens)
            for tag, c in ans.token_usage.per_tag.items():
                tag_totals[tag] += c.total_tokens
            if store is not None and item.evidence_dia_ids:
                try:
                    row["recall"] = recall(ans.supporting_evidence, item.evidence_dia_ids, store)
                    recalls.append(row["recall"])
                except UnknownEvidenceError:
                    report.flagged.append(item.query_id)
        report.rows.append(row)
        by_cat.setdefault(item.category, []).append(row)

    for cat in CATEGORIES:
        rows = by_cat.get(cat)
        if not rows:
            continue
        its = [r["iterations"] for r in rows if not r["failed"]]
        report.per_category[cat] = {
            "n": len(rows), "f1": sum(r["f1"] for r in rows) / len(rows),
            "mean_iterations": sum(its) / len(its) if its else None,
        }
    if items:
        report.overall_f1 = sum(r["f1"] for r in report.rows) / len(report.rows)
        report.overall_em = sum(r["em"] for r in report.rows) / len(report.rows)
    if recalls:
        report.mean_recall = sum(recalls) / len(recalls)
        report.n_recall = len(recalls)
    if steps:
        report.mean_iterations = sum(steps) / len(steps)
        report.tokens_mean = sum(tokens) / len(tokens)
        report.tokens_max = max(tokens)
        report.per_tag_mean = {t: v / len(steps) for t, v in sorted(tag_totals.items())}
    return report
