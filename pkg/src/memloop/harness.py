"""Batch evaluation: run the loop over many questions and score the answers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from memloop.config import LoopConfig
from memloop.controller import Answer, RunError, Trace, run
from memloop.corpus import MemoryStore
from memloop.llm.base import BackendError
from memloop.metrics import EvalItem, EvalReport, aggregate

logger = logging.getLogger(__name__)


def _run_one(item: EvalItem, store, index, config, backends, image_dir):
    try:
        answer, trace = run(item.question, store, index, config, backends, query_id=item.query_id,
                            image_dir=image_dir)
        return item.query_id, answer, trace, None
    except RunError as exc:
        return item.query_id, None, exc.trace, str(exc)
    except BackendError as exc:
        return item.query_id, None, None, str(exc)


def run_eval(items: Sequence[EvalItem], store: MemoryStore, index, config: LoopConfig, backends, *,
             jobs: int = 1, trace_dir=None, image_dir=None
             ) -> tuple[EvalReport, dict[str, Answer], dict[str, Trace]]:
    """Answer every item (up to ``jobs`` at a time) and aggregate a report.

    Results are collected in item order, so output does not depend on
    ``jobs``.  Traces are written to ``trace_dir`` when given.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(lambda it: _run_one(it, store, index, config, backends, image_dir), items))
    answers, traces, failures = {}, {}, {}
    for qid, answer, trace, error in results:
        if answer is not None:
            answers[qid] = answer
        else:
            logger.error("item %s failed: %s", qid, error)
            failures[qid] = error
        if trace is not None:
            traces[qid] = trace
            if trace_dir is not None:
                trace.write(Path(trace_dir))
    return aggregate(items, answers, store, failures), answers, traces
