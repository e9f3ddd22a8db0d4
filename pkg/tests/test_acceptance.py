"""Acceptance suite: one test per acceptance criterion.

Every test carries a ``criterion`` mark; conftest prints a PASS/FAIL line
per criterion at the end of the run, with the measured quantity.
"""

import io
import json
import os
import random
import re
import shutil
import time
from pathlib import Path

import pytest

from helpers import (
    candidate_blocks,
    corpus_doc,
    filler_text,
    hashed_subset,
    judge_sequence,
    loop_backend,
    select_all_zoom_in,
    select_all_zoom_out,
    select_containing,
    shown_candidates,
    shown_windows,
    verdict,
    window_blocks,
)
from memloop.baselines import full_context_tokens
from memloop.cli import main
from memloop.config import LoopConfig
from memloop.controller import load_trace, run
from memloop.corpus import ingest
from memloop.harness import run_eval
from memloop.llm import Rule
from memloop.metrics import EvalItem, chunk_distance_profile, f1, recall
from memloop.perception import WindowSpan, expand_windows
from memloop.retrieval import build_index, search

FIXTURES = Path(__file__).parent / "fixtures"
QUERY_LINE = re.compile(r"^Query: (.*)$", re.M)
FAIL_LINE = re.compile(r"^Fail query: (\[.*\])$", re.M)


def measured(record_property, text):
    record_property("measured", text)


def one_turn_per_chunk(turns, datetimes=None):
    """Store where every turn is its own chunk (turns padded past a tiny budget)."""
    return ingest(corpus_doc([[t.ljust(70, ".") for t in s] for s in turns], datetimes), chunk_budget=16)


def current_query(req):
    return QUERY_LINE.search(req.prompt_text).group(1)


def norm(q):
    return " ".join(q.split()).casefold()


# --- independent oracles ---------------------------------------------------

def brute_force_windows(seeds, w, size):
    covered = set()
    for s in seeds:
        covered.update(range(max(0, s - w), min(size - 1, s + w) + 1))
    spans, run_start = [], None
    for i in range(size + 1):
        if i in covered and run_start is None:
            run_start = i
        elif i not in covered and run_start is not None:
            spans.append(WindowSpan(run_start, i - 1))
            run_start = None
    return spans


def brute_force_distances(retrieved, gold):
    return sorted(min(abs(r - g) for g in gold) for r in set(retrieved) if r not in set(gold))


def scripted_suite(n_runs=50, seed=7):
    """Runs with judges that stop at a random step (possibly never) and
    propose a mix of fresh and repeated sub-queries."""
    rng = random.Random(seed)
    turns = [[filler_text(rng, 8) for _ in range(15)] for _ in range(4)]
    store = one_turn_per_chunk(turns)
    index = build_index(store)
    words = sorted({w for s in turns for t in s for w in t.split()})

    def judge(req):
        r = random.Random(f"{req.run_id}:{req.step}")
        stop_at = random.Random(req.run_id).randint(1, 12)
        if req.step >= stop_at:
            return verdict(True)
        repeats = [current_query(req)] + json.loads(FAIL_LINE.search(req.prompt_text).group(1))
        proposal = r.choice(repeats) if r.random() < 0.25 else " ".join(r.sample(words, 2))
        return verdict(False, [proposal], r.choice(["Break", "Delete"]))

    backend = loop_backend([Rule("judge", judge)],
                           zoom_in=lambda req: {"useful_ids": hashed_subset(shown_candidates(req), req, "i")},
                           zoom_out=lambda req: {"useful_ids": hashed_subset(shown_windows(req), req, "o")})
    results = []
    for n in range(n_runs):
        q = " ".join(rng.sample(words, 3))
        results.append(run(q, store, index, LoopConfig(), backend, query_id=f"suite-{n}"))
    return results, backend


# --- criteria --------------------------------------------------------------

@pytest.mark.criterion("loop boundedness")
def test_loop_boundedness(record_property):
    t0 = time.perf_counter()
    results, _ = scripted_suite()
    elapsed = time.perf_counter() - t0
    violations = sum(1 for a, tr in results
                     if a.iterations_used > 8 or len(tr.iterations) != a.iterations_used)
    steps = sorted({a.iterations_used for a, _ in results})
    measured(record_property, f"{len(results)} runs, {violations} violations, steps used {steps}, "
                              f"{elapsed:.2f}s")
    assert len(results) == 50
    assert violations == 0
    assert elapsed < 10.0


@pytest.mark.criterion("single-shot reduction")
def test_single_shot_reduction(record_property):
    mismatches = 0
    for seed in range(20):
        rng = random.Random(1000 + seed)
        n_sessions = rng.randint(1, 4)
        turns = [[filler_text(rng, rng.randint(3, 9)) for _ in range(rng.randint(5, 25))]
                 for _ in range(n_sessions)]
        store = one_turn_per_chunk(turns)
        index = build_index(store)
        k, w = rng.randint(1, 12), rng.randint(0, 5)
        question = filler_text(rng, 3)
        backend = loop_backend(
            [Rule("judge", verdict(True))],
            zoom_in=lambda req: {"useful_ids": hashed_subset(shown_candidates(req), req, "zi")},
            zoom_out=lambda req: {"useful_ids": hashed_subset(shown_windows(req), req, "zo")})
        answer, _ = run(question, store, index, LoopConfig(top_k=k, window_w=w), backend)

        # recompute zoom_in and zoom_out of q_1 from the agents' replies
        candidates = [h.chunk_index for h in search(index, question, k)]
        zi_req = backend.calls_for("zoom_in")[0]
        zoom_in_set = {candidates[d - 1] for d in hashed_subset(shown_candidates(zi_req), zi_req, "zi")}
        zoom_out_set = set()
        if zoom_in_set:
            windows = brute_force_windows(zoom_in_set, w, len(store))
            zo_req = backend.calls_for("zoom_out")[0]
            for d in hashed_subset(shown_windows(zo_req), zo_req, "zo"):
                zoom_out_set.update(windows[d].indices())
        if set(answer.supporting_evidence) != zoom_in_set | zoom_out_set or answer.iterations_used != 1:
            mismatches += 1
    measured(record_property, f"20 fixtures, {mismatches} mismatches")
    assert mismatches == 0


KEYWORDS = ("kayak", "violin", "orchard")


def dominance_world():
    rng = random.Random(42)
    n = 300
    turns = [filler_text(rng, 8) for _ in range(n)]
    slots = sorted(rng.sample(range(n), 30))
    for pos, slot in enumerate(slots):
        kw = KEYWORDS[pos % 3]
        turns[slot] = f"Jon mentioned the {kw} again, time number {pos}"
    store = one_turn_per_chunk([turns])
    gold = [store.chunks[s].utterance_ids[0] for s in slots]
    return store, build_index(store), gold


def keywords_of(req):
    return [k for k in KEYWORDS if k in current_query(req)]


def any_keyword_policy():
    def zi(req):
        return {"useful_ids": [d for d, b in candidate_blocks(req).items()
                               if any(k in b for k in keywords_of(req))]}

    def zo(req):
        return {"useful_ids": [d for d, b in window_blocks(req).items()
                               if any(k in b for k in keywords_of(req))]}
    return zi, zo


@pytest.mark.criterion("multi-step dominance")
def test_multi_step_dominance(record_property):
    store, index, gold = dominance_world()
    root = "Which hobbies did Jon mention: kayak, violin, orchard?"
    k = 10

    single = {q: recall([h.chunk_index for h in search(index, q, k)], gold, store)
              for q in (root, *KEYWORDS, "kayak violin orchard")}

    zi, zo = any_keyword_policy()
    one_step, _ = run(root, store, index, LoopConfig(top_k=k, max_iterations=1),
                      loop_backend([Rule("judge", verdict(True))], zoom_in=zi, zoom_out=zo))
    one_step_recall = recall(one_step.supporting_evidence, gold, store)

    replies = [verdict(False, [f"When did Jon talk about the {kw}?"], "Break") for kw in KEYWORDS]
    backend = loop_backend(judge_sequence(replies + [verdict(True)]), zoom_in=zi, zoom_out=zo)
    answer, trace = run(root, store, index, LoopConfig(top_k=k), backend)
    loop_recall = recall(answer.supporting_evidence, gold, store)

    best_single = max(max(single.values()), one_step_recall)
    measured(record_property, f"best single search recall {best_single:.3f} (bound {10 / 30:.3f}); "
                              f"loop recall {loop_recall:.3f} in {answer.iterations_used} steps")
    assert best_single <= 10 / 30
    assert loop_recall == 1.0


def neighbor_world():
    """Anchors carry a unique keyword; the gold turn sits 1-4 chunks away and
    shares no word with the question."""
    rng = random.Random(5)
    turns = [filler_text(rng, 8) for _ in range(240)]
    items = []
    names = ["quillfeather", "marrowdale", "brightwick", "ossington", "fennimore", "calloway",
             "trevanion", "ashgrove"]
    for n, name in enumerate(names):
        anchor = 20 + 27 * n
        offset = (1 + n % 4) * (1 if n % 2 == 0 else -1)
        turns[anchor] = f"Let me tell you about {name} now"
        turns[anchor + offset] = f"It was purple and cost nine dollars, item {n}"
        items.append((name, anchor + offset))
    store = one_turn_per_chunk([turns])
    evals = [EvalItem(f"nb-{name}", f"What about {name}?", "purple", "single_hop",
                      store.chunks[pos].utterance_ids)
             for name, pos in items]
    return store, build_index(store), evals


@pytest.mark.criterion("zoom-out neighborhood recovery")
def test_zoom_out_neighborhood_recovery(record_property):
    store, index, items = neighbor_world()
    name_of = {i.query_id: i.question.split()[-1].rstrip("?") for i in items}
    zi, _ = select_containing(lambda req: name_of[req.run_id])

    def recall_at(w):
        backend = loop_backend([Rule("judge", verdict(True))], zoom_in=zi, zoom_out=select_all_zoom_out)
        report, _, _ = run_eval(items, store, index, LoopConfig(window_w=w), backend)
        assert report.n_recall == len(items)
        return report.mean_recall

    r0, r4 = recall_at(0), recall_at(4)
    measured(record_property, f"{len(items)} neighbor items: recall W=0 {r0:.3f}, W=4 {r4:.3f}")
    assert r0 == 0.0
    assert r4 == 1.0


@pytest.mark.criterion("window-expansion oracle")
def test_window_expansion_oracle(record_property):
    rng = random.Random(99)
    mismatches = 0
    for _ in range(1000):
        size = rng.randint(1, 200)
        w = rng.randint(0, 20)
        seeds = [rng.randrange(size) for _ in range(rng.randint(0, 15))]
        if expand_windows(seeds, w, size) != brute_force_windows(seeds, w, size):
            mismatches += 1
    measured(record_property, f"1000 triples, {mismatches} mismatches")
    assert mismatches == 0


F1_CASES = [
    ("Paris", "paris.", 1.0),
    ("blue car", "red car", 0.5),
    ("", "x", 0.0),
    ("", "", 1.0),
    ("the", "a", 1.0),
    ("The cat sat", "cat sat on the mat", 2 / 3),
    ("7 May 2023", "May 7, 2023", 1.0),
    ("apple apple banana", "apple banana banana", 2 / 3),
    ("New York City", "new-york", 0.0),
    ("Caroline went hiking", "hiking", 0.5),
    ("an apple", "apple", 1.0),
    ("yes", "no", 0.0),
    ("a b c d", "c d e f g h", 4 / 9),
    ("  Dr. Smith!!  ", "dr smith", 1.0),
    ("running in the park", "ran in a park", 2 / 3),
]


@pytest.mark.criterion("F1 oracle")
def test_f1_oracle(record_property):
    errors = [abs(f1(p, g) - want) for p, g, want in F1_CASES]
    measured(record_property, f"{len(F1_CASES)} pairs, max abs error {max(errors):.1e}")
    assert len(F1_CASES) == 15
    assert max(errors) <= 1e-9


@pytest.mark.criterion("chunk-distance profile oracle")
def test_chunk_distance_profile_oracle(record_property):
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(200):
        runs = []
        for _ in range(rng.randint(1, 6)):
            size = rng.randint(1, 600)
            gold = rng.sample(range(size), rng.randint(1, min(5, size)))
            retrieved = [rng.randrange(size) for _ in range(rng.randint(0, 12))]
            runs.append((retrieved, gold))
        profile = chunk_distance_profile(runs)
        expected = sorted(d for r, g in runs for d in brute_force_distances(r, g))
        ok = profile.distances == expected
        ok &= [n for _, n, _ in profile.rows] == [expected.count(d) for d in sorted(set(expected))]
        ok &= sum(profile.buckets.values()) == len(expected)
        if expected:
            cum = [c for _, _, c in profile.rows]
            ok &= cum == sorted(cum) and abs(cum[-1] - 100.0) < 1e-9
            ok &= abs(sum(profile.shares.values()) - 100.0) < 1e-9
        mismatches += not ok
    measured(record_property, f"200 fixtures, {mismatches} mismatches")
    assert mismatches == 0


def determinism_workspace(root: Path):
    root.mkdir()
    shutil.copy(FIXTURES / "sample_corpus.json", root / "corpus.json")
    questions = ["What did Melanie paint?", "Where did Melanie camp?", "What program did Caroline apply to?",
                 "When was the charity race?", "What class did Melanie sign up for?",
                 "How did Caroline feel at the support group?", "What did the kids find?", "Who ran a race?"]
    rules = [{"tag": "zoom_in", "response": {"useful_ids": [1, 3]}},
             {"tag": "zoom_out", "response": {"useful_ids": [0]}}]
    items = []
    for n, q in enumerate(questions):
        qid = f"det-{n}"
        steps = 1 + n % 3
        for s in range(1, steps):
            rules.append({"tag": "judge", "step": s, "run_id": qid, "response": {
                "can_answer": False, "action": "Break", "new_queries": [f"{q} (part {s})"]}})
        rules.append({"tag": "judge", "step": steps, "run_id": qid, "response": {"can_answer": True}})
        rules.append({"tag": "responder", "run_id": qid, "response": f"answer {n}"})
        items.append({"query_id": qid, "question": q, "answer": f"answer {n % 2}", "category": 1 + n % 5,
                      "evidence": ["D1:7"]})
    (root / "script.json").write_text(json.dumps({"rules": rules}))
    (root / "items.json").write_text(json.dumps(items))
    (root / "config.json").write_text(json.dumps({"corpus": "corpus.json", "chunk_budget": 40,
                                                  "backend_profile": "scripted:script.json"}))
    assert main(["index", "--config", str(root / "config.json"), "--store", str(root / "store")],
                io.StringIO()) == 0
    return root


def eval_outputs(ws: Path, jobs: int, tag: str) -> dict:
    trace_dir, report = ws / f"trace-{tag}", ws / f"report-{tag}.v1.json"
    code = main(["eval", str(ws / "items.json"), "--config", str(ws / "config.json"),
                 "--store", str(ws / "store"), "--backend-profile", f"scripted:{ws / 'script.json'}",
                 "--jobs", str(jobs), "--trace-dir", str(trace_dir), "--report", str(report)], io.StringIO())
    assert code == 0
    files = {"report": report.read_bytes(), "table": report.with_suffix(".txt").read_bytes()}
    files.update({p.name: p.read_bytes() for p in sorted(trace_dir.iterdir())})
    return files


@pytest.mark.criterion("determinism")
def test_determinism(tmp_path, record_property):
    ws = determinism_workspace(tmp_path / "ws")
    outputs = {f"{jobs}-{rep}": eval_outputs(ws, jobs, f"{jobs}-{rep}") for jobs in (1, 4) for rep in (1, 2)}
    baseline = outputs["1-1"]
    differing = [k for k, v in outputs.items() if v != baseline]
    n_traces = len(baseline) - 2
    measured(record_property, f"4 eval runs (jobs 1,1,4,4), {n_traces} traces each, "
                              f"{len(differing)} differing from the first")
    assert n_traces == 8
    assert not differing


def monotone_violations(runs):
    """``runs`` holds the trace iteration lists of each run."""
    bad = 0
    for iterations in runs:
        prev = set()
        for it in iterations:
            now = set(it["evidence"])
            if not prev <= now or set(it["new_evidence"]) != now - prev:
                bad += 1
            prev = now
    return bad


@pytest.mark.criterion("monotone state")
def test_monotone_state(tmp_path, record_property):
    runs = [tr.iterations for _, tr in scripted_suite()[0]]
    store, index, _ = dominance_world()
    zi, zo = any_keyword_policy()
    replies = [verdict(False, [kw], "Break") for kw in KEYWORDS] + [verdict(True)]
    runs.append(run("kayak violin orchard", store, index, LoopConfig(),
                      loop_backend(judge_sequence(replies), zoom_in=zi, zoom_out=zo))[1].iterations)
    ws = determinism_workspace(tmp_path / "ws")
    eval_outputs(ws, 1, "m")
    runs += [load_trace(p)["iterations"] for p in sorted((ws / "trace-m").iterdir())]
    n_steps = sum(len(r) for r in runs)
    bad = monotone_violations(runs)
    measured(record_property, f"{len(runs)} runs, {n_steps} iterations, {bad} violations")
    assert bad == 0


def cost_world():
    rng = random.Random(11)
    n_chunks = 400
    # two ~90-token turns per ~200-token chunk
    turns = [filler_text(rng, 50) for _ in range(2 * n_chunks)]
    facts = {}
    for n, name in enumerate(["lighthouse", "saxophone", "greenhouse", "telescope", "sailboat"]):
        pos = 100 + 150 * n
        turns[pos] = f"My {name} is finally finished. " + filler_text(rng, 40)
        facts[name] = turns[pos]
    store = ingest(corpus_doc([turns]))
    return store, build_index(store), facts


@pytest.mark.criterion("cost accounting sanity")
def test_cost_accounting(record_property):
    store, index, facts = cost_world()
    ratios = []
    for name in facts:
        question = f"When did I finish the {name}?"
        zi, zo = select_containing(lambda req, name=name: name)
        backend = loop_backend([Rule("judge", verdict(True))], zoom_in=zi, zoom_out=zo,
                               responder="last week")
        answer, _ = run(question, store, index, LoopConfig(), backend)
        ratios.append(full_context_tokens(store, question) / answer.token_usage.total_tokens)
    measured(record_property, f"{len(store)} chunks; full-context/loop token ratio min {min(ratios):.1f}x "
                              f"over {len(ratios)} queries")
    assert len(store) == 400
    assert min(ratios) >= 3.0


@pytest.mark.criterion("failed-query non-repetition")
def test_failed_query_non_repetition(record_property):
    rng = random.Random(3)
    store = one_turn_per_chunk([[filler_text(rng, 8) for _ in range(40)]])
    index = build_index(store)

    def adversary(req):
        r = random.Random(f"{req.run_id}/{req.step}")
        failed = json.loads(FAIL_LINE.search(req.prompt_text).group(1))
        pool = failed + [current_query(req)]
        dupes = [r.choice([q.upper(), f"  {q}  ", q.replace(" ", "   "), q]) for q in pool]
        r.shuffle(dupes)
        fresh = [f"fresh idea {req.step}"] if r.random() < 0.3 else []
        return verdict(False, dupes[:3] + fresh, "Delete")

    backend = loop_backend([Rule("judge", adversary)],
                           zoom_in=select_all_zoom_in, zoom_out=select_all_zoom_out)
    repeats = resets = 0
    for n in range(100):
        root = f"{filler_text(rng, 2)} question {n}"
        run(root, store, index, LoopConfig(), backend, query_id=f"adv-{n}")
        executed = [norm(current_query(c)) for c in backend.calls_for("zoom_in") if c.run_id == f"adv-{n}"]
        resets += executed.count(norm(root)) - 1
        for pos, q in enumerate(executed):
            if q in executed[:pos] and not (q == norm(root) and executed[:pos].count(q) == 1):
                repeats += 1
    measured(record_property, f"100 adversarial runs, {repeats} repeated executions, {resets} root resets")
    assert repeats == 0


LIVE = os.environ.get("MEMLOOP_LIVE_BASE_URL") and os.environ.get("MEMLOOP_LIVE_MODEL")


@pytest.mark.live
@pytest.mark.criterion("live smoke")
@pytest.mark.skipif(not LIVE, reason="MEMLOOP_LIVE_BASE_URL / MEMLOOP_LIVE_MODEL not set")
def test_live_smoke(tmp_path, record_property):
    shutil.copy(FIXTURES / "sample_corpus.json", tmp_path / "corpus.json")
    shutil.copytree(FIXTURES / "img", tmp_path / "img")
    role = {"base_url": os.environ["MEMLOOP_LIVE_BASE_URL"], "model": os.environ["MEMLOOP_LIVE_MODEL"],
            "api_key_env": "MEMLOOP_LIVE_API_KEY"}
    (tmp_path / "config.json").write_text(json.dumps({
        "corpus": "corpus.json", "store": "store", "chunk_budget": 40, "image_dir": ".", "backend_profile": "live",
        "backends": {"live": {"type": "http", "roles": {"default": role}}}}))
    cfg = ["--config", str(tmp_path / "config.json")]
    assert main(["index", *cfg], io.StringIO()) == 0
    out = io.StringIO()
    code = main(["ask", "What did Melanie paint?", *cfg, "--j", "3", "--query-id", "live",
                 "--trace-dir", str(tmp_path / "trace")], out)
    assert code == 0, out.getvalue()
    trace = load_trace(tmp_path / "trace" / "live.v1.json")
    assert 1 <= len(trace["iterations"]) <= 3
    assert trace["answer"]["iterations_used"] == len(trace["iterations"])
    for it in trace["iterations"]:
        assert {"query", "perception", "evidence", "verdict", "calls"} <= set(it)
    measured(record_property, f"{len(trace['iterations'])} iterations, "
                              f"{trace['token_ledger']['total_tokens']} tokens")
