"""Score a batch of answers and profile where wrong retrievals land."""

# %%
import random

from memloop import EvalItem, aggregate, chunk_distance_profile, f1
from memloop.controller import Answer
from memloop.llm import TokenUsage

for pred, gold in [("Paris", "paris."), ("blue car", "red car"), ("The cat sat", "cat sat on the mat")]:
    print(f"{pred!r:>15} vs {gold!r:<22} F1 {f1(pred, gold):.3f}")

# %%
items = [
    EvalItem("q1", "Where?", "Paris", "single_hop"),
    EvalItem("q2", "Which car?", "red car", "multi_hop"),
    EvalItem("q3", "When?", "7 May 2023", "temporal"),
]
answers = {
    "q1": Answer("paris", (), (), 1, "judge_sufficient", TokenUsage(1800, 40)),
    "q2": Answer("blue car", (), (), 3, "judge_sufficient", TokenUsage(5200, 90)),
    "q3": Answer("May 7, 2023", (), (), 2, "iteration_cap", TokenUsage(3900, 60)),
}
print(aggregate(items, answers).to_table())

# %%
# Simulated retrievals that scatter around the gold chunk, mostly nearby.
rng = random.Random(1)
runs = []
for _ in range(300):
    g = rng.randrange(2000)
    retrieved = [max(0, g + int(rng.gauss(0, 60))) for _ in range(10)]
    runs.append((retrieved, [g]))
profile = chunk_distance_profile(runs)
print(f"{profile.total} false retrievals")
for bucket, share in profile.shares.items():
    print(f"  {bucket:>7}: {share:5.1f}%")
print(profile.to_csv().splitlines()[:5])
