"""The generate-and-judge loop and the statistics computed from its verdicts.

Each generated video is summarised by four evenly spaced frames and shown to
a judge. The first accepted attempt wins; after five rejections the last
attempt is used anyway. Verdict logs then give pass rates per generator/task
and the correlation between a judge and human labels.
"""

import numpy as np

from vidimitate.filtergate import (
    MockJudge,
    Verdict,
    Video,
    metric_human_correlation,
    pass_rate,
    run_filter,
    video_group,
)

rng = np.random.default_rng(0)
frames = rng.integers(0, 255, (24, 32, 32, 3), dtype=np.uint8)

# the judge accepts only the third attempt
judge = MockJudge({"kling/pour/07-a3": True}, judge_id="mock-vlm")
out, verdicts = run_filter(lambda k: Video(f"kling/pour/07-a{k}", frames), judge, "pour water into the cup")
print(f"selected attempt {out.selected_attempt}, passed={out.passed_filter}, fallback={out.fallback_used}")
print("judged:", [f"{v.video}:{'yes' if v.passed else 'no'}" for v in verdicts])

# a labelled log for two judges over one generator/task group
log = []
for i in range(60):
    human = bool(rng.random() < 0.5)
    log.append(Verdict(f"kling/pour/{i:02d}", 1, human if rng.random() < 0.9 else not human, "careful", human))
    log.append(Verdict(f"kling/pour/{i:02d}", 1, bool(rng.random() < 0.5), "coinflip", human))

for judge_id in ("careful", "coinflip"):
    frac, val = pass_rate([v for v in log if v.judge == judge_id], video_group)["kling/pour"]
    print(f"{judge_id:9s} pass rate {frac} = {val:.3f}")
for judge_id, r in metric_human_correlation(log, lambda v: v.judge).items():
    print(f"{judge_id:9s} correlation with humans r = {r:+.3f}")
