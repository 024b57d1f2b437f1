"""Generation filtering: frame summaries, judged retries, pass rates and correlation.

A video is summarized as a few evenly spaced frames stacked top to bottom and
shown to a judge together with the command. Failed videos are regenerated up
to ``max_attempts`` times; if every attempt fails the last one is kept.
"""

from __future__ import annotations

import base64
import io
import json
import math
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

__all__ = [
    "FrameSummary",
    "Verdict",
    "FilterOutcome",
    "Video",
    "Judge",
    "MockJudge",
    "RemoteJudge",
    "TooFewFrames",
    "JudgeUnavailable",
    "EmptyGroup",
    "ConstantInput",
    "LengthMismatch",
    "sample_frames",
    "summarize",
    "run_filter",
    "pass_rate",
    "video_group",
    "pearson",
    "metric_human_correlation",
    "write_verdicts",
    "read_verdicts",
    "encode_png",
]


class TooFewFrames(ValueError):
    pass


class JudgeUnavailable(RuntimeError):
    def __init__(self, message: str, attempt: int | None = None):
        super().__init__(message if attempt is None else f"attempt {attempt}: {message}")
        self.attempt = attempt


class EmptyGroup(ValueError):
    pass


class ConstantInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def sample_frames(frame_count: int, k: int = 4) -> list[int]:
    """``k`` evenly spaced indices from ``0`` to ``frame_count - 1`` (half-up rounding)."""
    if k < 2:
        raise ValueError("need at least two sampled frames")
    if frame_count < k:
        raise TooFewFrames(f"{frame_count} frames cannot supply {k} distinct samples")
    # exact rational arithmetic so that e.g. 66.5 rounds up regardless of float error
    return [math.floor(Fraction(i * (frame_count - 1), k - 1) + Fraction(1, 2)) for i in range(k)]


@dataclass(frozen=True, eq=False)
class Video:
    video_id: str
    frames: np.ndarray  # (N, H, W) or (N, H, W, C)


@dataclass(frozen=True, eq=False)
class FrameSummary:
    video_id: str
    indices: tuple[int, ...]
    image: np.ndarray


def summarize(video: Video, k: int = 4) -> FrameSummary:
    idx = sample_frames(len(video.frames), k)
    image = np.concatenate([video.frames[i] for i in idx], axis=0)
    return FrameSummary(video.video_id, tuple(idx), image)


@dataclass(frozen=True)
class Verdict:
    video: str
    attempt: int
    passed: bool
    judge: str
    human: bool | None = None

    def to_record(self) -> dict:
        return {"video": self.video, "attempt": self.attempt, "pass": self.passed, "judge": self.judge, "human": self.human}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Verdict":
        human = rec.get("human")
        return cls(str(rec["video"]), int(rec["attempt"]), bool(rec["pass"]), str(rec["judge"]), None if human is None else bool(human))


@dataclass(frozen=True)
class FilterOutcome:
    selected_attempt: int
    passed_filter: bool
    fallback_used: bool
    video: Video | None = None


class Judge(Protocol):
    judge_id: str

    def __call__(self, summary: FrameSummary, command: str) -> bool: ...


class MockJudge:
    """Deterministic judge backed by a lookup table.

    ``labels`` maps a video id to its verdict; ids not listed get ``default``.
    A callable may be given instead of a mapping.
    """

    def __init__(
        self,
        labels: Mapping[str, bool] | Callable[[str], bool] | None = None,
        default: bool = False,
        judge_id: str = "mock",
    ):
        self.labels = labels or {}
        self.default = default
        self.judge_id = judge_id
        self.calls: list[str] = []

    def __call__(self, summary: FrameSummary, command: str) -> bool:
        self.calls.append(summary.video_id)
        if callable(self.labels):
            return bool(self.labels(summary.video_id))
        return bool(self.labels.get(summary.video_id, self.default))


def encode_png(image: np.ndarray) -> bytes:
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


class RemoteJudge:
    """Client for an HTTP judge.

    Request: ``POST`` JSON ``{"command": str, "image_png": base64 PNG}``.
    Response: JSON ``{"answer": "Yes" | "No"}`` or a plain-text body holding the
    single token.
    """

    def __init__(self, url: str, judge_id: str = "remote", timeout: float = 60.0):
        self.url = url
        self.judge_id = judge_id
        self.timeout = timeout

    def request_body(self, summary: FrameSummary, command: str) -> bytes:
        payload = {"command": command, "image_png": base64.b64encode(encode_png(summary.image)).decode("ascii")}
        return json.dumps(payload).encode("utf-8")

    @staticmethod
    def parse_answer(body: bytes) -> bool:
        text = body.decode("utf-8").strip()
        try:
            data = json.loads(text)
            if isinstance(data, dict):
                text = str(data["answer"])
            elif isinstance(data, str):
                text = data
        except (ValueError, KeyError):
            pass
        token = text.strip().strip(".").lower()
        if token == "yes":
            return True
        if token == "no":
            return False
        raise JudgeUnavailable(f"judge replied {text!r}, expected 'Yes' or 'No'")

    def __call__(self, summary: FrameSummary, command: str) -> bool:
        req = urllib.request.Request(
            self.url,
            data=self.request_body(summary, command),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise JudgeUnavailable(f"cannot reach judge at {self.url}: {exc}") from exc
        return self.parse_answer(body)


def run_filter(
    generate: Callable[[int], Video],
    judge: Judge,
    command: str = "",
    max_attempts: int = 5,
    k: int = 4,
) -> tuple[FilterOutcome, list[Verdict]]:
    """Generate and judge until a video passes or attempts run out.

    ``generate`` receives the 1-based attempt number.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    verdicts: list[Verdict] = []
    video = None
    for attempt in range(1, max_attempts + 1):
        video = generate(attempt)
        summary = summarize(video, k)
        try:
            ok = bool(judge(summary, command))
        except JudgeUnavailable as exc:
            raise JudgeUnavailable(str(exc), attempt=attempt) from exc
        verdicts.append(Verdict(video.video_id, attempt, ok, judge.judge_id))
        if ok:
            return FilterOutcome(attempt, True, False, video), verdicts
    return FilterOutcome(max_attempts, False, True, video), verdicts


def video_group(v: Verdict) -> str:
    """Group key taken from the video id up to its last ``/`` (``"kling/pour/07"`` -> ``"kling/pour"``)."""
    return v.video.rsplit("/", 1)[0] if "/" in v.video else v.video


def pass_rate(
    verdicts: Iterable[Verdict],
    key: Callable[[Verdict], str],
    groups: Sequence[str] | None = None,
) -> dict[str, tuple[Fraction, float]]:
    """First-attempt pass fraction per group, as an exact fraction and a float."""
    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for v in verdicts:
        if v.attempt != 1:
            continue
        c = counts[key(v)]
        c[0] += int(v.passed)
        c[1] += 1
    names = list(groups) if groups is not None else sorted(counts)
    out = {}
    for g in names:
        passed, total = counts.get(g, (0, 0))
        if total == 0:
            raise EmptyGroup(f"group {g!r} has no first-attempt verdicts")
        frac = Fraction(passed, total)
        out[g] = (frac, passed / total)
    return out


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"inputs have shapes {x.shape} and {y.shape}")
    if len(x) < 2:
        raise LengthMismatch("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ConstantInput("Pearson correlation is undefined for a constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def metric_human_correlation(
    verdicts: Iterable[Verdict],
    key: Callable[[Verdict], str],
) -> dict[str, float]:
    """Per group, Pearson r between judge verdicts and human labels (0/1)."""
    pairs: dict[str, tuple[list[float], list[float]]] = defaultdict(lambda: ([], []))
    for v in verdicts:
        if v.human is None:
            continue
        xs, ys = pairs[key(v)]
        xs.append(float(v.passed))
        ys.append(float(v.human))
    return {g: pearson(xs, ys) for g, (xs, ys) in sorted(pairs.items())}


def write_verdicts(verdicts: Iterable[Verdict], path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_record()) + "\n")


def read_verdicts(path) -> list[Verdict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(Verdict.from_record(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad verdict record ({exc})") from exc
    return out
