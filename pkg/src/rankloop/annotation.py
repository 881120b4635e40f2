"""Vote records, majority-vote aggregation, the durable label store, and the
deterministic simulated annotator that stands in for humans in automated runs.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import DuplicateVoteError, StoreError
from .rng import derive_seed, make_rng
from .validation import check_image, luminance

CHOICES = ("prev", "cur")


@dataclass(frozen=True)
class VoteRecord:
    pair_id: str
    annotator_id: str
    choice: str  # which image the annotator deems better
    timestamp: int  # milliseconds

    def __post_init__(self):
        if self.choice not in CHOICES:
            raise StoreError(f"vote choice must be one of {CHOICES}, got {self.choice!r}")


@dataclass(frozen=True)
class RankLabel:
    pair_id: str
    label_prev: int
    label_cur: int
    vote_count: int

    def __post_init__(self):
        if {self.label_prev, self.label_cur} != {0, 1}:
            raise StoreError("exactly one image must carry label 0")
        if self.vote_count < 3:
            raise StoreError("labels need at least 3 votes")

    @property
    def better(self) -> str:
        return "prev" if self.label_prev == 0 else "cur"


def aggregate_votes(votes: list[VoteRecord]) -> RankLabel:
    """Majority vote over an odd number (>= 3) of distinct annotators.

    The majority choice receives label 0 (better); the result depends only on
    the vote multiset, not its order.
    """
    if len(votes) < 3:
        raise StoreError(f"need at least 3 votes, got {len(votes)}")
    if len(votes) % 2 == 0:
        raise StoreError(f"need an odd vote count, got {len(votes)}")
    pair_ids = {v.pair_id for v in votes}
    if len(pair_ids) != 1:
        raise StoreError(f"votes span multiple pairs: {sorted(pair_ids)}")
    annotators = [v.annotator_id for v in votes]
    if len(set(annotators)) != len(annotators):
        raise StoreError("duplicate annotator in vote set")
    cur_votes = sum(1 for v in votes if v.choice == "cur")
    cur_wins = cur_votes * 2 > len(votes)
    return RankLabel(
        pair_id=votes[0].pair_id,
        label_prev=1 if cur_wins else 0,
        label_cur=0 if cur_wins else 1,
        vote_count=len(votes),
    )


@dataclass
class SimulatedAnnotator:
    """Utility-maximizing oracle: prefers the image whose global statistics sit
    closest to its exposure/contrast/color-balance targets, with optional
    seeded Gaussian noise keyed by pair id so repeat queries are stable."""

    annotator_id: str
    exposure_target: float = 0.6
    contrast_target: float = 0.18
    weights: tuple[float, float, float] = (1.0, 0.5, 0.25)
    noise: float = 0.0
    seed: int = 0

    def utility(self, img) -> float:
        img = check_image(img)
        luma = luminance(img)
        w1, w2, w3 = self.weights
        value = -w1 * (float(luma.mean()) - self.exposure_target) ** 2
        value -= w2 * (float(luma.std()) - self.contrast_target) ** 2
        if img.shape[2] == 3:
            mu = img.mean(axis=(0, 1))
            pair_sq = [(mu[0] - mu[1]) ** 2, (mu[0] - mu[2]) ** 2, (mu[1] - mu[2]) ** 2]
            value -= w3 * float(np.mean(pair_sq))
        return value

    def vote(self, pair_id: str, img_prev, img_cur, timestamp: int = 0) -> VoteRecord:
        """Deterministic 2AFC choice; exact utility ties go to ``prev``."""
        u_prev = self.utility(img_prev)
        u_cur = self.utility(img_cur)
        if self.noise > 0:
            rng = make_rng(derive_seed(self.seed, "vote", self.annotator_id, pair_id))
            u_prev += self.noise * rng.normal()
            u_cur += self.noise * rng.normal()
        choice = "cur" if u_cur > u_prev else "prev"
        return VoteRecord(pair_id=pair_id, annotator_id=self.annotator_id,
                          choice=choice, timestamp=timestamp)


def make_panel(count: int, seed: int, noise: float, exposure_target: float = 0.6,
               contrast_target: float = 0.18,
               weights: tuple[float, float, float] = (1.0, 0.5, 0.25)
               ) -> list[SimulatedAnnotator]:
    """A panel of ``count`` simulated annotators with per-annotator noise streams."""
    if count < 3 or count % 2 == 0:
        raise StoreError("annotator panel must be odd and >= 3")
    return [
        SimulatedAnnotator(annotator_id=f"sim{i}", exposure_target=exposure_target,
                           contrast_target=contrast_target, weights=tuple(weights),
                           noise=noise, seed=derive_seed(seed, "annotator", i))
        for i in range(count)
    ]


class LabelStore:
    """Append-only votes.jsonl / labels.jsonl in one stage directory.

    Votes append one JSON line each; when a pair reaches ``votes_per_pair``
    votes its RankLabel is finalized into labels.jsonl with an fsync, so a
    crash between votes can lose at most unfinalized votes, never recorded
    labels. Duplicate (pair_id, annotator_id) appends are rejected.
    """

    def __init__(self, stage_dir, votes_per_pair: int = 3):
        self.stage_dir = Path(stage_dir)
        self.votes_path = self.stage_dir / "votes.jsonl"
        self.labels_path = self.stage_dir / "labels.jsonl"
        self.votes_per_pair = votes_per_pair
        self.votes: dict[str, list[VoteRecord]] = {}
        self.labels: dict[str, RankLabel] = {}
        self._vote_log: list[VoteRecord] = []
        self._load()

    def _load(self):
        for record in self._read_lines(self.votes_path):
            vote = VoteRecord(**record)
            self.votes.setdefault(vote.pair_id, []).append(vote)
            self._vote_log.append(vote)
        for record in self._read_lines(self.labels_path):
            label = RankLabel(**record)
            self.labels[label.pair_id] = label

    @staticmethod
    def _read_lines(path: Path):
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except (json.JSONDecodeError, TypeError) as exc:
                    raise StoreError(f"{path}:{lineno}: malformed record: {exc}") from exc

    @staticmethod
    def _append_line(path: Path, record: dict, sync: bool = False):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            fh.flush()
            if sync:
                os.fsync(fh.fileno())

    def has_vote(self, pair_id: str, annotator_id: str) -> bool:
        return any(v.annotator_id == annotator_id for v in self.votes.get(pair_id, []))

    def vote_count(self, pair_id: str) -> int:
        return len(self.votes.get(pair_id, []))

    def append_vote(self, vote: VoteRecord) -> RankLabel | None:
        """Record one vote; returns the finalized label if this vote completes
        the pair, else None."""
        if self.has_vote(vote.pair_id, vote.annotator_id):
            raise DuplicateVoteError(
                f"annotator {vote.annotator_id!r} already voted on {vote.pair_id!r}")
        self._append_line(self.votes_path, asdict(vote))
        self.votes.setdefault(vote.pair_id, []).append(vote)
        self._vote_log.append(vote)
        pending = self.votes[vote.pair_id]
        if len(pending) == self.votes_per_pair:
            label = aggregate_votes(pending)
            self._append_line(self.labels_path, asdict(label), sync=True)
            self.labels[label.pair_id] = label
            return label
        return None

    def all_votes(self) -> list[VoteRecord]:
        return list(self._vote_log)  # append order, matching the file

    def all_labels(self) -> list[RankLabel]:
        return list(self.labels.values())


def load_labels(stage_dir) -> list[RankLabel]:
    """Read the finalized labels of one stage directory."""
    path = Path(stage_dir) / "labels.jsonl"
    return [RankLabel(**rec) for rec in LabelStore._read_lines(path)]
