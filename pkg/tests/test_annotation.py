"""Vote aggregation, the simulated annotator oracle, and the label store."""

import itertools

import numpy as np
import pytest

from rankloop.annotation import (LabelStore, RankLabel, SimulatedAnnotator,
                                 VoteRecord, aggregate_votes, load_labels,
                                 make_panel)
from rankloop.exceptions import DuplicateVoteError, StoreError
from rankloop.rng import make_rng


def _vote(pair, annotator, choice):
    return VoteRecord(pair_id=pair, annotator_id=annotator, choice=choice, timestamp=0)


class TestAggregateVotes:
    def test_two_of_three_majority(self):
        label = aggregate_votes([_vote("p", "a", "cur"), _vote("p", "b", "cur"),
                                 _vote("p", "c", "prev")])
        assert label.label_cur == 0 and label.label_prev == 1
        assert label.vote_count == 3

    def test_unanimous_prev(self):
        label = aggregate_votes([_vote("p", "a", "prev"), _vote("p", "b", "prev"),
                                 _vote("p", "c", "prev")])
        assert label.label_prev == 0 and label.better == "prev"

    def test_order_invariant(self):
        votes = [_vote("p", "a", "cur"), _vote("p", "b", "prev"), _vote("p", "c", "cur")]
        labels = {aggregate_votes(list(perm)) for perm in itertools.permutations(votes)}
        assert len(labels) == 1

    def test_too_few_votes(self):
        with pytest.raises(StoreError, match="at least 3"):
            aggregate_votes([_vote("p", "a", "cur"), _vote("p", "b", "cur")])

    def test_even_count_rejected(self):
        votes = [_vote("p", c, "cur") for c in "abcd"]
        with pytest.raises(StoreError, match="odd"):
            aggregate_votes(votes)

    def test_duplicate_annotator_rejected(self):
        votes = [_vote("p", "a", "cur"), _vote("p", "a", "cur"), _vote("p", "b", "prev")]
        with pytest.raises(StoreError, match="duplicate"):
            aggregate_votes(votes)


def _stat_image(mean, std, rng, balanced=True):
    """64x64 image with approximately the requested luminance statistics."""
    noise = rng.normal(size=(24, 24, 1))
    noise = noise - noise.mean()
    noise = noise / np.abs(noise).max() * min(std * 3.2, mean, 1 - mean)
    img = np.clip(mean + noise * (std / max(noise.std(), 1e-9)) * max(noise.std(), 1e-9)
                  / max(noise.std(), 1e-9), 0, 1)
    img = np.repeat(img, 3, axis=2)
    return np.clip(img, 0, 1)


class TestOracleUtility:
    def test_ideal_image_scores_zero(self):
        ann = SimulatedAnnotator("a")
        # constant-channel image with exact target stats: mean .6, std .18
        base = np.full((2, 100), 0.6)
        base[:, :50] = 0.6 - 0.18
        base[:, 50:] = 0.6 + 0.18
        img = np.repeat(base.reshape(2, 100, 1), 3, axis=2)
        assert ann.utility(img) == pytest.approx(0.0, abs=1e-12)

    def test_darker_image_penalized_by_w1(self):
        ann = SimulatedAnnotator("a", weights=(1.0, 0.0, 0.0))
        img = np.full((8, 8, 3), 0.2)
        assert ann.utility(img) == pytest.approx(-1.0 * (0.2 - 0.6) ** 2, abs=1e-12)

    def test_spatial_permutation_invariant(self):
        rng = make_rng(71)
        img = rng.uniform(size=(8, 8, 3))
        flat = img.reshape(-1, 3)
        perm = flat[rng.permutation(len(flat))].reshape(img.shape)
        ann = SimulatedAnnotator("a")
        assert ann.utility(img) == pytest.approx(ann.utility(perm), abs=1e-12)


class TestSimulateVote:
    def test_noiseless_picks_higher_utility(self):
        ann = SimulatedAnnotator("a", noise=0.0)
        bright = np.full((8, 8, 3), 0.55)
        dark = np.full((8, 8, 3), 0.1)
        assert ann.vote("p", dark, bright).choice == "cur"
        assert ann.vote("p", bright, dark).choice == "prev"

    def test_exact_tie_goes_to_prev(self):
        ann = SimulatedAnnotator("a", noise=0.0)
        img = np.full((8, 8, 3), 0.4)
        assert ann.vote("p", img, img.copy()).choice == "prev"

    def test_noisy_vote_is_stable_per_pair(self):
        ann = SimulatedAnnotator("a", noise=0.5, seed=3)
        rng = make_rng(72)
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        first = ann.vote("pair-7", a, b)
        again = ann.vote("pair-7", a, b)
        assert first == again

    def test_noise_streams_keyed_by_pair(self):
        ann = SimulatedAnnotator("a", noise=2.0, seed=3)
        rng = make_rng(73)
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        choices = {ann.vote(f"pair-{i}", a, b).choice for i in range(40)}
        assert choices == {"prev", "cur"}  # large noise flips some pairs

    def test_panel_majority_matches_utility_sign_when_noiseless(self):
        panel = make_panel(3, seed=5, noise=0.0)
        rng = make_rng(74)
        for i in range(10):
            a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
            votes = [ann.vote(f"p{i}", a, b) for ann in panel]
            label = aggregate_votes(votes)
            expect_cur = panel[0].utility(b) > panel[0].utility(a)
            assert (label.label_cur == 0) == expect_cur

    def test_panel_shape_validation(self):
        with pytest.raises(StoreError):
            make_panel(2, seed=0, noise=0.0)


class TestLabelStore:
    def test_three_votes_produce_one_label(self, tmp_path):
        store = LabelStore(tmp_path)
        assert store.append_vote(_vote("p1", "a", "cur")) is None
        assert store.append_vote(_vote("p1", "b", "prev")) is None
        label = store.append_vote(_vote("p1", "c", "cur"))
        assert isinstance(label, RankLabel) and label.label_cur == 0
        assert (tmp_path / "labels.jsonl").read_text().count("\n") == 1
        assert (tmp_path / "votes.jsonl").read_text().count("\n") == 3

    def test_reload_after_partial_votes(self, tmp_path):
        store = LabelStore(tmp_path)
        store.append_vote(_vote("p1", "a", "cur"))
        store.append_vote(_vote("p1", "b", "prev"))
        del store  # simulated crash: nothing finalized
        reopened = LabelStore(tmp_path)
        assert reopened.vote_count("p1") == 2
        assert reopened.all_labels() == []
        label = reopened.append_vote(_vote("p1", "c", "prev"))
        assert label.label_prev == 0

    def test_duplicate_vote_rejected_and_store_unchanged(self, tmp_path):
        store = LabelStore(tmp_path)
        store.append_vote(_vote("p1", "a", "cur"))
        before = (tmp_path / "votes.jsonl").read_bytes()
        with pytest.raises(DuplicateVoteError):
            store.append_vote(_vote("p1", "a", "prev"))
        assert (tmp_path / "votes.jsonl").read_bytes() == before

    def test_round_trip_preserves_order_and_content(self, tmp_path):
        store = LabelStore(tmp_path)
        votes = [_vote("p1", "a", "cur"), _vote("p2", "a", "prev"),
                 _vote("p1", "b", "cur"), _vote("p1", "c", "prev"),
                 _vote("p2", "b", "cur"), _vote("p2", "c", "cur")]
        for v in votes:
            store.append_vote(v)
        reopened = LabelStore(tmp_path)
        assert reopened.all_votes() == votes
        assert {l.pair_id for l in reopened.all_labels()} == {"p1", "p2"}
        assert load_labels(tmp_path) == store.all_labels()

    def test_malformed_line_reports_line_number(self, tmp_path):
        (tmp_path / "votes.jsonl").write_text('{"pair_id": "p1"\n')
        with pytest.raises(StoreError, match="votes.jsonl:1"):
            LabelStore(tmp_path)
