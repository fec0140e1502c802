import numpy as np
import pytest

from gpbt.genealogy import GenealogyTree
from gpbt.searchers import Observation


def record(tree, parent, generation, hp=(0.5,), val=1.0, test=1.1, epochs=1, stopped=False):
    return tree.record_child(parent, generation, hp, val, test, epochs, stopped)


def build_two_by_two(generations=3, n=4):
    """c=1 population: 2 parents x 2 children per generation, losses by id."""
    tree = GenealogyTree()
    for k in range(n):
        record(tree, None, 0, hp=(0.1 * k,), val=float(k))
    prev = list(range(n))
    for g in range(1, generations):
        parents = sorted(prev, key=lambda i: (tree.get(i).val_loss, i))[:2]
        tree.set_parents(g, parents)
        new = []
        for p in parents:
            for j in range(2):
                cid = record(tree, p, g, hp=(0.001 * len(tree),), val=float(g + j))
                new.append(cid)
        prev = new
    return tree


class TestRecordChild:
    def test_first_record(self):
        tree = GenealogyTree()
        cid = record(tree, None, 0)
        rec = tree.get(cid)
        assert cid == 0 and rec.parent is None and rec.generation == 0

    def test_selected_parent_accepted(self):
        tree = build_two_by_two(2)
        parents = tree.parents_of(1)
        assert all(tree.get(c).parent in parents for c in range(4, 8))

    def test_unselected_parent_rejected(self):
        tree = GenealogyTree()
        for k in range(4):
            record(tree, None, 0, val=float(k))
        tree.set_parents(1, [0, 1])
        with pytest.raises(ValueError):
            record(tree, 3, 1)

    def test_generation_mismatch_rejected(self):
        tree = build_two_by_two(2)
        with pytest.raises(ValueError):
            tree.set_parents(2, [0])  # generation-0 agent cannot parent generation 2

    def test_nonzero_generation_needs_parent(self):
        tree = GenealogyTree()
        with pytest.raises(ValueError):
            record(tree, None, 1)

    def test_ids_are_sequential(self):
        tree = build_two_by_two(3)
        assert [r.id for r in tree.records] == list(range(len(tree)))


class TestAncestry:
    def test_generation_zero_is_singleton(self):
        tree = build_two_by_two(1)
        assert tree.ancestry(2) == [2]

    def test_chain(self):
        tree = GenealogyTree()
        record(tree, None, 0, val=0.0)  # id 0
        for k in range(5):
            record(tree, None, 0, val=float(k + 1))
        tree.set_parents(1, [0])
        record(tree, 0, 1)  # id 6
        tree.set_parents(2, [6])
        cid = record(tree, 6, 2)
        assert tree.ancestry(cid) == [0, 6, cid]

    def test_length_matches_generation(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            tree = build_two_by_two(generations=int(rng.integers(1, 6)))
            for rec in tree.records:
                assert len(tree.ancestry(rec.id)) == rec.generation + 1


class TestLineageHistory:
    def test_sibling_only_is_exactly_within(self):
        tree = build_two_by_two(2)
        within = [Observation((0.9,), 0.5), Observation((0.8,), 0.4)]
        hist = tree.lineage_history(tree.parents_of(1)[0], "sibling_only", within)
        assert hist == within

    def test_time_enriched_generation_one(self):
        # n=4 generation-0 children plus 1 evaluated sibling -> 5 observations
        tree = build_two_by_two(2, n=4)
        parent = tree.parents_of(1)[0]
        within = [Observation((0.7,), 0.3)]
        hist = tree.lineage_history(parent, "time_enriched", within)
        assert len(hist) == 5
        assert hist[-1] == within[0]

    def test_time_enriched_three_generations(self):
        # 2 parents x 2 children: at generation 2, before any sibling,
        # the lineage sees 4 gen-0 children + the 2 children of its gen-1 ancestor.
        tree = build_two_by_two(3)
        parent2 = tree.parents_of(2)[0]
        hist = tree.lineage_history(parent2, "time_enriched", [])
        assert len(hist) == 6

    def test_time_enriched_excludes_other_branches(self):
        tree = build_two_by_two(3)
        parent2 = tree.parents_of(2)[0]
        chain = set(tree.ancestry(parent2))
        hist = tree.lineage_history(parent2, "time_enriched", [])
        hp_to_record = {r.hp: r for r in tree.records}
        for obs in hist:
            rec = hp_to_record[obs.hp]
            assert rec.parent is None or rec.parent in chain

    def test_pooled_sees_everything(self):
        tree = build_two_by_two(3)
        hist = tree.lineage_history(tree.parents_of(2)[0], "pooled", [])
        assert len(hist) == len(tree)

    def test_unknown_parent_rejected(self):
        tree = build_two_by_two(2)
        with pytest.raises(KeyError):
            tree.lineage_history(99, "sibling_only", [])

    def test_unknown_mode_rejected(self):
        tree = build_two_by_two(2)
        with pytest.raises(ValueError):
            tree.lineage_history(0, "all", [])


class TestScheduleAndBest:
    def test_generation_zero_schedule(self):
        tree = build_two_by_two(1)
        assert tree.schedule(1) == [(0.1,)]

    def test_schedule_tracks_ancestry(self):
        tree = build_two_by_two(4)
        for rec in tree.records:
            chain = tree.ancestry(rec.id)
            assert tree.schedule(rec.id) == [tree.get(a).hp for a in chain]

    def test_schedule_length_is_generations(self):
        tree = build_two_by_two(5)
        last = max(r.generation for r in tree.records)
        best = tree.best_agent(last)
        assert len(tree.schedule(best)) == 5

    def test_best_agent_tie_goes_to_lower_id(self):
        tree = GenealogyTree()
        for val in (0.5, 0.2, 0.2, 0.9):
            record(tree, None, 0, val=val)
        assert tree.best_agent(0) == 1

    def test_best_agent_matches_linear_scan(self):
        rng = np.random.default_rng(8)
        tree = GenealogyTree()
        vals = rng.random(30)
        for v in vals:
            record(tree, None, 0, val=float(v))
        oracle = min(range(30), key=lambda i: (vals[i], i))
        assert tree.best_agent(0) == oracle


class TestSerialization:
    def test_round_trip_replays_identical_histories(self, tmp_path):
        tree = build_two_by_two(4)
        path = tmp_path / "tree.ndjson"
        tree.dump(path)
        loaded = GenealogyTree.load(path)
        assert loaded.records == tree.records
        for g in (1, 2, 3):
            for parent in tree.parents_of(g):
                assert loaded.lineage_history(parent, "time_enriched", []) == tree.lineage_history(
                    parent, "time_enriched", []
                )

    def test_lines_are_json_objects(self):
        import json

        tree = build_two_by_two(2)
        for line in tree.to_lines():
            rec = json.loads(line)
            assert set(rec) == {
                "id", "parent", "generation", "hp", "val_loss",
                "test_loss", "epochs_trained", "early_stopped",
            }
