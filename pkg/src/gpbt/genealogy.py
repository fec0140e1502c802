"""Population ancestry: append-only agent records, lineage histories, schedules."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .searchers import Observation
from .space import HpVector

HISTORY_MODES = ("sibling_only", "time_enriched", "pooled")


@dataclass(frozen=True)
class AgentRecord:
    id: int
    parent: int | None  # None for generation-0 children (virtual root)
    generation: int
    hp: HpVector
    val_loss: float
    test_loss: float
    epochs_trained: int
    early_stopped: bool

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "generation": self.generation,
            "hp": list(self.hp),
            "val_loss": self.val_loss,
            "test_loss": self.test_loss,
            "epochs_trained": self.epochs_trained,
            "early_stopped": self.early_stopped,
        }


class GenealogyTree:
    """Append-only ancestry tree; ids are assigned in evaluation order."""

    def __init__(self):
        self._records: list[AgentRecord] = []
        self._selected: dict[int, tuple[int, ...]] = {}  # generation -> parent ids

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[AgentRecord, ...]:
        return tuple(self._records)

    def get(self, agent_id: int) -> AgentRecord:
        if not 0 <= agent_id < len(self._records):
            raise KeyError(f"unknown agent id {agent_id}")
        return self._records[agent_id]

    def set_parents(self, generation: int, parent_ids: Sequence[int]) -> None:
        """Register the parents selected for `generation` (rank order preserved)."""
        if generation < 1:
            raise ValueError("generation 0 has no selected parents")
        for pid in parent_ids:
            rec = self.get(pid)
            if rec.generation != generation - 1:
                raise ValueError(
                    f"agent {pid} has generation {rec.generation}, "
                    f"cannot parent generation {generation}"
                )
        self._selected[generation] = tuple(parent_ids)

    def parents_of(self, generation: int) -> tuple[int, ...]:
        return self._selected.get(generation, ())

    def record_child(
        self,
        parent: int | None,
        generation: int,
        hp: HpVector,
        val_loss: float,
        test_loss: float,
        epochs_trained: int,
        early_stopped: bool,
    ) -> int:
        if parent is None:
            if generation != 0:
                raise ValueError("only generation-0 children may have no parent")
        else:
            rec = self.get(parent)
            if rec.generation != generation - 1:
                raise ValueError(
                    f"parent {parent} (generation {rec.generation}) cannot have a "
                    f"generation-{generation} child"
                )
            if parent not in self._selected.get(generation, ()):
                raise ValueError(f"agent {parent} was not selected for generation {generation}")
        if epochs_trained < 1:
            raise ValueError("epochs_trained must be >= 1")
        new_id = len(self._records)
        self._records.append(
            AgentRecord(
                id=new_id,
                parent=parent,
                generation=generation,
                hp=tuple(hp),
                val_loss=float(val_loss),
                test_loss=float(test_loss),
                epochs_trained=int(epochs_trained),
                early_stopped=bool(early_stopped),
            )
        )
        return new_id

    def ancestry(self, agent_id: int) -> list[int]:
        """Root-first chain of ids ending at agent_id."""
        chain = [agent_id]
        rec = self.get(agent_id)
        while rec.parent is not None:
            chain.append(rec.parent)
            rec = self.get(rec.parent)
        chain.reverse()
        return chain

    def lineage_history(
        self,
        parent_id: int,
        mode: str,
        within_generation: Sequence[Observation],
    ) -> list[Observation]:
        """Assemble the history fed to the searcher for one parent's children.

        sibling_only:   exactly the within-generation observations (children of
                        this parent evaluated so far).
        time_enriched:  observations of every recorded child whose parent lies
                        on this parent's ancestry chain, generation-0 children
                        included (they are children of the virtual root shared
                        by every lineage), in evaluation order; the
                        within-generation observations are appended.
        pooled:         every recorded observation from all lineages and
                        generations (the ablation mode).
        """
        if mode not in HISTORY_MODES:
            raise ValueError(f"unknown history mode {mode!r}")
        self.get(parent_id)  # unknown parent raises regardless of mode
        if mode == "pooled":
            return [Observation(r.hp, r.val_loss) for r in self._records]
        if mode == "sibling_only":
            return list(within_generation)
        chain = set(self.ancestry(parent_id))
        cutoff = self.get(parent_id).generation
        past = [
            Observation(r.hp, r.val_loss)
            for r in self._records
            if r.generation <= cutoff and (r.parent is None or r.parent in chain)
        ]
        return past + list(within_generation)

    def schedule(self, agent_id: int) -> list[HpVector]:
        """Hyperparameter schedule along the ancestry chain, root first."""
        return [self._records[a].hp for a in self.ancestry(agent_id)]

    def best_agent(self, generation: int) -> int:
        """Lowest val_loss in a generation; ties go to the lower id."""
        candidates = [r for r in self._records if r.generation == generation]
        if not candidates:
            raise ValueError(f"no records for generation {generation}")
        return min(candidates, key=lambda r: (r.val_loss, r.id)).id

    def generation_records(self, generation: int) -> list[AgentRecord]:
        return [r for r in self._records if r.generation == generation]

    # -- persistence (newline-delimited JSON, one record per line) ----------

    def to_lines(self) -> Iterable[str]:
        for r in self._records:
            yield json.dumps(r.as_dict(), sort_keys=True)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "GenealogyTree":
        tree = cls()
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        records.sort(key=lambda r: r["id"])
        # Selected-parent lists are reconstructed from the child records;
        # histories do not depend on selection order, only on membership.
        by_generation: dict[int, list[int]] = {}
        for rec in records:
            if rec["parent"] is not None:
                parents = by_generation.setdefault(rec["generation"], [])
                if rec["parent"] not in parents:
                    parents.append(rec["parent"])
        for rec in records:
            gen = rec["generation"]
            if gen >= 1 and gen not in tree._selected:
                tree._selected[gen] = tuple(by_generation.get(gen, ()))
            if rec["id"] != len(tree._records):
                raise ValueError(f"non-contiguous record id {rec['id']}")
            tree.record_child(
                parent=rec["parent"],
                generation=gen,
                hp=tuple(rec["hp"]),
                val_loss=rec["val_loss"],
                test_loss=rec["test_loss"],
                epochs_trained=rec["epochs_trained"],
                early_stopped=rec["early_stopped"],
            )
        return tree
