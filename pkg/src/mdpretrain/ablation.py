"""Toggle grid over the pre-training tasks, evaluated by probing and fine-tuning."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .config import RunConfig
from .downstream import FINETUNE_MODE, PROBE, LabeledComplex, train_downstream
from .geom import Trajectory
from .model import MDModel
from .pretrain import pretrain


@dataclass(frozen=True)
class AblationRow:
    name: str
    generative: bool
    noise: bool
    prompt: bool
    ordering: bool
    mode: str

    @property
    def pretrained(self) -> bool:
        return self.generative

    @property
    def toggles(self) -> tuple[bool, bool, bool]:
        return self.noise, self.prompt, self.ordering


def _cumulative(mode: str) -> list[AblationRow]:
    steps = [("DG", False, False, False), ("DG+Noise", True, False, False),
             ("DG+Noise+Prompt", True, True, False), ("DG+Noise+Prompt+SO", True, True, True)]
    return [AblationRow(f"{mode}:{name}", True, n, p, o, mode) for name, n, p, o in steps]


ROWS: tuple[AblationRow, ...] = (
    (AblationRow("no-pretrain", False, False, False, False, FINETUNE_MODE),)
    + tuple(_cumulative(PROBE)) + tuple(_cumulative(FINETUNE_MODE))
)
FULL_FINETUNE = ROWS[-1].name

COLUMNS = ("row", "dg", "noise", "prompt", "so", "mode", "seed",
           "val_rmse", "test_rmse", "test_pearson", "test_spearman")


def run_ablation(pretrain_data: Sequence[Trajectory], train: Sequence[LabeledComplex],
                 val: Sequence[LabeledComplex], test: Sequence[LabeledComplex],
                 config: RunConfig, seeds: Sequence[int] = (0, 1, 2),
                 rows: Sequence[AblationRow] = ROWS,
                 log: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """One result dict per (row, seed); pre-training is shared by probe and fine-tune rows."""
    results = []
    for seed in seeds:
        run = config.updated(seed=seed)
        cache: dict = {}
        for row in rows:
            model = MDModel(run.model_config(), seed=seed)
            if row.pretrained:
                if row.toggles not in cache:
                    pc = run.updated(generative=True, noise=row.noise, prompt=row.prompt,
                                     ordering=row.ordering).pretrain_config()
                    pretrain(model, pretrain_data, pc)
                    cache[row.toggles] = model.tensors()
                model.load_tensors(cache[row.toggles])
            result = train_downstream(model, train, val, test, run.downstream_config(row.mode, "affinity"))
            m_val, m_test = result.metrics["val"], result.metrics["test"]
            out = dict(row=row.name, dg=int(row.generative), noise=int(row.noise),
                       prompt=int(row.prompt), so=int(row.ordering), mode=row.mode, seed=seed,
                       val_rmse=m_val["rmse"], test_rmse=m_test["rmse"],
                       test_pearson=m_test["pearson"], test_spearman=m_test["spearman"])
            results.append(out)
            if log:
                log(out)
    return results


def full_beats_baseline(results: Sequence[dict]) -> tuple[int, int]:
    """(seeds where full fine-tuned val RMSE <= no-pretrain val RMSE, seeds compared)."""
    by = {(r["row"], r["seed"]): r["val_rmse"] for r in results}
    seeds = sorted({r["seed"] for r in results})
    wins = sum(by[(FULL_FINETUNE, s)] <= by[("no-pretrain", s)] for s in seeds)
    return wins, len(seeds)
