"""Train-then-evaluate runs shared by the scripts and the acceptance suite."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from camp import data
from camp.config import TrainConfig
from camp.evaluate import evaluate, mean_segment_cosine
from camp.model import DualEncoder
from camp.trainer import Trainer

CALIBRATION_FILE = Path(__file__).resolve().parents[2] / "calibration" / "retrieval_gate.json"

# ablations train for the same budget as the default config
ABLATION_STEPS = TrainConfig().total_steps


@dataclass
class RunResult:
    label: str
    seed: int
    steps: int
    t2i_r1: float
    i2t_r1: float
    segment_cosine: float
    seconds: float

    def row(self) -> str:
        return f"{self.label}\t{self.seed}\t{self.steps}\t{self.t2i_r1:.4f}\t{self.i2t_r1:.4f}\t{self.segment_cosine:.4f}\t{self.seconds:.1f}"


RUN_HEADER = "variant\tseed\tsteps\tt2i_R@1\ti2t_R@1\tsegment_cosine\tseconds"


def train_and_evaluate(cfg: TrainConfig, label: str = "default") -> tuple[RunResult, DualEncoder]:
    train, held = data.generate_split(cfg.n_train, cfg.n_eval, cfg.seed)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, train)
    trainer.train()
    seconds = time.perf_counter() - t0
    t2i, i2t = evaluate(trainer.model, held)
    cos = mean_segment_cosine(trainer.model, held) if cfg.K > 1 else 1.0
    return RunResult(label, cfg.seed, cfg.total_steps, t2i.r1, i2t.r1, cos, seconds), trainer.model


ABLATIONS = {
    "default": {},
    "K=1": {"K": 1},
    "average": {"combine_mode": "average"},
    "alpha=0": {"alpha": 0.0},
}


def ablation_config(variant: str, seed: int, steps: int = ABLATION_STEPS) -> TrainConfig:
    return TrainConfig(seed=seed, total_steps=steps, **ABLATIONS[variant])


def load_calibration(path: str | Path = CALIBRATION_FILE) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_calibration(results: list[RunResult], path: str | Path = CALIBRATION_FILE, margin: float = 0.05) -> dict:
    scores = [r.t2i_r1 for r in results]
    record = {
        "metric": "text-to-image R@1 on held-out combinations",
        "config": json.loads(TrainConfig().to_json()),
        "runs": [asdict(r) for r in results],
        "min_observed": min(scores),
        "margin": margin,
        "gate": round(min(scores) - margin, 6),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return record
