"""Stream-separation benchmark on synthetic identities.

Each part pairs a synthetic mode with the models whose ordering it probes:

* ``posture``: static postures only; STR should identify them.
* ``rhythm``: one shared posture, identities differ only in movement; STR
  should sit near chance and MS-TTR should succeed.
* ``micro``: periods of 3 to 5 frames in alias pairs that a stride-9 TTR
  cannot tell apart but strides 3 and 5 can.
* ``mixed``: every identity shares its posture with one other identity and
  its rhythm with another; only the fused model resolves both.
* ``velocity``: held postures plus pause duty cycles; velocity input throws
  the posture away, so TTR on positions should beat TTR on velocities.

Accuracies are those of the best-test-accuracy checkpoint of each run.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .synth import SynthConfig, generate_dataset
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

# accuracies are ratios of small integers; thresholds compare with this slack
_EPS = 1e-9

PARTS = ("posture", "rhythm", "micro", "mixed", "velocity")

# calibrated for one CPU core; see the notes in the README
_STR = dict(model="str", d_model=16, n_heads=1, lr=1e-2)
_MSTTR = dict(model="msttr", d_model=32, n_heads=2, lr=3e-3)
_TTR9 = dict(model="ttr", k=9, d_model=32, n_heads=2, lr=3e-3)
_DUAL = dict(model="dual", temporal="msttr", d_model=16, n_heads=2, lr=5e-3, velocity=True)


@dataclass(frozen=True)
class Run:
    part: str
    name: str
    synth: SynthConfig
    train: TrainConfig


@dataclass
class BenchConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    quick: bool = False
    parts: tuple[str, ...] = PARTS
    n_identities: int = 10
    sequences_per_identity: int = 40

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.parts) - set(PARTS)
        if unknown:
            raise ValueError(f"unknown benchmark parts {sorted(unknown)}")
        if self.quick:
            self.n_identities, self.sequences_per_identity = 4, 5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"], d["parts"] = list(self.seeds), list(self.parts)
        return d


def _train_cfg(params: dict, epochs: int, seed: int, quick: bool) -> TrainConfig:
    return TrainConfig(**params, epochs=1 if quick else epochs, seed=seed, dtype="float32", eval_train=False)


def part_runs(part: str, cfg: BenchConfig) -> list[Run]:
    """The training runs that make up one benchmark part."""
    n, per, q = cfg.n_identities, cfg.sequences_per_identity, cfg.quick

    def data(mode, seed=0):
        return SynthConfig(mode=mode, n_identities=n, sequences_per_identity=per, seed=seed)

    if part == "posture":
        return [Run(part, "str", data("posture-only"), _train_cfg(_STR, 8, 0, q))]
    if part == "rhythm":
        return [
            Run(part, "str", data("rhythm-only"), _train_cfg(_STR, 10, 0, q)),
            Run(part, "msttr", data("rhythm-only"), _train_cfg({**_MSTTR, "velocity": True}, 25, 0, q)),
        ]
    if part == "micro":
        return [
            Run(part, "msttr", data("micro"), _train_cfg(_MSTTR, 25, 0, q)),
            Run(part, "ttr_k9", data("micro"), _train_cfg(_TTR9, 25, 0, q)),
        ]
    if part == "mixed":
        return [Run(part, f"dual_seed{s}", data("mixed", s), _train_cfg(_DUAL, 10, s, q)) for s in cfg.seeds]
    if part == "velocity":
        runs = []
        for s in cfg.seeds:
            for vel in (False, True):
                name = f"ttr_{'velocity' if vel else 'position'}_seed{s}"
                runs.append(Run(part, name, data("stillness", s), _train_cfg({**_TTR9, "velocity": vel}, 12, s, q)))
        return runs
    raise ValueError(f"unknown benchmark part {part!r}")


def run_one(run: Run) -> dict:
    start = time.perf_counter()
    _, metrics = train(generate_dataset(run.synth), run.train)
    seconds = time.perf_counter() - start
    logger.info("%s/%s: %s (%.1f s)", run.part, run.name, metrics.best["test_acc"], seconds)
    return {
        "name": run.name,
        "model": run.train.model,
        "test_acc": metrics.best["test_acc"],
        "best_epoch": metrics.best_epoch,
        "synth": run.synth.to_dict(),
        "train": run.train.to_dict(),
    }


def run_part(part: str, cfg: BenchConfig) -> list[dict]:
    return [run_one(r) for r in part_runs(part, cfg)]


def _acc(results: list[dict], name: str, head: str | None = None) -> float:
    rec = next(r for r in results if r["name"] == name)
    return rec["test_acc"][head or rec["model"]]


def check_part(part: str, results: list[dict]) -> dict:
    """Directional checks for one part: ``{"passed": bool, ...numbers behind the verdict}``."""
    if part == "posture":
        acc = _acc(results, "str")
        return {"passed": acc >= 0.95, "str": acc}
    if part == "rhythm":
        s, t = _acc(results, "str"), _acc(results, "msttr")
        return {"passed": s <= 0.3 and t >= 0.8, "str": s, "msttr": t}
    if part == "micro":
        ms, single = _acc(results, "msttr"), _acc(results, "ttr_k9")
        return {"passed": ms - single >= 0.10 - _EPS, "msttr": ms, "ttr_k9": single, "gap": ms - single}
    if part == "mixed":
        rows = [{"fusion": r["test_acc"]["fusion"], "str": r["test_acc"]["str"], "temporal": r["test_acc"]["ttr"]}
                for r in results]
        margins = [row["fusion"] - max(row["str"], row["temporal"]) for row in rows]
        # 3 of 5 seeds, scaled for other seed counts
        need = math.ceil(0.6 * len(rows))
        wins = sum(m > _EPS for m in margins)
        ok = all(m >= -0.01 - _EPS for m in margins) and wins >= need
        return {"passed": ok, "per_seed": rows, "margins": margins, "wins": wins, "wins_needed": need}
    if part == "velocity":
        pos = [r["test_acc"]["ttr"] for r in results if "_position_" in r["name"]]
        vel = [r["test_acc"]["ttr"] for r in results if "_velocity_" in r["name"]]
        mp, mv = statistics.median(pos), statistics.median(vel)
        return {"passed": mv < mp, "position": pos, "velocity": vel, "median_position": mp, "median_velocity": mv}
    raise ValueError(f"unknown benchmark part {part!r}")


def run_benchmark(cfg: BenchConfig, out: str | Path | None = None) -> dict:
    results, checks, timing = {}, {}, {}
    for part in cfg.parts:
        start = time.perf_counter()
        results[part] = run_part(part, cfg)
        timing[part] = round(time.perf_counter() - start, 2)
        checks[part] = check_part(part, results[part])
    summary = {"config": cfg.to_dict(), "results": results, "checks": checks}
    if out is not None:
        # wall-clock times live apart from the results so reruns compare byte for byte
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return {**summary, "seconds": timing}
