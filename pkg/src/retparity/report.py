"""Report envelopes, run configs and multi-seed training orchestration."""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .align import LOG_COLUMNS, PROFILES, TrainConfig, make_trainer, parse_ratio, train
from .envs import EnvPair, RecSimConfig, recsim_pair, tabular_pair
from .errors import ValidationError
from .io import file_digest, load_pair, write_csv, write_json

SCHEMA_VERSION = 1


def build_id() -> str:
    """Hash of the package sources, standing in for a commit id."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def make_report(command: str, inputs: list, results: dict, seeds=(), started: Optional[float] = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "inputs_digest": file_digest(inputs) if inputs else None,
        "results": results,
        "provenance": {
            "seeds": list(seeds),
            "build_id": build_id(),
            "version": __version__,
            "wall_clock_seconds": None if started is None else round(time.time() - started, 3),
        },
    }


@dataclass
class RunConfig:
    """Parsed ``train`` config: trainer settings, environment, seed and ratio grids."""

    trainer: TrainConfig
    env: dict
    seeds: list = field(default_factory=lambda: [0])
    ratios: list = field(default_factory=lambda: [(1, 0)])
    export_features: int = 0
    base_dir: Path = Path(".")

    TOP_KEYS = ("trainer", "env", "seeds", "ratios", "export_features")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "RunConfig":
        unknown = sorted(set(d) - set(cls.TOP_KEYS))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        tdoc = dict(d.get("trainer", {}))
        profile = tdoc.pop("profile", "desk")
        if profile not in PROFILES:
            raise ValidationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        trainer = TrainConfig.from_dict(tdoc, PROFILES[profile])
        env = dict(d.get("env", {"kind": "recsim"}))
        kind = env.get("kind", "recsim")
        allowed = {"recsim": {"kind", "recsim", "discount"},
                   "tabular": {"kind", "pair", "horizon", "lambda"}}
        if kind not in allowed:
            raise ValidationError(f"env.kind must be 'recsim' or 'tabular', got {kind!r}")
        extra = sorted(set(env) - allowed[kind])
        if extra:
            raise ValidationError(f"unknown env keys for {kind}: {', '.join(extra)}")
        if kind == "recsim":
            RecSimConfig.from_dict(env.get("recsim", {}))
            disc = env.get("discount", 0.9)
            if not (0.0 <= disc < 1.0):
                raise ValidationError("env.discount must lie in [0, 1)")
        else:
            if not (isinstance(env.get("pair"), list) and len(env["pair"]) == 2):
                raise ValidationError("tabular env needs 'pair': [mdp0.json, mdp1.json]")
            if int(env.get("horizon", 0)) < 1:
                raise ValidationError("tabular env needs a positive 'horizon'")
        seeds = d.get("seeds", [0])
        if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
            raise ValidationError("seeds must be a nonempty list of nonnegative integers")
        ratios = [parse_ratio(r) for r in d.get("ratios", [f"{trainer.ratio[0]}:{trainer.ratio[1]}"])]
        for r in ratios:
            TrainConfig.from_dict({"ratio": r}, trainer)
        exp = int(d.get("export_features", 0))
        if exp < 0:
            raise ValidationError("export_features must be >= 0")
        return cls(trainer, env, list(seeds), ratios, exp, base_dir)

    def input_files(self) -> list:
        if self.env.get("kind") == "tabular":
            return [self.base_dir / p for p in self.env["pair"]]
        return []

    def make_envs(self) -> EnvPair:
        if self.env.get("kind", "recsim") == "recsim":
            return recsim_pair(RecSimConfig.from_dict(self.env.get("recsim", {})),
                               self.env.get("discount", 0.9))
        p0, p1 = self.input_files()
        return tabular_pair(load_pair(p0, p1, self.env.get("lambda", 0.5)), int(self.env["horizon"]))


def ratio_tag(r) -> str:
    return f"{r[0]}-{r[1]}"


def _one_run(rc: RunConfig, ratio, seed: int, out: Path) -> tuple:
    cfg = TrainConfig.from_dict({"ratio": ratio, "seed": seed}, rc.trainer)
    envs = rc.make_envs()
    trainer = make_trainer(envs, cfg)
    rows = train(trainer, envs)
    write_csv(out / f"run_ratio{ratio_tag(ratio)}_seed{seed}.csv", LOG_COLUMNS, rows)
    if rc.export_features:
        ev = trainer.evaluate(envs, cfg.eval_episodes, seed, tag=10 ** 6,
                              sample_features=rc.export_features)
        for g in (0, 1):
            feats = ev[f"features{g}"]
            cols = [f"f{i}" for i in range(feats.shape[1])]
            write_csv(out / f"features_ratio{ratio_tag(ratio)}_seed{seed}_group{g}.csv", cols,
                      [dict(zip(cols, row)) for row in feats])
    return ratio, seed, rows


AGG_COLUMNS = ("ratio", "iteration", "n_seeds", "overall_return_mean", "overall_return_se",
               "gap_mean", "gap_se", "return0_mean", "return1_mean", "alignment_loss_mean")


def _mean_se(values) -> tuple:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(runs: dict) -> list[dict]:
    """Per (ratio, iteration): mean and standard error across seeds."""
    out = []
    for ratio in sorted({r for r, _ in runs}):
        per_seed = [runs[k] for k in sorted(runs) if k[0] == ratio]
        for i, row in enumerate(per_seed[0]):
            vals = [rows[i] for rows in per_seed]
            om, ose = _mean_se([v["overall_return"] for v in vals])
            gm, gse = _mean_se([v["gap"] for v in vals])
            out.append({"ratio": f"{ratio[0]}:{ratio[1]}", "iteration": row["iteration"],
                        "n_seeds": len(vals), "overall_return_mean": om, "overall_return_se": ose,
                        "gap_mean": gm, "gap_se": gse,
                        "return0_mean": float(np.mean([v["return0"] for v in vals])),
                        "return1_mean": float(np.mean([v["return1"] for v in vals])),
                        "alignment_loss_mean": float(np.mean([v["alignment_loss"] for v in vals]))})
    return out


def summarize(runs: dict) -> dict:
    """Final-window (last 10% of evaluations) gap and return per ratio."""
    summary = {}
    for ratio in sorted({r for r, _ in runs}):
        gaps, overall, a_first, a_last = [], [], [], []
        for (r, seed), rows in sorted(runs.items()):
            if r != ratio:
                continue
            k = max(1, len(rows) // 10)
            gaps.append(np.mean([x["gap"] for x in rows[-k:]]))
            overall.append(np.mean([x["overall_return"] for x in rows[-k:]]))
            losses = [x["alignment_loss"] for x in rows if np.isfinite(x["alignment_loss"])]
            if losses:
                a_first.append(losses[0])
                a_last.append(losses[-1])
        summary[f"{ratio[0]}:{ratio[1]}"] = {
            "final_gap_mean": float(np.mean(gaps)),
            "final_overall_return_mean": float(np.mean(overall)),
            "alignment_loss_first_mean": float(np.mean(a_first)) if a_first else None,
            "alignment_loss_last_mean": float(np.mean(a_last)) if a_last else None,
        }
    return summary


def run_grid(rc: RunConfig, out: Path, threads: Optional[int] = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if threads is None:
        threads = max(1, int(os.environ.get("RPY_THREADS", "1")))
    jobs = [(r, s) for r in rc.ratios for s in rc.seeds]
    if threads == 1:
        results = [_one_run(rc, r, s, out) for r, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _one_run(rc, j[0], j[1], out), jobs))
    runs = {(r, s): rows for r, s, rows in results}
    write_csv(out / "aggregate.csv", AGG_COLUMNS, aggregate(runs))
    return runs
