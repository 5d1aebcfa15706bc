"""Generate -> attack -> invert -> recover -> score pipeline over many trials.

Every random draw comes from an ``RngStream`` keyed by the global seed and a
stream id derived from (trial, purpose, arm, slot), so a trial's outcome does
not depend on how many other trials run or in which process.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ringlab import solvers, watermark
from ringlab.attacks import apply_attack
from ringlab.errors import NumericalDivergence, SingularityError
from ringlab.grid import RngStream, sample_gaussian
from ringlab.models import Condition

ARMS = ("watermarked", "clean")
PROMPT, LATENT, ATTACK = 0, 1, 2
KEY_STREAM = 2**64 - 1


def trial_stream(seed, trial, purpose, arm=0, slot=0):
    """Stream id layout: trial | purpose (4 bits) | arm (4 bits) | slot (16 bits)."""
    return RngStream(seed, (((trial << 4) | purpose) << 4 | arm) << 16 | slot)


@dataclass
class TrialRecord:
    trial: int
    arm: str
    attack: str
    guidance: str
    mean_l1: float
    nmae: float
    nmse: float
    roundtrip_nmse: float
    fp_converged: str  # "1", "0", or "fail" when the solver diverged

    @property
    def failed(self):
        return self.fp_converged == "fail"


class Lab:
    """Model, key and mask shared by every trial of one experiment config."""

    def __init__(self, config):
        self.config = config
        self.model = config.build_model()
        c, h, w = config.latent_shape
        wm = config.watermark
        self.mask = watermark.make_ring_mask(h, w, wm.radius, wm.channel, wm.center, channels=c)
        self.key = watermark.make_ring_key(self.mask, RngStream(config.key_seed, KEY_STREAM), wm.pattern)
        self.key_masked = self.key.masked(self.mask)
        self.grid = (solvers.TimeGrid.uniform_rf(config.solver.steps) if config.family == "rf"
                     else solvers.TimeGrid.uniform_ddim(config.solver.steps, self.model.schedule.steps))

    def generate(self, x_T, cond, trajectory=None):
        cfg = self.config.solver
        if self.config.family == "rf":
            return solvers.rf_sample(self.model, x_T, cond, cfg, self.grid, trajectory)
        if self.config.inversion == "dpmpp2":
            return solvers.dpmpp_sample(self.model, x_T, cond, cfg, 2, self.grid, trajectory)
        return solvers.ddim_sample(self.model, x_T, cond, cfg, self.grid, trajectory)

    def invert(self, x_0, cond, trajectory=None):
        cfg, mode = self.config.solver, self.config.inversion
        if self.config.family == "rf":
            fn = solvers.rf_invert_implicit if mode == "implicit" else solvers.rf_invert_naive
            return fn(self.model, x_0, cond, cfg, self.grid, trajectory)
        if mode == "exact":
            return solvers.ddim_invert_exact(self.model, x_0, cond, cfg, self.grid, trajectory)
        if mode == "dpmpp2":
            return solvers.dpmpp_invert(self.model, x_0, cond, cfg, 2, self.grid, trajectory)
        return solvers.ddim_invert_naive(self.model, x_0, cond, cfg, self.grid, trajectory)

    def initial_latent(self, trial, arm_index):
        c, h, w = self.config.latent_shape
        x_T = sample_gaussian(trial_stream(self.config.global_seed, trial, LATENT, arm_index), c, h, w)
        if ARMS[arm_index] == "watermarked":
            x_T = watermark.embed(x_T, self.key, self.mask)
        return x_T

    def run_trial(self, trial):
        """All scenario records of one trial, watermarked arm first."""
        cfg = self.config
        prompt = trial_stream(cfg.global_seed, trial, PROMPT).integers(self.model.n_components)
        gen_cond = Condition.exact(prompt)
        records = []
        for arm_index, arm in enumerate(ARMS):
            x_T = self.initial_latent(trial, arm_index)
            try:
                x_0 = self.generate(x_T, gen_cond)
            except (NumericalDivergence, SingularityError):
                x_0 = None
            for slot, (guidance, attack) in enumerate(cfg.scenarios()):
                records.append(self._score(trial, arm, arm_index, slot, x_T, x_0, prompt, guidance, attack))
        return records

    def _score(self, trial, arm, arm_index, slot, x_T, x_0, prompt, guidance, attack):
        cfg = self.config
        failed = TrialRecord(trial, arm, attack.tag, guidance.tag, math.nan, math.nan, math.nan, math.nan, "fail")
        if x_0 is None:
            return failed
        rng = trial_stream(cfg.global_seed, trial, ATTACK, arm_index, slot)
        attacked = apply_attack(x_0, attack, rng)
        cond = guidance.condition(prompt, self.model.n_components)
        try:
            inv = self.invert(attacked, cond)
        except (NumericalDivergence, SingularityError):
            return failed
        w_hat = watermark.recover_key(inv.latent, self.mask)
        metrics = watermark.extraction_metrics(w_hat, self.key_masked)
        roundtrip = float(np.sum((inv.latent - x_T) ** 2) / np.sum(x_T**2))
        return TrialRecord(trial, arm, attack.tag, guidance.tag, metrics.mean_l1, metrics.nmae,
                           metrics.nmse, roundtrip, "1" if inv.converged else "0")


_WORKER_LAB = None


def _init_worker(config):
    global _WORKER_LAB
    _WORKER_LAB = Lab(config)


def _worker_trial(trial):
    return _WORKER_LAB.run_trial(trial)


def run_trials(config, trials=None, workers=None):
    """Run ``trials`` (default: all) and return records sorted by (trial, arm, scenario)."""
    trials = list(range(config.trials)) if trials is None else list(trials)
    workers = config.workers if workers is None else workers
    if workers <= 1 or len(trials) <= 1:
        lab = Lab(config)
        batches = [lab.run_trial(t) for t in trials]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config,)) as pool:
            batches = list(pool.map(_worker_trial, trials, chunksize=max(1, len(trials) // (4 * workers))))
    ordered = sorted(zip(trials, batches), key=lambda tb: tb[0])
    return [rec for _, batch in ordered for rec in batch]


def run_trial(config, trial_index):
    return Lab(config).run_trial(trial_index)


def run_experiment(config, output_dir=None, workers=None):
    """Run every trial, then write trials.csv, histogram.csv, report.md and report.json."""
    from ringlab import report

    out = output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    records = run_trials(config, workers=workers)
    trials_path = os.path.join(out, "trials.csv")
    report.write_trials_csv(trials_path, records)
    return report.write_report(report.read_trials_csv(trials_path), out,
                               fpr_levels=config.fpr_levels, bins=config.kld_bins)
