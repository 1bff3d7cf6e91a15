"""REINFORCE training with Adam and validation-based model selection."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint, nn
from ._alloc import tune_allocator
from .csp import CspInstance
from .policy import PolicyParameters
from .search import GLOBAL, MODES, BatchRollout, instance_rngs, run_batch

log = logging.getLogger(__name__)

LOG_FIELDS = ["step", "mean_total_reward", "mean_best_quality", "lr", "wall_ms"]


@dataclass
class TrainConfig:
    steps: int = 500_000
    batch_size: int = 25
    T: int = 40
    discount: float = 0.75
    lr_start: float = 5e-6
    lr_end: float = 5e-7
    eps: float = 1e-5
    d: int = 128
    aggregation: str = "max"
    use_uc: bool = True
    mode: str = GLOBAL
    val_every: int = 1000
    T_val: int = 200
    seed: int = 0
    clip: float | None = None
    timing: bool = True

    def __post_init__(self):
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.batch_size < 1 or self.steps < 1 or self.T < 1:
            raise ValueError("steps, batch_size and T must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear decay from ``lr_start`` at step 0 to ``lr_end`` at ``steps``."""
    return config.lr_start + (config.lr_end - config.lr_start) * step / config.steps


class Adam:
    def __init__(self, params: PolicyParameters, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.named_parameters()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.named_parameters()}

    def update(self, params: PolicyParameters, grads: dict, lr: float) -> None:
        """One descent step on ``grads``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.named_parameters():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        out.update({f"m:{k}": v for k, v in self.m.items()})
        out.update({f"v:{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m:{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v:{k}"], dtype=np.float64)


def discounted_returns(rewards, discount: float) -> np.ndarray:
    """``G_t = sum_{k >= t} discount^(k-t) r_k``; works along axis 0."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + discount * acc
        out[t] = acc
    return out


def surrogate(res: BatchRollout, returns: np.ndarray, eps: float, tape, scale: float = 1.0) -> nn.Tensor:
    """``scale * sum_t sum_picks G_t log(phi + eps)`` on the recorded tape."""
    total = None
    for t, (phi, picks, inst) in enumerate(zip(res.probs, res.picks, res.pick_inst)):
        w = scale * returns[t][inst]
        if not np.any(w):
            continue
        term = nn.log_pick_sum(phi, picks, w, eps, tape)
        total = term if total is None else nn.add(total, term, tape)
    return total


def policy_gradient(params: PolicyParameters, res: BatchRollout, tape, discount: float, eps: float) -> dict:
    """Gradient of the batch-mean ascent objective, negated for descent.

    Returns a zero gradient when every return is zero.
    """
    if tape is None or not res.probs:
        raise ValueError("policy_gradient needs a rollout recorded on a tape")
    G = discounted_returns(res.rewards(), discount)
    params.zero_grad()
    loss = surrogate(res, G, eps, tape, scale=-1.0 / len(res.traces))
    if loss is not None:
        nn.backward(tape, loss)
    else:
        tape.ops.clear()
    return params.grads()


def _global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def train_step(params: PolicyParameters, opt: Adam, instances: Sequence[CspInstance], config: TrainConfig,
               rngs: Sequence[np.random.Generator], lr: float) -> dict:
    """Sample one trajectory per instance, then one Adam step on the batch mean."""
    tape = nn.Tape()
    res = run_batch(params, instances, config.T, rngs, mode=config.mode, tape=tape)
    grads = policy_gradient(params, res, tape, config.discount, config.eps)
    norm = _global_norm(grads)
    skipped = not np.isfinite(norm)
    if skipped:
        log.warning("non-finite gradient; update skipped")
    else:
        if config.clip is not None and norm > config.clip:
            grads = {k: g * (config.clip / norm) for k, g in grads.items()}
        opt.update(params, grads, lr)
    return {
        "mean_total_reward": float(np.mean([t.total_reward for t in res.traces])),
        "mean_best_quality": float(np.mean([t.best_quality for t in res.traces])),
        "grad_norm": norm,
        "skipped": skipped,
    }


def validate(params: PolicyParameters, instances: Sequence[CspInstance], T_val: int, seed: int = 0,
             chunk: int = 32, mode: str = GLOBAL) -> float:
    """Mean number of unsatisfied constraints of the best assignment found."""
    unsat = []
    for lo in range(0, len(instances), chunk):
        part = instances[lo:lo + chunk]
        res = run_batch(params, part, T_val, instance_rngs(seed + lo, len(part)), mode=mode,
                        stop_on_solution=True)
        unsat.extend(t.unsat_count for t in res.traces)
    return float(np.mean(unsat)) if unsat else 0.0


# training loop ----------------------------------------------------------


def _save_state(path: Path, step: int, opt: Adam, rng: np.random.Generator, best: float) -> None:
    arrays = opt.state_dict()
    arrays["step"] = np.array(step)
    arrays["best"] = np.array(best)
    arrays["rng"] = np.frombuffer(json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8)
    with open(path.with_name(path.name + ".tmp"), "wb") as f:
        np.savez(f, **arrays)
    path.with_name(path.name + ".tmp").replace(path)


def _load_state(path: Path, opt: Adam, rng: np.random.Generator) -> tuple[int, float]:
    with np.load(path) as z:
        opt.load_state_dict(z)
        rng.bit_generator.state = json.loads(z["rng"].tobytes().decode())
        return int(z["step"]), float(z["best"])


def _truncate_log(path: Path, step: int) -> None:
    """Drop rows logged after ``step`` (written after the last checkpoint)."""
    if not path.exists():
        return
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    keep = rows[:1] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(keep)


def train(config: TrainConfig, sampler: Callable[[np.random.Generator], CspInstance],
          out_dir, val_set: Sequence[CspInstance] | None = None, resume: bool = False,
          params: PolicyParameters | None = None, progress: Callable[[int, dict], None] | None = None
          ) -> PolicyParameters:
    """Train a policy, writing ``train_log.csv``, ``last.ckpt`` and ``best.ckpt``.

    ``sampler`` draws a fresh training instance from a generator. With
    ``resume`` the run continues from ``last.ckpt`` and ``train_state.npz``.
    """
    tune_allocator()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    last_path, best_path, state_path = out / "last.ckpt", out / "best.ckpt", out / "train_state.npz"
    log_path, val_path = out / "train_log.csv", out / "val_log.csv"
    (out / "config.json").write_text(json.dumps(asdict(config), sort_keys=True) + "\n", encoding="utf-8")

    rng = np.random.default_rng(config.seed)
    start, best = 0, float("inf")
    if resume and last_path.exists():
        params = checkpoint.load(last_path)
        if params.hyperparameters() != {"d": config.d, "aggregation": config.aggregation, "use_uc": config.use_uc}:
            raise checkpoint.CheckpointError("checkpoint hyperparameters do not match the configuration")
        opt = Adam(params)
        start, best = _load_state(state_path, opt, rng)
        for p in (log_path, val_path):
            _truncate_log(p, start)
    else:
        if params is None:
            params = PolicyParameters(config.d, config.aggregation, config.use_uc, seed=config.seed)
        opt = Adam(params)
        for p in (log_path, val_path):
            p.unlink(missing_ok=True)

    new_log = not log_path.exists()
    t0 = time.perf_counter()
    with open(log_path, "a", newline="", encoding="utf-8") as lf, open(val_path, "a", newline="", encoding="utf-8") as vf:
        lw, vw = csv.writer(lf), csv.writer(vf)
        if new_log:
            lw.writerow(LOG_FIELDS)
            vw.writerow(["step", "val_unsat"])
        for s in range(start, config.steps):
            batch = [sampler(rng) for _ in range(config.batch_size)]
            rngs = [np.random.default_rng(int(x)) for x in rng.integers(0, 2**63 - 1, size=config.batch_size)]
            lr = lr_at(s, config)
            stats = train_step(params, opt, batch, config, rngs, lr)
            ms = (time.perf_counter() - t0) * 1000.0 if config.timing else 0.0
            lw.writerow([s + 1, repr(stats["mean_total_reward"]), repr(stats["mean_best_quality"]), repr(lr), f"{ms:.1f}"])
            done = s + 1
            if val_set and (done % config.val_every == 0 or done == config.steps):
                metric = validate(params, val_set, config.T_val, seed=config.seed)
                vw.writerow([done, repr(metric)])
                vf.flush()
                if metric < best:
                    best = metric
                    checkpoint.save(params, best_path, seed=config.seed)
            if progress is not None:
                progress(done, stats)
            if done % max(config.val_every, 1) == 0 or done == config.steps:
                lf.flush()
                checkpoint.save(params, last_path, seed=config.seed)
                _save_state(state_path, done, opt, rng, best)
    if not val_set:
        checkpoint.save(params, best_path, seed=config.seed)
    return params
