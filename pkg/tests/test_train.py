import csv

import numpy as np
import pytest

from anycsp import checkpoint, cvgraph, nn, policy
from anycsp.baselines import random_search
from anycsp.csp import Constraint, CspInstance
from anycsp.instances import gen_erdos_renyi, reduce_maxcut
from anycsp.policy import PolicyParameters
from anycsp.search import GLOBAL, LOCAL, run_batch
from anycsp.train import (Adam, TrainConfig, discounted_returns, lr_at, policy_gradient, train, train_step,
                          validate)

from helpers import replay_surrogate


def direct_returns(r, lam):
    return [sum(lam ** (k - t) * r[k] for k in range(t, len(r))) for t in range(len(r))]


def test_discounted_returns_examples():
    assert discounted_returns([1, 0, 0], 0.5).tolist() == [1, 0, 0]
    # G_1 = 0.5 * 0.5 + 0.25 * 0.25 by direct summation
    assert discounted_returns([0, 0.5, 0.25], 0.5) == pytest.approx([0.3125, 0.625, 0.25])
    assert discounted_returns([0, 0.5, 0.25], 0.5) == pytest.approx(direct_returns([0, 0.5, 0.25], 0.5))
    r = np.random.default_rng(0).random(12)
    assert discounted_returns(r, 1.0) == pytest.approx(np.cumsum(r[::-1])[::-1])
    assert discounted_returns(r, 0.75) == pytest.approx(direct_returns(r, 0.75))
    two = np.random.default_rng(1).random((6, 3))
    cols = np.stack([discounted_returns(two[:, j], 0.3) for j in range(3)], 1)
    assert np.allclose(discounted_returns(two, 0.3), cols)


def test_lr_decays_exactly_linearly():
    cfg = TrainConfig(steps=1000, lr_start=5e-6, lr_end=5e-7)
    assert lr_at(0, cfg) == 5e-6
    assert lr_at(1000, cfg) == pytest.approx(5e-7, rel=1e-12)
    for s in (1, 250, 999):
        assert lr_at(s, cfg) == pytest.approx(5e-6 + (5e-7 - 5e-6) * s / 1000, rel=1e-12)


def test_config_validation():
    for kw in ({"discount": 0}, {"discount": 1.5}, {"lr_start": 1e-6, "lr_end": 1e-5}, {"batch_size": 0},
               {"mode": "beam"}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def tiny_instance():
    return CspInstance([(0, 1, 2), (0, 1)], [
        Constraint.forbidden((0, 1), [(0, 0), (2, 1)]),
        Constraint.allowed((1,), [(1,)]),
        Constraint.linear((0, 1), (1, -2), "<=", 0),
    ])


@pytest.mark.parametrize("agg", nn.AGGREGATIONS)
def test_policy_gradient_matches_finite_differences(agg):
    p = PolicyParameters(4, agg, seed=3)
    rng = np.random.default_rng(3)
    for _, t in p.named_parameters():
        t.data = t.data + rng.normal(scale=0.3, size=t.data.shape)
    inst = tiny_instance()
    tape = nn.Tape()
    res = run_batch(p, [inst], 6, [np.random.default_rng(5)], tape=tape, keep_assignments=True)
    tr = res.traces[0]
    G = discounted_returns(tr.rewards, 0.75)
    assert np.any(G)
    grads = policy_gradient(p, res, tape, 0.75, 1e-5)

    def J():
        return -replay_surrogate(p, inst, tr.initial_assignment, tr.assignments, G, 1e-5)

    worst = 0.0
    for name, t in p.named_parameters():
        flat = t.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp = J()
            flat[i] = orig - 1e-5
            fm = J()
            flat[i] = orig
            num = (fp - fm) / 2e-5
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    assert worst < 1e-4


def test_local_mode_gradient_matches_replay():
    p = PolicyParameters(4, "mean", seed=4)
    inst = tiny_instance()
    tape = nn.Tape()
    res = run_batch(p, [inst], 5, [np.random.default_rng(2)], mode=LOCAL, tape=tape, keep_assignments=True)
    tr = res.traces[0]
    G = discounted_returns(tr.rewards, 0.75)
    grads = policy_gradient(p, res, tape, 0.75, 1e-5)

    def J():
        g = cvgraph.build(inst)
        state, prev, total = policy.init_state(p, g), tr.initial_assignment, 0.0
        for t, (a, pick) in enumerate(zip(tr.assignments, res.picks)):
            g.relabel(prev)
            phi, state = policy.step(p, g, state, softmax_over="instance")
            total += G[t] * np.log(phi.data[pick[0], 0] + 1e-5)
            prev = a
        return -total

    t = dict(p.named_parameters())["O.1.b"]
    orig = t.data[0, 0]
    t.data[0, 0] = orig + 1e-6
    fp = J()
    t.data[0, 0] = orig - 1e-6
    fm = J()
    t.data[0, 0] = orig
    # a bias shared by every score cancels in a softmax: gradient is zero
    assert abs((fp - fm) / 2e-6) < 1e-8 and abs(grads["O.1.b"][0, 0]) < 1e-8
    W = dict(p.named_parameters())["G.z.W"]
    orig = W.data[1, 2]
    W.data[1, 2] = orig + 1e-6
    fp = J()
    W.data[1, 2] = orig - 1e-6
    fm = J()
    W.data[1, 2] = orig
    assert (fp - fm) / 2e-6 == pytest.approx(grads["G.z.W"][1, 2], rel=1e-4, abs=1e-10)


def test_zero_rewards_give_zero_gradient_and_only_adam_counter_moves():
    inst = CspInstance([(0, 1), (0, 1)], [Constraint.forbidden((0, 1), [])])  # always satisfied
    p = PolicyParameters(4, seed=0)
    before = p.state_dict()
    opt = Adam(p)
    cfg = TrainConfig(steps=10, batch_size=3, T=4, d=4)
    stats = train_step(p, opt, [inst] * 3, cfg, [np.random.default_rng(i) for i in range(3)], 1e-3)
    assert stats["grad_norm"] == 0.0 and stats["mean_total_reward"] == 0.0
    assert opt.t == 1
    for k, v in p.state_dict().items():
        assert np.array_equal(v, before[k])


def test_gradient_scales_linearly_with_rewards():
    p = PolicyParameters(4, seed=1)
    inst = tiny_instance()
    tape = nn.Tape()
    res = run_batch(p, [inst], 6, [np.random.default_rng(7)], tape=tape)
    base = policy_gradient(p, res, tape, 0.75, 1e-5)
    # rerun the identical rollout and scale its rewards
    tape = nn.Tape()
    res2 = run_batch(p, [inst], 6, [np.random.default_rng(7)], tape=tape)
    res2.traces[0].rewards = [3.5 * r for r in res2.traces[0].rewards]
    scaled = policy_gradient(p, res2, tape, 0.75, 1e-5)
    for k in base:
        assert np.allclose(scaled[k], 3.5 * base[k], rtol=1e-12, atol=1e-15)


def test_policy_gradient_requires_tape():
    p = PolicyParameters(4)
    res = run_batch(p, [tiny_instance()], 2, [np.random.default_rng(0)])
    with pytest.raises(ValueError):
        policy_gradient(p, res, None, 0.75, 1e-5)


def test_adam_matches_reference_update():
    p = PolicyParameters(4, seed=2)
    opt = Adam(p)
    rng = np.random.default_rng(0)
    x0 = p.h.data.copy()
    m = v = np.zeros_like(x0)
    x = x0
    for t in range(1, 4):
        grads = {k: rng.normal(size=tt.data.shape) for k, tt in p.named_parameters()}
        g = grads["h"]
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        opt.update(p, grads, 0.01)
    assert np.allclose(p.h.data, x, rtol=1e-13)


def maxcut_sampler(rng):
    return reduce_maxcut(gen_erdos_renyi(8, 0.5, rng))


def small_config(**kw):
    base = dict(steps=4, batch_size=2, T=3, d=4, aggregation="sum", val_every=2, T_val=5, seed=11,
                lr_start=1e-3, lr_end=1e-4, timing=False)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(tmp_path):
    val = [maxcut_sampler(np.random.default_rng(50 + i)) for i in range(3)]
    a = train(small_config(), maxcut_sampler, tmp_path / "a", val_set=val)
    b = train(small_config(), maxcut_sampler, tmp_path / "b", val_set=val)
    for k, v in a.state_dict().items():
        assert np.array_equal(v, b.state_dict()[k])
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    assert not np.array_equal(a.h.data, PolicyParameters(4, "sum", seed=11).h.data)


def test_resume_continues_bit_exactly(tmp_path):
    val = [maxcut_sampler(np.random.default_rng(60 + i)) for i in range(2)]
    full = train(small_config(val_every=1), maxcut_sampler, tmp_path / "full", val_set=val)

    class Stop(Exception):
        pass

    def interrupt(step, stats):
        if step == 3:
            raise Stop

    with pytest.raises(Stop):
        train(small_config(val_every=1), maxcut_sampler, tmp_path / "part", val_set=val, progress=interrupt)
    resumed = train(small_config(val_every=1), maxcut_sampler, tmp_path / "part", val_set=val, resume=True)
    for k, v in full.state_dict().items():
        assert np.array_equal(v, resumed.state_dict()[k])
    assert (tmp_path / "full" / "train_log.csv").read_bytes() == (tmp_path / "part" / "train_log.csv").read_bytes()


def test_best_checkpoint_has_lowest_logged_metric(tmp_path):
    val = [maxcut_sampler(np.random.default_rng(70 + i)) for i in range(4)]
    cfg = small_config(steps=6, val_every=1)
    train(cfg, maxcut_sampler, tmp_path, val_set=val)
    rows = list(csv.DictReader(open(tmp_path / "val_log.csv")))
    metrics = [float(r["val_unsat"]) for r in rows]
    best_step = int(np.argmin(metrics))  # earliest minimum wins ties
    best = checkpoint.load(tmp_path / "best.ckpt")
    assert validate(best, val, cfg.T_val, seed=cfg.seed) == metrics[best_step]
    assert all(metrics[best_step] <= m for m in metrics[best_step:])


def test_checkpoint_roundtrip_reproduces_validation(tmp_path):
    p = PolicyParameters(4, "mean", use_uc=False, seed=8)
    val = [maxcut_sampler(np.random.default_rng(80 + i)) for i in range(3)]
    checkpoint.save(p, tmp_path / "m.ckpt", seed=8)
    q = checkpoint.load(tmp_path / "m.ckpt")
    assert q.hyperparameters() == p.hyperparameters()
    assert validate(p, val, 10, seed=1) == validate(q, val, 10, seed=1)
    assert checkpoint.dumps(p) == checkpoint.dumps(q)


def test_corrupt_checkpoint_rejected(tmp_path):
    blob = checkpoint.dumps(PolicyParameters(4))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXXXX" + blob[6:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-8])


def test_validate_perfect_and_monotone():
    sat = [CspInstance([(0, 1)], [Constraint.forbidden((0,), [])]) for _ in range(3)]
    assert validate(PolicyParameters(4), sat, 5) == 0.0


def test_uniform_policy_validation_matches_random_search():
    p = PolicyParameters(4, seed=0)
    for lin in p.O.layers:
        lin.W.data[:] = 0
        lin.b.data[:] = 0
    insts = [maxcut_sampler(np.random.default_rng(90 + i)) for i in range(40)]
    ours = validate(p, insts, 20, seed=3)
    theirs = np.mean([
        (1 - random_search(inst, 21, np.random.default_rng(1000 + i), stop_on_solution=True).best_quality)
        * len(inst.constraints) for i, inst in enumerate(insts)])
    # both are best-of-21 uniform samples; the means agree to sampling noise
    assert abs(ours - theirs) < 0.5
