"""Acceptance suite: one test per shipping criterion, each printing a
PASS/FAIL line with its measured numbers.

Run with `pytest tests/test_acceptance.py -v -s`. The separability experiment
(criteria 6-8) trains two layers once per session and is shared via a module
fixture; its achieved values are frozen as exact constants from the first
recorded run, so a rerun must reproduce them bit for bit. Regenerate the
constants only if the numerical stack (numpy/BLAS build) changes.
"""

import json
import math
import time
from collections import defaultdict

import numpy as np
import pytest

from rotmole.adapter import (
    AdapterConfig,
    count_trainable_routing_params,
    forward,
    init_adapter,
    mlp_hidden_dim,
    mlp_variant,
    route,
    routing_param_count,
)
from rotmole.autograd import grad_check, gradcheck_trials, randomize_layer
from rotmole.cli import ExperimentConfig, run_experiment
from rotmole.numkit import Rng
from rotmole.rotation import (
    apply_rotation,
    build_plane,
    decompose_transform,
    rotation_matrix_r,
)
from rotmole.synth import (
    DatasetConfig,
    analytic_baseline_floor,
    make_rotation_separable_tasks,
    sample_batch,
)
from rotmole.trainer import TrainConfig

# ---------------------------------------------------------------------------
# Separability experiment configuration (criteria 6-8) and frozen goldens.
# ---------------------------------------------------------------------------

SEP_DATASET = DatasetConfig(
    d=16,
    r=3,
    n_task=2,
    noise_std=0.01,
    samples_per_task_per_batch=32,
    phi_separation=math.pi,  # two tasks at -pi/2 and +pi/2
    seed=2024,
)
SEP_EXPERIMENT = ExperimentConfig(
    adapter=AdapterConfig(d=16, r=3, n=1, k=1, mode="rotmole"),
    dataset=SEP_DATASET,
    train=TrainConfig(steps=3000, lr0=3e-4, seed=42, eval_every=500, theta_log_every=500),
    output_dir="unused",
)
FLOOR_MC_SAMPLES = 10_000

# Exact values achieved by the first recorded run (deterministic rerun contract).
GOLDEN_ROTMOLE_PER_TASK = {0: 332.6739045772004, 1: 300.39694100136313}
GOLDEN_SCALING_PER_TASK = {0: 2900.343378010911, 1: 2405.273797276106}
GOLDEN_FLOOR = 1798.4746637091375


def report(criterion, ok, detail):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def separability_runs():
    start = time.time()
    specs = make_rotation_separable_tasks(SEP_DATASET, Rng(SEP_DATASET.seed))
    floor = analytic_baseline_floor(specs, SEP_DATASET, FLOOR_MC_SAMPLES)
    rot = run_experiment(SEP_EXPERIMENT, mode="rotmole")
    sca = run_experiment(SEP_EXPERIMENT, mode="scaling_only")
    return {"rot": rot, "sca": sca, "floor": floor, "elapsed": time.time() - start}


def test_criterion_1_rotation_algebra():
    start = time.time()
    rng = Rng(1001)
    worst = 0.0
    for trial in range(1000):
        r = 2 + trial % 7
        u, q = rng.normals(r), rng.normals(r)
        theta = rng.uniform(-math.pi, math.pi)
        plane = build_plane(u, q)
        if plane.degenerate:
            continue
        rot = rotation_matrix_r(plane, theta)
        worst = max(worst, float(np.abs(rot.T @ rot - np.eye(r)).max()))
        worst = max(worst, abs(float(np.linalg.det(rot)) - 1.0))
        w = rng.normals(r)
        w -= float(w @ plane.e1) * plane.e1 + float(w @ plane.e2) * plane.e2
        worst = max(worst, float(np.abs(rot @ w - w).max()))
        worst = max(worst, float(np.abs(rot @ u - apply_rotation(u, plane, theta)).max()))
    elapsed = time.time() - start
    report(1, worst < 1e-10 and elapsed < 5.0, f"max residual {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_decomposition_theorem():
    start = time.time()
    rng = Rng(1002)
    worst = 0.0
    for trial in range(1000):
        dim = 2 + trial % 5
        u, v = rng.normals(dim), rng.normals(dim)
        scale, angle, plane = decompose_transform(u, v)
        rec = scale * apply_rotation(u, plane, angle)
        worst = max(worst, float(np.abs(rec - v).max()))
    elapsed = time.time() - start
    report(2, worst < 1e-10 and elapsed < 2.0, f"max reconstruction {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_reduction_identity():
    start = time.time()
    rng = Rng(1003)
    worst = 0.0
    for layer_idx in range(100):
        r = 2 + layer_idx % 3
        seed = 5000 + layer_idx
        rot_layer = init_adapter(AdapterConfig(d=8, r=r, n=4, k=2, mode="rotmole"), Rng(seed))
        sca_layer = init_adapter(
            AdapterConfig(d=8, r=r, n=4, k=2, mode="scaling_only"), Rng(seed)
        )
        b = rng.normals(8 * r).reshape(8, r)
        for er, es in zip(rot_layer.experts, sca_layer.experts):
            er.b[...] = b
            es.b[...] = b
        for _ in range(100):
            x = rng.normals(8)
            y_rot, _ = forward(rot_layer, x)
            y_sca, _ = forward(sca_layer, x)
            worst = max(worst, float(np.abs(y_rot - y_sca).max()))
    elapsed = time.time() - start
    report(3, worst < 1e-12 and elapsed < 5.0, f"max deviation {worst:.2e}, {elapsed:.1f}s")


def test_criterion_4_gradient_certification():
    start = time.time()
    sweep = [
        ("rotmole", 2, 1, 1),
        ("rotmole", 2, 2, 1),
        ("rotmole", 2, 4, 2),
        ("rotmole", 3, 1, 1),
        ("rotmole", 3, 2, 2),
        ("rotmole", 3, 4, 2),
        ("rotmole", 4, 2, 1),
        ("rotmole", 4, 4, 2),
        ("scaling_only", 2, 2, 2),
        ("scaling_only", 2, 4, 2),
        ("scaling_only", 3, 1, 1),
        ("scaling_only", 3, 4, 2),
        ("scaling_only", 4, 2, 1),
        ("scaling_only", 4, 4, 2),
        ("mlp_gate", 2, 2, 1),
        ("mlp_gate", 2, 4, 2),
        ("mlp_gate", 3, 2, 2),
        ("mlp_gate", 3, 4, 2),
        ("mlp_gate", 4, 1, 1),
        ("mlp_gate", 4, 4, 2),
    ]
    assert len(sweep) == 20
    worst = 0.0
    for idx, (mode, r, n, k) in enumerate(sweep):
        config = AdapterConfig(
            d=8, r=r, n=n, k=k, mode=mode, mlp_hidden=5 if mode == "mlp_gate" else None
        )
        (rep,) = gradcheck_trials(config, trials=1, seed=9000 + idx, h=1e-5, tol=1e-4)
        worst = max(worst, max(g.max_rel_err for g in rep.groups))
        assert rep.passed, (mode, r, n, k, rep.to_doc())
    elapsed = time.time() - start
    report(4, worst < 1e-4 and elapsed < 60.0, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_5_parameter_accounting():
    checks = []
    for d, n in ((8, 4), (32, 6)):
        sca = AdapterConfig(d=d, r=2, n=n, k=1, mode="scaling_only")
        checks.append(count_trainable_routing_params(sca) == d * n)
        rot2 = AdapterConfig(d=d, r=2, n=n, k=1, mode="rotmole")
        checks.append(count_trainable_routing_params(rot2) == 2 * d * n)
        rot4 = AdapterConfig(d=d, r=4, n=n, k=1, mode="rotmole")
        checks.append(count_trainable_routing_params(rot4) == 2 * d * n + 4 * n)
        mlp = mlp_variant(rot4)
        checks.append(
            count_trainable_routing_params(mlp) == d * mlp.mlp_hidden + mlp.mlp_hidden * n
        )
        # counted trainables in a real layer equal the formulas exactly
        for config in (sca, rot2, rot4, mlp):
            layer = init_adapter(config, Rng(1))
            checks.append(routing_param_count(layer) == count_trainable_routing_params(config))
    checks.append(mlp_hidden_dim(AdapterConfig(d=4096, r=4, n=8, k=2)) == 16)
    report(5, all(checks), f"{sum(checks)}/{len(checks)} identities hold")


def test_criterion_6_separability_experiment(separability_runs):
    rot = separability_runs["rot"]
    sca = separability_runs["sca"]
    floor = separability_runs["floor"]
    elapsed = separability_runs["elapsed"]
    rot_mean = rot.final_mean_mse
    sca_mean = sca.final_mean_mse
    ok = (
        rot_mean < 0.5 * sca_mean
        and sca_mean >= 0.9 * floor
        and elapsed < 120.0
        and rot.final_per_task_mse == GOLDEN_ROTMOLE_PER_TASK
        and sca.final_per_task_mse == GOLDEN_SCALING_PER_TASK
        and floor == GOLDEN_FLOOR
    )
    report(
        6,
        ok,
        f"rotmole {rot_mean:.6g} vs scaling {sca_mean:.6g} (ratio "
        f"{rot_mean / sca_mean:.3f}), floor {floor:.6g}, {elapsed:.0f}s, goldens exact",
    )


def test_criterion_7_distribution_trend(separability_runs):
    thetas = separability_runs["rot"].thetas
    by_step = defaultdict(list)
    for rec in thetas:
        by_step[rec.step].append(rec.theta)
    steps = sorted(by_step)
    first, final = steps[0], steps[-1]
    assert first == 0 and final == 2999
    std_at_init = float(np.std(by_step[first]))
    std_at_end = float(np.std(by_step[final]))

    def sep_at(step):
        groups = defaultdict(list)
        for rec in thetas:
            if rec.step == step:
                groups[rec.task_id].append(rec.theta)
        means = [float(np.mean(v)) for v in groups.values()]
        return min(
            abs(a - b) for i, a in enumerate(means) for b in means[i + 1 :]
        )

    first_post_init = steps[1]
    ok = (
        std_at_init == 0.0
        and std_at_end > 0.05
        and sep_at(final) > sep_at(first_post_init)
    )
    report(
        7,
        ok,
        f"std {std_at_init} -> {std_at_end:.3f}, separation "
        f"{sep_at(first_post_init):.3f} -> {sep_at(final):.3f}",
    )


def test_criterion_8_angle_and_gate_invariants(separability_runs):
    rot = separability_runs["rot"]
    sca = separability_runs["sca"]
    ok = all(-math.pi < rec.theta < math.pi for rec in rot.thetas)
    worst_gate = 0.0
    rng = Rng(1008)
    specs = rot.specs
    for result in (rot, sca):
        for sample in sample_batch(specs, SEP_DATASET, rng):
            decision = route(result.layer, sample.x)
            worst_gate = max(worst_gate, abs(float(decision.g.sum()) - 1.0))
            ok = ok and all(-math.pi < t < math.pi for t in decision.theta)
    ok = ok and worst_gate < 1e-12
    report(8, ok, f"{len(rot.thetas)} logged angles in range, gate sum residual {worst_gate:.2e}")
