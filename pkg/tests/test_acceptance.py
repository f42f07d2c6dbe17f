"""Acceptance criteria 1-8. Each test prints one ``CRITERION n: PASS|FAIL`` line.

Criteria 4-6 train real models; the whole file takes roughly half an hour on
one CPU core.
"""

import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinesig.autodiff import Tensor, grad_check, softmax
from kinesig.bench import BenchConfig, check_part, run_part
from kinesig.cli import run
from kinesig.data import subsample_stride, velocity
from kinesig.efficiency import count_params, estimate_flops, trace_flops
from kinesig.models import (
    TINY_FRAMES, TINY_JOINTS, FusionHead, build_model, fuse, tiny_batch, tiny_loss, tiny_model,
)
from kinesig.reporting import efficiency_table, report
from kinesig.synth import SynthConfig, generate_dataset
from kinesig.training import TrainConfig, train

import test_models as tm


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail=""):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        assert ok, f"criterion {n} failed: {detail}"
    return emit


def _property_holds(prop) -> tuple[bool, str]:
    try:
        prop()
    except AssertionError as exc:
        return False, str(exc).splitlines()[0] if str(exc) else "assertion failed"
    return True, ""


# -- 1 ------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_1_gradient_integrity(verdict):
    start = time.perf_counter()
    worst, failures = 0.0, []
    x, y = tiny_batch()
    for kind in ("str", "ttr", "msttr", "dual"):
        for layers in (1, 2):
            rep = grad_check(tiny_model(kind, n_layers=layers), tiny_loss(kind, x, y), tolerance=1e-4)
            worst = max(worst, rep.max_error)
            failures += [f"{kind}/{layers}:{n}" for n in rep.failures]
    elapsed = time.perf_counter() - start
    verdict(1, not failures and elapsed < 120,
            f"max relative error {worst:.2e} (< 1e-4), {elapsed:.0f} s (< 120 s) {failures or ''}")


# -- 2 ------------------------------------------------------------------------
def test_criterion_2_attention_invariants(verdict):
    seeds = st.integers(0, 2**31 - 1)
    props = {}

    @settings(max_examples=100, deadline=None, database=None)
    @given(seeds, st.integers(1, 12))
    def softmax_rows(seed, n):
        x = np.random.default_rng(seed).normal(0, 20, size=(3, n))
        assert np.abs(softmax(Tensor(x)).data.sum(-1) - 1).max() <= 1e-9

    props["softmax rows"] = softmax_rows
    for name in ("test_str_is_frame_permutation_invariant",
                 "test_str_joint_permutation_invariant_without_joint_embedding",
                 "test_joint_embedding_breaks_joint_permutation_invariance",
                 "test_ttr_frame_permutation_invariant_without_positions",
                 "test_positional_encoding_breaks_frame_permutation_invariance"):
        inner = getattr(tm, name).hypothesis.inner_test
        props[name[5:]] = settings(max_examples=100, deadline=None, database=None)(given(seeds)(inner))
    failed = []
    for name, prop in props.items():
        ok, why = _property_holds(prop)
        if not ok:
            failed.append(f"{name}: {why}")
    verdict(2, not failed, f"{len(props)} properties x 100 instances {failed or ''}")


# -- 3 ------------------------------------------------------------------------
def test_criterion_3_equation_contracts(verdict):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, TINY_JOINTS, 2))
    v = velocity(x)
    checks = {
        "velocity shape": v.shape == (29, TINY_JOINTS, 2),
        "velocity values": np.array_equal(v, x[1:] - x[:-1]),
        "stride lengths": [subsample_stride(x, k).shape[0] for k in (9, 3, 5)] == [4, 10, 6],
        "stride picks every k-th": np.array_equal(subsample_stride(x, 3), x[0::3]),
    }
    model = tiny_model("dual").eval()
    xb, _ = tiny_batch(batch=3)
    out = model(xb)
    d = model.config.spatial.d_model
    checks["embedding widths"] = out.f_s.shape == out.f_t.shape == (3, d)
    checks["fused width"] = fuse(out.f_s, out.f_t).shape == (3, 2 * d)
    head = FusionHead(128, 114)
    checks["head layer widths"] = (head.fc1.weight.shape, head.fc2.weight.shape, head.fc3.weight.shape) == \
        ((256, 256), (256, 128), (128, 114))
    bad = [k for k, ok in checks.items() if not ok]
    verdict(3, not bad, f"{len(checks)} contracts {bad or ''}")


# -- 4 ------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_4_overfit(verdict):
    start = time.perf_counter()
    ds = generate_dataset(SynthConfig(mode="mixed", n_identities=4, sequences_per_identity=10, seed=0))
    cfg = TrainConfig(model="dual", epochs=50, d_model=16, n_heads=2, lr=5e-3, velocity=True,
                      dtype="float32", eval_train=False, seed=0)
    # evaluating on the training set itself: "test" accuracy here is train accuracy in eval mode
    _, met = train(ds, cfg, test=ds)
    train_acc = [e.test_acc["fusion"] for e in met.epochs]
    first = next((i + 1 for i, a in enumerate(train_acc) if a == 1.0), None)
    _, again = train(ds, TrainConfig(**{**cfg.to_dict(), "epochs": 3}), test=ds)
    deterministic = [e.test_acc for e in again.epochs] == [e.test_acc for e in met.epochs[:3]] and \
        [e.loss for e in again.epochs] == [e.loss for e in met.epochs[:3]]
    elapsed = time.perf_counter() - start
    verdict(4, first is not None and deterministic and elapsed < 300,
            f"100% train accuracy first at epoch {first} (<= 50), deterministic={deterministic}, "
            f"{elapsed:.0f} s (< 300 s)")


# -- 5 and 6 ------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_5_stream_separation(verdict):
    cfg = BenchConfig()
    start = time.perf_counter()
    parts = {}
    for part in ("posture", "rhythm", "micro", "mixed"):
        parts[part] = check_part(part, run_part(part, cfg))
    elapsed = time.perf_counter() - start
    a, b, c, d = (parts[p] for p in ("posture", "rhythm", "micro", "mixed"))
    detail = (
        f"(a) STR {a['str']:.3f} >= 0.95: {a['passed']}; "
        f"(b) STR {b['str']:.3f} <= 0.3, MS-TTR {b['msttr']:.3f} >= 0.8: {b['passed']}; "
        f"(c) MS-TTR {c['msttr']:.3f} - TTR(k=9) {c['ttr_k9']:.3f} = {100 * c['gap']:.1f} pts >= 10: {c['passed']}; "
        f"(d) fusion margins {[round(100 * m, 1) for m in d['margins']]} pts, wins {d['wins']}/5: {d['passed']}; "
        f"{elapsed:.0f} s (< 1800 s)"
    )
    print(json.dumps(parts, indent=1))
    verdict(5, all(p["passed"] for p in parts.values()) and elapsed < 1800, detail)


@pytest.mark.slow
def test_criterion_6_velocity_ablation(verdict):
    res = check_part("velocity", run_part("velocity", BenchConfig()))
    verdict(6, res["passed"], f"median TTR accuracy velocity {res['median_velocity']:.3f} < position "
                              f"{res['median_position']:.3f}; per seed position {res['position']} velocity {res['velocity']}")


# -- 7 ------------------------------------------------------------------------
def test_criterion_7_efficiency_reporting(verdict):
    problems = []
    for cfg in tm.CONFIGS:
        kind = {tm.STRConfig: "str", tm.TTRConfig: "ttr", tm.MSTTRConfig: "msttr"}[type(cfg)]
        oracle = {"str": tm.str_params, "ttr": tm.ttr_params, "msttr": tm.msttr_params}[kind](cfg)
        if count_params(build_model(kind, cfg)) != oracle:
            problems.append(f"params {kind}")
    if count_params(FusionHead(128, 114)) != tm.head_params(128, 114):
        problems.append("params fusion head")
    rng = np.random.default_rng(0)
    n_flop = 0
    for kind in ("str", "ttr", "msttr", "dual"):
        for layers in (1, 2):
            model = tiny_model(kind, n_layers=layers)
            x = rng.normal(size=(2, TINY_FRAMES, TINY_JOINTS, 2))
            n_flop += 1
            if estimate_flops(model, x.shape) != trace_flops(model, x):
                problems.append(f"flops {kind}/{layers}")
    from kinesig.efficiency import efficiency_report

    X = rng.normal(size=(2, TINY_FRAMES, TINY_JOINTS, 2))
    reps = [efficiency_report(k, tiny_model(k), X, duration=0.02) for k in ("str", "msttr", "dual")]
    table = efficiency_table(reps)
    if table.columns != ["Model", "Params (M)", "FLOPs (G)", "FPS"] or any(r[3].value <= 0 for r in table.rows):
        problems.append("throughput table")
    if "FPS" not in report([], reps)[0]:
        problems.append("report text")
    verdict(7, not problems, f"{len(tm.CONFIGS) + 1} param oracles, {n_flop} FLOP traces, "
                             f"{len(reps)}-row efficiency table {problems or ''}")


# -- 8 ------------------------------------------------------------------------
def test_criterion_8_rerun_reproducibility(tmp_path, verdict):
    data = tmp_path / "d.jsonl"
    assert run(["synth", "--identities", "4", "--sequences", "5", "--frames", "40", "--out", str(data)]) == 0
    a = tmp_path / "a"
    cmds = {
        "train": ["train", "--data", str(data), "--model", "dual", "--d-model", "8", "--epochs", "2",
                  "--batch-size", "8", "--dtype", "float32", "--out", str(a / "train")],
        "eval": ["eval", "--checkpoint", str(a / "train" / "checkpoint.npz"), "--data", str(data),
                 "--out", str(a / "eval.json")],
        "gradcheck": ["gradcheck", "--model", "str", "--tiny", "--out", str(a / "grad.json")],
        "report": ["report", "--metrics", str(a / "train" / "metrics.json"),
                   "--checkpoints", str(a / "train" / "checkpoint.npz"), "--out", str(a / "report")],
        "bench": ["bench", "--quick", "--seeds", "1", "--out", str(a / "bench")],
    }
    for argv in cmds.values():
        assert run(argv) == 0
    b = tmp_path / "b"
    pairs = {  # manifest, original output, redirected --out, file compared
        "synth": (str(data) + ".manifest.json", data, tmp_path / "d2.jsonl", tmp_path / "d2.jsonl"),
        "train": (a / "train" / "manifest.json", a / "train" / "metrics.json", b / "train", b / "train" / "metrics.json"),
        "eval": (str(a / "eval.json") + ".manifest.json", a / "eval.json", b / "eval.json", b / "eval.json"),
        "gradcheck": (str(a / "grad.json") + ".manifest.json", a / "grad.json", b / "grad.json", b / "grad.json"),
        "report": (a / "report" / "manifest.json", a / "report" / "report.json", b / "report", b / "report" / "report.json"),
        "bench": (a / "bench" / "manifest.json", a / "bench" / "bench.json", b / "bench", b / "bench" / "bench.json"),
    }
    differ = []
    for name, (manifest, original, out, copy) in pairs.items():
        if run(["rerun", str(manifest), "--out", str(out)]) != 0 or original.read_bytes() != copy.read_bytes():
            differ.append(name)
    verdict(8, not differ, f"{len(pairs)} commands rerun from manifests, byte-identical outputs {differ or ''}")
