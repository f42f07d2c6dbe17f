import math

import numpy as np
import pytest

from kinesig.data import N_JOINTS, PrepConfig, load_jsonl, split, to_arrays, velocity
from kinesig.synth import (
    CANONICAL, HEAD, MICRO_ALIAS_PAIRS, MODES, SHARED_POSTURE, IdentityProfile, Oscillator, PausePattern,
    SynthConfig, generate_dataset, generate_identities, generate_identity, generate_sequence,
    posture_separation,
)


def test_posture_only_identity_is_static():
    p = generate_identity("posture-only", np.random.default_rng(0))
    assert all(o.amplitude == 0 for o in p.gesture_components)


def test_rhythm_only_identity_uses_shared_posture():
    p = generate_identity("rhythm-only", np.random.default_rng(0))
    np.testing.assert_array_equal(p.base_posture, SHARED_POSTURE)
    assert p.gesture_components


def test_same_rng_state_gives_same_profile():
    a = generate_identity("mixed", np.random.default_rng(5))
    b = generate_identity("mixed", np.random.default_rng(5))
    np.testing.assert_array_equal(a.base_posture, b.base_posture)
    assert a.gesture_components == b.gesture_components


def test_generated_postures_respect_separation():
    cfg = SynthConfig(mode="posture-only", n_identities=10)
    profiles = generate_identities(cfg)
    seps = [posture_separation(a.base_posture, b.base_posture)
            for i, a in enumerate(profiles) for b in profiles[i + 1:]]
    assert min(seps) >= cfg.separation_ratio * cfg.noise_sigma


def test_profile_validation():
    with pytest.raises(ValueError):
        IdentityProfile("x", np.zeros((N_JOINTS, 2)), noise_sigma=-1.0)
    with pytest.raises(ValueError):
        SynthConfig(mode="cartwheel")
    fast = IdentityProfile("x", np.zeros((N_JOINTS, 2)), [Oscillator(HEAD, 0.1, 40.0)])
    with pytest.raises(ValueError, match="Nyquist"):
        generate_sequence(fast, 10, 60.0, np.random.default_rng(0))


def test_static_noiseless_identity_repeats_one_frame():
    p = IdentityProfile("x", np.zeros((N_JOINTS, 2)), [], noise_sigma=0.0)
    f = generate_sequence(p, 12, 30.0, np.random.default_rng(0)).frames
    np.testing.assert_array_equal(f, np.broadcast_to(CANONICAL, f.shape))


def test_single_oscillator_traces_exact_sinusoid_and_velocity():
    amp, hz, phase, fps, t0 = 0.2, 2.5, 0.3, 30.0, 1.7
    osc = Oscillator((0,), amp, hz, phase, (0.0, 1.0))
    p = IdentityProfile("x", np.zeros((N_JOINTS, 2)), [osc], noise_sigma=0.0)
    seq = generate_sequence(p, 40, fps, np.random.default_rng(0), t0=t0)
    t = t0 + np.arange(40) / fps
    y = CANONICAL[0, 1] + amp * np.sin(2 * math.pi * hz * t + phase)
    np.testing.assert_allclose(seq.frames[:, 0, 1], y, atol=1e-12)
    # closed-form difference: sin(a + w) - sin(a) = 2 cos(a + w/2) sin(w/2)
    w = 2 * math.pi * hz / fps
    closed = 2 * amp * np.cos(2 * math.pi * hz * t[:-1] + phase + w / 2) * math.sin(w / 2)
    np.testing.assert_allclose(velocity(seq.frames)[:, 0, 1], closed, atol=1e-9)
    np.testing.assert_array_equal(seq.frames[:, 1:], np.broadcast_to(CANONICAL[1:], (40, N_JOINTS - 1, 2)))


def test_pause_freezes_motion():
    pause = PausePattern(duty=0.5, period_s=1.0)
    t = np.linspace(0, 3, 301)
    tau = pause.active_time(t)
    assert np.all(np.diff(tau) >= -1e-12)
    assert tau[-1] - tau[0] == pytest.approx(1.5, abs=0.02)


def test_dataset_counts_and_roundtrip(tmp_path):
    path = tmp_path / "d.jsonl"
    ds = generate_dataset(SynthConfig(n_identities=4, sequences_per_identity=10, T=60), path)
    assert len(ds) == 40 and ds.n_classes == 4
    back = load_jsonl(path)
    assert len(back) == 40
    np.testing.assert_array_equal(back.sequences[3].frames, ds.sequences[3].frames)


@pytest.mark.parametrize("mode", MODES)
def test_same_seed_gives_byte_identical_jsonl(tmp_path, mode):
    cfg = SynthConfig(mode=mode, n_identities=4, sequences_per_identity=3, T=20)
    generate_dataset(cfg, tmp_path / "a.jsonl")
    generate_dataset(cfg, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_rhythm_only_class_means_agree_within_noise():
    cfg = SynthConfig(mode="rhythm-only", n_identities=6, sequences_per_identity=10, T=60)
    ds = generate_dataset(cfg)
    frames = np.stack([s.frames for s in ds.sequences])
    means = np.stack([frames[ds.labels == c].mean() for c in range(ds.n_classes)])
    n, t, v = (ds.labels == 0).sum(), cfg.T, N_JOINTS
    bound = 5 * cfg.noise_sigma / math.sqrt(n * t * v)
    assert np.ptp(means) < bound


def test_posture_only_centroid_classifier_is_perfect():
    ds = generate_dataset(SynthConfig(mode="posture-only", n_identities=8, sequences_per_identity=10))
    tr, te = split(ds)
    Xtr, ytr = to_arrays(tr, PrepConfig())
    Xte, yte = to_arrays(te, PrepConfig())
    ftr, fte = Xtr.mean(1).reshape(len(Xtr), -1), Xte.mean(1).reshape(len(Xte), -1)
    cents = np.stack([ftr[ytr == c].mean(0) for c in range(ds.n_classes)])
    pred = np.argmin(((fte[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    assert (pred == yte).mean() == 1.0


def test_micro_alias_pairs_coincide_at_stride_nine():
    # same apparent frequency at stride 9; at strides 3 and 5 the 30-frame window drifts apart by > 1/4 cycle
    def apparent(f, k):
        x = (f * k) % 1.0
        return min(x, 1 - x)

    for f1, f2 in MICRO_ALIAS_PAIRS:
        assert 1 / 5 <= f1 <= 1 / 3 and 1 / 5 <= f2 <= 1 / 3
        assert apparent(f1, 9) == pytest.approx(apparent(f2, 9), abs=1e-9)
        for k in (3, 5):
            assert abs(apparent(f1, k) - apparent(f2, k)) * -(-30 // k) > 0.25


def test_mixed_identities_share_cues_pairwise():
    profiles = generate_identities(SynthConfig(mode="mixed", n_identities=10))
    key = lambda p: tuple(o.freq_hz for o in p.gesture_components)
    for i in range(0, 10, 2):
        np.testing.assert_array_equal(profiles[i].base_posture, profiles[i + 1].base_posture)
        assert key(profiles[i]) != key(profiles[i + 1])
    assert key(profiles[1]) == key(profiles[2])
    assert len({(posture_separation(p.base_posture, SHARED_POSTURE), key(p)) for p in profiles}) == 10
