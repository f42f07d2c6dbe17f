"""Synthetic conversational identities with controllable postural and rhythmic cues.

An identity is a habitual posture (per-joint offsets from a shared canonical
skeleton) plus a set of rigid joint-group oscillators, gated by a pause
pattern during which motion freezes in place. Modes:

``posture-only``
    distinct postures, no motion.
``rhythm-only``
    one shared posture; identities differ only in oscillator frequencies
    (micro band: 3-5 frame periods, macro band: 10-15 frame periods at the
    30 fps model rate).
``micro``
    rhythm-only with a single micro-band frequency per identity, chosen in
    pairs that alias to the same samples under stride 9 but not under
    strides 3 and 5.
``mixed``
    identities pair up a posture and a rhythm from pools of ``ceil(n / 2)``
    so that every posture and every rhythm is shared by two identities and
    only the combination is unique.
``stillness``
    like ``mixed`` but the second cue is the pause duty cycle (how much of
    the time the person holds still) instead of the frequency.

Sequences of one identity are generated in groups that share a start time
and spread their oscillator phases evenly around the circle, so the
oscillations cancel exactly in per-class averages.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import N_JOINTS, WHOLEBODY, Dataset, KeypointSequence, save_jsonl

MODES = ("posture-only", "rhythm-only", "micro", "mixed", "stillness")
MODEL_FPS = 30.0

# periods in frames at the 30 fps model rate
MICRO_PERIODS = (3.0, 3.5, 4.0, 4.5, 5.0)
MACRO_PERIODS = (10.0, 11.25, 12.5, 13.75, 15.0)
# cycles per model frame; each pair sums to 4/9 or 5/9, so 9 f and 9 f' fold to the same alias
MICRO_ALIAS_PAIRS = (
    (0.2, 4 / 9 - 0.2),
    (0.2225, 5 / 9 - 0.2225),
    (0.2325, 5 / 9 - 0.2325),
    (0.26, 5 / 9 - 0.26),
    (0.2725, 5 / 9 - 0.2725),
)
DUTY_CYCLES = (0.2, 0.4, 0.6, 0.8, 1.0)
PAUSE_PERIOD_S = 0.5


# -- canonical skeleton ------------------------------------------------------
def _ellipse(cx, cy, rx, ry, n, start=0.0, stop=2 * math.pi, closed=True):
    if closed:
        t = np.linspace(start, stop, n, endpoint=False)
    else:
        t = np.linspace(start, stop, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _hand(wrist, direction):
    pts = [wrist]
    base = math.atan2(direction[1], direction[0])
    for f, spread in enumerate(np.linspace(-0.7, 0.7, 5)):
        ang = base + spread
        length = 0.018 if f else 0.014
        for j in range(1, 5):
            pts.append(wrist + np.array([math.cos(ang), math.sin(ang)]) * length * (j + 0.5))
    return np.array(pts)


def canonical_skeleton() -> np.ndarray:
    """A seated-speaker 133-joint layout in COCO-WholeBody order (y grows downward)."""
    body = np.array([
        [0.0, -0.75], [0.03, -0.78], [-0.03, -0.78], [0.07, -0.76], [-0.07, -0.76],
        [0.18, -0.55], [-0.18, -0.55], [0.26, -0.30], [-0.26, -0.30], [0.16, -0.12], [-0.16, -0.12],
        [0.10, 0.0], [-0.10, 0.0], [0.11, 0.40], [-0.11, 0.40], [0.11, 0.80], [-0.11, 0.80],
    ])
    feet = np.array([
        [0.15, 0.86], [0.19, 0.85], [0.10, 0.84], [-0.15, 0.86], [-0.19, 0.85], [-0.10, 0.84],
    ])
    cx, cy = 0.0, -0.74
    face = np.concatenate([
        _ellipse(cx, cy - 0.01, 0.075, 0.095, 17, -0.1, math.pi + 0.1, closed=False),  # jaw
        _ellipse(cx - 0.035, cy - 0.065, 0.025, 0.01, 5, math.pi, 2 * math.pi, closed=False),  # brows
        _ellipse(cx + 0.035, cy - 0.065, 0.025, 0.01, 5, math.pi, 2 * math.pi, closed=False),
        np.stack([np.full(4, cx), np.linspace(cy - 0.045, cy - 0.005, 4)], axis=1),  # nose bridge
        np.stack([np.linspace(cx - 0.02, cx + 0.02, 5), np.full(5, cy + 0.005)], axis=1),
        _ellipse(cx - 0.035, cy - 0.04, 0.015, 0.006, 6),  # eyes
        _ellipse(cx + 0.035, cy - 0.04, 0.015, 0.006, 6),
        _ellipse(cx, cy + 0.04, 0.035, 0.015, 12),  # outer lip
        _ellipse(cx, cy + 0.04, 0.022, 0.007, 8),  # inner lip
    ])
    left = _hand(body[9], np.array([-0.3, -1.0]))
    right = _hand(body[10], np.array([0.3, -1.0]))
    skel = np.concatenate([body, feet, face, left, right])
    assert skel.shape == (N_JOINTS, 2)
    return skel


CANONICAL = canonical_skeleton()
SHARED_POSTURE = np.zeros((N_JOINTS, 2))

# joint groups that move rigidly together
HEAD = tuple(range(0, 5)) + tuple(WHOLEBODY.indices("face"))
LEFT_ARM = (9,) + tuple(WHOLEBODY.indices("left_hand"))
RIGHT_ARM = (10,) + tuple(WHOLEBODY.indices("right_hand"))
SHOULDERS = (5, 6, 7, 8)


# -- profiles ----------------------------------------------------------------
@dataclass
class Oscillator:
    joints: tuple[int, ...]
    amplitude: float
    freq_hz: float
    phase: float = 0.0
    direction: tuple[float, float] = (0.0, 1.0)


@dataclass
class PausePattern:
    """Motion runs for ``duty`` of every ``period_s`` seconds and freezes otherwise."""

    duty: float = 1.0
    period_s: float = PAUSE_PERIOD_S
    phase: float = 0.0

    def active_time(self, t: np.ndarray) -> np.ndarray:
        if self.duty >= 1.0:
            return t
        u = t / self.period_s + self.phase
        n = np.floor(u)
        r = u - n
        return self.period_s * (n * self.duty + np.minimum(r, self.duty)) - self.period_s * self.phase * self.duty


@dataclass
class IdentityProfile:
    name: str
    base_posture: np.ndarray
    gesture_components: list[Oscillator] = field(default_factory=list)
    pause_pattern: PausePattern = field(default_factory=PausePattern)
    noise_sigma: float = 0.005

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.base_posture.shape != (N_JOINTS, 2):
            raise ValueError(f"base_posture must be ({N_JOINTS}, 2)")


@dataclass
class SynthConfig:
    n_identities: int = 10
    sequences_per_identity: int = 10
    T: int = 60
    fps: float = 60.0
    seed: int = 0
    mode: str = "mixed"
    noise_sigma: float = 0.005
    posture_scale: float = 0.1
    separation_ratio: float = 3.0
    micro_amplitude: float = 0.3
    macro_amplitude: float = 0.6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_identities < 1 or self.sequences_per_identity < 1 or self.T < 1:
            raise ValueError("n_identities, sequences_per_identity and T must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _hz(period_frames: float) -> float:
    return MODEL_FPS / period_frames


def draw_posture(rng: np.random.Generator, scale: float) -> np.ndarray:
    """Habitual posture offsets: rigid group shifts plus small per-joint deviations."""
    offsets = rng.normal(0.0, scale / 3, size=(N_JOINTS, 2))
    for group in (HEAD, LEFT_ARM, RIGHT_ARM, SHOULDERS):
        offsets[list(group)] += rng.normal(0.0, scale, size=2)
    return offsets


def posture_separation(a: np.ndarray, b: np.ndarray) -> float:
    """RMS per-coordinate distance between two postures."""
    return float(np.sqrt(((a - b) ** 2).mean()))


def draw_postures(n: int, rng: np.random.Generator, scale: float, min_sep: float, max_tries: int = 1000) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    tries = 0
    while len(out) < n:
        cand = draw_posture(rng, scale)
        if all(posture_separation(cand, p) >= min_sep for p in out):
            out.append(cand)
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n} postures {min_sep:g} apart at scale {scale:g}")
    return out


def rhythm_components(freqs_hz: tuple[float, float, float], cfg: SynthConfig) -> list[Oscillator]:
    """Head in the micro band, arms in the macro band; shapes shared by all identities."""
    f_head, f_left, f_right = freqs_hz
    return [
        Oscillator(HEAD, cfg.micro_amplitude, f_head, 0.0, (0.0, 1.0)),
        Oscillator(LEFT_ARM, cfg.macro_amplitude, f_left, 0.0, (0.6, 0.8)),
        Oscillator(RIGHT_ARM, cfg.macro_amplitude, f_right, 0.0, (-0.6, 0.8)),
    ]


def rhythm_table(n: int) -> list[tuple[float, float, float]]:
    """``n`` distinct (head, left arm, right arm) frequency triples."""
    out = []
    m, p = len(MICRO_PERIODS), len(MACRO_PERIODS)
    for i in range(n):
        cycle, j = divmod(i, m)
        out.append((
            _hz(MICRO_PERIODS[j]),
            _hz(MACRO_PERIODS[(j + cycle) % p]),
            _hz(MACRO_PERIODS[(j + 2 * cycle + cycle // p) % p]),
        ))
    if len(set(out)) != n:
        raise ValueError(f"rhythm table supports at most {len(set(out))} distinct identities")
    return out


def micro_table(n: int) -> list[float]:
    flat = [f for pair in MICRO_ALIAS_PAIRS for f in pair]
    if n > len(flat):
        raise ValueError(f"micro mode supports at most {len(flat)} identities")
    return [f * MODEL_FPS for f in flat[:n]]


def micro_components(freq_hz: float, cfg: SynthConfig) -> list[Oscillator]:
    return [
        Oscillator(HEAD, cfg.micro_amplitude, freq_hz, 0.0, (0.0, 1.0)),
        Oscillator(LEFT_ARM, cfg.micro_amplitude, freq_hz, 0.0, (0.6, 0.8)),
        Oscillator(RIGHT_ARM, cfg.micro_amplitude, freq_hz, 0.0, (-0.6, 0.8)),
    ]


def generate_identity(mode: str, rng: np.random.Generator, cfg: SynthConfig | None = None, *,
                      name: str = "id", others: list[IdentityProfile] = ()) -> IdentityProfile:
    """Draw one standalone identity for ``mode``.

    Postures are rejection-sampled to sit at least ``separation_ratio *
    noise_sigma`` (RMS) away from every profile in ``others``. Rhythmic
    modes draw frequencies at random from the micro/macro bands; use
    :func:`generate_identities` for the coordinated dataset tables.
    """
    cfg = cfg if cfg is not None else SynthConfig(mode=mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    moving = mode != "posture-only"
    posture_varies = mode in ("posture-only", "mixed", "stillness")
    if posture_varies:
        min_sep = cfg.separation_ratio * cfg.noise_sigma
        for _ in range(1000):
            posture = draw_posture(rng, cfg.posture_scale)
            if all(posture_separation(posture, o.base_posture) >= min_sep for o in others):
                break
        else:
            raise RuntimeError("could not place a posture far enough from the existing identities")
    else:
        posture = SHARED_POSTURE.copy()
    comps: list[Oscillator] = []
    pause = PausePattern()
    if moving:
        micro = float(rng.choice(MICRO_PERIODS))
        macro = rng.choice(MACRO_PERIODS, size=2)
        comps = rhythm_components((_hz(micro), _hz(macro[0]), _hz(macro[1])), cfg)
        if mode == "stillness":
            pause = PausePattern(duty=float(rng.choice(DUTY_CYCLES)))
    return IdentityProfile(name, posture, comps, pause, cfg.noise_sigma)


def generate_identities(cfg: SynthConfig) -> list[IdentityProfile]:
    """The coordinated identity set for a dataset (see the module docstring)."""
    rng = np.random.default_rng([cfg.seed, 0])
    n = cfg.n_identities
    names = [f"id_{i:03d}" for i in range(n)]
    min_sep = cfg.separation_ratio * cfg.noise_sigma
    if cfg.mode == "posture-only":
        postures = draw_postures(n, rng, cfg.posture_scale, min_sep)
        return [IdentityProfile(names[i], postures[i], [], PausePattern(), cfg.noise_sigma) for i in range(n)]
    if cfg.mode == "rhythm-only":
        table = rhythm_table(n)
        return [IdentityProfile(names[i], SHARED_POSTURE.copy(), rhythm_components(table[i], cfg),
                                PausePattern(), cfg.noise_sigma) for i in range(n)]
    if cfg.mode == "micro":
        table = micro_table(n)
        return [IdentityProfile(names[i], SHARED_POSTURE.copy(), micro_components(table[i], cfg),
                                PausePattern(), cfg.noise_sigma) for i in range(n)]

    # mixed / stillness: every cue value is shared by two identities
    m = max(1, math.ceil(n / 2))
    postures = draw_postures(m, rng, cfg.posture_scale, min_sep)
    profiles = []
    shared_rhythm = rhythm_components(rhythm_table(1)[0], cfg)
    rhythms = rhythm_table(m)
    for i in range(n):
        pi, ri = i // 2, (i // 2 + i % 2) % m
        if cfg.mode == "mixed":
            comps, pause = rhythm_components(rhythms[ri], cfg), PausePattern()
        else:
            comps, pause = shared_rhythm, PausePattern(duty=DUTY_CYCLES[ri % len(DUTY_CYCLES)])
        profiles.append(IdentityProfile(names[i], postures[pi].copy(), list(comps), pause, cfg.noise_sigma))
    return profiles


def generate_sequence(profile: IdentityProfile, T: int, fps: float, rng: np.random.Generator, *,
                      t0: float | None = None, phase_shift=0.0, source_id: str = "seq") -> KeypointSequence:
    """Render ``T`` frames of ``profile`` starting at time ``t0`` (random if omitted).

    ``phase_shift`` (a scalar, or one value per oscillator) is added to the oscillator phases.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    for osc in profile.gesture_components:
        if not 0 < osc.freq_hz < fps / 2:
            raise ValueError(f"oscillator at {osc.freq_hz:g} Hz is not below Nyquist ({fps / 2:g} Hz)")
    if t0 is None:
        t0 = float(rng.uniform(0.0, 60.0))
    t = t0 + np.arange(T) / fps
    tau = profile.pause_pattern.active_time(t)
    frames = np.broadcast_to(CANONICAL + profile.base_posture, (T, N_JOINTS, 2)).copy()
    shifts = np.broadcast_to(np.asarray(phase_shift, dtype=float), (len(profile.gesture_components),))
    for osc, shift in zip(profile.gesture_components, shifts):
        if osc.amplitude == 0:
            continue
        wave = osc.amplitude * np.sin(2 * math.pi * osc.freq_hz * tau + osc.phase + shift)
        disp = wave[:, None] * np.asarray(osc.direction)[None, :]
        frames[:, list(osc.joints), :] += disp[:, None, :]
    if profile.noise_sigma > 0:
        frames += rng.normal(0.0, profile.noise_sigma, size=frames.shape)
    return KeypointSequence(frames, fps, profile.name, source_id)


def _phase_groups(n: int) -> list[int]:
    """Split ``n`` sequences into groups of 2 (one group of 3 when ``n`` is odd)."""
    if n == 1:
        return [1]
    groups = [2] * (n // 2)
    if n % 2:
        groups[-1] = 3
    return groups


def generate_dataset(cfg: SynthConfig, path: str | Path | None = None) -> Dataset:
    """Render every identity's sequences; optionally write them as JSONL."""
    profiles = generate_identities(cfg)
    seqs = []
    for ident, profile in enumerate(profiles):
        rng = np.random.default_rng([cfg.seed, 1, ident])
        s = 0
        for size in _phase_groups(cfg.sequences_per_identity):
            t0 = float(rng.uniform(0.0, 60.0))
            # independent phase per oscillator, so no fixed phase relation between body parts
            base = rng.uniform(0.0, 2 * math.pi, len(profile.gesture_components))
            for j in range(size):
                seqs.append(generate_sequence(
                    profile, cfg.T, cfg.fps, rng, t0=t0, phase_shift=base + 2 * math.pi * j / size,
                    source_id=f"{profile.name}_s{s:03d}",
                ))
                s += 1
    ds = Dataset.from_sequences(seqs)
    if path is not None:
        save_jsonl(ds, path)
    return ds
