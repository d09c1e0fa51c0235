"""Tempo grouping, downbeat alignment, and the two mixing strategies.

Mixing always pairs tracks from the same tempo bucket and starts every clip
on a downbeat of its source, so the combined material stays rhythmically
coherent. The mixing ratio is drawn from Beta(5, 5), which concentrates
around an even blend. "bam" mixes the aligned waveforms directly;
"blm" mixes the latent-codec representations and renders the result back to
audio through the codec decoder and Griffin-Lim.

Spec planning is a deterministic stream from one seeded generator: a run is
fully reproducible from (seed, corpus, config), and rendering a spec is a
pure function of the spec, so it can be parallelized freely.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import codec as codec_mod
from .beats import BeatGrid
from .dsp import MelSpectrogram, SignalConfig, Waveform, invert_mel, mel_spectrogram
from .errors import LengthMismatch, NoEligibleDownbeat, ShapeMismatch

DEFAULT_BUCKET_WIDTH = 4.0
BUCKET_RANGE = (60.0, 180.0)
DEFAULT_CLIP_SAMPLES = 163840  # 10.24 s at 16 kHz
LAMBDA_EPS = 1e-9
BETA_A = 5.0
BETA_B = 5.0

STRATEGIES = ("bam", "blm")


@dataclass(frozen=True)
class TempoGroup:
    group_id: int
    bpm_low: float
    bpm_high: float
    members: tuple

    def __contains__(self, track_id):
        return track_id in self.members


@dataclass(frozen=True)
class MixupSpec:
    """Everything needed to re-render one output clip."""

    out_id: str
    strategy: str  # "bam" | "blm"
    mixed: bool
    track_a: str
    offset_a: int  # start sample, lands on a downbeat of track_a
    track_b: str | None = None
    offset_b: int | None = None
    lam: float | None = None
    clip_samples: int = DEFAULT_CLIP_SAMPLES
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def group_id_for(bpm: float, bucket_width: float = DEFAULT_BUCKET_WIDTH) -> int:
    lo, hi = BUCKET_RANGE
    n_buckets = int(np.ceil((hi - lo) / bucket_width))
    clamped = min(max(bpm, lo), np.nextafter(hi, lo))
    gid = int((clamped - lo) // bucket_width)
    return min(gid, n_buckets - 1)


def assign_tempo_groups(
    grids: dict[str, BeatGrid], bucket_width: float = DEFAULT_BUCKET_WIDTH
) -> list[TempoGroup]:
    """Deterministic fixed-width BPM bucketing over [60, 180)."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    buckets: dict[int, list[str]] = {}
    for track_id in sorted(grids):
        gid = group_id_for(grids[track_id].tempo_bpm, bucket_width)
        buckets.setdefault(gid, []).append(track_id)
    lo = BUCKET_RANGE[0]
    return [
        TempoGroup(
            group_id=gid,
            bpm_low=lo + gid * bucket_width,
            bpm_high=lo + (gid + 1) * bucket_width,
            members=tuple(members),
        )
        for gid, members in sorted(buckets.items())
    ]


def sample_mix_ratio(rng: np.random.Generator) -> float:
    """One Beta(5,5) draw, clamped into the open interval (0, 1)."""
    lam = float(rng.beta(BETA_A, BETA_B))
    return min(max(lam, LAMBDA_EPS), 1.0 - LAMBDA_EPS)


def eligible_downbeat_offsets(
    grid: BeatGrid, n_samples: int, clip_samples: int, sample_rate: int
) -> np.ndarray:
    """Sample offsets of downbeats that leave a full clip of audio after them."""
    offsets = np.round(grid.downbeat_times * sample_rate).astype(np.int64)
    return offsets[(offsets >= 0) & (offsets + clip_samples <= n_samples)]


def align_downbeats(
    grid_a: BeatGrid,
    grid_b: BeatGrid,
    len_a: int,
    len_b: int,
    clip_samples: int,
    rng: np.random.Generator,
    sample_rate: int = 16000,
) -> tuple[int, int]:
    """Pick one eligible downbeat per track, uniformly; return sample offsets."""
    off_a = eligible_downbeat_offsets(grid_a, len_a, clip_samples, sample_rate)
    off_b = eligible_downbeat_offsets(grid_b, len_b, clip_samples, sample_rate)
    if off_a.size == 0 or off_b.size == 0:
        raise NoEligibleDownbeat(
            "a track has no downbeat with a full clip of audio after it"
        )
    return int(off_a[rng.integers(off_a.size)]), int(off_b[rng.integers(off_b.size)])


def bam_mix(x1: Waveform, x2: Waveform, lam: float) -> Waveform:
    """Convex combination of two aligned clips: lam*x1 + (1-lam)*x2."""
    if x1.samples.size != x2.samples.size:
        raise LengthMismatch(f"{x1.samples.size} vs {x2.samples.size} samples")
    if x1.sample_rate != x2.sample_rate:
        raise LengthMismatch("sample rates differ")
    if not (0.0 < lam < 1.0):
        raise ValueError("lam must lie in (0, 1)")
    return Waveform(lam * x1.samples + (1.0 - lam) * x2.samples, x1.sample_rate)


def blm_mix(
    y1: codec_mod.LatentTensor, y2: codec_mod.LatentTensor, lam: float
) -> codec_mod.LatentTensor:
    """Convex combination of two latent tensors from the same codec."""
    if y1.values.shape != y2.values.shape:
        raise ShapeMismatch(f"{y1.values.shape} vs {y2.values.shape}")
    if y1.codec_id != y2.codec_id:
        raise ShapeMismatch("latents come from different codecs")
    if not (0.0 < lam < 1.0):
        raise ValueError("lam must lie in (0, 1)")
    return codec_mod.LatentTensor(
        lam * y1.values + (1.0 - lam) * y2.values, y1.codec_id
    )


def blm_render(
    latent: codec_mod.LatentTensor,
    codec: codec_mod.PcaCodec,
    config: SignalConfig | None = None,
    iterations: int = 32,
) -> tuple[MelSpectrogram, Waveform]:
    """Decode a (possibly mixed) latent back to a mel and a waveform."""
    if config is None:
        config = SignalConfig()
    mel = codec_mod.decode(codec, latent, config)
    return mel, invert_mel(mel, iterations)


@dataclass
class TrackView:
    """What the planner needs to know about one corpus track."""

    track_id: str
    n_samples: int
    grid: BeatGrid


def plan_mixup_pass(
    tracks: dict[str, TrackView],
    groups: list[TempoGroup],
    strategy: str,
    p: float,
    count: int,
    rng: np.random.Generator,
    clip_samples: int = DEFAULT_CLIP_SAMPLES,
    sample_rate: int = 16000,
    seed: int | None = None,
) -> list[MixupSpec]:
    """Plan ``count`` output clips without touching any audio.

    Each slot mixes with probability ``p`` when its base track's tempo group
    offers an eligible partner; otherwise the slot is an unmixed clip. Only
    tracks with at least one eligible downbeat participate at all, so every
    planned clip starts on a downbeat and is exactly ``clip_samples`` long.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")

    eligible = {
        tid: eligible_downbeat_offsets(v.grid, v.n_samples, clip_samples, sample_rate)
        for tid, v in tracks.items()
    }
    usable = sorted(tid for tid, offs in eligible.items() if offs.size > 0)
    if not usable:
        raise NoEligibleDownbeat("no track offers a downbeat with a full clip after it")
    group_of = {tid: g.group_id for g in groups for tid in g.members}
    partners = {
        tid: [
            other
            for other in usable
            if other != tid and group_of.get(other) == group_of.get(tid)
        ]
        for tid in usable
    }

    specs = []
    for slot in range(count):
        base = usable[int(rng.integers(len(usable)))]
        mix_roll = float(rng.random())
        mates = partners[base]
        if mix_roll < p and mates:
            partner = mates[int(rng.integers(len(mates)))]
            off_a = int(eligible[base][rng.integers(eligible[base].size)])
            off_b = int(eligible[partner][rng.integers(eligible[partner].size)])
            lam = sample_mix_ratio(rng)
            specs.append(
                MixupSpec(
                    out_id=f"mix_{slot:05d}",
                    strategy=strategy,
                    mixed=True,
                    track_a=base,
                    offset_a=off_a,
                    track_b=partner,
                    offset_b=off_b,
                    lam=lam,
                    clip_samples=clip_samples,
                    seed=seed,
                )
            )
        else:
            off_a = int(eligible[base][rng.integers(eligible[base].size)])
            specs.append(
                MixupSpec(
                    out_id=f"mix_{slot:05d}",
                    strategy=strategy,
                    mixed=False,
                    track_a=base,
                    offset_a=off_a,
                    clip_samples=clip_samples,
                    seed=seed,
                )
            )
    return specs


def render_spec(
    spec: MixupSpec,
    load_clip,
    codec: codec_mod.PcaCodec | None = None,
    config: SignalConfig | None = None,
    iterations: int = 32,
) -> Waveform:
    """Produce the audio for one spec.

    ``load_clip(track_id, offset, n_samples)`` must return a float array of
    exactly ``n_samples`` samples. Rendering depends only on the spec, so any
    scheduling across specs yields identical output.
    """
    if config is None:
        config = SignalConfig()
    a = np.asarray(load_clip(spec.track_a, spec.offset_a, spec.clip_samples), dtype=np.float64)
    wave_a = Waveform(a, config.sample_rate)
    if not spec.mixed:
        return wave_a
    b = np.asarray(load_clip(spec.track_b, spec.offset_b, spec.clip_samples), dtype=np.float64)
    wave_b = Waveform(b, config.sample_rate)
    if spec.strategy == "bam":
        return bam_mix(wave_a, wave_b, spec.lam)
    if codec is None:
        raise ValueError("blm rendering needs a fitted codec")
    lat_a = codec_mod.encode(codec, mel_spectrogram(wave_a, config))
    lat_b = codec_mod.encode(codec, mel_spectrogram(wave_b, config))
    mixed = blm_mix(lat_a, lat_b, spec.lam)
    _, wave = blm_render(mixed, codec, config, iterations)
    return wave


def apply_mixup_pass(
    tracks: dict[str, TrackView],
    groups: list[TempoGroup],
    strategy: str,
    p: float,
    count: int,
    rng: np.random.Generator,
    load_clip,
    codec: codec_mod.PcaCodec | None = None,
    config: SignalConfig | None = None,
    clip_samples: int = DEFAULT_CLIP_SAMPLES,
    iterations: int = 32,
    seed: int | None = None,
):
    """Plan and render a whole pass; yields (spec, waveform) pairs."""
    if config is None:
        config = SignalConfig()
    specs = plan_mixup_pass(
        tracks, groups, strategy, p, count, rng,
        clip_samples=clip_samples, sample_rate=config.sample_rate, seed=seed,
    )
    for spec in specs:
        yield spec, render_spec(spec, load_clip, codec, config, iterations)
