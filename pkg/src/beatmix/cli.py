"""Command-line surface for the corpus pipeline.

Stages, in their natural order::

    beatmix ingest CORPUS_DIR          build the manifest
    beatmix analyze --manifest M       tempo/beat/downbeat annotations
    beatmix group --manifest M         tempo bucketing
    beatmix fit-codec --manifest M     fit the latent codec
    beatmix mix --manifest M ...       produce mixed clips
    beatmix segment --manifest M       10 s segment index for similarity audits
    beatmix eval ...                   metrics report from embedding files

Progress and warnings go to stderr; machine-readable output goes only to
files. Exit codes: 0 success, 1 input error, 2 internal error.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import beats as beats_mod
from . import codec as codec_mod
from . import gateway, metrics, mixup, wavio
from .dsp import SignalConfig, mel_spectrogram
from .errors import (
    BeatmixError,
    DuplicateBasename,
    EmptyCorpus,
    InputError,
    MissingPrerequisite,
    SchemaError,
)
from .manifest import (
    Manifest,
    TrackEntry,
    atomic_write_text,
    content_hash,
    load_manifest,
    save_manifest,
    validate_manifest,
)

_CONFIG_KEYS = {
    "sample_rate": int,
    "hop": int,
    "window": int,
    "fft_size": int,
    "n_mels": int,
    "fmin": float,
    "fmax": float,
    "log_floor": float,
    "bucket_width": float,
    "clip_samples": int,
    "gl_iterations": int,
    "segment_seconds": float,
    "mix_p": float,
}


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


def read_config_file(path) -> dict:
    """Plain key=value configuration; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{line_no}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise SchemaError(f"{path}:{line_no}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: bad value for {key} ({exc})") from exc
    return values


def signal_config(settings: dict) -> SignalConfig:
    kwargs = {
        k: settings[k]
        for k in ("sample_rate", "hop", "window", "fft_size", "n_mels", "fmin", "fmax", "log_floor")
        if k in settings
    }
    return SignalConfig(**kwargs)


def merged_settings(args) -> dict:
    settings = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    return settings


# --- ingest -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    root = os.path.abspath(args.corpus_dir)
    if not os.path.isdir(root):
        raise InputError(f"{root} is not a directory")
    wavs = []
    for dirpath, _, filenames in os.walk(root):
        for name in sorted(filenames):
            if name.lower().endswith(".wav"):
                wavs.append(os.path.relpath(os.path.join(dirpath, name), root))
    wavs.sort()
    if not wavs:
        raise EmptyCorpus(f"no .wav files under {root}")

    caption_map = {}
    if args.captions:
        with open(args.captions, "r", encoding="utf-8") as fh:
            try:
                caption_map = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{args.captions}: not valid JSON ({exc})") from exc
        if not isinstance(caption_map, dict):
            raise SchemaError(f"{args.captions}: expected an object of id -> caption")

    settings = merged_settings(args)
    entries = []
    seen = {}
    missing_captions = 0
    for rel in wavs:
        track_id = os.path.splitext(os.path.basename(rel))[0]
        if track_id in seen:
            raise DuplicateBasename(f"{rel} and {seen[track_id]} both map to id {track_id!r}")
        seen[track_id] = rel
        full = os.path.join(root, rel)
        n_samples = wavio.probe_wav(full)
        caption = caption_map.get(track_id, "")
        if not caption:
            txt = os.path.splitext(full)[0] + ".txt"
            if os.path.exists(txt):
                with open(txt, "r", encoding="utf-8") as fh:
                    caption = fh.read().strip()
        if not caption:
            missing_captions += 1
        entries.append(
            TrackEntry(
                id=track_id,
                path=rel,
                n_samples=n_samples,
                duration_s=n_samples / wavio.TARGET_RATE,
                caption=caption,
                content_hash=content_hash(full),
            )
        )

    manifest = Manifest(root=root, entries=entries, config=dict(settings))
    save_manifest(manifest, args.manifest)
    log(f"ingested {len(entries)} tracks -> {args.manifest}")
    if missing_captions:
        log(f"warning: {missing_captions} tracks have no caption")
    return 0


# --- analyze ----------------------------------------------------------------

def _analyze_one(manifest, entry, config, external):
    path = manifest.track_path(entry)
    sidecar_rel = os.path.splitext(entry.path)[0] + ".beats.json"
    sidecar = os.path.join(manifest.root, sidecar_rel)
    current_hash = content_hash(path)
    if (
        entry.tempo_bpm is not None
        and entry.content_hash == current_hash
        and entry.beats_path == sidecar_rel
        and os.path.exists(sidecar)
    ):
        return entry, "cached"
    if external:
        if not os.path.exists(sidecar):
            raise InputError(f"{sidecar}: external annotation missing")
        grid = beats_mod.load_beat_annotation(sidecar)
    else:
        wave = wavio.load_wav(path)
        grid = beats_mod.analyze_waveform(wave, config)
        beats_mod.save_beat_annotation(grid, sidecar)
    entry.content_hash = current_hash
    entry.beats_path = sidecar_rel
    entry.tempo_bpm = float(grid.tempo_bpm)
    entry.analysis_error = None
    return entry, "analyzed"


def cmd_analyze(args) -> int:
    manifest = load_manifest(args.manifest)
    validate_manifest(manifest)
    settings = {**manifest.config, **merged_settings(args)}
    config = signal_config(settings)

    outcomes = {"cached": 0, "analyzed": 0, "failed": 0}

    def work(entry):
        try:
            return _analyze_one(manifest, entry, config, args.external_beats)
        except BeatmixError as exc:
            entry.analysis_error = f"{type(exc).__name__}: {exc}"
            entry.tempo_bpm = None
            return entry, "failed"

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(work, manifest.entries))
    else:
        results = [work(e) for e in manifest.entries]

    for entry, outcome in results:
        outcomes[outcome] += 1
        if outcome == "failed":
            log(f"warning: {entry.id}: {entry.analysis_error}")

    save_manifest(manifest, args.manifest)
    log(
        f"analyze: {outcomes['analyzed']} analyzed, {outcomes['cached']} cached, "
        f"{outcomes['failed']} failed"
    )
    if manifest.entries and outcomes["failed"] == len(manifest.entries):
        raise InputError("analysis failed for every track")
    return 0


# --- group ------------------------------------------------------------------

def cmd_group(args) -> int:
    manifest = load_manifest(args.manifest)
    settings = {**manifest.config, **merged_settings(args)}
    width = args.bucket_width if args.bucket_width is not None else float(
        settings.get("bucket_width", mixup.DEFAULT_BUCKET_WIDTH)
    )
    if width <= 0:
        raise InputError("bucket width must be positive")
    grouped = 0
    for entry in manifest.entries:
        if entry.tempo_bpm is None:
            entry.group_id = None
            continue
        entry.group_id = mixup.group_id_for(entry.tempo_bpm, width)
        grouped += 1
    if grouped == 0:
        raise MissingPrerequisite("no analyzed tracks; run `beatmix analyze` first")
    manifest.config["bucket_width"] = width
    save_manifest(manifest, args.manifest)
    groups = sorted({e.group_id for e in manifest.entries if e.group_id is not None})
    log(f"group: {grouped} tracks in {len(groups)} tempo groups (width {width} BPM)")
    return 0


# --- fit-codec ---------------------------------------------------------------

def cmd_fit_codec(args) -> int:
    manifest = load_manifest(args.manifest)
    validate_manifest(manifest)
    settings = {**manifest.config, **merged_settings(args)}
    config = signal_config(settings)
    patch = args.patch
    usable = [e for e in manifest.entries if e.analysis_error is None]
    if not usable:
        raise MissingPrerequisite("no usable tracks to fit the codec on")

    def corpus_mels():
        for entry in usable:
            wave = wavio.load_wav(manifest.track_path(entry))
            frames = mel_spectrogram(wave, config).frames
            t = (frames.shape[0] // patch) * patch  # crop to whole patches
            if t:
                yield frames[:t]

    codec = codec_mod.fit(corpus_mels(), n_components=args.components, patch_size=patch)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "codec.bin")
    codec_mod.save(codec, out)
    manifest.config["codec_path"] = os.path.abspath(out)
    manifest.config["codec_components"] = args.components
    manifest.config["codec_patch"] = patch
    save_manifest(manifest, args.manifest)
    log(
        f"fit-codec: {codec.fit_stats['n_patches']} patches, C={args.components}, "
        f"P={patch} -> {out}"
    )
    return 0


# --- mix ---------------------------------------------------------------------

def cmd_mix(args) -> int:
    manifest = load_manifest(args.manifest)
    validate_manifest(manifest)
    settings = {**manifest.config, **merged_settings(args)}
    config = signal_config(settings)
    clip_samples = int(settings.get("clip_samples", mixup.DEFAULT_CLIP_SAMPLES))
    iterations = int(settings.get("gl_iterations", 32))
    p = args.p if args.p is not None else float(settings.get("mix_p", 0.5))

    analyzed = [e for e in manifest.entries if e.tempo_bpm is not None and e.beats_path]
    if not analyzed:
        raise MissingPrerequisite("no analyzed tracks; run `beatmix analyze` first")
    if any(e.group_id is None for e in analyzed):
        raise MissingPrerequisite("tracks lack tempo groups; run `beatmix group` first")

    codec = None
    if args.strategy == "blm":
        codec_path = args.codec or settings.get("codec_path")
        if not codec_path or not os.path.exists(codec_path):
            raise MissingPrerequisite(
                "blm mixing needs a fitted codec; run `beatmix fit-codec` first"
            )
        codec = codec_mod.load(codec_path)

    tracks = {}
    captions = {}
    for entry in analyzed:
        grid = beats_mod.load_beat_annotation(
            os.path.join(manifest.root, entry.beats_path)
        )
        tracks[entry.id] = mixup.TrackView(entry.id, entry.n_samples, grid)
        captions[entry.id] = entry.caption
    grids = {tid: view.grid for tid, view in tracks.items()}
    width = float(settings.get("bucket_width", mixup.DEFAULT_BUCKET_WIDTH))
    groups = mixup.assign_tempo_groups(grids, width)

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    cache: dict[str, np.ndarray] = {}
    by_id = manifest.by_id()

    def load_clip(track_id, offset, n):
        if track_id not in cache:
            if len(cache) > 8:
                cache.clear()
            cache[track_id] = wavio.load_wav(manifest.track_path(by_id[track_id])).samples
        clip = cache[track_id][offset : offset + n]
        if clip.size != n:
            raise InputError(f"{track_id}: clip at {offset} runs past end of track")
        return clip

    n_mixed = 0
    for spec, wave in mixup.apply_mixup_pass(
        tracks, groups, args.strategy, p, args.count, rng, load_clip,
        codec=codec, config=config, clip_samples=clip_samples,
        iterations=iterations, seed=args.seed,
    ):
        n_mixed += spec.mixed
        wavio.save_wav(os.path.join(args.out, f"{spec.out_id}.wav"), wave)
        payload = asdict(spec)
        payload["caption_a"] = captions.get(spec.track_a, "")
        payload["caption_b"] = captions.get(spec.track_b, "") if spec.track_b else None
        atomic_write_text(
            os.path.join(args.out, f"{spec.out_id}.mixspec.json"),
            json.dumps(payload, indent=2, sort_keys=True) + "\n",
        )
    log(f"mix: wrote {args.count} clips ({n_mixed} mixed) -> {args.out}")
    return 0


# --- segment ------------------------------------------------------------------

def cmd_segment(args) -> int:
    manifest = load_manifest(args.manifest)
    settings = {**manifest.config, **merged_settings(args)}
    seconds = args.seconds if args.seconds is not None else float(
        settings.get("segment_seconds", 10.0)
    )
    config = signal_config(settings)
    seg_len = int(round(seconds * config.sample_rate))
    segments = []
    empty = 0
    for entry in manifest.entries:
        n_seg = entry.n_samples // seg_len
        if n_seg == 0:
            empty += 1
            log(f"warning: {entry.id}: shorter than one {seconds:g} s segment")
            continue
        for k in range(n_seg):
            segments.append(
                {
                    "track_id": entry.id,
                    "segment_id": f"{entry.id}_seg{k:03d}",
                    "start_sample": k * seg_len,
                    "end_sample": (k + 1) * seg_len,
                }
            )
    out = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.manifest)), "segments.json"
    )
    payload = {
        "schema_version": 1,
        "seconds": seconds,
        "sample_rate": config.sample_rate,
        "segments": segments,
    }
    atomic_write_text(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log(f"segment: {len(segments)} segments from {len(manifest.entries) - empty} tracks -> {out}")
    return 0


# --- eval ----------------------------------------------------------------------

def _parse_named(values):
    """Parse repeatable NAME=PATH (or bare PATH) flags into an ordered dict."""
    out = {}
    for item in values or []:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            path = item
            name = os.path.splitext(os.path.basename(item))[0]
        if name in out:
            raise InputError(f"provider {name!r} given twice")
        out[name] = path
    return out


def _load_named_embeddings(named, modality):
    loaded = {}
    for name, path in named.items():
        try:
            loaded[name] = gateway.load_embedding_set(path, modality)
        except FileNotFoundError as exc:
            raise InputError(f"{path}: {exc.strerror}") from exc
    return loaded


def cmd_eval(args) -> int:
    gen_named = _parse_named(args.gen_emb)
    gt_named = _parse_named(args.gt_emb)
    if not gen_named:
        raise InputError("at least one --gen-emb is required")
    gen_sets = _load_named_embeddings(gen_named, "audio")
    gt_sets = _load_named_embeddings(gt_named, "audio")

    fd_sets = {
        name: (gen_sets[name], gt_sets[name]) for name in gen_sets if name in gt_sets
    }
    primary = next(iter(gen_sets.values()))

    train_seg = (
        gateway.load_embedding_set(args.train_seg_emb, "audio")
        if args.train_seg_emb
        else None
    )
    text = gateway.load_embedding_set(args.text_emb, "text") if args.text_emb else None
    gen_post = gateway.load_posterior_set(args.gen_post) if args.gen_post else None
    gt_post = gateway.load_posterior_set(args.gt_post) if args.gt_post else None
    thresholds = tuple(float(t) for t in args.thresholds.split(","))

    gt_primary = next(iter(gt_sets.values())) if gt_sets else None
    report = metrics.build_report(
        fd_sets=fd_sets or None,
        gen_emb=primary,
        train_seg_emb=train_seg,
        text_emb=text,
        gt_emb=gt_primary,
        gen_post=gen_post,
        gt_post=gt_post,
        thresholds=thresholds,
    )
    report.provenance["gen_providers"] = sorted(gen_sets)

    os.makedirs(args.out, exist_ok=True)
    report_json = os.path.join(args.out, "report.json")
    atomic_write_text(report_json, report.to_json())
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(metrics.render_table(report))
    audit_path = os.path.join(args.out, "nn_audit.json")
    if report.nn_audit:
        atomic_write_text(
            audit_path,
            json.dumps(
                [
                    {
                        "gen_id": r.gen_id,
                        "segment_id": r.segment_id,
                        "similarity": r.similarity,
                    }
                    for r in report.nn_audit
                ],
                indent=2,
                sort_keys=True,
            )
            + "\n",
        )
    log(f"eval: report -> {report_json}")
    return 0


# --- entry point -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are input errors (exit 1)
        self.print_usage(sys.stderr)
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="beatmix", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a corpus directory into a manifest")
    p.add_argument("corpus_dir")
    p.add_argument("--manifest", default="manifest.json")
    p.add_argument("--captions", help="JSON file mapping track id -> caption")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="compute or ingest beat annotations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--external-beats", action="store_true",
                   help="ingest existing .beats.json sidecars instead of analyzing")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("group", help="assign tempo groups")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bucket-width", type=float, default=None)
    p.add_argument("--config")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("fit-codec", help="fit the patch-PCA latent codec")
    p.add_argument("--manifest", required=True)
    p.add_argument("--components", "-C", type=int, default=16)
    p.add_argument("--patch", "-P", type=int, default=8)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_fit_codec)

    p = sub.add_parser("mix", help="render mixed clips")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", choices=mixup.STRATEGIES, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--p", type=float, default=None, help="mixup rate (default 0.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mixes")
    p.add_argument("--codec", help="codec file (default: the one in the manifest)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("segment", help="index non-overlapping segments per track")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seconds", type=float, default=None)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="build a metrics report from embedding files")
    p.add_argument("--gen-emb", action="append",
                   help="generated-audio embeddings, NAME=PATH or PATH (repeatable)")
    p.add_argument("--gt-emb", action="append",
                   help="groundtruth-audio embeddings, NAME=PATH or PATH (repeatable)")
    p.add_argument("--train-seg-emb", help="training-segment embeddings")
    p.add_argument("--text-emb", help="caption text embeddings")
    p.add_argument("--gen-post", help="generated-audio classifier posteriors")
    p.add_argument("--gt-post", help="groundtruth classifier posteriors")
    p.add_argument("--thresholds", default="0.90,0.95")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        log(f"error: {exc}")
        return 1
    except FileNotFoundError as exc:
        log(f"error: {exc.filename}: not found")
        return 1
    except BeatmixError as exc:
        log(f"internal error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
