"""``softvc`` command-line entry point.

Every subcommand prints one JSON object on stdout; logs go to stderr.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from softvc import acoustic, config, core, dsp, metrics, units_discrete, units_soft
from softvc.errors import DataError, ParseError, SoftVCError
from softvc.optim import TrainConfig

log = logging.getLogger("softvc")

# subcommand -> module tag used in runtime error messages
_MODULE_TAGS = {
    "extract-mel": "dsp",
    "train-kmeans": "units_discrete",
    "encode-discrete": "units_discrete",
    "train-soft": "units_soft",
    "encode-soft": "units_soft",
    "train-acoustic": "acoustic",
    "convert": "acoustic",
    "eval-wer": "eval",
    "eval-per": "eval",
    "eval-phoneme-breakdown": "eval",
    "eval-eer": "eval",
    "eval-mos": "eval",
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _opt(parser, flag, key, **kw):
    """Flag whose value overrides config key ``key`` (None = not given)."""
    typ = config.DEFAULTS[key][0]
    default = config.DEFAULTS[key][1]
    if typ is bool:
        parser.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                            help=kw.pop("help", None))
    else:
        parser.add_argument(flag, dest=key, type=typ, default=None,
                            help=f"{kw.pop('help', '')} (default {default})".strip(), **kw)


def _content_args(p, required=True):
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--codebook", type=Path, help="discrete content encoder (VCCB file)")
    group.add_argument("--soft", type=Path, help="soft content encoder checkpoint (VCSE)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    _opt(common, "--seed", "seed", help="RNG seed")

    parser = argparse.ArgumentParser(prog="softvc", description="Soft/discrete speech-unit voice conversion toolkit")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("extract-mel", parents=[common], help="WAV -> log-mel tensor (VCML)")
    p.add_argument("--wav", type=Path, help="single 16 kHz mono WAV")
    p.add_argument("--out", type=Path, help="output VCML file (with --wav)")
    p.add_argument("--manifest", type=Path, help="manifest with wav_path fields")
    p.add_argument("--out-dir", type=Path, help="output directory (with --manifest)")
    _opt(p, "--n-mels", "mel.n_mels", help="mel bands")

    p = sub.add_parser("train-kmeans", parents=[common], help="fit a discrete-unit codebook")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output VCCB file")
    _opt(p, "--k", "kmeans.k", help="number of units")
    _opt(p, "--tol", "kmeans.tol", help="relative inertia tolerance")
    _opt(p, "--max-iter", "kmeans.max_iter", help="Lloyd iteration cap")
    _opt(p, "--n-init", "kmeans.n_init", help="k-means++ restarts")
    _opt(p, "--speaker-normalize", "kmeans.speaker_normalize", help="standardize features per speaker first")

    p = sub.add_parser("encode-discrete", parents=[common], help="features -> discrete units (VCUN)")
    p.add_argument("--features", type=Path, help="single VCFT file")
    p.add_argument("--out", type=Path, help="output VCUN file (with --features)")
    p.add_argument("--manifest", type=Path, help="encode every record")
    p.add_argument("--out-dir", type=Path, help="output directory (with --manifest)")
    p.add_argument("--codebook", type=Path, required=True)

    p = sub.add_parser("train-soft", parents=[common], help="train the soft content encoder")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--codebook", type=Path, required=True, help="codebook providing the unit labels")
    p.add_argument("--out", type=Path, required=True, help="output VCSE checkpoint")
    _opt(p, "--steps", "soft.steps")
    _opt(p, "--lr", "soft.lr", help="Adam learning rate")
    _opt(p, "--tau", "soft.tau", help="softmax temperature")
    _opt(p, "--dim", "soft.dim", help="soft-unit dimension")
    _opt(p, "--batch-frames", "soft.batch_frames")

    p = sub.add_parser("encode-soft", parents=[common], help="features -> soft units (VCFT)")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--soft", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-acoustic", parents=[common], help="train the unit-to-mel acoustic model")
    p.add_argument("--manifest", type=Path, required=True, help="records need feature_path and wav_path")
    _content_args(p)
    p.add_argument("--out", type=Path, required=True, help="output VCAC checkpoint")
    _opt(p, "--steps", "acoustic.steps")
    _opt(p, "--lr", "acoustic.lr", help="Adam learning rate")
    _opt(p, "--hidden", "acoustic.hidden", help="hidden width")
    _opt(p, "--upsample-factor", "acoustic.upsample_factor")
    _opt(p, "--batch-frames", "acoustic.batch_frames")
    _opt(p, "--val-fraction", "acoustic.val_fraction", help="share of utterances held out for checkpoint selection")
    _opt(p, "--eval-every", "acoustic.eval_every")
    _opt(p, "--align", "acoustic.align", help="truncate|strict unit/mel length policy")

    p = sub.add_parser("convert", parents=[common], help="features -> converted WAV")
    p.add_argument("--features", type=Path, required=True)
    _content_args(p)
    p.add_argument("--acoustic", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output WAV")
    p.add_argument("--mel-out", type=Path, help="also write the predicted mel (VCML)")
    _opt(p, "--iters", "griffin_lim.iters", help="Griffin-Lim iterations")

    for name, what in (("eval-wer", "word"), ("eval-per", "phoneme"), ("eval-phoneme-breakdown", "per-phoneme")):
        p = sub.add_parser(name, parents=[common], help=f"{what} error rate from transcript manifests")
        p.add_argument("--ref", type=Path, required=True, help="manifest with reference transcripts")
        p.add_argument("--hyp", type=Path, required=True, help="manifest with ASR transcripts (same ids)")

    p = sub.add_parser("eval-eer", parents=[common], help="speaker-verification EER")
    p.add_argument("--converted", type=Path, required=True, help="manifest of converted-speech embeddings")
    p.add_argument("--enrollment", type=Path, required=True, help="manifest of target-speaker embeddings")
    _opt(p, "--n-enroll", "eer.n_enroll", help="enrollment utterances per converted example")

    p = sub.add_parser("eval-mos", parents=[common], help="MOS with 95%% confidence interval")
    p.add_argument("--ratings", type=Path, required=True, help="file of integer ratings (1-5), '-' for stdin")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _load_all_features(manifest: core.Manifest) -> list[core.FeatureSequence]:
    return [core.load_features(r) for r in manifest]


def _label_features(feats, codebook: units_discrete.Codebook):
    source = units_discrete.speaker_normalize(feats) if codebook.speaker_normalized else feats
    return [units_discrete.encode_discrete(f, codebook) for f in source]


def _load_content(args):
    if args.codebook is not None:
        return units_discrete.Codebook.load(args.codebook)
    params, _ = units_soft.load_soft_encoder(args.soft)
    return params


def _single_features(path: Path) -> core.FeatureSequence:
    return core.FeatureSequence(path.stem, "", core.read_tensor_kind(path, "VCFT"))


def _transcripts(ref_path, hyp_path, field):
    ref = core.parse_manifest(ref_path, required=("id", field))
    hyp = core.parse_manifest(hyp_path, required=("id", field)).by_id()
    missing = [r.id for r in ref if r.id not in hyp]
    if missing:
        raise DataError(f"hypothesis manifest lacks ids {missing[:5]}")
    return [(getattr(r, field), getattr(hyp[r.id], field)) for r in ref]


def _alignments(pairs):
    return [metrics.align(r.split(), h.split()) for r, h in pairs]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_extract_mel(args, cfg):
    n_mels = cfg["mel.n_mels"]
    if args.wav is not None:
        if args.out is None:
            raise DataError("--wav requires --out")
        mel = dsp.mel_spectrogram(dsp.read_wav(args.wav), n_mels)
        core.write_tensor("VCML", mel.frames, args.out)
        return {"frames": len(mel), "n_mels": n_mels}
    if args.manifest is None or args.out_dir is None:
        raise DataError("give --wav/--out or --manifest/--out-dir")
    manifest = core.parse_manifest(args.manifest, required=("id", "wav_path"))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for rec in manifest:
        mel = dsp.mel_spectrogram(dsp.read_wav(rec.resolve("wav_path")), n_mels)
        core.write_tensor("VCML", mel.frames, args.out_dir / f"{rec.id}.vcml")
        total += len(mel)
    return {"utterances": len(manifest), "frames": total, "n_mels": n_mels}


def cmd_train_kmeans(args, cfg):
    feats = _load_all_features(core.parse_manifest(args.manifest))
    if cfg["kmeans.speaker_normalize"]:
        feats = units_discrete.speaker_normalize(feats)
    frames = np.concatenate([f.frames for f in feats])
    cb = units_discrete.kmeans_fit(
        frames, cfg["kmeans.k"], seed=cfg["seed"], tol=cfg["kmeans.tol"],
        max_iter=cfg["kmeans.max_iter"], n_init=cfg["kmeans.n_init"],
    )
    cb.speaker_normalized = cfg["kmeans.speaker_normalize"]
    cb.save(args.out)
    return {"inertia": cb.inertia, "iterations": cb.iterations, "K": cb.K, "D": cb.D, "frames": int(frames.shape[0])}


def cmd_encode_discrete(args, cfg):
    cb = units_discrete.Codebook.load(args.codebook)
    if args.features is not None:
        if args.out is None:
            raise DataError("--features requires --out")
        (units,) = _label_features([_single_features(args.features)], cb)
        core.write_units(units, args.out)
        return {"frames": len(units), "K": cb.K}
    if args.manifest is None or args.out_dir is None:
        raise DataError("give --features/--out or --manifest/--out-dir")
    feats = _load_all_features(core.parse_manifest(args.manifest))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for units in _label_features(feats, cb):
        core.write_units(units, args.out_dir / f"{units.utterance_id}.vcun")
        total += len(units)
    return {"utterances": len(feats), "frames": total, "K": cb.K}


def cmd_train_soft(args, cfg):
    cb = units_discrete.Codebook.load(args.codebook)
    feats = _load_all_features(core.parse_manifest(args.manifest))
    labels = _label_features(feats, cb)
    tc = TrainConfig(
        learning_rate=cfg["soft.lr"], steps=cfg["soft.steps"],
        batch_frames=cfg["soft.batch_frames"], seed=cfg["seed"],
    )
    params, curve = units_soft.train_soft_encoder(
        list(zip(feats, labels)), tc, K=cb.K, dim=cfg["soft.dim"], tau=cfg["soft.tau"]
    )
    units_soft.save_soft_encoder(params, args.out, seed=cfg["seed"], step=tc.steps)
    X = np.concatenate([f.frames for f in feats])
    y = np.concatenate([u.units for u in labels])
    return {
        "steps": tc.steps,
        "initial_loss": curve[0],
        "final_loss": units_soft.soft_loss(params, X, y),
        "frame_accuracy": units_soft.frame_accuracy(params, X, y),
    }


def cmd_encode_soft(args, cfg):
    params, _ = units_soft.load_soft_encoder(args.soft)
    soft = units_soft.encode_soft(_single_features(args.features), params)
    core.write_tensor("VCFT", soft.vectors, args.out)
    return {"frames": len(soft), "dim": params.D_s}


def cmd_train_acoustic(args, cfg):
    manifest = core.parse_manifest(args.manifest, required=("id", "speaker", "feature_path", "wav_path"))
    content = _load_content(args)
    feats = _load_all_features(manifest)
    if isinstance(content, units_discrete.Codebook):
        units = _label_features(feats, content)
    else:
        units = [units_soft.encode_soft(f, content) for f in feats]
    mels = [dsp.mel_spectrogram(dsp.read_wav(r.resolve("wav_path")), cfg["mel.n_mels"]) for r in manifest]
    pairs = list(zip(units, mels))

    rng = np.random.default_rng(cfg["seed"])
    n_val = int(round(cfg["acoustic.val_fraction"] * len(pairs)))
    order = rng.permutation(len(pairs))
    val_idx = set(order[:n_val].tolist())
    train = [p for i, p in enumerate(pairs) if i not in val_idx]
    val = [p for i, p in enumerate(pairs) if i in val_idx] or None

    tc = TrainConfig(
        learning_rate=cfg["acoustic.lr"], steps=cfg["acoustic.steps"],
        batch_frames=cfg["acoustic.batch_frames"], seed=cfg["seed"],
    )
    params, curve = acoustic.train_acoustic(
        train, tc, hidden=cfg["acoustic.hidden"], n_mels=cfg["mel.n_mels"],
        upsample_factor=cfg["acoustic.upsample_factor"], validation=val,
        eval_every=cfg["acoustic.eval_every"], align=cfg["acoustic.align"],
        mode="discrete" if isinstance(content, units_discrete.Codebook) else "soft",
        input_dim=content.K if isinstance(content, units_discrete.Codebook) else content.D_s,
    )
    acoustic.save_acoustic(params, args.out, seed=cfg["seed"])
    result = {"steps": tc.steps, "final_loss": curve[-1], "selected_step": params.step, "train_utterances": len(train)}
    if val:
        result["val_loss"] = acoustic.dataset_loss(params, val, cfg["acoustic.align"])
    return result


def cmd_convert(args, cfg):
    content = _load_content(args)
    params, _ = acoustic.load_acoustic(args.acoustic)
    feats = _single_features(args.features)
    mel = acoustic.convert_to_mel(feats, content, params)
    wav = dsp.griffin_lim(mel, cfg["griffin_lim.iters"])
    dsp.write_wav(wav, args.out)
    if args.mel_out is not None:
        core.write_tensor("VCML", mel.frames, args.mel_out)
    return {"samples": len(wav), "sample_rate": wav.sample_rate_hz, "mel_frames": len(mel)}


def cmd_eval_wer(args, cfg):
    return {"wer": metrics.corpus_error_rate(_alignments(_transcripts(args.ref, args.hyp, "transcript_words")))}


def cmd_eval_per(args, cfg):
    return {"per": metrics.corpus_error_rate(_alignments(_transcripts(args.ref, args.hyp, "transcript_phonemes")))}


def cmd_eval_phoneme_breakdown(args, cfg):
    al = _alignments(_transcripts(args.ref, args.hyp, "transcript_phonemes"))
    return {"per": metrics.corpus_error_rate(al), "per_symbol": metrics.per_symbol_error_rates(al)}


def _embeddings(path):
    manifest = core.parse_manifest(path, required=("id", "embedding_path"))
    return [(r.id, core.read_tensor_kind(r.resolve("embedding_path"), "VCEM").reshape(-1)) for r in manifest]


def cmd_eval_eer(args, cfg):
    trials = metrics.build_trials(
        _embeddings(args.converted), _embeddings(args.enrollment), cfg["eer.n_enroll"], seed=cfg["seed"]
    )
    return {
        "eer": metrics.compute_eer(trials),
        "genuine_trials": int(trials.genuine_scores.size),
        "impostor_trials": int(trials.impostor_scores.size),
    }


def cmd_eval_mos(args, cfg):
    text = sys.stdin.read() if str(args.ratings) == "-" else args.ratings.read_text()
    try:
        ratings = [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise ParseError(f"{args.ratings}: ratings must be integers ({exc})") from exc
    mean, half = metrics.mos_ci(ratings)
    return {"mos": {"mean": mean, "ci95": half}, "n": len(ratings)}


_COMMANDS = {
    "extract-mel": cmd_extract_mel,
    "train-kmeans": cmd_train_kmeans,
    "encode-discrete": cmd_encode_discrete,
    "train-soft": cmd_train_soft,
    "encode-soft": cmd_encode_soft,
    "train-acoustic": cmd_train_acoustic,
    "convert": cmd_convert,
    "eval-wer": cmd_eval_wer,
    "eval-per": cmd_eval_per,
    "eval-phoneme-breakdown": cmd_eval_phoneme_breakdown,
    "eval-eer": cmd_eval_eer,
    "eval-mos": cmd_eval_mos,
}


def _setup_logging() -> None:
    root = logging.getLogger("softvc")
    if not any(getattr(h, "_softvc", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        handler._softvc = True
        root.addHandler(handler)
    root.setLevel(logging.INFO)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging()
    try:
        file_values = config.load_config(args.config) if args.config else {}
        overrides = {k: v for k, v in vars(args).items() if k in config.DEFAULTS}
        cfg = config.resolve(file_values, overrides)
    except (SoftVCError, OSError) as exc:
        print(f"softvc: error [config]: {exc}", file=sys.stderr)
        return 1
    log.info("resolved config:\n%s", config.format_config(cfg))
    try:
        result = _COMMANDS[args.command](args, cfg)
    except (SoftVCError, OSError) as exc:
        print(f"softvc: error [{_MODULE_TAGS[args.command]}]: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    sys.stdout.flush()
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
