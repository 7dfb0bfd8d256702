"""Command-line orchestration of the full experiment loop.

Subcommands: mixgen, separate, pseudolabel, train, infer, evaluate,
ensemble, report. Every command takes --config (JSON) plus overrides;
all randomness is keyed by the config seed, so re-runs are
byte-reproducible. Exit codes: 0 success, 1 usage/config error, 2 data
error.

CSV columns:
  evaluate:  mixture_id, system, si_sdr, si_sir, si_sar
  ensemble:  mixture_id, provenance, mean_confidence, si_sdr, si_sir, si_sar
  report:    mixture_id, mean_confidence, log10_mean_confidence, si_sdr
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import dcnet, ensemble as ens_mod, metrics, mixgen as mixgen_mod
from .config import ConfigError, RunConfig, load_config
from .pipeline import (
    ground_truth_labels,
    log_mag_features,
    separate_stereo,
)
from .dcnet import DcnetError
from .mixgen import MixgenError
from .separation import magnitude_weights
from .shards import ShardError, read_shard, write_shard
from .signal import SignalError, Waveform, read_wav, stft, write_wav
from .spatial import SpatialError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(RuntimeError):
    pass


@contextlib.contextmanager
def output_dir(path):
    """Create the directory and hold an exclusive lock file inside it."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".bootsep.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"output directory is locked: {lock}")
    try:
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def mixture_seed(base_seed: int, mixture_id: str) -> int:
    return int(
        np.random.SeedSequence([base_seed, zlib.crc32(mixture_id.encode())])
        .generate_state(1)[0]
    )


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "alpha", None) is not None:
        cfg.confidence.alpha = args.alpha
    return cfg


def _fmt(x):
    return f"{x:.10g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _read_manifest(path):
    if not Path(path).exists():
        raise DataError(f"manifest not found: {path}")
    return mixgen_mod.read_manifest(path)


def _spatial_run(spec, cfg):
    record = mixgen_mod.make_mixture(spec)
    seed = mixture_seed(cfg.seed, spec.mixture_id)
    result = separate_stereo(record.mixture, cfg, seed=seed)
    return record, result


def _score(estimates, record):
    # stereo estimates are scored against the full stereo ground-truth
    # stems; mono estimates against the first reference channel
    if estimates[0].n_channels == record.stems[0].n_channels:
        refs = record.stems
    else:
        refs = [stem.channel(0) for stem in record.stems]
    return metrics.si_sir_sar(estimates, refs)


def _dc_stems(net, record, cfg):
    return dcnet.infer(
        net,
        record.mixture.channel(0),
        cfg.n_components,
        cfg.stft.window_ms,
        cfg.stft.hop_ms,
        seed=mixture_seed(cfg.seed + 1, record.spec.mixture_id),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_mixgen(args):
    cfg = _load_cfg(args)
    mg = cfg.mixgen
    specs = mixgen_mod.make_corpus_specs(
        mg.n_mixtures,
        cfg.seed,
        duration=mg.duration,
        sample_rate=mg.sample_rate,
        source_kinds=tuple(mg.source_kinds),
    )
    splits = mixgen_mod.split_specs(specs, tuple(mg.split_fractions))
    with output_dir(args.out) as out:
        audio = out / "audio"
        audio.mkdir(exist_ok=True)
        for split_specs in splits.values():
            for spec in split_specs:
                record = mixgen_mod.make_mixture(spec)
                write_wav(audio / f"{spec.mixture_id}_mix.wav", record.mixture)
                for j, stem in enumerate(record.stems):
                    write_wav(audio / f"{spec.mixture_id}_src{j}.wav", stem)
        mixgen_mod.write_manifest(out / "manifest.jsonl", splits)
    print(f"wrote {len(specs)} mixtures to {args.out}")
    return EXIT_OK


def cmd_separate(args):
    cfg = _load_cfg(args)
    mix = read_wav(args.input)
    result = separate_stereo(mix, cfg, seed=cfg.seed)
    with output_dir(args.out) as out:
        for j, stem in enumerate(result.stems):
            write_wav(out / f"stem{j}.wav", stem)
        _write_json(
            out / "confidence.json",
            {
                "c_cluster": result.confidence.c_cluster,
                "c_jsd": result.confidence.c_jsd,
                "alpha": result.confidence.alpha,
                "mean_confidence": result.confidence.mean_confidence,
            },
        )
    print(f"mean confidence {result.confidence.mean_confidence:.4f}")
    return EXIT_OK


def cmd_pseudolabel(args):
    cfg = _load_cfg(args)
    manifest = _read_manifest(args.manifest)
    with output_dir(args.out) as out:
        for split, specs in manifest.items():
            split_dir = out / split
            split_dir.mkdir(exist_ok=True)
            for spec in specs:
                record, result = _spatial_run(spec, cfg)
                if args.labels == "ground-truth":
                    labels = ground_truth_labels(record.stems, cfg)
                    mix_spec = stft(
                        record.mixture.channel(0), cfg.stft.window_ms, cfg.stft.hop_ms
                    )
                    weights = magnitude_weights(mix_spec, channel=0)
                else:
                    labels = result.labels
                    weights = result.weights
                fields = {
                    "log_mag": log_mag_features(record.mixture, cfg),
                    "labels": labels,
                    "weights": weights,
                    "mean_confidence": np.array(
                        [result.confidence.mean_confidence]
                    ),
                }
                write_shard(split_dir / f"{spec.mixture_id}.shard", spec.mixture_id, fields)
    print(f"wrote shards to {args.out}")
    return EXIT_OK


def _load_shard_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"shard directory not found: {path}")
    items = []
    for shard in sorted(path.glob("*.shard")):
        _, fields = read_shard(shard)
        items.append(
            (
                fields["log_mag"].astype(np.float64),
                fields["labels"].astype(np.int64),
                fields["weights"].astype(np.float64),
            )
        )
    if not items:
        raise DataError(f"no shards in {path}")
    return items


def cmd_train(args):
    cfg = _load_cfg(args)
    train_items = _load_shard_dir(Path(args.shards) / "train")
    val_items = _load_shard_dir(Path(args.shards) / "validation")
    n_freq = train_items[0][0].shape[1]
    net = dcnet.EmbeddingNetwork(cfg.network_config(n_freq), seed=cfg.seed)
    tc = cfg.training
    tc.seed = cfg.seed
    result = dcnet.train(net, train_items, val_items, tc)
    dcnet.save_checkpoint(
        net,
        args.out,
        extra={
            "train_losses": result.train_losses,
            "val_losses": result.val_losses,
            "best_epoch": result.best_epoch,
            "config_seed": cfg.seed,
        },
    )
    print(
        f"trained {tc.epochs} epochs; best val loss "
        f"{result.best_val_loss:.6g} at epoch {result.best_epoch}"
    )
    return EXIT_OK


def cmd_infer(args):
    cfg = _load_cfg(args)
    net, _ = dcnet.load_checkpoint(args.checkpoint)
    mix = read_wav(args.input)
    stems = dcnet.infer(
        net,
        mix.channel(0),
        args.n_sources,
        cfg.stft.window_ms,
        cfg.stft.hop_ms,
        seed=cfg.seed,
    )
    with output_dir(args.out) as out:
        for j, stem in enumerate(stems):
            write_wav(out / f"stem{j}.wav", stem)
    print(f"wrote {len(stems)} stems to {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    if args.shards:
        return _evaluate_shards(args, cfg)
    manifest = _read_manifest(args.manifest)
    specs = manifest.get(args.split, [])
    if not specs:
        raise DataError(f"no mixtures in split '{args.split}'")
    net = None
    if args.checkpoint:
        net, _ = dcnet.load_checkpoint(args.checkpoint)
    rows = []
    sdrs = []
    for spec in specs:
        record, result = _spatial_run(spec, cfg)
        if net is not None:
            estimates = _dc_stems(net, record, cfg)
            system = "dc"
        else:
            estimates = result.stems
            system = "spatial"
        scores = _score(estimates, record)
        rows.append(
            (
                spec.mixture_id,
                system,
                _fmt(scores.mean_si_sdr),
                _fmt(float(np.mean(scores.si_sir))),
                _fmt(float(np.mean(scores.si_sar))),
            )
        )
        sdrs.append(scores.mean_si_sdr)
    with output_dir(args.out) as out:
        _write_csv(out / "scores.csv", ["mixture_id", "system", "si_sdr", "si_sir", "si_sar"], rows)
        _write_json(out / "summary.json", {"mean_si_sdr": float(np.mean(sdrs)), "n": len(sdrs)})
    print(f"mean SI-SDR {np.mean(sdrs):.2f} dB over {len(sdrs)} mixtures")
    return EXIT_OK


def _evaluate_shards(args, cfg):
    manifest = _read_manifest(args.manifest)
    specs = {s.mixture_id: s for split in manifest.values() for s in split}
    shard_dir = Path(args.shards)
    triples = []
    alpha_weights = []
    zero_weights = []
    for shard in sorted(shard_dir.rglob("*.shard")):
        mixture_id, fields = read_shard(shard)
        if mixture_id not in specs:
            raise DataError(f"shard {shard} not in manifest")
        record = mixgen_mod.make_mixture(specs[mixture_id])
        y_true = ground_truth_labels(record.stems, cfg)
        w = fields["weights"].astype(np.float64)
        triples.append((y_true.reshape(-1), fields["labels"].reshape(-1), w.reshape(-1)))
        alpha_weights.append(w)
        mix_spec = stft(record.mixture.channel(0), cfg.stft.window_ms, cfg.stft.hop_ms)
        zero_weights.append(magnitude_weights(mix_spec, channel=0))
    quality = metrics.dataset_label_quality(triples)
    quant = metrics.quantity(alpha_weights, zero_weights)
    with output_dir(args.out) as out:
        _write_json(
            out / "label_report.json",
            {"quality": quality, "quantity": quant, "n_mixtures": len(triples)},
        )
    print(f"quality {quality:.3f} quantity {quant:.3f}")
    return EXIT_OK


def cmd_ensemble(args):
    cfg = _load_cfg(args)
    manifest = _read_manifest(args.manifest)
    val_specs = manifest.get("validation", [])
    test_specs = manifest.get("test", [])
    if not test_specs:
        raise DataError("no mixtures in split 'test'")
    net, _ = dcnet.load_checkpoint(args.checkpoint)

    threshold = 0.0
    if args.policy == "confidence":
        if len(val_specs) < 4:
            raise DataError("confidence policy needs >= 4 validation mixtures")
        val_conf = [
            _spatial_run(s, cfg)[1].confidence.mean_confidence for s in val_specs
        ]
        threshold = ens_mod.calibrate_threshold(val_conf)
    policy = ens_mod.EnsemblePolicy(args.policy, threshold=threshold, seed=cfg.ensemble.seed)

    rows = []
    sdrs = []
    for spec in test_specs:
        record, result = _spatial_run(spec, cfg)
        dc_stems = _dc_stems(net, record, cfg)
        candidate = ens_mod.Candidate(
            spatial_stems=result.stems,
            dc_stems=dc_stems,
            mean_confidence=result.confidence.mean_confidence,
        )
        if args.policy == "oracle":
            candidate.spatial_score = _score(result.stems, record).mean_si_sdr
            candidate.dc_score = _score(dc_stems, record).mean_si_sdr
        stems, tag = ens_mod.select(policy, candidate)
        scores = _score(stems, record)
        rows.append(
            (
                spec.mixture_id,
                tag,
                _fmt(candidate.mean_confidence),
                _fmt(scores.mean_si_sdr),
                _fmt(float(np.mean(scores.si_sir))),
                _fmt(float(np.mean(scores.si_sar))),
            )
        )
        sdrs.append(scores.mean_si_sdr)
    with output_dir(args.out) as out:
        _write_csv(
            out / "ensemble.csv",
            ["mixture_id", "provenance", "mean_confidence", "si_sdr", "si_sir", "si_sar"],
            rows,
        )
        _write_json(
            out / "summary.json",
            {
                "policy": args.policy,
                "threshold": threshold,
                "mean_si_sdr": float(np.mean(sdrs)),
                "n": len(sdrs),
            },
        )
    print(f"{args.policy} ensemble mean SI-SDR {np.mean(sdrs):.2f} dB")
    return EXIT_OK


def cmd_report(args):
    cfg = _load_cfg(args)
    manifest = _read_manifest(args.manifest)
    specs = manifest.get(args.split, [])
    if not specs:
        raise DataError(f"no mixtures in split '{args.split}'")
    ids, confs, sdrs = [], [], []
    for spec in specs:
        record, result = _spatial_run(spec, cfg)
        ids.append(spec.mixture_id)
        confs.append(result.confidence.mean_confidence)
        sdrs.append(_score(result.stems, record).mean_si_sdr)
    report = metrics.confidence_sdr_report(ids, confs, sdrs)
    with output_dir(args.out) as out:
        _write_csv(
            out / "confidence_sdr.csv",
            ["mixture_id", "mean_confidence", "log10_mean_confidence", "si_sdr"],
            [(i, _fmt(c), _fmt(lc), _fmt(s)) for i, c, lc, s in report.rows],
        )
        _write_json(
            out / "summary.json",
            {
                "pearson_r": report.pearson_r,
                "p_value": report.p_value,
                "degenerate": report.degenerate,
                "n": len(report.rows),
            },
        )
    if report.degenerate:
        print("correlation undefined (constant input)")
    else:
        print(f"pearson r {report.pearson_r:.3f} (p {report.p_value:.2g})")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="bootsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.set_defaults(fn=fn)
        return p

    p = add("mixgen", cmd_mixgen, "generate a synthetic corpus")
    p.add_argument("--out", required=True)

    p = add("separate", cmd_separate, "spatially separate one stereo WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)

    p = add("pseudolabel", cmd_pseudolabel, "build training shards from a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--labels", choices=["spatial", "ground-truth"], default="spatial")

    p = add("train", cmd_train, "train the embedding network on shards")
    p.add_argument("--shards", required=True)
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "separate a mono WAV with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-sources", type=int, default=2)

    p = add("evaluate", cmd_evaluate, "score stems or audit shard labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", help="score the learned model instead of spatial")
    p.add_argument("--shards", help="emit quality/quantity report for these shards")
    p.add_argument("--alpha", type=float)

    p = add("ensemble", cmd_ensemble, "mediate spatial vs. learned per mixture")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=list(ens_mod.POLICY_KINDS), default="confidence")
    p.add_argument("--alpha", type=float)

    p = add("report", cmd_report, "confidence-vs-SDR correlation report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--alpha", type=float)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        ShardError,
        SignalError,
        SpatialError,
        MixgenError,
        DcnetError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
