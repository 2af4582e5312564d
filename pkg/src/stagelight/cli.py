"""The ``stagelight`` command.

Subcommands: extract | features | build | vmm | pretrain | finetune |
generate | eval | render | synth. Exit codes: 0 success, 1 usage error,
2 data error. ``--json`` switches matching subcommands to machine-readable
output on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

import numpy as np

from . import audiofeat, dataset, lightcodec, render, synth, vmm
from .errors import DataError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _frames_from_args(args):
    if args.frames_dir:
        return lightcodec.iter_ppm_dir(args.frames_dir)
    if args.raw:
        if args.width is None or args.height is None:
            raise UsageError("--raw requires --width and --height")
        return lightcodec.iter_raw_frames(args.raw, args.width, args.height, args.count)
    raise UsageError("provide --frames-dir or --raw")


def _add_frame_source(p):
    p.add_argument("--frames-dir", help="directory of P6 .ppm frames (lexicographic order)")
    p.add_argument("--raw", help="packed RGB24 frame stream file")
    p.add_argument("--width", type=int, help="frame width for --raw")
    p.add_argument("--height", type=int, help="frame height for --raw")
    p.add_argument("--count", type=int, help="frame count for --raw (default: whole file)")


def _sequence_from(path, record: Optional[str]):
    if str(path).endswith(".sbl1"):
        container = dataset.load_container(path)
        if record:
            return container.get(record).light_sequence()
        if len(container) == 1:
            return container.records[0].light_sequence()
        raise UsageError(f"{path} holds {len(container)} records; pick one with --record")
    return dataset.read_light_csv(path)


def cmd_extract(args) -> int:
    seq = lightcodec.extract_sequence(_frames_from_args(args), args.v_threshold)
    if args.out:
        dataset.write_light_csv(args.out, seq)
    if args.json:
        print(json.dumps({"frames": len(seq), "v_threshold": args.v_threshold}))
    elif not args.out:
        for i, tok in enumerate(seq):
            print(f"{i},{tok.hue},{tok.value}")
    return 0


def cmd_features(args) -> int:
    clip = audiofeat.load_wav(args.wav)
    extractor = audiofeat.get_extractor(args.kind)
    fm = extractor(clip)
    audiofeat.write_feature_dump(args.out, fm)
    if args.json:
        print(json.dumps({"T": fm.frames, "F": fm.dim, "kind": fm.kind, "out": args.out}))
    return 0


def cmd_build(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        try:
            entries = json.load(fh)
        except ValueError as exc:
            raise DataError(f"{args.manifest}: not valid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise DataError(f"{args.manifest}: expected a JSON list of records")
    extractor = audiofeat.get_extractor(args.kind)
    records = []
    for entry in entries:
        rid, sid = entry.get("id"), entry.get("show")
        if not rid or not sid:
            raise DataError(f"{args.manifest}: every record needs 'id' and 'show'")
        if "frames_dir" in entry:
            frames = lightcodec.iter_ppm_dir(entry["frames_dir"])
        elif "raw" in entry:
            frames = lightcodec.iter_raw_frames(
                entry["raw"], entry["width"], entry["height"], entry.get("count")
            )
        else:
            raise DataError(f"record {rid!r}: needs 'frames_dir' or 'raw'")
        light = lightcodec.extract_sequence(frames, args.v_threshold)
        clip = audiofeat.load_wav(entry["wav"])
        fm = extractor(clip)
        records.append(
            dataset.pair_record(rid, sid, light, fm, args.kind, metadata=entry.get("metadata"))
        )
    container = dataset.build_dataset(records)
    dataset.save_container(args.out, container)
    if args.json:
        print(json.dumps({"records": len(container), "out": args.out}))
    return 0


def cmd_vmm(args) -> int:
    frame = lightcodec.read_ppm(args.frame)
    hists = lightcodec.frame_histograms(frame, args.v_threshold)
    samples = vmm.histogram_samples(hists.hue)
    if samples.size < 3:
        raise DataError(f"{args.frame}: too few thresholded pixels to fit a mixture")
    cfg = vmm.FitConfig(k_candidates=tuple(args.k), seed=args.seed)
    mixture = vmm.select_k(samples, cfg)
    print(json.dumps(vmm.mixture_report(mixture, samples)))
    return 0


def _run_training(args, phase: str) -> int:
    from . import training  # torch import deferred to the commands that need it

    cfg = training.load_run_config(args.config)
    cfg.phase = phase
    if args.dataset:
        cfg.dataset = args.dataset
    if args.checkpoint_dir:
        cfg.checkpoint_dir = args.checkpoint_dir
    if not cfg.dataset:
        raise UsageError("no dataset path (set it in the run config or pass --dataset)")
    container = dataset.load_container(cfg.dataset)
    result = training.train(cfg, container, resume=args.resume)
    summary = {
        "phase": phase,
        "epochs": len(result.history),
        "best_checkpoint": result.best_checkpoint,
        "last_checkpoint": result.last_checkpoint,
        "log": result.log_path,
    }
    if result.final_hue_acc is not None:
        summary["hue_acc"] = result.final_hue_acc
        summary["value_acc"] = result.final_value_acc
    if args.json:
        print(json.dumps(summary))
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_training(args, "pretrain")


def cmd_finetune(args) -> int:
    return _run_training(args, "finetune")


def cmd_generate(args) -> int:
    from . import sampling
    from .checkpoint import arrays_to_state_dict, load_checkpoint
    from .model import ModelConfig, MusicLightTransformer

    arrays, manifest = load_checkpoint(args.checkpoint)
    model = MusicLightTransformer(ModelConfig.from_dict(manifest["config"]))
    model.load_state_dict(arrays_to_state_dict(arrays, model))

    if args.features:
        fm = audiofeat.read_feature_dump(args.features)
        feats, rid = fm.data, "features"
    else:
        if not args.dataset:
            raise UsageError("provide --features or --dataset")
        container = dataset.load_container(args.dataset)
        rec = container.get(args.record) if args.record else container.records[0]
        feats, rid = rec.features, rec.record_id

    cfg = sampling.SamplerConfig(
        temperature=args.temperature,
        hue_threshold=args.hue_threshold,
        value_threshold=args.value_threshold,
        seed=args.seed,
        max_len=args.max_len,
    )
    result = sampling.generate(feats, model, cfg)
    if args.out and args.out.endswith(".sbl1"):
        rec = dataset.DatasetRecord(
            record_id=rid,
            show_id="generated",
            features=np.asarray(feats)[: len(result.sequence)],
            hue=result.sequence.hue_array(),
            value=result.sequence.value_array(),
            feature_kind="generated",
            metadata={"seed": args.seed, "temperature": args.temperature},
        )
        dataset.save_container(args.out, dataset.DatasetContainer([rec]))
    elif args.out:
        dataset.write_light_csv(args.out, result.sequence)
    if args.json:
        print(json.dumps({"frames": len(result.sequence), "seed": args.seed, "out": args.out}))
    elif not args.out:
        for i, tok in enumerate(result.sequence):
            print(f"{i},{tok.hue},{tok.value}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import eval_report

    pred = _sequence_from(args.pred, args.record)
    truth = _sequence_from(args.truth, args.record)
    report = eval_report([(args.record or "pair", pred, truth)])
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        agg = report.aggregate
        print(
            f"hue RMSE {agg.hue_rmse:.4f}  hue MAE {agg.hue_mae:.4f}  "
            f"value RMSE {agg.value_rmse:.4f}  value MAE {agg.value_mae:.4f}  "
            f"({agg.count} frames)"
        )
    return 0


def cmd_render(args) -> int:
    seq = _sequence_from(args.input, args.record)
    render.render_strip(seq, args.height, args.out)
    if args.json:
        print(json.dumps({"frames": len(seq), "height": args.height, "out": args.out}))
    return 0


def cmd_synth(args) -> int:
    container = synth.build_named_corpus(
        args.rule, args.records, args.frames, args.seed, args.feature_dim
    )
    dataset.save_container(args.out, container)
    if args.json:
        print(json.dumps({"rule": args.rule, "records": len(container), "out": args.out}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="stagelight", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("extract", help="tokenize video frames into a light CSV")
    _add_frame_source(p)
    p.add_argument(
        "--v-threshold", type=int, default=lightcodec.DEFAULT_V_THRESHOLD,
        help="value threshold for the histograms (published set: 0,30,...,240)",
    )
    p.add_argument("--out", help="CSV output path (default: print)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("features", help="extract a feature dump from a WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--kind", default="logmel", choices=sorted(audiofeat.FEATURE_EXTRACTORS))
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("build", help="build an SBL1 container from paired sources")
    p.add_argument("--manifest", required=True, help="JSON list of records: "
                   '{"id","show","wav","frames_dir"|("raw","width","height")}')
    p.add_argument("--v-threshold", type=int, default=lightcodec.DEFAULT_V_THRESHOLD)
    p.add_argument("--kind", default="logmel", choices=sorted(audiofeat.FEATURE_EXTRACTORS))
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("vmm", help="fit a von Mises mixture to one frame's hues")
    p.add_argument("--frame", required=True, help="P6 .ppm frame")
    p.add_argument("--v-threshold", type=int, default=lightcodec.DEFAULT_V_THRESHOLD)
    p.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_vmm)

    for name, fn in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"run the {name} phase from a run config")
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--dataset", help="override the dataset path")
        p.add_argument("--checkpoint-dir", help="override the checkpoint directory")
        p.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint directory's last state")
        p.add_argument("--json", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("generate", help="generate a light sequence from features")
    p.add_argument("--checkpoint", required=True, help="checkpoint base path (no extension)")
    p.add_argument("--features", help="feature dump input")
    p.add_argument("--dataset", help="SBL1 container input")
    p.add_argument("--record", help="record id inside --dataset")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--hue-threshold", type=int, default=30)
    p.add_argument("--value-threshold", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out", help=".csv or .sbl1 output")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="cyclic RMSE/MAE between two light sequences")
    p.add_argument("--pred", required=True, help="CSV or single-record .sbl1")
    p.add_argument("--truth", required=True)
    p.add_argument("--record", help="record id when comparing containers")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("render", help="render a light sequence as a strip image")
    p.add_argument("--input", required=True, help="CSV or .sbl1")
    p.add_argument("--record", help="record id for container input")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--out", required=True, help="P6 .ppm output")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("synth", help="generate a rule-labelled synthetic corpus")
    p.add_argument("--rule", required=True, choices=sorted(synth.RULES))
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
