"""Command-line entry point: ``svsgan <command> ...`` or ``python -m svsgan``.

Exit codes: 0 success, 1 usage or parameter error, 2 data error (missing,
malformed or tampered files), 3 numerical or training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bsseval, dsp, gan, pipeline, synth
from .errors import DataError, NumericalError, ParameterError, TrainingError, UsageError

logger = logging.getLogger("svsgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_clips(data_dir):
    if not Path(data_dir).is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    return pipeline.ingest(data_dir)


def cmd_train(args) -> int:
    config = pipeline.RunConfig.from_json(args.config) if args.config else pipeline.RunConfig()
    if args.variant:
        config.variant = gan.Variant.parse(args.variant).value
    clips = _load_clips(args.data)
    if not clips:
        raise DataError(f"no clips in {args.data}")
    pipeline.train(clips, config, args.out, pretrain_only=args.pretrain_only, log=logger.info)
    logger.info("run written to %s", args.out)
    return EXIT_OK


def cmd_separate(args) -> int:
    g, config = pipeline.load_generator(args.model)
    mixture = dsp.read_wav(args.input)
    vocal, music = pipeline.separate(g, mixture, config)
    dsp.write_wav(args.out_vocal, pipeline.peak_safe(vocal))
    dsp.write_wav(args.out_music, pipeline.peak_safe(music))
    return EXIT_OK


def _write_scores(result, csv_path, how):
    bsseval.write_scores_csv(csv_path, result)
    summary = Path(csv_path).with_suffix(".json")
    bsseval.write_summary_json(summary, result, how)
    for source, row in result.aggregate(how).items():
        print(f"{source:6s} SDR {row['sdr']:7.2f}  SIR {row['sir']:7.2f}  SAR {row['sar']:7.2f}")


def cmd_evaluate(args) -> int:
    manifest = pipeline.load_manifest(args.model)
    g, config = pipeline.load_generator(args.model)
    clips = _load_clips(args.data)
    test_ids = set(manifest.get("test_ids", ()))
    if args.split == "test" and test_ids:
        clips = [c for c in clips if c.id in test_ids]
    if not clips:
        raise DataError(f"no clips to evaluate in {args.data}")
    result = pipeline.evaluate(g, clips, config, filter_len=args.filter_len)
    _write_scores(result, args.csv, args.aggregate)
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = pipeline.RunConfig.from_json(args.config) if args.config else pipeline.RunConfig()
    clips = _load_clips(args.data)
    if not clips:
        raise DataError(f"no clips in {args.data}")
    result = pipeline.evaluate_oracle(clips, config, args.mask, filter_len=args.filter_len)
    _write_scores(result, args.csv, args.aggregate)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = gan.gradient_suite(args.seed, n_coords=args.coords)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:9s} max relative error {err:.3e}")
    if worst >= GRADCHECK_TOL:
        print(f"FAIL: {worst:.3e} >= {GRADCHECK_TOL:g}")
        return EXIT_NUMERIC
    print("ok")
    return EXIT_OK


def cmd_synth(args) -> int:
    paths = synth.write_dataset(args.out, args.n_clips, args.duration, seed=args.seed)
    print(f"wrote {len(paths)} clips to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svsgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="pretrain and adversarially fine-tune a separator")
    p.add_argument("--data", required=True, help="directory of stereo WAVs")
    p.add_argument("--config", help="RunConfig JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--variant", choices=["vbm", "vm", "vb"], type=str.lower)
    p.add_argument("--pretrain-only", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="split a mixture WAV into vocal and music")
    p.add_argument("--model", required=True, help="run directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-vocal", required=True)
    p.add_argument("--out-music", required=True)
    p.set_defaults(func=cmd_separate)

    aggregate = dict(choices=["weighted-mean", "median"], default="weighted-mean")

    p = sub.add_parser("evaluate", help="BSS-Eval scores of a trained run")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True, help="per-clip scores; a .json summary goes beside it")
    p.add_argument("--aggregate", **aggregate)
    p.add_argument("--split", choices=["test", "all"], default="test",
                   help="score only the run's held-out clips (default) or every clip")
    p.add_argument("--filter-len", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="BSS-Eval scores of oracle masks")
    p.add_argument("--data", required=True)
    p.add_argument("--mask", choices=["ibm", "soft"], required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--config")
    p.add_argument("--aggregate", **aggregate)
    p.add_argument("--filter-len", type=int, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gradcheck", help="finite-difference check of every training gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the synthetic disjoint-band dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int, default=64)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParameterError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
