"""Command-line entry point: ``qbm train | chart | annealer-map``."""

import argparse
import dataclasses
import json
import logging
import sys

from .charts import METRICS, render_chart
from .harness import AnnealerSchedulePoint, ConfigError, ExperimentConfig, annealer_parameter_map, read_trace, run_experiment


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()] if text else []


def _train(args):
    try:
        config = ExperimentConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    if args.out_dir:
        config = dataclasses.replace(config, out_dir=args.out_dir)
    results = run_experiment(config)
    for r in results:
        s = r.summary
        print(f"{r.machine:8s} status={s['status']} iterations={s['iterations']} "
              f"final_kl={s['final_kl']} final_gamma={s['final_gamma']}")
    return 1 if any(r.errored for r in results) else 0


def _chart(args):
    traces = {}
    for path in args.traces:
        label = path.rsplit("/", 1)[-1].removesuffix(".csv")
        traces[label] = read_trace(path)
    render_chart(traces, args.metric, args.out)
    return 0


def _annealer_map(args):
    pt = AnnealerSchedulePoint(args.beta, args.a, args.b, tuple(_floats(args.h)), tuple(_floats(args.j)))
    p = annealer_parameter_map(pt)
    iu = p.pairs
    out = {
        "gamma": p.gamma.tolist(),
        "b": p.b.tolist(),
        "w": [p.w[a, b] for a, b in iu],
    }
    print(json.dumps(out))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="qbm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run an experiment config")
    train.add_argument("config")
    train.add_argument("--out-dir", help="override out_dir from the config")
    train.set_defaults(func=_train)

    chart = sub.add_parser("chart", help="plot one or more trace CSVs as SVG")
    chart.add_argument("traces", nargs="+")
    chart.add_argument("--metric", default="kl", choices=METRICS)
    chart.add_argument("--out", required=True)
    chart.set_defaults(func=_chart)

    amap = sub.add_parser("annealer-map", help="dimensionless parameters at a freeze-out point")
    amap.add_argument("--beta", type=float, required=True)
    amap.add_argument("--a", type=float, required=True, help="A(s*)")
    amap.add_argument("--b", type=float, required=True, help="B(s*)")
    amap.add_argument("--h", default="", help="comma-separated local fields")
    amap.add_argument("--j", default="", help="comma-separated couplings for pairs a<b, row-major")
    amap.set_defaults(func=_annealer_map)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
