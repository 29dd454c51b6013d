"""Command-line front end tying the pipeline together.

Exit codes: 0 on success, 1 when arguments or inputs fail validation,
2 when the requested operation itself fails partway.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .roadnet import load_graph, snapshot_from_json_dict, snapshot_to_json_dict


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_json_file(path, what: str) -> dict:
    try:
        with open(str(path)) as f:
            return json.load(f)
    except FileNotFoundError:
        raise CliValidationError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliValidationError(f"{what} file is not valid JSON: {exc}")


def _dump_json_file(path, doc) -> None:
    with open(str(path), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliValidationError(f"{flag} expects a comma-separated list of integers, got {text!r}")
    if not values:
        raise CliValidationError(f"{flag} must name at least one value")
    return values


def _train_config(args):
    from .training import TrainConfig, TrainingError

    doc = _load_json_file(args.config, "train config") if args.config else {}
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "T": args.steps,
        "gcn_layers": args.gcn_layers,
        "gcn_mode": args.gcn_mode,
        "ema_decay": args.ema_decay,
        "checkpoint_every": args.checkpoint_every,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_json_dict(doc)
    except (KeyError, TypeError, ValueError, TrainingError) as exc:
        raise CliValidationError(f"bad train config: {exc}")


def _load_dataset(path):
    from .scenario import load_dataset

    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise CliValidationError(f"dataset not found under {path}: {exc}")


def _cmd_make_data(args) -> int:
    from .scenario import ScenarioConfig, build_dataset, build_overfit_dataset

    if args.overfit:
        manifest = build_overfit_dataset(args.out, seed=args.seed if args.seed is not None else 0)
    else:
        if args.config:
            doc = _load_json_file(args.config, "scenario config")
        else:
            required = {"seed": args.seed, "n_roads": args.n_roads, "n_days": args.n_days}
            missing = [k for k, v in required.items() if v is None]
            if missing:
                raise CliValidationError(
                    f"without --config or --overfit, these flags are required: "
                    f"{', '.join('--' + k.replace('_', '-') for k in missing)}"
                )
            doc = dict(required)
        for key, value in (("seed", args.seed), ("n_roads", args.n_roads), ("n_days", args.n_days)):
            if value is not None:
                doc[key] = value
        try:
            config = ScenarioConfig.from_json_dict(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise CliValidationError(f"bad scenario config: {exc}")
        manifest = build_dataset(config, args.out)
    print(json.dumps(manifest, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    from .training import train

    config = _train_config(args)
    dataset = _load_dataset(args.data)
    result = train(dataset, config, args.out, resume_from=args.resume, report_path=args.report)
    last = result.reports[-1] if result.reports else None
    print(json.dumps({
        "checkpoint": str(result.checkpoint_path),
        "steps": last.step if last else 0,
        "loss": last.loss if last else None,
        "smoothed_loss": last.smoothed_loss if last else None,
    }, sort_keys=True))
    return 0


def _cmd_sample(args) -> int:
    from .evalmetrics import generate_k
    from .service import timestamp_for_prompt
    from .training import load_model

    dataset = _load_dataset(args.data)
    model = load_model(args.ckpt, dataset, use_ema=args.ema)
    result = generate_k(model, args.text, k=args.samples, seed=args.seed,
                        timestamp=timestamp_for_prompt(args.text, None))
    doc = snapshot_to_json_dict(result.snapshot)
    _dump_json_file(args.out, doc)
    print(json.dumps({"out": str(args.out), "samples": args.samples,
                      "n_diverged": result.n_diverged}, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    from .evalmetrics import evaluate_testset
    from .training import load_model

    dataset = _load_dataset(args.data)
    model = load_model(args.ckpt, dataset, use_ema=args.ema)
    rows = _int_list(args.rows, "--rows") if args.rows else None
    report = evaluate_testset(model, dataset, k=args.k, seed=args.seed, rows=rows)
    doc = report.to_json_dict()
    if args.out:
        _dump_json_file(args.out, doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    import os

    from .evalmetrics import format_ablation_table, run_ablation

    dataset = _load_dataset(args.data)
    base = _train_config(args)
    layers = _int_list(args.layers, "--layers")
    samples = _int_list(args.samples, "--samples")
    grid = run_ablation(dataset, base, args.out, layer_values=layers,
                        sample_values=samples, eval_seed=args.eval_seed)
    os.makedirs(str(args.out), exist_ok=True)
    report_path = os.path.join(str(args.out), "report.json")
    _dump_json_file(report_path, grid.to_json_dict())
    table = format_ablation_table(grid, channel=args.channel)
    with open(os.path.join(str(args.out), "table.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def _cmd_render(args) -> int:
    from .mapsvg import RenderError, render_map
    from .roadnet import GridStructureError

    doc = _load_json_file(getattr(args, "in"), "snapshot")
    try:
        snapshot = snapshot_from_json_dict(doc)
    except GridStructureError as exc:
        raise CliValidationError(str(exc))
    try:
        graph = load_graph(args.graph)
    except FileNotFoundError:
        raise CliValidationError(f"graph file not found: {args.graph}")
    try:
        rendered = render_map(snapshot, graph, args.channel)
    except RenderError as exc:
        raise CliValidationError(str(exc))
    with open(str(args.out), "w") as f:
        f.write(rendered.svg)
    print(json.dumps({"out": str(args.out), "channel": args.channel}, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.ckpt, args.data, bind=args.bind, static_dir=args.static,
          max_workers=args.workers)
    return 0


def _add_train_flags(p, include_run_shape: bool = True):
    p.add_argument("--config", help="JSON file mirroring the train config; flags override it")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, metavar="T",
                   help="diffusion steps in the noise schedule")
    p.add_argument("--gcn-layers", type=int, default=None, choices=(0, 1, 2, 3))
    p.add_argument("--gcn-mode", default=None, choices=("replace", "concat"))
    p.add_argument("--batch-size", type=int, default=None)
    if include_run_shape:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--ema-decay", type=float, default=None)
        p.add_argument("--checkpoint-every", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="ttgen", description="text-to-traffic generation toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("make-data", help="simulate a road network and write a dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="JSON scenario config file")
    p.add_argument("--overfit", action="store_true",
                   help="write the fixed 16-prompt memorization set instead")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-roads", type=int, default=None)
    p.add_argument("--n-days", type=int, default=None)
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("train", help="train a denoiser on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--report", help="write per-step reports here as JSON lines")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="generate a snapshot from a text prompt")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory the checkpoint was trained on")
    p.add_argument("--text", required=True)
    p.add_argument("--samples", type=int, default=10, help="chains averaged per snapshot")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ema", action="store_true", help="sample the parameter average")
    p.add_argument("--out", required=True, help="snapshot JSON path to write")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="score generations against held-out pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--rows", help="comma-separated pair indices (default: the test split)")
    p.add_argument("--ema", action="store_true")
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and score the layers-by-samples grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="working directory for checkpoints and reports")
    p.add_argument("--layers", default="0,1,2,3")
    p.add_argument("--samples", default="1,5,10")
    p.add_argument("--eval-seed", type=int, default=1000)
    p.add_argument("--channel", default="speed", choices=("speed", "congestion", "travel_time"),
                   help="channel shown in the text table")
    _add_train_flags(p, include_run_shape=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("render", help="render a snapshot JSON to an SVG map")
    p.add_argument("--in", required=True, help="snapshot JSON (as written by sample)")
    p.add_argument("--graph", required=True, help="road graph JSON")
    p.add_argument("--channel", required=True, choices=("speed", "congestion", "travel_time"))
    p.add_argument("--out", required=True, help="SVG path to write")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("serve", help="serve the HTTP API over a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bind", default=None, help="host:port (env CT_BIND overrides)")
    p.add_argument("--static", default=None, help="directory with the built web client")
    p.add_argument("--workers", type=int, default=None, help="max concurrent sampling loops")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except CliValidationError as exc:
        print(f"ttgen: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"ttgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
