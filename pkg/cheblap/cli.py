"""``cheblap`` command line: train, eval, gradcheck, synth, inspect, ablate.

Exit codes: 0 success, 1 gradient check failure, 2 configuration error,
3 data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional

from pydantic import BaseModel, Field, ValidationError

from cheblap.checkpoint import load_checkpoint, save_checkpoint
from cheblap.config import TrainConfig, load_config
from cheblap.gradcheck import MAX_NODES, format_report, run_gradcheck
from cheblap.graph import ALL_KINDS, LaplacianKind, Parametrization
from cheblap.matrix_io import write_laplacian, write_matrix
from cheblap.model import Mode, ModelParams, build_operator
from cheblap.skeleton import Edge, load_dataset, read_edges, split_graphs
from cheblap.synthetic import SynthSpec, synth_generate, write_dataset
from cheblap.train import ablation_grid, evaluate, format_ablation, train, write_metrics
from cheblap.utils.decorator import decorator
from cheblap.utils.errors import (
    CheblapError,
    ConfigError,
    DegenerateDegree,
    DegenerateReference,
    DegenerateSpectrum,
    DivisionGuard,
    EmptySplit,
    IndexOutOfRange,
    InvalidLabel,
    InvalidOrder,
    MissingFile,
    NonFinite,
    NumericalAbort,
    ParseError,
    ShapeMismatch,
    TooShort,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

DATA_ERRORS = (
    ParseError,
    MissingFile,
    DegenerateReference,
    TooShort,
    IndexOutOfRange,
    EmptySplit,
    InvalidLabel,
    ShapeMismatch,
    ValidationError,
)
NUMERICAL_ERRORS = (NumericalAbort, NonFinite, DegenerateSpectrum, DivisionGuard, DegenerateDegree)

MANIFEST = "manifest.txt"
HIDDEN_EDGES = "hidden_edges.txt"


class Option(BaseModel):
    flags: tuple[str, ...]
    kwargs: dict[str, Any] = Field(default_factory=dict)


class command(decorator):
    __dec_name__: str = "__command__"

    name: str
    help: str
    options: list[Option] = Field(default_factory=list)


def _flag01(text: str) -> bool:
    if text not in ("0", "1"):
        raise argparse.ArgumentTypeError(f"expected 0 or 1, got {text!r}")
    return text == "1"


def _int_list(text: str) -> list[int]:
    return [int(token) for token in text.split(",") if token]


CONFIG = Option(flags=("--config",), kwargs=dict(metavar="PATH", help="key = value config file"))
DATA = Option(
    flags=("--data",),
    kwargs=dict(metavar="DIR", required=True, help=f"dataset directory holding {MANIFEST}"),
)
OUT = Option(flags=("--out",), kwargs=dict(metavar="DIR", required=True, help="output directory"))
CHECKPOINT = Option(
    flags=("--checkpoint",), kwargs=dict(metavar="PATH", required=True, help="checkpoint file")
)
# None keeps the config file (or built-in) value
MODEL_OPTIONS = [
    CONFIG,
    Option(flags=("--mode",), kwargs=dict(choices=[m.value for m in Mode], help="operator mode")),
    Option(
        flags=("--kind",),
        kwargs=dict(
            type=str.upper,
            choices=[str(k) for k in ALL_KINDS],
            help="Laplacian parametrization; an S- prefix implies --sym 1",
        ),
    ),
    Option(flags=("--sym",), kwargs=dict(type=_flag01, help="symmetric kind (0/1)")),
    Option(flags=("--orth",), kwargs=dict(type=_flag01, help="spectral rescaling (0/1)")),
    Option(flags=("--K",), kwargs=dict(type=int, help="Chebyshev order")),
    Option(flags=("--seed",), kwargs=dict(type=int, help="random seed")),
    Option(flags=("--epochs",), kwargs=dict(type=int, help="training epochs")),
    Option(flags=("--lr",), kwargs=dict(type=float, dest="base_lr", help="initial learning rate")),
    Option(
        flags=("--deterministic",),
        kwargs=dict(action="store_const", const=True, help="single-threaded, bitwise reproducible"),
    ),
    Option(
        flags=("--set",),
        kwargs=dict(
            action="append",
            default=[],
            metavar="KEY=VALUE",
            dest="assignments",
            help="override any config key",
        ),
    ),
]
OVERRIDE_KEYS = ("mode", "kind", "K", "seed", "epochs", "base_lr", "deterministic")


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for assignment in args.assignments:
        key, sep, value = assignment.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
        overrides[key.strip()] = value.strip()
    overrides.update({key: getattr(args, key) for key in OVERRIDE_KEYS})
    overrides["symmetric"] = args.sym
    overrides["orthogonal"] = args.orth
    return overrides


def _config(args: argparse.Namespace) -> TrainConfig:
    return load_config(args.config, _overrides(args))


def _load(data_dir: str, config: TrainConfig):
    return load_dataset(
        Path(data_dir) / MANIFEST,
        reference_joints=config.reference_joints,
        chunks=config.chunks,
        workers=1 if config.deterministic else config.threads,
    )


def _write_run_manifest(path: Path, config: TrainConfig, started: datetime, wall: float) -> None:
    lines = [f"{key} = {value}" for key, value in config.echo().items()]
    lines += [
        f"started = {started.isoformat()}",
        f"wall_time_s = {wall:.3f}",
    ]
    path.write_text("\n".join(lines) + "\n")


@command(
    name="train",
    help="train a model and write checkpoint, metrics and run manifest",
    options=MODEL_OPTIONS + [DATA, OUT],
)
def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    graphs = _load(args.data, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    started, clock = datetime.now(timezone.utc), time.perf_counter()
    result = train(config, graphs)
    wall = time.perf_counter() - clock

    save_checkpoint(out / "checkpoint.txt", result.params, config)
    write_metrics(out / "metrics.txt", result.metrics)
    _write_run_manifest(out / "run.txt", config, started, wall)
    final = result.metrics[-1]
    logger.info(
        "done in %.1fs: train %.4f test %.4f, outputs in %s",
        wall,
        final.train_acc,
        final.test_acc,
        out,
    )
    return EXIT_OK


@command(
    name="eval",
    help="class-averaged and sample accuracy of a checkpoint on a dataset split",
    options=[
        CHECKPOINT,
        DATA,
        Option(
            flags=("--split",),
            kwargs=dict(choices=["train", "test"], default="test", help="split to score"),
        ),
    ],
)
def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    graphs = split_graphs(_load(args.data, checkpoint.config), args.split)
    report = evaluate(checkpoint.params, graphs)
    print(f"accuracy {report.accuracy:.4f}")
    print(f"sample_accuracy {report.sample_accuracy:.4f}")
    for c, value in enumerate(report.per_class):
        print(f"class {c} accuracy {value:.4f}")
    print("confusion")
    for row in report.confusion:
        print(" ".join(str(int(v)) for v in row))
    return EXIT_OK


@command(
    name="gradcheck",
    help="finite-difference check of dLoss/dA for every Laplacian kind",
    options=[
        Option(flags=("--n",), kwargs=dict(type=int, default=5, help=f"nodes (<= {MAX_NODES})")),
        Option(flags=("--K",), kwargs=dict(type=int, default=4, help="Chebyshev order")),
        Option(
            flags=("--kinds",),
            kwargs=dict(default="all", help="comma separated kinds, e.g. NDRW,S-DN, or 'all'"),
        ),
        Option(flags=("--seed",), kwargs=dict(type=int, default=0, help="first seed")),
        Option(flags=("--seeds",), kwargs=dict(type=int, default=1, help="number of seeds")),
        Option(
            flags=("--orth",),
            kwargs=dict(type=_flag01, default=False, help="check through spectral rescaling (0/1)"),
        ),
        Option(
            flags=("--corrupt-jacobian",),
            kwargs=dict(action="store_true", help="perturb the analytic gradient (negative control)"),
        ),
    ],
)
def cmd_gradcheck(args: argparse.Namespace) -> int:
    if not 1 <= args.n <= MAX_NODES:
        raise ConfigError(f"--n must lie in [1, {MAX_NODES}], got {args.n}")
    if args.kinds == "all":
        kinds = ALL_KINDS
    else:
        try:
            kinds = [LaplacianKind.parse(name) for name in args.kinds.split(",")]
        except ValueError as e:
            raise ConfigError(str(e)) from None
    reports = run_gradcheck(
        n=args.n,
        K=args.K,
        kinds=kinds,
        seeds=range(args.seed, args.seed + args.seeds),
        orthogonal=args.orth,
        corrupt=args.corrupt_jacobian,
    )
    print(format_report(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_GRADCHECK


@command(
    name="synth",
    help="write a synthetic dataset directory",
    options=[
        OUT,
        Option(flags=("--seed",), kwargs=dict(type=int, default=0, help="random seed")),
        Option(flags=("--classes",), kwargs=dict(type=int, default=2, help="number of classes")),
        Option(
            flags=("--per-class",),
            kwargs=dict(type=int, default=150, help="sequences per class (train + test)"),
        ),
        Option(
            flags=("--test-per-class",),
            kwargs=dict(type=int, default=50, help="test sequences per class"),
        ),
        Option(flags=("--joints",), kwargs=dict(type=int, default=15, help="joints per skeleton")),
        Option(flags=("--frames",), kwargs=dict(type=int, default=40, help="frames per sequence")),
        Option(
            flags=("--hidden-pairs",),
            kwargs=dict(type=int, default=4, help="hidden interaction pairs"),
        ),
    ],
)
def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = SynthSpec(
            num_classes=args.classes,
            sequences_per_class=args.per_class,
            test_per_class=args.test_per_class,
            joints=args.joints,
            frames=args.frames,
            seed=args.seed,
            hidden_pairs=args.hidden_pairs,
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from None
    write_dataset(synth_generate(spec), args.out)
    return EXIT_OK


def ranked_off_skeleton_edges(params: ModelParams) -> list[tuple[Edge, float]]:
    """Undirected edges absent from the handcrafted graph, strongest first."""
    learned = params.adjacency.mean(axis=0) if params.adjacency.ndim == 3 else params.adjacency
    if params.config.symmetric:
        learned = learned + learned.T
    handcrafted = params.handcrafted + params.handcrafted.T
    n = learned.shape[0]
    ranked = [
        ((i, j), float(learned[i, j] + learned[j, i]) / 2.0)
        for i in range(n)
        for j in range(i + 1, n)
        if handcrafted[i, j] == 0.0 and learned[i, j] + learned[j, i] > 0.0
    ]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


def hit_rate(ranked: list[tuple[Edge, float]], hidden: list[Edge]) -> float:
    """Share of the hidden edges among the top-|hidden| ranked edges."""
    truth = {tuple(sorted(e)) for e in hidden}
    if not truth:
        return float("nan")
    top = {edge for edge, _ in ranked[: len(truth)]}
    return len(top & truth) / len(truth)


@command(
    name="inspect",
    help="dump the learned adjacency, its Laplacian and the strongest off-skeleton edges",
    options=[
        CHECKPOINT,
        OUT,
        Option(
            flags=("--data",),
            kwargs=dict(metavar="DIR", help=f"dataset directory; scores against {HIDDEN_EDGES}"),
        ),
        Option(flags=("--top",), kwargs=dict(type=int, default=20, help="edges to list")),
    ],
)
def cmd_inspect(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    params = checkpoint.params
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    operator = build_operator(params)
    if params.config.mode == Mode.TLL:
        for k, (A_k, L_k) in enumerate(zip(params.adjacency, operator.raw)):
            write_matrix(out / f"adjacency_{k}.txt", A_k)
            write_laplacian(out / f"laplacian_{k}.txt", L_k)
    else:
        write_matrix(out / "adjacency.txt", params.effective_adjacency())
        write_laplacian(out / "laplacian.txt", operator.operator)

    ranked = ranked_off_skeleton_edges(params)
    lines = [f"{i} {j} {weight!r}" for (i, j), weight in ranked[: args.top]]
    (out / "off_skeleton_edges.txt").write_text("".join(line + "\n" for line in lines))
    print(f"{len(ranked)} off-skeleton edges; strongest:")
    for line in lines:
        print(f"  {line}")

    if args.data is not None:
        hidden_path = Path(args.data) / HIDDEN_EDGES
        if hidden_path.is_file():
            rate = hit_rate(ranked, read_edges(hidden_path))
            print(f"hidden edge hit-rate {rate:.4f}")
        else:
            logger.warning("%s not found; skipping the hit-rate", hidden_path)
    return EXIT_OK


@command(
    name="ablate",
    help="train the mode x kind x K grid and write ablation.txt",
    options=MODEL_OPTIONS
    + [
        DATA,
        OUT,
        Option(flags=("--Ks",), kwargs=dict(type=_int_list, default=[2, 4, 8], help="orders")),
        Option(
            flags=("--kinds",),
            kwargs=dict(default="COMB,NDRW,DRW,NDN,DN", help="comma separated plain kinds"),
        ),
        Option(
            flags=("--modes",),
            kwargs=dict(default="hl,ml,tll,learned", help="comma separated modes"),
        ),
    ],
)
def cmd_ablate(args: argparse.Namespace) -> int:
    if args.K is None:
        args.K = args.Ks[0]
    config = _config(args)
    try:
        kinds = [Parametrization(name.strip().upper()) for name in args.kinds.split(",")]
        modes = [Mode(name.strip().lower()) for name in args.modes.split(",")]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    graphs = _load(args.data, config)
    rows = ablation_grid(
        config,
        graphs,
        Ks=args.Ks,
        kinds=kinds,
        modes=modes,
        constraints=((config.symmetric, config.orthogonal),),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_ablation(rows)
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cheblap",
        description="Chebyshev graph convolutions with a learned Laplacian",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for func in command.all(sys.modules[__name__]):
        meta = command.meta(func)
        sub = subparsers.add_parser(
            meta.name,
            help=meta.help,
            description=meta.help,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        for option in meta.options:
            sub.add_argument(*option.flags, **option.kwargs)
        sub.set_defaults(handler=func)
    return parser


def run(handler: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    try:
        return handler(args)
    except (ConfigError, InvalidOrder) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except DATA_ERRORS as e:
        logger.error("data error: %s", e)
        return EXIT_DATA
    except NUMERICAL_ERRORS as e:
        logger.error("numerical abort: %s", e)
        return EXIT_NUMERICAL
    except CheblapError as e:
        # exit 1 is reserved for failed gradient checks
        logger.error("numerical abort: %s: %s", type(e).__name__, e)
        return EXIT_NUMERICAL


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return run(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
