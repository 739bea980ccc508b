"""Command-line entry point: synth, reconstruct, train, eval, sweep.

One binary in subcommand style. Every option can also come from a
key=value config file (``--config run.cfg``); options given on the command
line win over the file. Exit codes: 0 on success, 2 for configuration
problems (bad flags, missing or malformed inputs), 3 for runtime failures.
Errors are one line on stderr, ``tomopr: error: <kind>: <message>``.

Artifacts are written atomically and carry a JSON metadata sidecar with
the echoed parameters and the sha256 of every input file, never a
timestamp, so a rerun with the same config and seed is byte identical
(timing columns inside CSVs aside).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from tomopr.errors import ConfigError

_KINDS = ("mlos", "mart", "sfmart", "aipr")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _str_tuple(text: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    if not parts:
        raise ValueError("expected a comma-separated list")
    return parts


class _Parser(argparse.ArgumentParser):
    """Argument errors leave on one stderr line with the config exit code."""

    def error(self, message):  # noqa: D102 - argparse hook
        print(f"tomopr: error: config: {message}", file=sys.stderr)
        raise SystemExit(2)


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="tomopr", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", metavar="subcommand")
    registry: dict[str, _Parser] = {}

    def sub(name: str, help_text: str) -> _Parser:
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file; explicit flags win")
        p.add_argument("--seed", type=int, help="master seed (required when stochastic)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--precision", choices=("f32", "f64"), default="f64")
        p.add_argument("--out", help="output file or directory")
        registry[name] = p
        return p

    p = sub("synth", "generate a synthetic training dataset")
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--dims", type=_int_tuple, default=(64, 64, 32), help="volume dims X,Y,Z")
    p.add_argument("--ppp-range", type=_float_tuple, default=(0.05, 0.25))
    p.add_argument("--noise-fraction", type=float, default=0.2)
    p.add_argument("--rig", help="rig file (default: standard four-camera rig)")

    p = sub("reconstruct", "reconstruct one volume from camera images")
    p.add_argument("--images", type=_str_tuple, help="comma-separated image paths, camera order")
    p.add_argument("--rig", help="rig file")
    p.add_argument("--dims", type=_int_tuple, help="volume dims X,Y,Z")
    p.add_argument("--method", choices=_KINDS)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--filter", action="store_true", help="Gaussian pass every iteration")
    p.add_argument("--network", help="model file (aipr)")

    p = sub("train", "train the volume refiner on a dataset")
    p.add_argument("--dataset", help="dataset directory (manifest.json)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--depth", type=int, default=12)

    p = sub("eval", "score a reconstruction against a truth volume")
    p.add_argument("--recon", help="reconstructed volume")
    p.add_argument("--truth", help="ground-truth volume")

    p = sub("sweep", "reconstruction quality over a ppp/noise grid")
    p.add_argument("--dims", type=_int_tuple)
    p.add_argument("--ppp", type=_float_tuple)
    p.add_argument("--noise", type=_float_tuple, default=(0.0,))
    p.add_argument("--methods", type=_str_tuple)
    p.add_argument("--seeds", type=_int_tuple, help="comma-separated seed list, one run per seed (default: --seed)")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--rig", help="rig file (default: standard four-camera rig)")
    p.add_argument("--network", help="model file (aipr rows)")

    return parser, registry


def _merge_config_file(args: argparse.Namespace, sub: _Parser, argv: list[str]) -> None:
    """Fill unset options from the key=value file; explicit flags win."""
    if not args.config:
        return
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")

    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token.split("=", 1)[0].lstrip("-").replace("-", "_"))

    actions = {a.dest: a for a in sub._actions}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest in ("config", "help"):
            raise ConfigError(f"{path}:{lineno}: {key!r} cannot be set from a config file")
        action = actions.get(dest)
        if action is None:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for this subcommand")
        if dest in explicit:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                lowered = value.lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"expected a boolean, got {value!r}")
                parsed = lowered in ("true", "1", "yes")
            elif action.choices is not None and value not in action.choices:
                raise ValueError(f"must be one of {sorted(action.choices)}, got {value!r}")
            else:
                parsed = action.type(value) if action.type else value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        setattr(args, dest, parsed)


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{flag} is required for '{args.command}'")


def _input_file(path_text: str, what: str) -> Path:
    path = Path(path_text)
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _dims3(value: tuple[int, ...]) -> tuple[int, int, int]:
    if len(value) != 3 or min(value) < 1:
        raise ConfigError(f"dims must be three positive ints, got {value}")
    return value  # type: ignore[return-value]


def _write_sidecar(path: Path, command: str, params: dict, inputs: dict[str, str]) -> None:
    """JSON sidecar: echoed parameters plus sha256 of every input file."""
    from tomopr.io import atomic_write_text, sha256_file

    meta = {
        "command": command,
        "format": "tomopr-meta v1",
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "parameters": params,
    }
    atomic_write_text(path, json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _echo_params(args: argparse.Namespace, *names: str) -> dict:
    out = {}
    for name in names:
        value = getattr(args, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    from tomopr.io import read_rig
    from tomopr.synthesis import build_dataset

    _require(args, "out", "count", "seed")
    dims = _dims3(args.dims)
    inputs = {}
    cameras = None
    if args.rig:
        rig_path = _input_file(args.rig, "rig file")
        cameras = read_rig(rig_path)
        inputs["rig"] = rig_path
    out_dir = Path(args.out)
    build_dataset(
        args.count,
        dims=dims,
        ppp_range=tuple(args.ppp_range),
        noise_fraction=args.noise_fraction,
        seed=args.seed,
        out_dir=out_dir,
        cameras=cameras,
    )
    params = _echo_params(args, "count", "dims", "ppp_range", "noise_fraction", "seed")
    _write_sidecar(out_dir / "run_meta.json", "synth", params, inputs)
    print(out_dir / "manifest.json")
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    from tomopr.algebraic import MartConfig, mart, mlos, sf_mart
    from tomopr.geometry import build_weight_matrix
    from tomopr.io import read_image, read_rig, write_volume

    _require(args, "out", "images", "rig", "dims", "method")
    dims = _dims3(args.dims)
    smoothing = bool(args.filter) or args.method == "sfmart"

    inputs: dict[str, Path] = {}
    network = None
    if args.method == "aipr":
        # resolve the model before any reconstruction work
        _require(args, "network")
        from tomopr.nn.network import read_network

        net_path = _input_file(args.network, "network file")
        network = read_network(net_path)
        if args.precision == "f32":
            import numpy as np

            network = network.astype(np.float32)
        inputs["network"] = net_path

    rig_path = _input_file(args.rig, "rig file")
    cameras = read_rig(rig_path)
    inputs["rig"] = rig_path
    image_paths = [_input_file(p, "image") for p in args.images]
    if len(image_paths) != len(cameras):
        raise ConfigError(f"{len(cameras)} cameras in the rig, {len(image_paths)} images given")
    images = []
    for i, p in enumerate(image_paths):
        img = read_image(p)
        img.camera_index = i
        images.append(img)
        inputs[f"image{i}"] = p

    init = mlos(images, cameras, dims)
    if args.method == "mlos":
        volume = init
    elif args.method in ("mart", "sfmart"):
        try:
            config = MartConfig(iterations=args.iterations, mu=args.mu, smoothing=smoothing)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        weights = [build_weight_matrix(cam, dims) for cam in cameras]
        run = sf_mart if args.method == "sfmart" else mart
        volume = run(images, cameras, weights, init, config)
    else:
        from tomopr.nn.inference import infer_tiled

        volume = infer_tiled(network, init)

    out_path = Path(args.out)
    write_volume(out_path, volume)
    params = _echo_params(args, "method", "dims", "precision")
    if args.method in ("mart", "sfmart"):
        params.update(_echo_params(args, "iterations", "mu"))
        params["filter"] = smoothing
    _write_sidecar(Path(str(out_path) + ".meta.json"), "reconstruct", params, inputs)
    print(out_path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    import numpy as np

    from tomopr.nn.network import build_network, default_layer_specs, write_network
    from tomopr.nn.training import TrainConfig, train
    from tomopr.synthesis import load_dataset

    _require(args, "out", "dataset", "seed")
    dataset_dir = Path(args.dataset)
    manifest = dataset_dir / "manifest.json"
    if not manifest.is_file():
        raise ConfigError(f"dataset manifest not found: {manifest}")
    samples = load_dataset(dataset_dir)

    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        val_fraction=args.val_fraction,
        seed=args.seed,
        precision=args.precision,
    )
    specs = default_layer_specs(channels=args.channels, depth=args.depth)
    dims = samples[0].inputs.dims
    network = build_network(dims, specs, seed=args.seed, dtype=config.dtype)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result = train(network, samples, config, out_dir=out_path.parent)
    write_network(out_path, network.astype(np.float64))

    params = _echo_params(
        args,
        "epochs", "batch_size", "learning_rate", "val_fraction",
        "channels", "depth", "seed", "precision",
    )
    params["best_epoch"] = result.best_epoch
    params["best_val_q"] = result.best_val_q
    _write_sidecar(Path(str(out_path) + ".meta.json"), "train", params, {"manifest": manifest})
    print(out_path)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from tomopr.evaluation import quality_factor
    from tomopr.io import atomic_write_text, read_volume

    _require(args, "out", "recon", "truth")
    recon_path = _input_file(args.recon, "reconstruction")
    truth_path = _input_file(args.truth, "truth volume")
    q = quality_factor(read_volume(recon_path), read_volume(truth_path))

    out_path = Path(args.out)
    header = "recon,truth,Q"
    lines = [header]
    if out_path.is_file():
        existing = out_path.read_text().splitlines()
        if existing and existing[0] != header:
            raise ConfigError(f"{out_path} exists with a different header {existing[0]!r}")
        lines = existing or lines
    lines.append(f"{recon_path},{truth_path},{q!r}")
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    print(f"Q {q!r}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from tomopr.evaluation import SweepConfig, run_sweep, summarize
    from tomopr.io import read_rig

    _require(args, "out", "dims", "ppp", "methods")
    seeds = args.seeds
    if seeds is None and args.seed is not None:
        seeds = (args.seed,)
    if seeds is None:
        raise ConfigError("--seed or --seeds is required for 'sweep'")

    inputs: dict[str, Path] = {}
    cameras = None
    if args.rig:
        rig_path = _input_file(args.rig, "rig file")
        cameras = read_rig(rig_path)
        inputs["rig"] = rig_path
    network_path = None
    if args.network:
        network_path = _input_file(args.network, "network file")
        inputs["network"] = network_path

    config = SweepConfig(
        volume_dims=_dims3(args.dims),
        ppp_values=tuple(args.ppp),
        noise_values=tuple(args.noise),
        methods=tuple(args.methods),
        seeds=tuple(seeds),
        network_path=network_path,
        cameras=cameras,
        mu=args.mu,
    )
    out_dir = Path(args.out)
    results = run_sweep(config, out_dir=out_dir)
    summarize(results, out_dir=out_dir)

    params = _echo_params(args, "dims", "ppp", "noise", "methods", "mu")
    params["seeds"] = list(seeds)
    _write_sidecar(out_dir / "run_meta.json", "sweep", params, inputs)
    print(out_dir / "results.csv")
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "reconstruct": cmd_reconstruct,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    try:
        _merge_config_file(args, registry[args.command], argv)
        if args.threads is not None:
            from tomopr.runtime import set_threads

            set_threads(args.threads)
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"tomopr: error: config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"tomopr: error: config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything
        print(f"tomopr: error: runtime: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
