import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from fedlearn.api.schemas import ConfigError, load_run_config
from fedlearn.core.config import configure_logging, settings
from fedlearn.core.crypto import CryptoError, keygen, write_key_files
from fedlearn.core.phases import PhaseError
from fedlearn.core.transport import TransportError
from fedlearn.core.wire import WireError
from fedlearn.models.forest import ForestError
from fedlearn.services import runner
from fedlearn.services.data_service import DataError, gen_blobs, load_csv, vertical_split, write_csv, write_labels
from fedlearn.services.export_service import ExportError, read_ids
from fedlearn.services.kernel_solver import KernelError

logger = logging.getLogger("fedlearn")

HANDLED = (
    ConfigError,
    CryptoError,
    DataError,
    ExportError,
    ForestError,
    KernelError,
    PhaseError,
    TransportError,
    WireError,
    OSError,
    ValueError,
)


def cmd_keygen(args) -> int:
    pair = keygen(args.bits, seed=args.seed, allow_insecure=args.allow_insecure)
    public_path, secret_path = write_key_files(args.out_dir, pair)
    logger.info("%d-bit key pair written to %s and %s", pair.public.bits, public_path, secret_path)
    return 0


def cmd_gen_data(args) -> int:
    table = gen_blobs(args.n, args.d, args.separation, args.seed, args.labels)
    path = write_csv(table, args.out)
    logger.info("%d samples with %d features written to %s", table.n_rows, table.n_features, path)
    return 0


def cmd_split(args) -> int:
    source = Path(args.input)
    table = load_csv(source, has_labels=True)
    out_dir = Path(args.out_dir) if args.out_dir else source.parent
    parts = vertical_split(table, args.parties, args.seed)
    for k, part in enumerate(parts, start=1):
        write_csv(part, out_dir / f"{source.stem}.party{k}.csv", include_labels=False)
    labels_path = write_labels(parts[0], out_dir / f"{source.stem}.labels.csv")
    logger.info("split %s into %d parties under %s (labels: %s)", source, len(parts), out_dir, labels_path.name)
    return 0


def cmd_party(args) -> int:
    config = load_run_config(args.config)
    if config.transport != "tcp":
        raise ConfigError("transport: the party command needs tcp transport")
    runner.run_party(config, args.name)
    return 0


def cmd_coordinator(args) -> int:
    config = load_run_config(args.config)
    if config.transport != "tcp":
        raise ConfigError("transport: the coordinator command needs tcp transport; use simulate for loopback")
    result = runner.coordinate(config, wait_s=args.wait)
    print(json.dumps(result.metrics, indent=2))
    return 0


def cmd_simulate(args) -> int:
    config = load_run_config(args.config)
    result = runner.simulate(config)
    print(json.dumps(result.metrics, indent=2))
    return 0


def cmd_predict(args) -> int:
    config = load_run_config(args.config)
    ids = read_ids(args.ids) if args.ids else None
    model = args.model or config.output_dir
    path, accuracy = runner.predict_with_model(config, model, args.out, ids)
    if accuracy is not None:
        logger.info("accuracy on %s: %.4f", path, accuracy)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.PROJECT_NAME, description="Vertical federated learning toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    parser.add_argument("--log-level", choices=["error", "info", "debug"], default=None,
                        help=f"overrides FEDLEARN_LOG (default: {settings.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a Paillier key pair")
    p.add_argument("--bits", type=int, default=settings.FOREST_KEY_BITS, choices=settings.SUPPORTED_KEY_BITS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="deterministic keys (tests only)")
    p.add_argument("--allow-insecure", action="store_true", help="permit 64-bit test keys")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("gen-data", help="write a two-blob synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", choices=["pm1", "zero_one"], default="pm1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", help="partition a labelled CSV's feature columns over parties")
    p.add_argument("--input", required=True)
    p.add_argument("--parties", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("party", help="serve one party over tcp until shutdown")
    p.add_argument("--config", required=True)
    p.add_argument("--name", required=True)
    p.set_defaults(func=cmd_party)

    p = sub.add_parser("coordinator", help="train over tcp, then shut the parties down")
    p.add_argument("--config", required=True)
    p.add_argument("--wait", type=float, default=10.0, help="seconds to wait for parties to come up")
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("simulate", help="run every party and the coordinator in this process")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="score samples with a trained model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None, help="model.json or its directory (default: output_dir)")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", default=None, help="CSV whose id column lists the samples to score")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ValueError as e:
        print(f"fedlearn: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except HANDLED as e:
        logger.error("%s failed: %s", args.command, e)
        return 1
    except KeyboardInterrupt:
        logger.info("%s interrupted", args.command)
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
