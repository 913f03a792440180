import argparse
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from cli.commands import COMMANDS, CommandOutput
from cli.dependencies.logging import logger
from cli.run_context import RunContext, load_run_config
from engine.utils.config_util import EnvConfigError
from engine.utils.error_util import ConfigError, NumericalError, ParameterError
from engine.utils.json_utils import dumps_record

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m cli",
        description="Ruelle probability cascades, the Mezard-Parisi functional and finite diluted spin systems",
    )
    parser.add_argument("command", choices=list(COMMANDS.keys()), help="Operation to run")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Run seed (default: config seed, then RPC_SEED)")
    parser.add_argument("--workers", type=int, help="Worker processes (default: config, then RPC_WORKERS)")
    parser.add_argument("--output", help="Write records here instead of stdout")
    parser.add_argument("--format", choices=["json-lines", "csv"], help="Record format (default: config output.format)")
    parser.add_argument("--csv", help="Also write the command's table (histogram, trace, gap table) as CSV")
    return parser


def emit(output: CommandOutput, fmt: str, path: Optional[str], csv_path: Optional[str]) -> None:
    if fmt == "csv":
        frame = output.table if output.table is not None else pd.json_normalize(output.records)
        text = frame.to_csv(index=False)
    else:
        text = "".join(dumps_record(record) + "\n" for record in output.records)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if csv_path and output.table is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        output.table.to_csv(csv_path, index=False)


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, raw, base_dir = load_run_config(args.config)
        ctx = RunContext(args.command, config, raw, base_dir, seed=args.seed, workers=args.workers)
    except (ConfigError, EnvConfigError, ParameterError, ValidationError) as error:
        logger.error(f"{args.command}: configuration error: {error}")
        return EXIT_CONFIG
    try:
        logger.info(f"{args.command}: seed={ctx.seed} workers={ctx.workers} config_hash={ctx.config_hash[:16]}")
        output = COMMANDS[args.command](ctx)
        fmt = args.format or config.output.format
        emit(output, fmt, args.output or config.output.path, args.csv or config.output.csv)
        logger.info(f"{args.command}: {len(output.records)} records emitted")
        return EXIT_OK
    except (ConfigError, EnvConfigError, ParameterError) as error:
        logger.error(f"{args.command}: configuration error: {error}")
        return EXIT_CONFIG
    except NumericalError as error:
        logger.error(f"{args.command}: numerical failure in {error.operation}: {error.detail}")
        return EXIT_NUMERICAL
    except ValidationError as error:
        # a result the engine built failed its own schema, e.g. a non-finite estimate
        logger.error(f"{args.command}: invalid result: {error}", exc_info=True)
        return EXIT_NUMERICAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
