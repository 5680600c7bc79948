"""Main entry point of the ``wildxai`` command-line tool."""
import logging
import sys
from typing import List, Optional

from wildxai.cli.commands import build_parser, dispatch
from wildxai.config import get_settings
from wildxai.exceptions import WildxaiError

logger = logging.getLogger(__name__)


def error_line(token: str, message: str) -> str:
    """Machine-readable last line of stderr on failure."""
    text = " ".join(str(message).split()).replace("\\", "\\\\").replace('"', '\\"')
    return f'error token={token} message="{text}"'


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or get_settings().LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        int: 0 on success, 2 for usage or validation errors, 1 for runtime failures
    """
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(args.log_level)
        logger.info(f"Starting wildxai {args.command}")
        code = dispatch(args)
        logger.info(f"Finished wildxai {args.command}")
        return code
    except WildxaiError as exc:
        logger.error(f"{exc.token}: {exc}")
        print(error_line(exc.token, str(exc)), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.error(f"Unhandled exception: {exc}", exc_info=True)
        print(error_line("internal-error", f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        return 1
    finally:
        sys.stderr.flush()


# This allows running with `python -m wildxai.main`
if __name__ == "__main__":
    sys.exit(main())
