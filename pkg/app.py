import logging
import sys

from ui.cli import run_cli


def main(argv=None):
    """Command-line entry point"""
    logging.basicConfig(
        level=logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
