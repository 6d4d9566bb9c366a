import sys

from app.api.commands import run
from app.core.log import setup_logging


def main() -> int:
    setup_logging()
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
