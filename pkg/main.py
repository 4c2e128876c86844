import logging
import sys

from src.cli.commands import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logging.info("Interrupted!")
        sys.exit(130)
