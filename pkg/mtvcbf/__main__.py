import sys
import logging

from .cli import main

logger = logging.getLogger('mtvcbf')

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(1)
