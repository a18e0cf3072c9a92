"""
Main entry point for the gdcnn command line
"""

import sys

from gdcnn.cli import main
from gdcnn.logger import setup_logger

logger = setup_logger(__name__)

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        raise
