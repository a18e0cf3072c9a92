import logging
import sys
import uuid
from logging.handlers import RotatingFileHandler
import os
from .config import settings

RUN_ID = str(uuid.uuid4())[:8]


class RunIDFilter(logging.Filter):
    def filter(self, record):
        if not hasattr(record, 'run_id'):
            record.run_id = RUN_ID
        return True


def setup_logger(name: str) -> logging.Logger:
    logger = logging.getLogger(name)
    logger.setLevel(settings.LOG_LEVEL)

    # Every record carries the process run id
    logger.addFilter(RunIDFilter())

    formatter = logging.Formatter(settings.LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(settings.LOG_LEVEL)
    if hasattr(console_handler.stream, 'reconfigure'):
        console_handler.stream.reconfigure(encoding='utf-8')

    logger.handlers.clear()
    logger.addHandler(console_handler)

    if settings.LOG_TO_FILE:
        os.makedirs(settings.LOGS_DIR, exist_ok=True)
        log_file = os.path.join(settings.LOGS_DIR, f'{name.split(".")[-1]}.log')
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=settings.LOG_MAX_SIZE,
            backupCount=settings.LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(settings.LOG_LEVEL)
        logger.addHandler(file_handler)

    return logger
