#!/usr/bin/env python
"""
Main entry point for latentflow.
Runs the command-line interface.
"""

import logging
import sys

from latentflow.cli import run
from latentflow.settings import settings

logging.basicConfig(
    level=getattr(logging, settings.effective_log_level, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

if __name__ == "__main__":
    sys.exit(run())
