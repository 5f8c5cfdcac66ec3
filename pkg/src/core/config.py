"""
Configuration management for the ARGUS detector
Environment-driven settings shared by the CLI, the pipeline and the experiment runners
"""

import os
from typing import List

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """Application configuration read from the environment"""

    # Every randomised step derives from this unless --seed overrides it
    SEED = int(os.getenv('ARGUS_SEED', '7'))

    # Worker cap for joblib fan-out in the experiment runners
    THREADS = int(os.getenv('ARGUS_THREADS', '1'))

    LOG_LEVEL = os.getenv('ARGUS_LOG_LEVEL', 'INFO').upper()
    REPORT_DIR = os.getenv('ARGUS_REPORT_DIR', 'reports')

    # Pipeline defaults
    WINDOW_LENGTH = int(os.getenv('ARGUS_WINDOW_LENGTH', '16'))
    CONTEXT_DEPTH = int(os.getenv('ARGUS_CONTEXT_DEPTH', '5'))
    DEFAULT_TZ = os.getenv('ARGUS_TZ', 'UTC')

    @classmethod
    def validate(cls) -> List[str]:
        """Return a list of configuration problems (empty when valid)."""
        problems = []
        if cls.WINDOW_LENGTH < 1:
            problems.append(f"ARGUS_WINDOW_LENGTH must be >= 1 (got {cls.WINDOW_LENGTH})")
        if cls.CONTEXT_DEPTH < 0:
            problems.append(f"ARGUS_CONTEXT_DEPTH must be >= 0 (got {cls.CONTEXT_DEPTH})")
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"ARGUS_LOG_LEVEL not a logging level: {cls.LOG_LEVEL}")
        return problems

    @classmethod
    def threads(cls) -> int:
        """Worker count for parallel experiment runs, never below 1."""
        return max(1, cls.THREADS)
