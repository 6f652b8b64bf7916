from dotenv import load_dotenv
import os

load_dotenv()

OUTPUT_DIR = os.getenv("ASYNCIQC_OUTPUT_DIR", "out")
LOG_LEVEL = os.getenv("ASYNCIQC_LOG_LEVEL", "WARNING")
WORKERS = int(os.getenv("ASYNCIQC_WORKERS", "1"))


def output_dir() -> str:
    """Output directory for CLI artifacts, re-read so tests can patch the env."""
    return os.getenv("ASYNCIQC_OUTPUT_DIR", OUTPUT_DIR)
