from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path


@dataclass(slots=True)
class Settings:
    """Process-wide settings loaded from environment variables."""

    threads: int
    out_dir: Path
    log_level: str

    @classmethod
    def load(cls) -> "Settings":
        raw_threads = os.getenv("OUDRIFT_THREADS")
        if raw_threads:
            try:
                threads = int(raw_threads)
            except ValueError as exc:
                raise RuntimeError(
                    f"OUDRIFT_THREADS must be a positive integer, got {raw_threads!r}"
                ) from exc
            if threads < 1:
                raise RuntimeError("OUDRIFT_THREADS must be >= 1")
        else:
            threads = os.cpu_count() or 1
        out_dir = Path(os.getenv("OUDRIFT_OUT_DIR", "runs"))
        log_level = os.getenv("OUDRIFT_LOG_LEVEL", "WARNING").upper()
        return cls(threads=threads, out_dir=out_dir, log_level=log_level)


settings = Settings.load()
