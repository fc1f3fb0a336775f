"""
Dependencies shared by the command pipelines of one CLI invocation.
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional
import logging
import time

from latentflow.settings import Settings, settings as default_settings
from latentflow.storage import RunStorage

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[Dict[str, Any]], None]


@dataclass
class RunDependencies:
    """
    Runtime context handed to every pipeline.

    Holds the run storage, the seed and worker count, and reports progress
    through an optional callback.
    """

    storage: RunStorage
    seed: int = 0
    num_workers: int = 1
    command: str = ""
    progress_callback: Optional[ProgressCallback] = None

    started_at: datetime = field(default_factory=datetime.now, init=False)
    progress_log: List[Dict[str, Any]] = field(default_factory=list, init=False, repr=False)
    _start: float = field(default_factory=time.time, init=False, repr=False)

    @classmethod
    def from_settings(
        cls,
        command: str,
        out_dir: Optional[str] = None,
        seed: Optional[int] = None,
        settings: Optional[Settings] = None,
        progress_callback: Optional[ProgressCallback] = None
    ) -> "RunDependencies":
        """
        Build dependencies from settings with per-run overrides.

        Args:
            command: Subcommand name
            out_dir: Run directory (settings.out_dir when None)
            seed: Run seed (settings.seed when None)
            settings: Settings instance (module default when None)
            progress_callback: Receives every progress update

        Returns:
            Initialized dependencies
        """
        s = settings or default_settings
        return cls(
            storage=RunStorage(out_dir if out_dir is not None else s.out_dir),
            seed=s.seed if seed is None else seed,
            num_workers=s.num_workers,
            command=command,
            progress_callback=progress_callback,
        )

    @property
    def elapsed(self) -> float:
        return time.time() - self._start

    def send_progress_update(self, stage: str, progress: int, message: str = "") -> None:
        """
        Record a pipeline progress update.

        Args:
            stage: Current stage (loading, training, sweeping, writing, ...)
            progress: Progress percentage (0-100)
            message: Optional progress message
        """
        update = {
            "command": self.command,
            "stage": stage,
            "progress": progress,
            "message": message,
            "elapsed": round(self.elapsed, 3),
        }
        self.progress_log.append(update)
        logger.info(f"[{self.command}] {stage} {progress}% {message}".rstrip())
        if self.progress_callback is not None:
            try:
                self.progress_callback(update)
            except Exception as e:
                logger.error(f"Failed to send progress update: {e}")
