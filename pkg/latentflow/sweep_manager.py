"""
Sweep Manager for ablation grids.
Tracks per-cell state, runs cells on a worker pool and gathers results in
cell order.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from latentflow.core import derive_rng
from latentflow.error_codes import LatentFlowError
from latentflow.settings import settings

logger = logging.getLogger(__name__)

CellFn = Callable[[Dict[str, Any], np.random.Generator], Dict[str, Any]]


class CellStatus(str, Enum):
    """Sweep cell states."""
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class SweepCell:
    """One grid point of a sweep."""

    def __init__(self, index: int, params: Dict[str, Any]):
        self.index = index
        self.params = params
        self.status = CellStatus.QUEUED
        self.result: Optional[Dict[str, Any]] = None
        self.error: Optional[str] = None
        self.exception: Optional[LatentFlowError] = None
        self.elapsed: float = 0.0
        self.updated_at = datetime.now()

    def to_row(self) -> Dict[str, Any]:
        """Flat table row: cell parameters followed by results."""
        row: Dict[str, Any] = {"cell": self.index, **self.params}
        if self.status == CellStatus.COMPLETED and self.result:
            row.update(self.result)
        if self.status == CellStatus.FAILED:
            row["error"] = self.error
        return row


class SweepManager:
    """Runs sweep cells, each with its own rng stream derived from (seed, cell index)."""

    def __init__(self, seed: int, num_workers: Optional[int] = None):
        """
        Initialize sweep manager.

        Args:
            seed: Sweep seed
            num_workers: Worker threads (settings default)
        """
        self.seed = seed
        self.num_workers = num_workers or settings.num_workers
        self.cells: List[SweepCell] = []
        logger.info(f"SweepManager initialized (seed {seed}, {self.num_workers} workers)")

    def add_cell(self, params: Dict[str, Any]) -> int:
        """
        Queue a grid point.

        Args:
            params: Cell parameters, copied into the result row

        Returns:
            Cell index
        """
        cell = SweepCell(len(self.cells), dict(params))
        self.cells.append(cell)
        return cell.index

    def _run_cell(self, cell: SweepCell, fn: CellFn) -> None:
        cell.status = CellStatus.RUNNING
        cell.updated_at = datetime.now()
        start = time.time()
        try:
            cell.result = fn(cell.params, derive_rng(self.seed, cell.index))
            cell.status = CellStatus.COMPLETED
            logger.info(f"Cell {cell.index} {cell.params} completed")
        except LatentFlowError as e:
            cell.status = CellStatus.FAILED
            cell.error = f"{e.code.value}: {e.message}"
            cell.exception = e
            logger.error(f"Cell {cell.index} failed: {cell.error}")
        finally:
            cell.elapsed = time.time() - start
            cell.updated_at = datetime.now()

    def run(self, fn: CellFn, strict: bool = True) -> pd.DataFrame:
        """
        Run every queued cell.

        Args:
            fn: Maps (params, rng) to a result dict
            strict: Re-raise the first cell failure after all cells ran

        Returns:
            One row per cell, in cell order
        """
        queued = [c for c in self.cells if c.status == CellStatus.QUEUED]
        if self.num_workers == 1:
            for cell in queued:
                self._run_cell(cell, fn)
        else:
            with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
                list(pool.map(lambda c: self._run_cell(c, fn), queued))
        failed = [c for c in self.cells if c.status == CellStatus.FAILED]
        if strict and failed:
            logger.error(f"{len(failed)} of {len(self.cells)} cells failed")
            raise failed[0].exception
        return pd.DataFrame([c.to_row() for c in self.cells])

    def get_stats(self) -> Dict[str, Any]:
        """
        Get sweep statistics.

        Returns:
            Statistics dictionary
        """
        return {
            "total_cells": len(self.cells),
            "queued": sum(1 for c in self.cells if c.status == CellStatus.QUEUED),
            "running": sum(1 for c in self.cells if c.status == CellStatus.RUNNING),
            "completed": sum(1 for c in self.cells if c.status == CellStatus.COMPLETED),
            "failed": sum(1 for c in self.cells if c.status == CellStatus.FAILED),
            "elapsed": float(sum(c.elapsed for c in self.cells)),
        }
