import json
import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from tabulate import tabulate

from src.utils.error_handler import ArgumentError, DatasetIOError, setup_logger

logger = setup_logger('tiltlab.report')


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


class RunReporter:
    """
    Owns the output directory of one command run

    Every artifact of a run (config echo, log, CSV tables, serialized models,
    preview images, summary) lands in the same directory.
    """

    def __init__(self, output_dir, force: bool = False):
        """
        Args:
            output_dir: Run directory
            force: Allow reusing a non-empty directory
        """
        self.output_dir = Path(output_dir)
        self.force = force
        self.files: Dict[str, Path] = {}

    def prepare(self) -> Path:
        """Create the run directory, refusing to overwrite a non-empty one"""
        if self.output_dir.exists():
            if not self.output_dir.is_dir():
                raise ArgumentError(f"Output path {self.output_dir} is not a directory")
            if any(self.output_dir.iterdir()) and not self.force:
                raise ArgumentError(f"Output directory {self.output_dir} is not empty (use --force to overwrite)")
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetIOError(f"Cannot create output directory {self.output_dir}: {e}") from e
        return self.output_dir

    def path(self, name: str) -> Path:
        """Path of an artifact inside the run directory, registered for the summary"""
        path = self.output_dir / name
        self.files[name] = path
        return path

    def register_bundle(self, header_path) -> Path:
        """Register a written header and its '.bin' blob"""
        header_path = Path(header_path)
        for path in (header_path, header_path.with_suffix('.bin')):
            if path.exists():
                self.files[path.name] = path
        return header_path

    def write_json(self, name: str, data) -> Path:
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, default=_json_default)
        return path

    def write_config(self, config: dict) -> Path:
        """Echo the resolved configuration; rerunning with --config on it reproduces the run"""
        return self.write_json('config.json', config)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False)
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def finalize(self, command: str, metrics: dict, tables: Optional[Dict[str, pd.DataFrame]] = None) -> dict:
        """
        Write summary.json and summary.md

        Args:
            command: Command that produced the run
            metrics: Headline metrics
            tables: Optional tables appended to the markdown summary

        Returns:
            dict: Paths of the two summary files
        """
        summary = {
            'command': command,
            'finished_at': datetime.now().isoformat(timespec='seconds'),
            'metrics': metrics,
            'files': sorted(self.files),
        }
        json_file = self.write_json('summary.json', summary)

        md_file = self.output_dir / 'summary.md'
        with open(md_file, 'w', encoding='utf-8') as f:
            f.write(f"# tiltlab {command}\n\n")
            f.write(f"**Finished:** {summary['finished_at']}\n\n")
            f.write("## Metrics\n\n")
            f.write(tabulate(self._metric_rows(metrics), headers=['metric', 'value'], tablefmt='github'))
            f.write("\n\n")
            for title, frame in (tables or {}).items():
                f.write(f"## {title}\n\n")
                f.write(tabulate(frame, headers='keys', tablefmt='github', showindex=False, floatfmt='.6g'))
                f.write("\n\n")
            f.write("## Files\n\n")
            for name in sorted(self.files):
                f.write(f"- {name}\n")

        return {'json': str(json_file), 'markdown': str(md_file)}

    @staticmethod
    def _metric_rows(metrics: dict):
        rows = []
        for key, value in metrics.items():
            if isinstance(value, (float, np.floating)):
                value = f"{value:.6g}"
            rows.append([key, value])
        return rows

    def __repr__(self):
        return f'<RunReporter {os.fspath(self.output_dir)}>'
