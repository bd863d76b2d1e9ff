"""
MCVR REPORTS
Stages CSV / JSON outputs for a run and writes them atomically,
with a manifest.json catalog of everything written
"""

import io
import os
import csv
import json
import math
import hashlib
import logging
import tempfile
from pathlib import Path
from typing import Optional, List, Dict, Sequence, Any

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def format_value(value) -> str:
    """CSV cell text: floats at 6 significant digits, None as empty"""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        return f"{value:.6g}"
    return str(value)


def to_jsonable(value):
    """numpy arrays and scalars to plain JSON values; non-finite floats become null"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def csv_text(rows: Sequence[Dict], header: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(header), extrasaction='ignore', lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({key: format_value(row.get(key)) for key in header})
    return buffer.getvalue()


def json_text(data) -> str:
    return json.dumps(to_jsonable(data), indent=2) + '\n'


def matrix_csv(matrix: np.ndarray) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    for row in np.asarray(matrix):
        writer.writerow([repr(float(v)) for v in row])
    return buffer.getvalue()


def write_atomic(path: Path, text: str):
    """Temp file in the target directory, then os.replace"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class ReportWriter:
    """
    Nothing touches disk until commit(); then every staged file is written
    atomically and manifest.json lists them in staging order.
    """

    def __init__(self, out_dir, command: str = ''):
        self.out_dir = Path(out_dir)
        self.command = command
        self.meta: Dict[str, Any] = {}
        self._staged: Dict[str, Dict] = {}

    def add_rows(self, filename: str, rows: Sequence[Dict], header: Sequence[str], fmt: str = 'csv'):
        """Tabular output as CSV, or as a JSON array of row objects with fmt='json'"""
        if fmt == 'json':
            name = Path(filename).with_suffix('.json').name
            records = [{key: row.get(key) for key in header} for row in rows]
            self._stage(name, json_text(records), kind='table', rows=len(rows))
        else:
            self._stage(filename, csv_text(rows, header), kind='table', rows=len(rows))

    def add_json(self, filename: str, data):
        self._stage(filename, json_text(data), kind='json')

    def add_matrix(self, filename: str, matrix: np.ndarray):
        self._stage(filename, matrix_csv(matrix), kind='matrix', rows=int(np.asarray(matrix).shape[0]))

    def _stage(self, filename: str, text: str, kind: str, rows: Optional[int] = None):
        if filename == MANIFEST_NAME:
            raise ValueError(f"{MANIFEST_NAME} is reserved")
        entry = {
            'id': len(self._staged) + 1,
            'filename': filename,
            'kind': kind,
            'sha256': hashlib.sha256(text.encode('utf-8')).hexdigest(),
        }
        if rows is not None:
            entry['rows'] = rows
        self._staged[filename] = {'text': text, 'entry': entry}

    @property
    def filenames(self) -> List[str]:
        return list(self._staged)

    def manifest(self) -> Dict:
        return {
            'command': self.command,
            **self.meta,
            'files': [staged['entry'] for staged in self._staged.values()],
            'total': len(self._staged),
        }

    def commit(self) -> List[Path]:
        written = []
        for filename, staged in self._staged.items():
            path = self.out_dir / filename
            write_atomic(path, staged['text'])
            written.append(path)
            logger.info("Saved: %s", path)

        manifest_path = self.out_dir / MANIFEST_NAME
        write_atomic(manifest_path, json_text(self.manifest()))
        written.append(manifest_path)
        return written
