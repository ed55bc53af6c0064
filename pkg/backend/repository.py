from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import os

import numpy as np
import pandas as pd

import config

logger = logging.getLogger(__name__)

META_PREFIX = "# meta: "


def _to_jsonable(value: Any):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': float(value.real), 'im': float(value.imag)}
    if isinstance(value, np.ndarray):
        return [_to_jsonable(v) for v in value.tolist()]
    if isinstance(value, pd.DataFrame):
        return value.to_dict(orient='records')
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(payload: Dict, indent: Optional[int] = 2) -> str:
    """Canonical JSON: sorted keys, numpy scalars converted, NaN kept as JSON NaN."""
    return json.dumps(payload, default=_to_jsonable, sort_keys=True, indent=indent)


class ArtifactRepository:
    def __init__(self, directory: str = config.DEFAULT_OUTPUT_DIR):
        """Output directory for one run; created on first use."""
        self.directory = directory
        self.written: List[str] = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def write_text(self, name: str, text: str) -> str:
        """Write via a temporary file and os.replace so readers never see a partial artifact."""
        target = self.path(name)
        tmp = target + ".tmp"
        try:
            with open(tmp, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, target)
        except OSError as e:
            logger.error(f"write_text error for {target}: {e}")
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        if target not in self.written:
            self.written.append(target)
        logger.debug(f"Wrote {target}")
        return target

    def write_csv(self, name: str, frame: pd.DataFrame, meta: Dict) -> str:
        """CSV with a leading `# meta:` line carrying the scenario needed to re-run it."""
        body = frame.to_csv(index=False, lineterminator="\n")
        return self.write_text(name, META_PREFIX + dumps(meta, indent=None) + "\n" + body)

    def write_json(self, name: str, payload: Dict) -> str:
        return self.write_text(name, dumps(payload) + "\n")

    def write_svg(self, name: str, svg: str) -> str:
        return self.write_text(name, svg)

    def write_error(self, error: Dict) -> str:
        return self.write_json(config.ERROR_FILE, {'error': error})

    def read_csv(self, name: str) -> Tuple[Dict, pd.DataFrame]:
        """Inverse of write_csv: (meta, frame)."""
        with open(self.path(name), encoding="utf-8") as f:
            first = f.readline()
            if not first.startswith(META_PREFIX):
                raise ValueError(f"{name} has no meta line")
            meta = json.loads(first[len(META_PREFIX):])
            frame = pd.read_csv(f)
        return meta, frame

    def read_json(self, name: str) -> Dict:
        with open(self.path(name), encoding="utf-8") as f:
            return json.load(f)
