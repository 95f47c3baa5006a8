"""
File persistence for runs: CSV tables, JSON summaries and a provenance manifest.

CSV files are comma separated with a mandatory header row and values written
with 17 significant digits, so repeated runs produce byte-identical files.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from twolevel import __version__
from twolevel.errors import ConfigError
from twolevel.models import BlochTrajectory, make_grid
from twolevel.pulses import AreaProfile, Sampled

logger = logging.getLogger(__name__)

ENVELOPE_HEADER = ("t", "V")
AREA_HEADER = ("t", "theta")
TRAJECTORY_HEADER = ("t", "rho11", "rho22", "re12", "im12")
MANIFEST_NAME = "provenance.json"


def write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    logger.info(f"wrote {path}")
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header names and the numeric rows of a CSV written by write_csv."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"CSV file not found: {path}")
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_envelope_csv(path: Path, env: Sampled) -> Path:
    return write_csv(path, ENVELOPE_HEADER, [env.grid.times, env.values])


def read_envelope_csv(path: Path) -> Sampled:
    """Load a `t,V` table on a uniform time grid."""
    header, data = read_csv(path)
    if tuple(h.strip() for h in header) != ENVELOPE_HEADER:
        raise ConfigError(f"{path}: expected header 't,V', got {','.join(header)}")
    t, v = data[:, 0], data[:, 1]
    grid = make_grid(float(t[0]), float(t[-1]), t.shape[0])
    if not np.allclose(t, grid.times, rtol=0.0, atol=1e-9 * max(1.0, grid.duration)):
        raise ConfigError(f"{path}: envelope times are not uniformly spaced")
    return Sampled(grid=grid, values=v)


def write_area_csv(path: Path, profile: AreaProfile) -> Path:
    return write_csv(path, AREA_HEADER, [profile.grid.times, profile.theta])


def write_trajectory_csv(path: Path, traj: BlochTrajectory) -> Path:
    return write_csv(path, TRAJECTORY_HEADER, [traj.grid.times, *traj.states.T])


def provenance(config_hash: Optional[str], command: str) -> dict:
    return {"command": command, "config_hash": config_hash, "version": __version__}


def write_json(path: Path, payload: dict, stanza: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if stanza is not None:
        body["provenance"] = stanza
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    logger.info(f"wrote {path}")
    return path


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, files: Sequence[Path], stanza: dict) -> Path:
    """Record the hash of every output file next to the run's provenance stanza."""
    out_dir = Path(out_dir)
    entries = {Path(f).name: file_sha256(f) for f in files}
    return write_json(out_dir / MANIFEST_NAME, {"files": entries}, stanza)
