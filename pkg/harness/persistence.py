"""
Campaign file formats.

CSV tables carry a single leading comment line with the config hash and any
tolerance metadata; JSON reports and manifests carry a config_hash key.
Snapshot series are appended to incrementally while a run is in progress.
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import orjson
import pandas as pd

from analysis.observables import CorrelatorRecord

logger = logging.getLogger(__name__)

SCALAR_COLUMNS = ["time", "step", "mu0sq", "norm", "energy_density", "entropy", "vev",
                  "g2k0", "error_estimate"]
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS


def _default(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Type is not JSON serializable: {type(obj).__name__}")


def _header_line(config_hash: str, meta: Optional[Mapping[str, Any]] = None) -> str:
    fields = {"config_hash": config_hash, **(meta or {})}
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items()) + "\n"


def parse_header(path) -> Dict[str, str]:
    with open(path, "r") as f:
        first = f.readline()
    if not first.startswith("#"):
        return {}
    return dict(item.split("=", 1) for item in first[1:].split() if "=" in item)


def write_csv(path, frame: pd.DataFrame, config_hash: str,
              meta: Optional[Mapping[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        f.write(_header_line(config_hash, meta))
        frame.to_csv(f, index=False, float_format="%.17g")
    os.replace(tmp, path)
    return path


def read_csv(path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    return pd.read_csv(path, comment="#"), parse_header(path)


def append_csv(path, frame: pd.DataFrame, config_hash: str,
               meta: Optional[Mapping[str, Any]] = None) -> None:
    path = Path(path)
    new_file = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as f:
        if new_file:
            f.write(_header_line(config_hash, meta))
        frame.to_csv(f, index=False, header=new_file, float_format="%.17g")


def write_json(path, payload: Mapping[str, Any], config_hash: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if config_hash is not None:
        body["config_hash"] = config_hash
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(orjson.dumps(body, default=_default, option=JSON_OPTIONS))
    os.replace(tmp, path)
    return path


def read_json(path) -> Dict[str, Any]:
    return orjson.loads(Path(path).read_bytes())


@dataclass
class RunManifest:
    """Status and provenance of one quench run"""

    run_id: str
    tauQ: float
    chi: int
    mu0sq_final: float
    run_hash: str
    config_hash: str
    software_version: str
    status: str = "pending"
    step: int = 0
    snapshots: List[str] = field(default_factory=list)
    checkpoint: Optional[str] = None
    wall_clock: float = 0.0
    peak_rss_mb: float = 0.0
    error: Optional[Dict[str, Any]] = None
    history: List[Dict[str, Any]] = field(default_factory=list)

    def log_event(self, event: str, **details):
        self.history.append({"event": event, "timestamp": time.time(), **details})

    def save(self, path) -> Path:
        return write_json(path, asdict(self))

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**read_json(path))


class SeriesWriter:
    """
    Observer that appends every CorrelatorRecord to the run's CSV files.

    scalars.csv holds one row per snapshot, g2r.csv the long-form (time, r, G2r)
    table.
    """

    def __init__(self, run_dir, config_hash: str, meta: Optional[Mapping[str, Any]] = None):
        self.run_dir = Path(run_dir)
        self.scalars_path = self.run_dir / "scalars.csv"
        self.g2r_path = self.run_dir / "g2r.csv"
        self.config_hash = config_hash
        self.meta = dict(meta or {})

    @property
    def paths(self) -> List[str]:
        return [str(self.scalars_path), str(self.g2r_path)]

    def __call__(self, record: CorrelatorRecord) -> None:
        g = record.g2_r
        g2k0 = float(g[0] + 2.0 * np.sum(g[1:]))
        scalars = pd.DataFrame([[record.time, record.step, record.mu0sq, record.norm,
                                 record.energy_density, record.entropy, record.vev, g2k0,
                                 record.error_estimate]], columns=SCALAR_COLUMNS)
        long = pd.DataFrame({"time": record.time, "r": np.arange(len(g)), "G2r": g})
        append_csv(self.scalars_path, scalars, self.config_hash, self.meta)
        append_csv(self.g2r_path, long, self.config_hash, self.meta)

    def truncate_after(self, step: int) -> None:
        """Drop rows written after `step` so a resumed run does not duplicate them"""
        if not self.scalars_path.exists():
            return
        scalars, header = read_csv(self.scalars_path)
        keep = scalars[scalars["step"] <= step]
        if len(keep) == len(scalars):
            return
        logger.info(f"Dropping {len(scalars) - len(keep)} snapshots past step {step} in {self.run_dir}")
        meta = {k: v for k, v in header.items() if k != "config_hash"}
        write_csv(self.scalars_path, keep, self.config_hash, meta)
        if self.g2r_path.exists():
            g2r, _ = read_csv(self.g2r_path)
            write_csv(self.g2r_path, g2r[g2r["time"].isin(set(keep["time"]))], self.config_hash, meta)


def load_series(run_dir) -> List[CorrelatorRecord]:
    """CorrelatorRecords of a run, ordered by time"""
    run_dir = Path(run_dir)
    scalars, _ = read_csv(run_dir / "scalars.csv")
    g2r, _ = read_csv(run_dir / "g2r.csv")
    grouped = {t: grp.sort_values("r")["G2r"].to_numpy() for t, grp in g2r.groupby("time")}
    records = []
    for row in scalars.sort_values("time").itertuples(index=False):
        records.append(CorrelatorRecord(
            time=float(row.time), g2_r=grouped[row.time], norm=float(row.norm),
            energy_density=float(row.energy_density), entropy=float(row.entropy),
            step=int(row.step), mu0sq=float(row.mu0sq), vev=float(row.vev),
            error_estimate=float(row.error_estimate),
        ))
    return records


__all__ = [
    "SCALAR_COLUMNS",
    "parse_header",
    "write_csv",
    "read_csv",
    "append_csv",
    "write_json",
    "read_json",
    "RunManifest",
    "SeriesWriter",
    "load_series",
]
