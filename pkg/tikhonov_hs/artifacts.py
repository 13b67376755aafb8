import csv
import importlib.metadata
import json
import logging
import platform
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy

from tikhonov_hs.hilbert_scale import Grid, GridFunction, GridMismatchError
from tikhonov_hs.settings import ConfigError, RunConfig
from tikhonov_hs.tikhonov_solver import Reconstruction

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DISTRIBUTION = "tikhonov-hs"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    log.debug("wrote %s", path)
    return path


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    if value is None:
        return ""
    return value


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    log.debug("wrote %s", path)
    return path


def write_reconstruction(path: Path, reconstruction: Reconstruction, x_dag: GridFunction | None = None) -> Path:
    x = reconstruction.x
    if x_dag is None:
        rows = zip(x.grid.nodes, x.values)
        return write_csv(path, ("t", "x"), rows)
    return write_csv(path, ("t", "x", "x_dag"), zip(x.grid.nodes, x.values, x_dag.values))


def write_path(path: Path, reconstructions: Sequence[Reconstruction], x_dag: GridFunction | None = None) -> Path:
    header = ("alpha", "residual_norm", "penalty_norm", "error", "iterations", "converged", "status")
    rows = (
        (
            r.alpha,
            r.residual_norm,
            r.penalty_norm,
            r.x.distance(x_dag) if x_dag is not None else None,
            r.iterations,
            r.converged,
            r.error or "ok",
        )
        for r in reconstructions
    )
    return write_csv(path, header, rows)


def read_data(path: str | Path, grid: Grid) -> GridFunction:
    """Measured data from a CSV with columns t,y sampled on the nodes of grid."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"t", "y"} <= set(reader.fieldnames):
                raise ConfigError(f"data_path: {path} needs columns t and y")
            rows = [(float(row["t"]), float(row["y"])) for row in reader]
    except OSError as err:
        raise ConfigError(f"data_path: cannot read {path} ({err.strerror or err})") from None
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"data_path: {path} holds a non-numeric value") from None
    t, y = (np.array(column) for column in zip(*rows)) if rows else (np.array([]), np.array([]))
    if len(t) != grid.n + 1 or not np.allclose(t, grid.nodes, atol=1e-9):
        raise GridMismatchError(f"{path} is not sampled on the {grid.n + 1} grid nodes")
    return GridFunction(grid, y)


def versions() -> dict[str, str]:
    try:
        package = importlib.metadata.version(DISTRIBUTION)
    except importlib.metadata.PackageNotFoundError:
        package = "unknown"
    return {
        DISTRIBUTION: package,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def build_manifest(command: str, config: RunConfig, artifacts: Sequence[Path]) -> dict[str, Any]:
    return {
        "command": command,
        "config": config.to_mapping(),
        "seeds": list(config.noise.seeds),
        "artifacts": [path.name for path in artifacts],
        "versions": versions(),
    }


def write_manifest(out: Path, command: str, config: RunConfig, artifacts: Sequence[Path]) -> Path:
    return write_json(out / MANIFEST_NAME, build_manifest(command, config, artifacts))


def read_manifest(path: str | Path) -> RunConfig:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"{path}: cannot read manifest ({err})") from None
    if not isinstance(manifest, dict) or "config" not in manifest:
        raise ConfigError(f"{path}: the manifest has no config")
    return RunConfig.from_mapping(manifest["config"])
