import csv
import json
import os
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

import numpy as np

from logic.forward import StateTrajectory
from logic.mesh_fem import Mesh
from logic.synthdata import ObservationData

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["alpha", "eps", "gamma", "M", "N", "T0", "seed", "e_q", "e_u", "weighted_err",
                  "iters", "termination", "delta_realized", "config_hash"]


def format_value(value: Any) -> str:
    """Floats in scientific notation with 6 significant digits; everything else as str."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.5e}"
    return str(value)


class ResultStore:
    """
    A collection of static methods for writing run outputs below a directory.
    """

    @staticmethod
    def _ensure_parent_dir(dest_path: str) -> None:
        """
        Ensures the parent directory of the destination path exists.
        Creates it if it does not.
        """
        parent_dir = Path(dest_path).parent
        os.makedirs(parent_dir, exist_ok=True)

    @staticmethod
    def write_csv(dest: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> None:
        """
        Writes rows as CSV with the given header. Values go through format_value so that
        identical runs produce byte-identical files.
        """
        ResultStore._ensure_parent_dir(dest)
        with open(dest, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row.get(col, "")) for col in columns])
        logger.info(f"Wrote {dest}")

    @staticmethod
    def write_json(dest: str, payload: Dict[str, Any]) -> None:
        ResultStore._ensure_parent_dir(dest)
        with open(dest, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
        logger.info(f"Wrote {dest}")

    @staticmethod
    def write_jsonl(dest: str, records: Iterable[Dict[str, Any]]) -> None:
        ResultStore._ensure_parent_dir(dest)
        with open(dest, 'w', encoding='utf-8') as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")

    @staticmethod
    def read_json(source: str) -> Dict[str, Any]:
        with open(source, 'r', encoding='utf-8') as f:
            return json.load(f)

    @staticmethod
    def write_trajectory_csv(dest: str, traj: StateTrajectory) -> None:
        """
        Debug export, one row per level: n, t_n, then the interior nodal values.
        """
        ResultStore._ensure_parent_dir(dest)
        with open(dest, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["n", "t"] + [f"u{i}" for i in traj.mesh.interior])
            for n, (t, state) in enumerate(zip(traj.times, traj.states)):
                writer.writerow([n, format_value(t)] + [repr(float(v)) for v in state])
        logger.info(f"Wrote trajectory ({traj.N + 1} levels) to {dest}")

    @staticmethod
    def save_mesh_descriptor(dest: str, mesh: Mesh) -> None:
        ResultStore.write_json(dest, mesh.to_descriptor())

    @staticmethod
    def load_mesh_descriptor(source: str) -> Mesh:
        return Mesh.from_descriptor(ResultStore.read_json(source))

    @staticmethod
    def save_observations(dest_dir: str, obs: ObservationData, metadata: Dict[str, Any]) -> None:
        """
        Observation bundle: values.csv (one row per level, full precision) and meta.json with
        the grid descriptor, window, noise level, seed and realized noise norm.
        """
        values_path = os.path.join(dest_dir, "values.csv")
        ResultStore._ensure_parent_dir(values_path)
        with open(values_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            for row in obs.values:
                writer.writerow([repr(float(v)) for v in row])
        meta = dict(metadata)
        meta.update({"mesh": obs.mesh.to_descriptor(), "tau": obs.tau, "T0": obs.T0, "eps": obs.epsilon,
                     "seed": obs.seed, "delta_realized": obs.delta_realized, "N": obs.N})
        ResultStore.write_json(os.path.join(dest_dir, "meta.json"), meta)

    @staticmethod
    def load_observations(source_dir: str) -> ObservationData:
        meta = ResultStore.read_json(os.path.join(source_dir, "meta.json"))
        with open(os.path.join(source_dir, "values.csv"), 'r', encoding='utf-8') as f:
            values = np.array([[float(v) for v in row] for row in csv.reader(f)])
        mesh = Mesh.from_descriptor(meta["mesh"])
        return ObservationData(mesh=mesh, values=values.reshape(int(meta["N"]) + 1, mesh.n_interior),
                               tau=float(meta["tau"]), T0=float(meta["T0"]), epsilon=float(meta["eps"]),
                               seed=int(meta["seed"]), delta_realized=float(meta["delta_realized"]))


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
