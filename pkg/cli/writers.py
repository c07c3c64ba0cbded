"""
JSON and CSV output
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from database.moment_cache import fmt17
from models.data_models import HedgeSolution, MomentData, SelectionStep

logger = logging.getLogger(__name__)


def fmt12(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".12g")


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return fmt12(x)
    if x is None:
        return ""
    return str(x)


def write_json(path: Path, payload: Dict[str, Any]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    logger.info("wrote %s", path)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
    logger.info("wrote %s", path)


def moment_data_to_dict(m: MomentData) -> Dict[str, Any]:
    return {
        "A": fmt17(m.A),
        "B": [fmt17(x) for x in m.B],
        "C": [[fmt17(x) for x in row] for row in m.C],
        "k_star": fmt17(m.k_star),
        "swap_k": fmt17(m.swap_k),
        "labels": list(m.labels),
        "strikes": list(m.strikes),
        "params_hash": m.params_hash,
        "quad_meta": m.quad_meta,
    }


def moment_data_from_dict(d: Dict[str, Any]) -> MomentData:
    return MomentData(
        A=float(d["A"]),
        B=np.array([float(x) for x in d["B"]]),
        C=np.array([[float(x) for x in row] for row in d["C"]]).reshape(len(d["B"]), len(d["B"])),
        k_star=float(d["k_star"]),
        swap_k=float(d["swap_k"]),
        labels=list(d.get("labels", [])),
        strikes=list(d.get("strikes", [])),
        quad_meta=dict(d.get("quad_meta", {})),
        params_hash=d.get("params_hash", ""),
    )


def hedge_solution_to_dict(sol: HedgeSolution, labels: Sequence[str]) -> Dict[str, Any]:
    return {
        "method": sol.method,
        "c": fmt17(sol.c),
        "eps2": fmt17(sol.eps2),
        "rel_err": fmt17(sol.rel_err),
        "weights": {label: fmt17(x) for label, x in zip(labels, sol.v)},
        "active_set": [labels[i] for i in sol.active_set] if len(labels) else sol.active_set,
        "kkt_residual": None if sol.kkt_residual is None else fmt17(sol.kkt_residual),
    }


SELECTION_HEADER = ["method", "d", "lambda", "rel_err", "eps2", "certified", "converged", "support", "status"]


def selection_header(labels: Sequence[str]) -> List[str]:
    return SELECTION_HEADER + [f"v_{label}" for label in labels]


def selection_row(step: SelectionStep, strikes: Sequence[float], status: str = "ok") -> List[Any]:
    support = " ".join(format(strikes[i], "g") for i in step.support)
    return [step.method, step.d, step.lam, step.rel_err, step.eps2, int(step.certified),
            int(step.converged), support, status] + list(step.v)


def failure_row(method: str, d: Optional[int], message: str, n: int) -> List[Any]:
    return [method, "" if d is None else d, None, None, None, "", "", "", message] + [None] * n
