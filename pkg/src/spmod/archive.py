"""Versioned, self-describing text format for trained policies: header plus
sparse (state, action, q, visits) records, one file per paradigm."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .learner import UNVISITED, DecisionMatrix, decision_matrix
from .mdp import ActionGrid, AgentModel, N_E_BINS, N_EDOT_BINS, N_STATES
from .modulation import Paradigm

FORMAT_VERSION = 1

_PARADIGM_FILES = {
    Paradigm.INCREASE_TRACKING: "policy_increase.qtab",
    Paradigm.DECREASE_TRACKING: "policy_decrease.qtab",
    Paradigm.DISTURBANCE_REJECTION: "policy_disturbance.qtab",
}


class ArchiveFormatError(ValueError):
    pass


@dataclass
class PolicyArchive:
    """One paradigm's trained table plus the metadata needed to act with it."""

    paradigm: Paradigm
    grid: ActionGrid
    e_range: float
    edot_range: float
    gamma: float
    q: np.ndarray
    visits: np.ndarray
    summary: dict = field(default_factory=dict)

    @classmethod
    def from_model(
        cls,
        model: AgentModel,
        grid: ActionGrid,
        ranges: tuple[float, float],
        summary: dict | None = None,
    ) -> "PolicyArchive":
        return cls(
            paradigm=grid.paradigm,
            grid=grid,
            e_range=ranges[0],
            edot_range=ranges[1],
            gamma=model.gamma,
            q=model.q.copy(),
            visits=model.visits.copy(),
            summary=dict(summary or {}),
        )

    def to_model(self) -> AgentModel:
        model = AgentModel(len(self.grid), self.gamma)
        model.q[:] = self.q
        model.visits[:] = self.visits
        model._vmax[:] = self.q.max(axis=1)
        return model


def archive_filename(paradigm: Paradigm) -> str:
    return _PARADIGM_FILES[paradigm]


def save_archive(arc: PolicyArchive, path: str) -> None:
    lines = [
        f"spmod-policy v{FORMAT_VERSION}",
        f"paradigm {arc.paradigm.name}",
        f"gamma {arc.gamma!r}",
        f"e_range {arc.e_range!r}",
        f"edot_range {arc.edot_range!r}",
        "actions " + " ".join(repr(v) for v in arc.grid.values),
        f"records {int((arc.visits > 0).sum())}",
    ]
    for record in arc.summary.items():
        lines.append(f"# {record[0]}={record[1]}")
    lines.append("# columns: state action q visits")
    s_idx, a_idx = np.nonzero(arc.visits > 0)
    for s, a in zip(s_idx.tolist(), a_idx.tolist()):
        lines.append(f"{s} {a} {arc.q[s, a]!r} {int(arc.visits[s, a])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_archive(path: str) -> PolicyArchive:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    try:
        if not lines[0].startswith("spmod-policy v"):
            raise ArchiveFormatError(f"{path}: not a policy archive")
        version = int(lines[0].split("v")[-1])
        if version != FORMAT_VERSION:
            raise ArchiveFormatError(f"{path}: unsupported format version {version}")
        header: dict[str, str] = {}
        records: list[str] = []
        header_keys = ("paradigm", "gamma", "e_range", "edot_range", "actions", "records")
        for ln in lines[1:]:
            if not ln or ln.startswith("#"):
                continue
            key, _, rest = ln.partition(" ")
            if key in header_keys:
                header[key] = rest
            else:
                records.append(ln)
        paradigm = Paradigm[header["paradigm"]]
        values = tuple(float(v) for v in header["actions"].split())
        grid = ActionGrid(paradigm, values)
        n_records = int(header["records"])
        q = np.zeros((N_STATES, len(values)))
        visits = np.zeros((N_STATES, len(values)), dtype=np.int64)
        count = 0
        for ln in records:
            s_s, a_s, q_s, v_s = ln.split()
            q[int(s_s), int(a_s)] = float(q_s)
            visits[int(s_s), int(a_s)] = int(v_s)
            count += 1
        if count != n_records:
            raise ArchiveFormatError(f"{path}: expected {n_records} records, found {count}")
        return PolicyArchive(
            paradigm=paradigm,
            grid=grid,
            e_range=float(header["e_range"]),
            edot_range=float(header["edot_range"]),
            gamma=float(header["gamma"]),
            q=q,
            visits=visits,
        )
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, ArchiveFormatError):
            raise
        raise ArchiveFormatError(f"{path}: corrupt archive ({exc})") from exc


def save_archives(
    models: dict[Paradigm, AgentModel],
    grids: dict[Paradigm, ActionGrid],
    ranges: dict[Paradigm, tuple[float, float]],
    out_dir: str,
    summary: dict | None = None,
) -> dict[Paradigm, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for par, model in models.items():
        arc = PolicyArchive.from_model(model, grids[par], ranges[par], summary)
        path = os.path.join(out_dir, archive_filename(par))
        save_archive(arc, path)
        paths[par] = path
    return paths


def load_archives(out_dir: str) -> dict[Paradigm, PolicyArchive]:
    out = {}
    for par, name in _PARADIGM_FILES.items():
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            out[par] = load_archive(path)
    return out


# --- decision-matrix grid export --------------------------------------------


def export_decision_grid(arc: PolicyArchive) -> str:
    """25-row x 100-column comma-delimited grid of greedy action indices
    (unvisited states marked with the sentinel), preceded by a legend."""
    model = arc.to_model()
    matrix = decision_matrix(model, arc.grid)
    lines = [f"# decision matrix: paradigm={arc.paradigm.name} sentinel={UNVISITED}"]
    for i, m_val in enumerate(arc.grid.values):
        lines.append(f"# action {i}: m={m_val!r}")
    for row in matrix.grid:
        lines.append(",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_decision_grid(text: str) -> np.ndarray:
    rows = []
    for ln in text.splitlines():
        if not ln or ln.startswith("#"):
            continue
        rows.append([int(v) for v in ln.split(",")])
    grid = np.array(rows, dtype=np.int64)
    if grid.shape != (N_E_BINS, N_EDOT_BINS):
        raise ArchiveFormatError(f"decision grid has shape {grid.shape}, expected 25x100")
    return grid
