"""The solve report shared by every solver, and its JSON form."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .linalg import matvec, transpose_matvec


class Verdict(str, enum.Enum):
    SYSTEM = "SystemSolved"
    NORMAL = "NormalSolved"
    MINNORM = "MinNormSolved"
    NC = "NC"
    ERROR = "Error"


EXIT_CODES = {
    Verdict.SYSTEM: 0,
    Verdict.MINNORM: 0,
    Verdict.NORMAL: 2,
    Verdict.NC: 3,
    Verdict.ERROR: 1,
}


def exit_code(verdict):
    return EXIT_CODES[Verdict(verdict)]


@dataclass
class SolveReport:
    """Outcome of one solve.

    ``history`` holds ``(iteration, ||r||)`` pairs, ``events`` free-form
    dictionaries (witnesses, switches, guard exits, breakdowns) and ``info``
    solver-specific scalars such as the final ``rho`` of the triangle
    algorithm.
    """

    solver: str
    verdict: Verdict
    iterations: int
    matvecs: int
    residual: float = float("nan")
    rel_residual: float = float("nan")
    normal_residual: float = float("nan")
    rel_normal_residual: float = float("nan")
    delta_star: Optional[float] = None
    x: Optional[np.ndarray] = None
    history: list = field(default_factory=list)
    seconds: float = 0.0
    events: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def exit_code(self):
        return exit_code(self.verdict)

    def events_of(self, kind):
        return [e for e in self.events if e.get("kind") == kind]

    def to_dict(self):
        out = asdict(self)
        out["verdict"] = Verdict(self.verdict).value
        out["x"] = None if self.x is None else [float(v) for v in self.x]
        out["history"] = [[int(k), float(v)] for k, v in self.history]
        return _plain(out)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, allow_nan=True, default=_fmt)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["verdict"] = Verdict(data["verdict"])
        if data.get("x") is not None:
            data["x"] = np.asarray(data["x"], dtype=np.float64)
        data["history"] = [(int(k), float(v)) for k, v in data.get("history", [])]
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def _fmt(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, enum.Enum):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def finalize(report, A, b, x):
    """Recompute the residual norms of ``x`` from scratch and store them."""
    b = np.asarray(b, dtype=np.float64)
    r = b - matvec(A, x)
    g = transpose_matvec(A, r)
    nb = float(np.linalg.norm(b))
    ng = float(np.linalg.norm(transpose_matvec(A, b)))
    report.x = np.asarray(x, dtype=np.float64)
    report.residual = float(np.linalg.norm(r))
    report.rel_residual = report.residual / nb if nb else report.residual
    report.normal_residual = float(np.linalg.norm(g))
    report.rel_normal_residual = report.normal_residual / ng if ng else report.normal_residual
    if Verdict(report.verdict) is Verdict.NORMAL:
        report.delta_star = report.residual
    return report
