"""Solver diagnostics."""

import json
import logging
from dataclasses import asdict, dataclass, field

log = logging.getLogger("qmdac")


@dataclass
class IterationRecord:
    iteration: int
    basis_size: int
    residual: float
    shift: complex | None = None
    sda_iterations: int | None = None


@dataclass
class NodeRecord:
    path: str
    depth: int
    size: int
    correction_rank: int
    iterations: int
    residual: float


@dataclass
class SolveReport:
    """Residual history, iteration counts, ranks and timing of a solve."""

    residuals: list = field(default_factory=list)
    records: list = field(default_factory=list)
    iterations: int = 0
    basis_size: int = 0
    rank: int = 0
    converged: bool = False
    retries: int = 0
    time_s: float = 0.0
    final_residual: float = float("nan")
    hodlr_rank: int = 0
    nodes: list = field(default_factory=list)

    def record(self, rec):
        self.records.append(rec)
        self.residuals.append(rec.residual)
        log.debug("%s", rec)

    @property
    def depth(self):
        return max((nd.depth for nd in self.nodes), default=0)

    def node_lines(self):
        """One JSON line per recursion node."""
        return [json.dumps(asdict(nd)) for nd in self.nodes]
