"""Report envelope shared by every CLI run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class SolveReport:
    command: str
    config_echo: dict = field(default_factory=dict)
    residual_norms: dict = field(default_factory=dict)
    iteration_traces: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: str = "ok"  # ok | warn | fail
    messages: list = field(default_factory=list)

    def warn(self, msg: str):
        self.messages.append(msg)
        if self.status == "ok":
            self.status = "warn"

    def fail(self, msg: str):
        self.messages.append(msg)
        self.status = "fail"

    def exit_code(self) -> int:
        return {"ok": 0, "warn": 1, "fail": 2}[self.status]

    def to_json(self) -> str:
        def _clean(x):
            if isinstance(x, dict):
                return {str(k): _clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [_clean(v) for v in x]
            if isinstance(x, complex):
                return {"re": x.real, "im": x.imag}
            if hasattr(x, "item"):
                return x.item()
            return x

        return json.dumps(_clean(asdict(self)), indent=2, sort_keys=True)
