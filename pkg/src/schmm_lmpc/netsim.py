"""Packet channel with per-link delays and dropouts, plus delay-trace files."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DomainError, LinkError, TraceFormatError
from .schmm import DEFAULT_MASK, DelayTrace, SchmmModel, SchmmSampler
from .topology import Topology

DEFAULT_TS = 10.0  # ms per simulation step


@dataclass(frozen=True, eq=False)
class PacketFrame:
    """Broadcast record: sender state at ``send_step`` and its planned inputs."""

    sender: int
    send_step: int
    state: np.ndarray
    planned_inputs: np.ndarray

    def __post_init__(self):
        state = np.array(self.state, dtype=float).reshape(-1)
        plan = np.array(self.planned_inputs, dtype=float)
        if plan.ndim == 1:
            plan = plan.reshape(1, -1) if plan.size else plan.reshape(0, 0)
        if plan.ndim != 2:
            raise DomainError("planned_inputs must be a (horizon, m) array")
        state.setflags(write=False)
        plan.setflags(write=False)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "planned_inputs", plan)

    @property
    def horizon(self) -> int:
        return self.planned_inputs.shape[0]


# --------------------------------------------------------------------------
# delay sources
# --------------------------------------------------------------------------

class ConstantDelay:
    def __init__(self, tau: float):
        self.tau = float(tau)

    def draw(self) -> float:
        return self.tau


class TraceDelay:
    """Replays a trace cyclically starting at ``offset``."""

    def __init__(self, trace: DelayTrace, offset: int = 0):
        if len(trace) == 0:
            raise DomainError("cannot replay an empty trace")
        self.samples = trace.samples
        self.pos = int(offset) % len(trace)

    def draw(self) -> float:
        tau = float(self.samples[self.pos])
        self.pos = (self.pos + 1) % self.samples.shape[0]
        return tau


class ModelDelay:
    """Samples a model (hidden state carried across packets)."""

    def __init__(self, model: SchmmModel, seed):
        self.sampler = SchmmSampler(model, seed)

    def draw(self) -> float:
        return self.sampler.draw()


def link_seed(master_seed: int, sender: int, receiver: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for link sender -> receiver."""
    return np.random.SeedSequence([int(master_seed), int(sender), int(receiver)])


def delay_steps(tau: float, ts: float) -> int:
    """Whole steps a packet spends in flight: ceil(tau / ts), never less than one."""
    return max(1, math.ceil(tau / ts))


# --------------------------------------------------------------------------
# channel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SendRecord:
    sender: int
    receiver: int
    send_step: int
    tau: float
    deliver_step: int | None  # None when dropped

    @property
    def dropped(self) -> bool:
        return self.deliver_step is None


class Channel:
    """Directed per-link queues; ``sources[(j, i)]`` supplies delays for j -> i."""

    def __init__(self, topology: Topology, sources: dict, ts: float = DEFAULT_TS,
                 mask: float = DEFAULT_MASK):
        if not ts > 0:
            raise DomainError("sampling period must be positive")
        self.topology = topology
        self.ts = float(ts)
        self.mask = float(mask)
        self.links = sorted((j, i) for j in range(topology.n_agents) for i in topology.neighbors(j))
        missing = [l for l in self.links if l not in sources]
        if missing:
            raise LinkError(f"no delay source for links {missing}")
        self.sources = {l: sources[l] for l in self.links}
        self._queues: dict[int, list] = {i: [] for i in range(topology.n_agents)}
        self.sent = {l: 0 for l in self.links}
        self.delivered = {l: 0 for l in self.links}
        self.dropped = {l: 0 for l in self.links}

    @classmethod
    def from_model(cls, topology: Topology, model: SchmmModel, master_seed: int,
                   ts: float = DEFAULT_TS) -> "Channel":
        src = {}
        for j in range(topology.n_agents):
            for i in topology.neighbors(j):
                src[(j, i)] = ModelDelay(model, link_seed(master_seed, j, i))
        return cls(topology, src, ts, model.mask)

    @classmethod
    def from_trace(cls, topology: Topology, trace: DelayTrace, master_seed: int,
                   ts: float = DEFAULT_TS) -> "Channel":
        """Every link replays the trace from its own seeded random offset."""
        src = {}
        for j in range(topology.n_agents):
            for i in topology.neighbors(j):
                offset = np.random.default_rng(link_seed(master_seed, j, i)).integers(len(trace))
                src[(j, i)] = TraceDelay(trace, int(offset))
        return cls(topology, src, ts, trace.mask)

    @classmethod
    def constant(cls, topology: Topology, tau: float, ts: float = DEFAULT_TS) -> "Channel":
        src = {}
        for j in range(topology.n_agents):
            for i in topology.neighbors(j):
                src[(j, i)] = ConstantDelay(tau)
        return cls(topology, src, ts)

    def send(self, frame: PacketFrame, receiver: int) -> SendRecord:
        link = (frame.sender, receiver)
        if link not in self.sources:
            raise LinkError(f"no link {frame.sender} -> {receiver}")
        tau = self.sources[link].draw()
        self.sent[link] += 1
        if tau == self.mask:
            self.dropped[link] += 1
            return SendRecord(frame.sender, receiver, frame.send_step, tau, None)
        deliver = frame.send_step + delay_steps(tau, self.ts)
        self._queues[receiver].append((deliver, frame.send_step, frame.sender, frame))
        return SendRecord(frame.sender, receiver, frame.send_step, tau, deliver)

    def broadcast(self, frame: PacketFrame) -> list[SendRecord]:
        """Send to every neighbor of the sender, in ascending receiver order."""
        return [self.send(frame, i) for i in self.topology.neighbors(frame.sender)]

    def deliver(self, step: int, receiver: int) -> list[PacketFrame]:
        """Frames due at or before ``step``, ordered by (send_step, sender)."""
        queue = self._queues[receiver]
        due = [q for q in queue if q[0] <= step]
        if not due:
            return []
        self._queues[receiver] = [q for q in queue if q[0] > step]
        due.sort(key=lambda q: (q[1], q[2]))
        for _, _, sender, _ in due:
            self.delivered[(sender, receiver)] += 1
        return [q[3] for q in due]

    def in_flight(self, link: tuple[int, int] | None = None) -> int:
        if link is None:
            return sum(len(q) for q in self._queues.values())
        return sum(1 for q in self._queues[link[1]] if q[2] == link[0])

    def counters(self) -> dict:
        return {l: (self.sent[l], self.delivered[l], self.dropped[l]) for l in self.links}


# --------------------------------------------------------------------------
# trace files
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def save_trace(trace: DelayTrace | Iterable[float], path, header: str | None = None) -> None:
    """One delay per line in ms; integral values (including the mask) without a fraction."""
    samples = trace.samples if isinstance(trace, DelayTrace) else np.asarray(list(trace), dtype=float)
    lines = [f"# {h}" for h in (header.splitlines() if header else [])]
    lines += [_fmt(float(x)) for x in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trace(path, mask: float = DEFAULT_MASK) -> DelayTrace:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise TraceFormatError(path, lineno, raw.rstrip("\n")) from None
            v = values[-1]
            if not (v == mask or 0 < v < mask):
                raise TraceFormatError(path, lineno, raw.rstrip("\n"))
    return DelayTrace(np.array(values, dtype=float), mask)
