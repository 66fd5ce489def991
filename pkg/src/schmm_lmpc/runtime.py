"""Per-agent control loop and the barrier-synchronized multi-agent simulator.

Each step runs four phases: deliveries, agent updates, broadcasts, actuation.
An agent update folds newly received frames into per-neighbor delay models
(incremental EM + Viterbi forecast), predicts each neighbor's current state,
forms its local consensus point and applies its own block of U = K E.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lmpc
from .config import REFERENCE, SimConfig
from .errors import ConfigError, DivergenceError
from .netsim import Channel, PacketFrame, delay_steps, load_trace
from .presets import reference_model
from .schmm import (FilterState, SchmmModel, estimate_prev_delay, incremental_em_update,
                    load_model, model_drift, save_model, viterbi_predict)
from .topology import (AgentDynamics, CompactSystem, Topology, build_compact, build_global,
                       delta_max, load_graph, local_consensus_point)


def roll_forward(state, planned_inputs, steps: int, dynamics: AgentDynamics, start: int = 0) -> np.ndarray:
    """Propagate ``state`` ``steps`` times using planned inputs from index ``start``.

    The last planned input is held past the end of the sequence; with no plan
    the input is zero.
    """
    x = np.array(state, dtype=float)
    plan = np.asarray(planned_inputs, dtype=float)
    h = plan.shape[0] if plan.ndim == 2 else 0
    for p in range(start, start + steps):
        u = plan[min(p, h - 1)] if h else np.zeros(dynamics.m)
        x = dynamics.A @ x + dynamics.B @ u
    return x


def predict_neighbor_state(frame: PacketFrame, tau_hat: int, dynamics: AgentDynamics) -> np.ndarray:
    if tau_hat < 0:
        raise ValueError("tau_hat must be non-negative")
    return roll_forward(frame.state, frame.planned_inputs, tau_hat, dynamics)


@dataclass
class NeighborView:
    """What agent i knows and believes about neighbor j."""

    model: SchmmModel
    filt: FilterState
    prediction: np.ndarray
    tau_next: float
    last_seen: int = -1          # newest send_step used for prediction
    resolved: int = 0            # packets below this send_step are accounted for
    arrived: set = field(default_factory=set)  # arrived send_steps >= resolved
    frame: PacketFrame | None = None
    offset: int = 0              # steps the prediction has been rolled from ``frame``
    history: dict = field(default_factory=dict)  # absolute step -> predicted state, last tau_max+1 steps
    updates: int = 0


@dataclass
class StepOutput:
    u: np.ndarray
    frame: PacketFrame
    delta: np.ndarray
    V: float
    alpha: float
    J: float
    N_alpha: int


class AgentRuntime:
    def __init__(self, agent: int, topology: Topology, dynamics: Sequence[AgentDynamics],
                 compact: CompactSystem, gain: lmpc.GainSolution | None, weights: lmpc.CostWeights,
                 models: dict, initial_states, *, eta: float = 0.1, ts: float = 10.0,
                 tau_max: int = 100):
        if gain is None:
            raise ConfigError("gain", f"agent {agent} has no certified gain")
        self.id = agent
        self.topology = topology
        self.dynamics = list(dynamics)
        self.compact = compact
        self.gain = gain
        self.weights = weights
        self.eta = float(eta)
        self.ts = float(ts)
        self.tau_max = int(tau_max)
        init = np.asarray(initial_states, dtype=float)
        self.x = init[agent].copy()
        self.plan = np.zeros((0, self.dynamics[agent].m))
        self.neighbors = topology.neighbors(agent)
        n_agents = topology.n_agents
        self.P_J, self.Q_J = weights.expand(n_agents)
        self.views: dict[int, NeighborView] = {}
        for j in self.neighbors:
            model = models[j]
            self.views[j] = NeighborView(model=model, filt=FilterState.initial(model),
                                         prediction=init[j].copy(), tau_next=float(model.mu[0]))

    # -- neighbor tracking ------------------------------------------------
    def _observe(self, view: NeighborView, tau: float, binned: float | None) -> None:
        view.model = incremental_em_update(view.model, tau, self.eta, bin_width=self.ts, binned=binned)
        view.tau_next, view.filt = viterbi_predict(view.model, view.filt, tau,
                                                   bin_width=self.ts, binned=binned)
        view.updates += 1

    def _estimate_lag(self, view: NeighborView, frame: PacketFrame, k: int) -> int | None:
        """Steps since ``frame.state`` was current, matched against past predictions.

        Returns None while the history cannot discriminate between lags (for
        instance before the first frame, when every prediction is the same).
        """
        cands = [(k - s, x) for s, x in view.history.items() if 1 <= k - s <= self.tau_max]
        if not cands:
            return None
        lag, dist = estimate_prev_delay(frame.state, cands, return_distances=True)
        if dist.max() - dist.min() <= 1e-12 * max(1.0, float(dist.max())):
            return None
        return lag

    def _roll_stale(self, view: NeighborView, j: int) -> None:
        if view.frame is None:
            return
        dyn = self.dynamics[j]
        view.prediction = roll_forward(view.prediction, view.frame.planned_inputs, 1, dyn, view.offset)
        view.offset += 1

    def _track(self, j: int, frames: list[PacketFrame], k: int) -> None:
        view = self.views[j]
        mask = view.model.mask
        # one delay observation per arriving packet, in arrival order
        for f in frames:
            if f.send_step < view.resolved or f.send_step in view.arrived:
                continue
            view.arrived.add(f.send_step)
            lag = self._estimate_lag(view, f, k)
            if lag is not None:
                self._observe(view, lag * self.ts, self.ts)
        # packets older than the history window that never showed up count as dropped
        while view.resolved < k - self.tau_max:
            if view.resolved in view.arrived:
                view.arrived.discard(view.resolved)
            else:
                self._observe(view, mask, None)
            view.resolved += 1
        fresh = [f for f in frames if f.send_step > view.last_seen]
        if not fresh:
            self._roll_stale(view, j)
            return
        newest = fresh[-1]
        view.last_seen = newest.send_step
        if view.tau_next == mask:
            self._roll_stale(view, j)
            return
        tau_hat = delay_steps(view.tau_next, self.ts)
        view.frame, view.offset = newest, tau_hat
        # the frame's trajectory, anchored at its send time, replaces older guesses
        dyn = self.dynamics[j]
        x = newest.state
        for p, s in enumerate(range(newest.send_step, k)):
            if s >= k - self.tau_max:
                view.history[s] = x
            x = roll_forward(x, newest.planned_inputs, 1, dyn, p)
        view.prediction = predict_neighbor_state(newest, tau_hat, dyn)

    # -- control ------------------------------------------------------------
    def error_vector(self, delta: np.ndarray) -> np.ndarray:
        """Stacked error E_i = A_e (X_i - delta_i in every neighborhood block)."""
        c = self.compact
        X = np.zeros(c.n * c.n_agents)
        X[c.state_block(self.id)] = self.x - delta
        for j in self.neighbors:
            X[c.state_block(j)] = self.views[j].prediction - delta
        return c.A_e @ X

    def step(self, frames: Sequence[PacketFrame], k: int) -> StepOutput:
        by_sender: dict[int, list] = {}
        for f in frames:
            by_sender.setdefault(f.sender, []).append(f)
        for j in self.neighbors:
            self._track(j, by_sender.get(j, []), k)
            view = self.views[j]
            view.history[k] = view.prediction
            view.history.pop(k - self.tau_max - 1, None)
        delta = local_consensus_point(self.x, [self.views[j].prediction for j in self.neighbors])
        E = self.error_vector(delta)
        n_max = self.weights.N_max
        E_traj, U_traj = lmpc.rollout(self.gain, E, n_max + 1)
        v = ((E_traj @ self.gain.P_v) * E_traj).sum(axis=1)
        N_alpha = lmpc.adaptive_horizon(float(v[0]), v[1:].tolist(), n_max, self.weights.v_ratio)
        J = lmpc.evaluate_cost(E_traj[:N_alpha], U_traj[:N_alpha], self.P_J, self.Q_J)
        own = self.compact.input_block(self.id)
        u = U_traj[0, own].copy()
        self.plan = U_traj[:N_alpha, own].copy()
        frame = PacketFrame(self.id, k, self.x.copy(), self.plan)
        return StepOutput(u=u, frame=frame, delta=delta, V=float(v[0]),
                          alpha=lmpc.min_alpha(E, self.gain.P_v), J=J, N_alpha=N_alpha)

    def actuate(self, u: np.ndarray) -> None:
        self.x = self.dynamics[self.id].step(self.x, u)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

@dataclass
class SimResult:
    ts: float
    translational: tuple[int, ...]
    states: np.ndarray        # (T, N, n), value at the start of each step
    inputs: np.ndarray        # (T, N, m)
    e_norm: np.ndarray        # (T, N) translational ||x_i - delta_i|| with true neighbor states
    e_full: np.ndarray        # (T, N) same over the full state
    e_local: np.ndarray       # (T, N) translational, agent's own (predicted) delta_i
    V: np.ndarray
    alpha: np.ndarray
    J: np.ndarray
    N_alpha: np.ndarray
    delta_max: np.ndarray     # (T,) over the agents' local consensus points
    delta_max_true: np.ndarray
    delays: list              # (step, sender, receiver, predicted, realized, dropped)
    channel: list             # (step, sender, receiver, sent, delivered, dropped)
    snapshots: dict           # (agent, neighbor, step) -> SchmmModel
    gains: dict               # agent -> GainSolution

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    def max_drift(self) -> float:
        """Largest (pi, trans, mix) entry change of any neighbor model over the run."""
        first, last = {}, {}
        for (i, j, k), m in self.snapshots.items():
            if (i, j) not in first or k < first[(i, j)][0]:
                first[(i, j)] = (k, m)
            if (i, j) not in last or k > last[(i, j)][0]:
                last[(i, j)] = (k, m)
        return max((model_drift(first[key][1], last[key][1]) for key in first), default=0.0)

    def write(self, outdir) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        T, N, n = self.states.shape
        m = self.inputs.shape[2]
        r = repr

        def dump(name, header, rows):
            with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(header) + "\n")
                fh.writelines(",".join(row) + "\n" for row in rows)

        dump("states.csv", ["step", "agent"] + [f"x{c}" for c in range(n)],
             ([str(k), str(i)] + [r(float(v)) for v in self.states[k, i]]
              for k in range(T) for i in range(N)))
        dump("inputs.csv", ["step", "agent"] + [f"u{c}" for c in range(m)],
             ([str(k), str(i)] + [r(float(v)) for v in self.inputs[k, i]]
              for k in range(T) for i in range(N)))
        dump("errors.csv", ["step", "agent", "e_norm", "V", "alpha", "J", "N_alpha", "e_full", "e_local"],
             ([str(k), str(i), r(float(self.e_norm[k, i])), r(float(self.V[k, i])),
               r(float(self.alpha[k, i])), r(float(self.J[k, i])), str(int(self.N_alpha[k, i])),
               r(float(self.e_full[k, i])), r(float(self.e_local[k, i]))]
              for k in range(T) for i in range(N)))
        dump("delta_max.csv", ["step", "time_s", "delta_max", "delta_max_true"],
             ([str(k), r(k * self.ts / 1000.0), r(float(self.delta_max[k])), r(float(self.delta_max_true[k]))]
              for k in range(T)))
        dump("delays.csv", ["step", "link", "predicted", "realized", "dropped"],
             ([str(k), f"{j}->{i}", r(float(p)), r(float(t)), str(int(d))]
              for k, j, i, p, t, d in self.delays))
        dump("channel.csv", ["step", "link", "sent", "delivered", "dropped"],
             ([str(k), f"{j}->{i}", str(s), str(dl), str(dr)] for k, j, i, s, dl, dr in self.channel))
        models = out / "models"
        models.mkdir(exist_ok=True)
        for (i, j, k), model in sorted(self.snapshots.items()):
            save_model(model, models / f"agent{i}_neighbor{j}_step{k}.model")
        with open(out / "gains.txt", "w", encoding="utf-8") as fh:
            fh.write("\n\n".join(g.report(a) for a, g in sorted(self.gains.items())) + "\n")
        return out


def _load_model_ref(cfg: SimConfig, key: str) -> SchmmModel:
    value = cfg[key]
    return reference_model() if value == REFERENCE else load_model(cfg.resolve(value))


def initial_states(seed: int, n_agents: int, n: int, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return scale * rng.standard_normal((n_agents, n))


def build_agents(cfg: SimConfig, topology: Topology | None = None):
    """Topology, dynamics, gains and runtimes described by ``cfg``."""
    topology = topology or load_graph(cfg.resolve(cfg["graph"]))
    A, B, tr = cfg.dynamics()
    dyn = AgentDynamics(A, B, tr)
    N = topology.n_agents
    dynamics = [dyn] * N
    P, Q, P_v = cfg.weight_matrices(dyn.n, dyn.m)
    w = cfg["weights"]
    weights = lmpc.CostWeights(P=P, Q=Q, P_v=P_v, N_max=int(w["N_max"]), v_ratio=float(w["v_ratio"]),
                               eps=float(w["eps"]), alpha=float(w["alpha"]))
    A_m, B_m = build_global(dynamics)
    agent_model = _load_model_ref(cfg, "network.agent_model")
    x0 = initial_states(int(cfg["simulation.seed"]), N, dyn.n, float(cfg["simulation.init_scale"]))
    gains, agents = {}, []
    for i in range(N):
        compact = build_compact(topology, A_m, B_m, i, float(w["theta"]))
        gains[i] = lmpc.synthesize_gain(compact, weights)
        agents.append(AgentRuntime(i, topology, dynamics, compact, gains[i], weights,
                                   {j: agent_model for j in topology.neighbors(i)}, x0,
                                   eta=float(cfg["network.eta"]), ts=cfg.ts,
                                   tau_max=int(cfg["network.tau_max"])))
    return topology, dynamics, agents, gains


def build_channel(cfg: SimConfig, topology: Topology) -> Channel:
    seed = int(cfg["simulation.seed"])
    if cfg["network.channel_trace"] is not None:
        trace = load_trace(cfg.resolve(cfg["network.channel_trace"]), float(cfg["network.mask"]))
        return Channel.from_trace(topology, trace, seed, cfg.ts)
    return Channel.from_model(topology, _load_model_ref(cfg, "network.channel_model"), seed, cfg.ts)


def run_simulation(cfg: SimConfig, channel: Channel | None = None) -> SimResult:
    topology, dynamics, agents, gains = build_agents(cfg)
    channel = channel or build_channel(cfg, topology)
    T = int(cfg["simulation.steps"])
    every = int(cfg["simulation.snapshot_every"])
    N, n, m = topology.n_agents, dynamics[0].n, dynamics[0].m
    tr = list(dynamics[0].translational)
    hoods = topology.neighbor_sets

    states = np.empty((T, N, n))
    inputs = np.empty((T, N, m))
    e_norm, e_full, e_local = (np.empty((T, N)) for _ in range(3))
    V, alpha, J = (np.empty((T, N)) for _ in range(3))
    N_alpha = np.empty((T, N), dtype=int)
    dmax, dmax_true = np.empty(T), np.empty(T)
    delay_rows, channel_rows, snapshots = [], [], {}

    def snapshot(k):
        for a in agents:
            for j, view in a.views.items():
                snapshots[(a.id, j, k)] = view.model

    snapshot(0)
    prev = channel.counters()
    for k in range(T):
        inbox = [channel.deliver(k, i) for i in range(N)]
        outs = [agents[i].step(inbox[i], k) for i in range(N)]

        X = np.array([a.x for a in agents])
        states[k] = X
        true_delta = np.array([X[list(h)].mean(axis=0) for h in hoods])
        deltas = np.array([o.delta for o in outs])
        for i, o in enumerate(outs):
            inputs[k, i] = o.u
            err = X[i] - true_delta[i]
            e_norm[k, i] = np.linalg.norm(err[tr])
            e_full[k, i] = np.linalg.norm(err)
            e_local[k, i] = np.linalg.norm((X[i] - o.delta)[tr])
            V[k, i], alpha[k, i], J[k, i], N_alpha[k, i] = o.V, o.alpha, o.J, o.N_alpha
        dmax[k] = delta_max(deltas, tr)
        dmax_true[k] = delta_max(true_delta, tr)

        for i, o in enumerate(outs):
            for rec in channel.broadcast(o.frame):
                predicted = agents[rec.receiver].views[i].tau_next
                delay_rows.append((k, i, rec.receiver, predicted, rec.tau, int(rec.dropped)))
        now = channel.counters()
        for link in channel.links:
            s0, d0, r0 = prev[link]
            s1, d1, r1 = now[link]
            channel_rows.append((k, link[0], link[1], s1 - s0, d1 - d0, r1 - r0))
        prev = now

        for i, o in enumerate(outs):
            agents[i].actuate(o.u)
            if not np.all(np.isfinite(agents[i].x)):
                raise DivergenceError(k, i)
        if every and (k + 1) % every == 0 and k + 1 < T:
            snapshot(k + 1)
    snapshot(T)
    return SimResult(ts=cfg.ts, translational=tuple(tr), states=states, inputs=inputs, e_norm=e_norm,
                     e_full=e_full, e_local=e_local, V=V, alpha=alpha, J=J, N_alpha=N_alpha,
                     delta_max=dmax, delta_max_true=dmax_true, delays=delay_rows,
                     channel=channel_rows, snapshots=snapshots, gains=gains)


def threshold_reference(e_norm: np.ndarray, dmax: np.ndarray) -> float:
    """Scale that ``delta_max`` is judged against: its initial value.

    When every neighborhood covers the whole graph the initial local consensus
    points coincide and that value is zero; the initial largest error norm is
    used instead.
    """
    d0 = float(dmax[0])
    e0 = float(np.max(e_norm[0]))
    return d0 if d0 > 1e-9 * max(e0, 1e-300) else e0


def time_to_threshold(e_norm: np.ndarray, dmax: np.ndarray, ratio: float = 0.01) -> int | None:
    """First step from which every agent's error and delta_max stay below ``ratio`` of step 0.

    Returns None if the run ends above the threshold.
    """
    ok = np.all(e_norm <= ratio * e_norm[0], axis=1) & (dmax <= ratio * threshold_reference(e_norm, dmax))
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return 0
    last_bad = int(bad[-1])
    return None if last_bad == len(ok) - 1 else last_bad + 1
