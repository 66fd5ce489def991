"""Communication graphs, per-agent compact systems and consensus quantities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, TopologyError

DEFAULT_THETA = 0.99


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected, connected, unweighted graph over agents 0..N-1."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise TopologyError("adjacency must be a non-empty square matrix")
        if not np.isin(adj, (0, 1)).all():
            raise TopologyError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric (undirected graph)")
        if np.any(np.diag(adj)):
            raise TopologyError("self loops are not allowed")
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise TopologyError(f"graph has {n_comp} connected components; a spanning tree is required")
        object.__setattr__(self, "adjacency", _frozen(adj, dtype=int))

    @classmethod
    def from_edges(cls, n_agents: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        adj = np.zeros((n_agents, n_agents), dtype=int)
        for i, j in edges:
            if not (0 <= i < n_agents and 0 <= j < n_agents):
                raise TopologyError(f"edge ({i}, {j}) references an agent outside 0..{n_agents - 1}")
            if i == j:
                raise TopologyError(f"self loop on agent {i}")
            adj[i, j] = adj[j, i] = 1
        return cls(adj)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def neighbor_sets(self) -> tuple[tuple[int, ...], ...]:
        """Neighbor-inclusive sets {i} ∪ {j : a_ij = 1}, each sorted ascending."""
        return tuple(tuple(sorted({i, *np.nonzero(row)[0].tolist()}))
                     for i, row in enumerate(self.adjacency))

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Neighbors of ``i`` excluding ``i`` itself."""
        return tuple(int(j) for j in np.nonzero(self.adjacency[i])[0])

    @property
    def cardinalities(self) -> np.ndarray:
        return self.adjacency.sum(axis=1) + 1

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.adjacency.sum(axis=1)) - self.adjacency

    @property
    def averaging_matrix(self) -> np.ndarray:
        """Row-stochastic C with C[j, l] = 1/card(N_j) for l in N_j."""
        inc = self.adjacency + np.eye(self.n_agents)
        return inc / inc.sum(axis=1, keepdims=True)

    def is_complete(self) -> bool:
        return bool(self.adjacency.sum() == self.n_agents * (self.n_agents - 1))

    def __eq__(self, other) -> bool:
        return isinstance(other, Topology) and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self) -> int:
        return hash(self.adjacency.tobytes())


def complete_graph(n: int) -> Topology:
    return Topology.from_edges(n, itertools.combinations(range(n), 2))


def ring_graph(n: int, chords: Sequence[tuple[int, int]] = ()) -> Topology:
    edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)] if n == 2 else []
    return Topology.from_edges(n, list(edges) + list(chords))


def random_connected_graph(n: int, rng: np.random.Generator, p_extra: float = 0.3) -> Topology:
    """Random spanning tree plus each remaining edge with probability ``p_extra``."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[rng.integers(k)])))) for k in range(1, n)}
    for i, j in itertools.combinations(range(n), 2):
        if (i, j) not in edges and rng.random() < p_extra:
            edges.add((i, j))
    return Topology.from_edges(n, sorted(edges))


def load_graph(path) -> Topology:
    """Edge list, one ``i j`` per line, 0-based; a lone index declares a node; ``#`` comments."""
    edges, nodes = [], set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            idx = [int(p) for p in parts]
        except ValueError:
            raise TopologyError(f"{path}:{lineno}: expected integer agent indices, got {raw!r}") from None
        if len(idx) not in (1, 2) or min(idx) < 0:
            raise TopologyError(f"{path}:{lineno}: expected 'i j' with non-negative indices, got {raw!r}")
        nodes.update(idx)
        if len(idx) == 2:
            edges.append((idx[0], idx[1]))
    if not nodes:
        raise TopologyError(f"{path}: graph file declares no agents")
    return Topology.from_edges(max(nodes) + 1, edges)


def save_graph(topology: Topology, path) -> None:
    lines = [f"# {topology.n_agents} agents"]
    if topology.n_agents == 1:
        lines.append("0")
    lines += [f"{i} {j}" for i, j in topology.edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# dynamics and compact systems
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AgentDynamics:
    """x+ = A x + B u; ``translational`` lists the position coordinates."""

    A: np.ndarray
    B: np.ndarray
    translational: tuple[int, ...] = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1]:
            raise DomainError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DomainError(f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[0]}")
        tr = tuple(int(t) for t in self.translational) or tuple(range(A.shape[0]))
        if any(t < 0 or t >= A.shape[0] for t in tr):
            raise DomainError("translational indices out of range")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "translational", tr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


def build_global(dynamics: Sequence[AgentDynamics]) -> tuple[np.ndarray, np.ndarray]:
    if not dynamics:
        raise DomainError("at least one agent is required")
    n, m = dynamics[0].n, dynamics[0].m
    for k, d in enumerate(dynamics):
        if (d.n, d.m) != (n, m):
            raise DomainError(f"agent {k} has (n, m) = ({d.n}, {d.m}); expected ({n}, {m})")
    return block_diag(*[d.A for d in dynamics]), block_diag(*[d.B for d in dynamics])


def build_error_map(topology: Topology, i: int, n: int, theta: float = DEFAULT_THETA) -> np.ndarray:
    """A_e = (I - theta C) kron I_n.

    The map is the same for every agent since the cardinalities are global
    knowledge; ``i`` is accepted for symmetry with :func:`build_compact`.
    """
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if not 0 <= i < topology.n_agents:
        raise DomainError(f"agent {i} not in topology")
    N = topology.n_agents
    return np.kron(np.eye(N) - theta * topology.averaging_matrix, np.eye(n))


@dataclass(frozen=True, eq=False)
class CompactSystem:
    agent: int
    A_c: np.ndarray
    B_c: np.ndarray
    A_e: np.ndarray
    theta: float
    n: int
    m: int
    n_agents: int
    neighbors: tuple[int, ...]

    def __post_init__(self):
        for name in ("A_c", "B_c", "A_e"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        cond = np.linalg.cond(self.A_e)
        if not np.isfinite(cond) or cond > 1e12:
            raise DomainError(f"error map is numerically singular (cond={cond:.3g})")
        A_e_inv = np.linalg.inv(self.A_e)
        object.__setattr__(self, "_A_hat", _frozen(self.A_e @ self.A_c @ A_e_inv))
        object.__setattr__(self, "_B_hat", _frozen(self.A_e @ self.B_c))

    @property
    def A_hat(self) -> np.ndarray:
        """Error-coordinate dynamics A_e A_c A_e^-1."""
        return self._A_hat

    @property
    def B_hat(self) -> np.ndarray:
        return self._B_hat

    def state_block(self, j: int) -> slice:
        return slice(j * self.n, (j + 1) * self.n)

    def input_block(self, j: int) -> slice:
        return slice(j * self.m, (j + 1) * self.m)


def build_compact(topology: Topology, A_m: np.ndarray, B_m: np.ndarray, i: int,
                  theta: float = DEFAULT_THETA) -> CompactSystem:
    N = topology.n_agents
    if A_m.shape[0] % N or B_m.shape[1] % N:
        raise DomainError("global matrices are not divisible into per-agent blocks")
    n, m = A_m.shape[0] // N, B_m.shape[1] // N
    hood = topology.neighbor_sets[i]
    sx = np.kron(np.isin(np.arange(N), hood).astype(float), np.ones(n))
    su = np.kron(np.isin(np.arange(N), hood).astype(float), np.ones(m))
    A_c = A_m * sx[:, None] * sx[None, :]
    B_c = B_m * sx[:, None] * su[None, :]
    return CompactSystem(agent=i, A_c=A_c, B_c=B_c, A_e=build_error_map(topology, i, n, theta),
                         theta=float(theta), n=n, m=m, n_agents=N, neighbors=hood)


# --------------------------------------------------------------------------
# consensus quantities
# --------------------------------------------------------------------------

def local_consensus_point(x_i, neighbor_states: Iterable) -> np.ndarray:
    """Mean of the agent's own state and its (predicted) neighbor states."""
    stack = [np.asarray(x_i, dtype=float)] + [np.asarray(x, dtype=float) for x in neighbor_states]
    return np.mean(stack, axis=0)


def consensus_error(x_i, delta_i) -> np.ndarray:
    return np.asarray(x_i, dtype=float) - np.asarray(delta_i, dtype=float)


def delta_max(deltas, translational: Sequence[int] | None = None) -> float:
    """Largest pairwise distance between local consensus points."""
    d = np.atleast_2d(np.asarray(deltas, dtype=float))
    if translational is not None:
        d = d[:, list(translational)]
    if d.shape[0] < 2:
        return 0.0
    diff = d[:, None, :] - d[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())
