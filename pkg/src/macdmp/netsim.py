"""Discrete-event simulator of a multi-node MF-TDMA wireless network.

Each frame is an M-slot x L-channel grid of interference-free resource
blocks (RBs) and runs in two stages: demands are normalized and RBs
randomly assigned, then queued packets are transmitted on the assigned
RBs, one hop per frame. Links are free-space path loss thresholded at
receiver sensitivity; routing is static shortest-hop. Per frame each
node observes the lengths and intra-frame maxima of its generation and
transmission queues and receives the negated mean delay of packets
delivered to it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s


class DomainError(ValueError):
    """Argument outside the physical or protocol domain."""


class TopologyError(ValueError):
    """The link graph cannot support the requested network."""


class ProtocolError(ValueError):
    """A frame-level protocol rule was violated (e.g. overlapping RBs)."""


# ---------------------------------------------------------------------------
# radio


@dataclass(frozen=True)
class RadioParams:
    transmit_power: float      # W
    gain_tx: float
    gain_rx: float
    carrier_freq: float        # Hz
    rx_sensitivity: float      # W

    def __post_init__(self):
        for name in ("transmit_power", "gain_tx", "gain_rx", "carrier_freq", "rx_sensitivity"):
            if not getattr(self, name) > 0:
                raise DomainError(f"RadioParams.{name} must be positive")


def path_loss(distance: float, carrier_freq: float) -> float:
    """Free-space path loss (wavelength / 4 pi d)^2, dimensionless."""
    if not distance > 0 or not carrier_freq > 0:
        raise DomainError(f"path_loss needs positive inputs, got d={distance}, f={carrier_freq}")
    wavelength = SPEED_OF_LIGHT / carrier_freq
    ratio = wavelength / (4.0 * math.pi * distance)
    return ratio * ratio


def received_power(radio: RadioParams, distance: float) -> float:
    """Receive power under free-space propagation with antenna gains."""
    return radio.transmit_power * radio.gain_tx * radio.gain_rx * path_loss(
        distance, radio.carrier_freq)


def sensitivity_for_range(transmit_power: float, gain_tx: float, gain_rx: float,
                          carrier_freq: float, max_range: float) -> float:
    """Sensitivity that puts the link boundary exactly at `max_range` meters."""
    wavelength = SPEED_OF_LIGHT / carrier_freq
    lp = (wavelength / (4.0 * math.pi * max_range)) ** 2
    return transmit_power * gain_tx * gain_rx * lp


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class NodeSpec:
    id: int
    position: tuple[float, float]     # m
    traffic_class: str                # "high" | "low"
    mean_interarrival: float          # s, may be math.inf for silent nodes
    queue_capacity: int = 50

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise DomainError("queue_capacity must be >= 1")
        if not self.mean_interarrival > 0:
            raise DomainError("mean_interarrival must be > 0")
        if self.traffic_class not in ("high", "low"):
            raise DomainError(f"unknown traffic class {self.traffic_class!r}")


@dataclass(frozen=True, eq=False)
class Topology:
    nodes: tuple[NodeSpec, ...]
    adjacency: np.ndarray             # (N, N) bool, symmetric, no self loops
    next_hop: tuple[tuple[int, ...], ...]   # next_hop[i][dst]; -1 for i == dst

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(len(self.nodes)) if self.adjacency[i, j]]


def build_topology(nodes: list[NodeSpec], radio: RadioParams) -> Topology:
    """Threshold links on receive power, route by shortest hop count.

    An edge exists iff received power at the pair distance is >= the
    receiver sensitivity (boundary inclusive). Next hops follow BFS hop
    distances toward each destination, ties broken by the smaller
    neighbor id. Raises TopologyError listing unreachable pairs if the
    graph is disconnected.
    """
    n = len(nodes)
    if n < 2:
        raise DomainError("need at least 2 nodes")
    pos = np.array([s.position for s in nodes], dtype=np.float64)
    if len({tuple(p) for p in pos.tolist()}) != n:
        raise DomainError("node positions must be distinct")

    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(pos[i] - pos[j])))
            if received_power(radio, d) >= radio.rx_sensitivity:
                adj[i, j] = adj[j, i] = True

    # hop distances from every destination
    dist = np.full((n, n), -1, dtype=int)
    for src in range(n):
        dist[src, src] = 0
        q = deque([src])
        while q:
            u = q.popleft()
            for v in range(n):
                if adj[u, v] and dist[src, v] < 0:
                    dist[src, v] = dist[src, u] + 1
                    q.append(v)

    unreachable = [(i, j) for i in range(n) for j in range(n) if i != j and dist[j, i] < 0]
    if unreachable:
        raise TopologyError(f"disconnected topology, unreachable pairs: {unreachable}")

    next_hop = []
    for i in range(n):
        row = []
        for dst in range(n):
            if i == dst:
                row.append(-1)
                continue
            best = min(
                (j for j in range(n) if adj[i, j]),
                key=lambda j: (dist[dst, j], j),
            )
            row.append(best)
        next_hop.append(tuple(row))

    return Topology(nodes=tuple(nodes), adjacency=adj, next_hop=tuple(next_hop))


# ---------------------------------------------------------------------------
# frame grid and RB allocation


@dataclass(frozen=True)
class FrameGrid:
    slots_per_frame: int      # M
    channels: int             # L
    frame_duration: float     # s
    data_rate: float          # bit/s

    def __post_init__(self):
        if self.slots_per_frame < 1 or self.channels < 1:
            raise DomainError("grid needs M >= 1 and L >= 1")
        if not self.frame_duration > 0 or not self.data_rate > 0:
            raise DomainError("frame_duration and data_rate must be positive")

    @property
    def total_rbs(self) -> int:
        return self.slots_per_frame * self.channels

    @property
    def slot_capacity(self) -> float:
        """Bits per RB; recomputed from rate and slot length, never stored."""
        return self.data_rate * (self.frame_duration / self.slots_per_frame)


def largest_remainder_counts(demands, total: int) -> np.ndarray:
    """Integer split of `total` proportional to demands, ties by index.

    Zero total demand falls back to an as-equal-as-possible split
    (same rounding applied to an all-ones vector).
    """
    d = np.asarray(demands, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise DomainError("demands must be a non-empty 1-D vector")
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise DomainError("demands must be finite and non-negative")
    if d.sum() == 0.0:
        d = np.ones_like(d)
    if not np.isfinite(d.sum()):
        d = d / d.max()     # finite entries can still sum past the float range
    quotas = (d / d.sum()) * total
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    short = total - int(counts.sum())
    # stable sort keeps index order among equal remainders
    order = np.argsort(-remainders, kind="stable")
    for idx in order[:short]:
        counts[idx] += 1
    return counts


def allocate_rbs(demands, grid: FrameGrid, rng: np.random.Generator) -> list[list[tuple[int, int]]]:
    """Partition the M x L grid among nodes proportionally to demands.

    Counts come from largest-remainder rounding; the concrete (slot,
    channel) cells are a uniformly random permutation of the grid split
    by those counts.
    """
    counts = largest_remainder_counts(demands, grid.total_rbs)
    cells = [(s, c) for s in range(grid.slots_per_frame) for c in range(grid.channels)]
    perm = rng.permutation(len(cells))
    out: list[list[tuple[int, int]]] = []
    pos = 0
    for c in counts:
        out.append([cells[perm[k]] for k in range(pos, pos + c)])
        pos += c
    return out


# ---------------------------------------------------------------------------
# packets, observations, state


@dataclass
class Packet:
    id: int
    src: int
    dst: int
    size: int               # bits
    created_at: float       # s
    delivered_at: float | None = None

    def __post_init__(self):
        if self.src == self.dst:
            raise DomainError("packet src and dst must differ")


@dataclass(frozen=True)
class Observation:
    """Queue-length snapshot for one node over one frame."""

    gen: int
    gen_max: int
    tran: int
    tran_max: int

    def __post_init__(self):
        if not (0 <= self.gen <= self.gen_max and 0 <= self.tran <= self.tran_max):
            raise DomainError(f"inconsistent observation {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.gen, self.gen_max, self.tran, self.tran_max], dtype=np.float64)


ZERO_OBS = Observation(0, 0, 0, 0)


@dataclass
class QoSCounters:
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    delay_sum: float = 0.0        # s, over delivered packets
    delivered_bits: int = 0


@dataclass
class SimState:
    """Mutable network state: clock, queues, counters, RNG streams."""

    clock: int = 0                                     # frame index
    gen_queues: list[deque] = field(default_factory=list)
    tran_queues: list[deque] = field(default_factory=list)
    next_arrival: list[float] = field(default_factory=list)
    qos: QoSCounters = field(default_factory=QoSCounters)
    traffic_rng: np.random.Generator | None = None
    next_packet_id: int = 0

    def queued_packets(self) -> int:
        return sum(len(q) for q in self.gen_queues) + sum(len(q) for q in self.tran_queues)


def mean_field_obs(observations, topology: Topology, i: int) -> np.ndarray:
    """Componentwise mean observation over the 1-hop neighbors of node i.

    With no neighbors the node's own observation stands in, so the
    value is always in-distribution.
    """
    if not 0 <= i < len(topology.nodes):
        raise DomainError(f"node index {i} out of range")
    rows = [observations[j].as_array() if isinstance(observations[j], Observation)
            else np.asarray(observations[j], dtype=np.float64)
            for j in topology.neighbors(i)]
    if not rows:
        own = observations[i]
        return own.as_array() if isinstance(own, Observation) else np.asarray(own, dtype=np.float64)
    return np.mean(rows, axis=0)


class Simulator:
    """One network instance; strictly sequential, owns its RNG streams."""

    def __init__(self, topology: Topology, grid: FrameGrid, packet_size: int, seed: int):
        if packet_size > grid.slot_capacity:
            raise DomainError(
                f"packet size {packet_size} exceeds slot capacity {grid.slot_capacity}")
        self.topology = topology
        self.grid = grid
        self.packet_size = int(packet_size)
        seq = np.random.SeedSequence(seed)
        traffic_seed, alloc_seed = seq.spawn(2)
        self.alloc_rng = np.random.Generator(np.random.PCG64(alloc_seed))
        n = len(topology.nodes)
        state = SimState(
            gen_queues=[deque() for _ in range(n)],
            tran_queues=[deque() for _ in range(n)],
            traffic_rng=np.random.Generator(np.random.PCG64(traffic_seed)),
        )
        state.next_arrival = [self._draw_interarrival(state, i) for i in range(n)]
        self.state = state

    @property
    def n_nodes(self) -> int:
        return len(self.topology.nodes)

    def _draw_interarrival(self, state: SimState, node: int) -> float:
        mean = self.topology.nodes[node].mean_interarrival
        if math.isinf(mean):
            return math.inf
        return state.traffic_rng.exponential(mean)

    def _random_destination(self, state: SimState, src: int) -> int:
        other = state.traffic_rng.integers(self.n_nodes - 1)
        return int(other if other < src else other + 1)

    def generate_traffic(self, frame: int) -> list[Packet]:
        """Arrivals for one frame window; drop-tail on full generation queues.

        The per-node renewal process persists across frames via the
        stored next-arrival times, so the long-run rate is exactly
        1 / mean_interarrival.
        """
        state = self.state
        frame_end = (frame + 1) * self.grid.frame_duration
        accepted = []
        for i in range(self.n_nodes):
            capacity = self.topology.nodes[i].queue_capacity
            while state.next_arrival[i] < frame_end:
                pkt = Packet(
                    id=state.next_packet_id,
                    src=i,
                    dst=self._random_destination(state, i),
                    size=self.packet_size,
                    created_at=state.next_arrival[i],
                )
                state.next_packet_id += 1
                state.qos.generated += 1
                if len(state.gen_queues[i]) >= capacity:
                    state.qos.dropped += 1
                else:
                    state.gen_queues[i].append(pkt)
                    accepted.append(pkt)
                state.next_arrival[i] += self._draw_interarrival(state, i)
        return accepted

    def step_frame(self, allocation) -> tuple[list[Observation], np.ndarray, QoSCounters]:
        """Advance one frame under the given per-node RB sets.

        Stage 1 admits this frame's arrivals; stage 2 transmits one
        queued packet per owned RB (transmission queue first, then the
        generation queue), moving each packet one hop. Packets reaching
        their destination this frame count as delivered at the frame
        boundary; forwarded packets join the relay's transmission queue
        and become sendable next frame. Returns the per-node
        observations, per-node rewards (negated mean delivery delay),
        and this frame's QoS deltas.
        """
        state = self.state
        n = self.n_nodes
        if len(allocation) != n:
            raise ProtocolError(f"allocation for {len(allocation)} nodes, expected {n}")
        seen: set[tuple[int, int]] = set()
        total = 0
        for cells in allocation:
            for cell in cells:
                if cell in seen:
                    raise ProtocolError(f"RB {cell} assigned twice")
                seen.add(cell)
                total += 1
        if total != self.grid.total_rbs:
            raise ProtocolError(f"allocation covers {total} RBs, grid has {self.grid.total_rbs}")

        before = QoSCounters(**vars(state.qos))
        frame = state.clock
        frame_end = (frame + 1) * self.grid.frame_duration

        tran_start = [len(q) for q in state.tran_queues]
        self.generate_traffic(frame)
        gen_peak = [len(q) for q in state.gen_queues]

        delivered_delays: list[list[float]] = [[] for _ in range(n)]
        forwarded: list[list[Packet]] = [[] for _ in range(n)]
        for i in range(n):
            budget = len(allocation[i])
            for _ in range(budget):
                if state.tran_queues[i]:
                    pkt = state.tran_queues[i].popleft()
                elif state.gen_queues[i]:
                    pkt = state.gen_queues[i].popleft()
                else:
                    break
                hop = self.topology.next_hop[i][pkt.dst]
                if hop == pkt.dst:
                    pkt.delivered_at = frame_end
                    state.qos.delivered += 1
                    state.qos.delivered_bits += pkt.size
                    delay = pkt.delivered_at - pkt.created_at
                    state.qos.delay_sum += delay
                    delivered_delays[pkt.dst].append(delay)
                else:
                    forwarded[hop].append(pkt)

        for j in range(n):
            capacity = self.topology.nodes[j].queue_capacity
            for pkt in forwarded[j]:
                if len(state.tran_queues[j]) >= capacity:
                    state.qos.dropped += 1
                else:
                    state.tran_queues[j].append(pkt)

        observations = []
        for i in range(n):
            tran_now = len(state.tran_queues[i])
            observations.append(Observation(
                gen=len(state.gen_queues[i]),
                gen_max=gen_peak[i],
                tran=tran_now,
                tran_max=max(tran_start[i], tran_now),
            ))
        rewards = np.array(
            [-float(np.mean(d)) if d else 0.0 for d in delivered_delays], dtype=np.float64)

        state.clock += 1
        after = state.qos
        delta = QoSCounters(
            generated=after.generated - before.generated,
            delivered=after.delivered - before.delivered,
            dropped=after.dropped - before.dropped,
            delay_sum=after.delay_sum - before.delay_sum,
            delivered_bits=after.delivered_bits - before.delivered_bits,
        )
        self._assert_conservation()
        return observations, rewards, delta

    def _assert_conservation(self):
        q = self.state.qos
        queued = self.state.queued_packets()
        if q.generated != q.delivered + q.dropped + queued:
            raise AssertionError(
                f"packet conservation broken: generated={q.generated} "
                f"delivered={q.delivered} dropped={q.dropped} queued={queued}")
