"""World assembly: topology and scenario files, lossy channels, modules.

File formats are line oriented (full grammar in docs/worldfiles.md):

    # topology
    config ack_timeout_ms=100 max_retries=5 loss=0.0 prop_ms=1 byte_us=300
    module head center=NORTH_SOUTH ports=1:WEST,2:EAST sensors=1:0,3:0
    link head.2 wr.0 loss=0.1
    file head car.role car.role
    root head

    # scenario
    at 500 start head car.role
    at 1000 sensor head 1 1

A directed channel models the serial medium: a transmission occupies the
line for len(bytes) * per_byte_delay, is lost with the link's loss
probability, and otherwise arrives propagation_delay after the last byte
went out. Loss decisions come from the world's seeded generator, so a run
is a deterministic function of (topology, scenario, seed, until).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .dynarole import CENTER_AXES, DIRECTIONS, PhysSnapshot
from .link import LinkConfig, PortProtocol
from .messages import MessageTicket, ServiceMessage, send_message
from .node import ServiceNode, Session
from .sim import EventLog, Rng, Scheduler, US_PER_CS, US_PER_MS

DEFAULT_LOSS = 0.0
DEFAULT_PROP_US = 1 * US_PER_MS
DEFAULT_BYTE_US = 300


class LoadError(Exception):
    """Input files failed validation; nothing was run."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


@dataclass
class ModuleSpec:
    name: str
    center: str
    ports: dict[int, str]
    sensors: dict[int, int] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)


@dataclass
class LinkSpec:
    module_a: str
    port_a: int
    module_b: str
    port_b: int
    loss: Optional[float] = None
    prop_us: Optional[int] = None
    byte_us: Optional[int] = None


@dataclass
class Topology:
    modules: list[ModuleSpec]
    links: list[LinkSpec]
    root: str
    link_config: LinkConfig = field(default_factory=LinkConfig)
    default_loss: float = DEFAULT_LOSS
    default_prop_us: int = DEFAULT_PROP_US
    default_byte_us: int = DEFAULT_BYTE_US


@dataclass
class ScenarioEvent:
    time_cs: int
    kind: str  # sensor | sever | restore | upgrade | start
    args: tuple


@dataclass
class Scenario:
    events: list[ScenarioEvent] = field(default_factory=list)


def _parse_kv(fields: list[str], line_no: int, diags: list[str],
              allowed: frozenset[str]) -> dict[str, str]:
    out = {}
    for item in fields:
        if "=" not in item:
            diags.append(f"line {line_no}: expected key=value, found {item!r}")
            continue
        key, value = item.split("=", 1)
        if key not in allowed:
            diags.append(f"line {line_no}: unknown key {key!r}")
            continue
        out[key] = value
    return out


_MODULE_KEYS = frozenset({"center", "ports", "sensors"})
_LINK_KEYS = frozenset({"loss", "prop_ms", "prop_us", "byte_us"})
_CONFIG_KEYS = frozenset({"ack_timeout_ms", "max_retries", "loss", "prop_ms", "byte_us"})


def _records(text: str):
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line_no, line.split()


def parse_topology(text: str, base_dir: Path | str = ".") -> Topology:
    base = Path(base_dir)
    diags: list[str] = []
    modules: list[ModuleSpec] = []
    links: list[LinkSpec] = []
    by_name: dict[str, ModuleSpec] = {}
    root: Optional[str] = None
    config_kv: dict[str, str] = {}

    def endpoint(token: str, line_no: int) -> Optional[tuple[str, int]]:
        if "." not in token:
            diags.append(f"line {line_no}: expected module.port, found {token!r}")
            return None
        name, _, port_text = token.rpartition(".")
        if name not in by_name or not port_text.isdigit():
            diags.append(f"line {line_no}: unknown link endpoint {token!r}")
            return None
        port = int(port_text)
        if port not in by_name[name].ports:
            diags.append(f"line {line_no}: module {name!r} has no port {port}")
            return None
        return name, port

    for line_no, fields in _records(text):
        record = fields[0]
        if record == "module":
            if len(fields) < 2:
                diags.append(f"line {line_no}: module needs a name")
                continue
            name = fields[1]
            if name in by_name or "." in name:
                diags.append(f"line {line_no}: bad or duplicate module name {name!r}")
                continue
            kv = _parse_kv(fields[2:], line_no, diags, _MODULE_KEYS)
            center = kv.get("center", "")
            if center not in CENTER_AXES:
                diags.append(f"line {line_no}: bad center axis {center!r}")
                continue
            ports: dict[int, str] = {}
            for part in filter(None, kv.get("ports", "").split(",")):
                idx_text, _, label = part.partition(":")
                if not idx_text.isdigit() or label not in DIRECTIONS or int(idx_text) in ports:
                    diags.append(f"line {line_no}: bad port entry {part!r}")
                else:
                    ports[int(idx_text)] = label
            sensors: dict[int, int] = {}
            for part in filter(None, kv.get("sensors", "").split(",")):
                sid, _, value = part.partition(":")
                try:
                    sensors[int(sid)] = int(value)
                except ValueError:
                    diags.append(f"line {line_no}: bad sensor entry {part!r}")
            spec = ModuleSpec(name=name, center=center, ports=ports, sensors=sensors)
            modules.append(spec)
            by_name[name] = spec
        elif record == "link":
            if len(fields) < 3:
                diags.append(f"line {line_no}: link needs two endpoints")
                continue
            end_a = endpoint(fields[1], line_no)
            end_b = endpoint(fields[2], line_no)
            if end_a is None or end_b is None:
                continue
            kv = _parse_kv(fields[3:], line_no, diags, _LINK_KEYS)
            try:
                loss = float(kv["loss"]) if "loss" in kv else None
                prop_us = int(kv["prop_ms"]) * US_PER_MS if "prop_ms" in kv else None
                if "prop_us" in kv:
                    prop_us = int(kv["prop_us"])
                byte_us = int(kv["byte_us"]) if "byte_us" in kv else None
            except ValueError:
                diags.append(f"line {line_no}: bad link parameter")
                continue
            if loss is not None and not 0.0 <= loss <= 1.0:
                diags.append(f"line {line_no}: loss must be in [0,1]")
                continue
            links.append(LinkSpec(end_a[0], end_a[1], end_b[0], end_b[1], loss, prop_us, byte_us))
        elif record == "file":
            if len(fields) != 4:
                diags.append(f"line {line_no}: usage: file <module> <name> <path>")
                continue
            if fields[1] not in by_name:
                diags.append(f"line {line_no}: unknown module {fields[1]!r}")
                continue
            path = base / fields[3]
            try:
                by_name[fields[1]].files[fields[2]] = path.read_text(encoding="utf-8")
            except OSError as exc:
                diags.append(f"line {line_no}: cannot read {path}: {exc}")
        elif record == "root":
            if len(fields) != 2 or fields[1] not in by_name:
                diags.append(f"line {line_no}: root needs a known module name")
            else:
                root = fields[1]
        elif record == "config":
            config_kv.update(_parse_kv(fields[1:], line_no, diags, _CONFIG_KEYS))
        else:
            diags.append(f"line {line_no}: unknown record {record!r}")

    used_ports: set[tuple[str, int]] = set()
    for spec in links:
        for end in ((spec.module_a, spec.port_a), (spec.module_b, spec.port_b)):
            if end in used_ports:
                diags.append(f"port {end[0]}.{end[1]} appears in more than one link")
            used_ports.add(end)

    if diags:
        raise LoadError(diags)

    # An empty topology is legal; it simply runs to an empty log.
    default_root = modules[0].name if modules else ""
    topo = Topology(modules=modules, links=links, root=root or default_root)
    try:
        topo.link_config = LinkConfig(
            ack_timeout_ms=int(config_kv.get("ack_timeout_ms", 100)),
            max_retries=int(config_kv.get("max_retries", 5)),
            per_byte_delay_us=int(config_kv.get("byte_us", DEFAULT_BYTE_US)),
        )
        topo.default_loss = float(config_kv.get("loss", DEFAULT_LOSS))
        topo.default_prop_us = int(config_kv.get("prop_ms", 1)) * US_PER_MS
        topo.default_byte_us = topo.link_config.per_byte_delay_us
    except ValueError as exc:
        raise LoadError([f"bad config value: {exc}"]) from None
    if not 0.0 <= topo.default_loss <= 1.0:
        raise LoadError(["config loss must be in [0,1]"])
    return topo


_SCENARIO_ARITY = {"sensor": 3, "sever": 2, "restore": 2, "upgrade": 2, "start": 2}


def parse_scenario(text: str) -> Scenario:
    diags: list[str] = []
    events: list[ScenarioEvent] = []
    last_time = 0
    for line_no, fields in _records(text):
        if fields[0] != "at" or len(fields) < 3:
            diags.append(f"line {line_no}: expected 'at <time-cs> <event> ...'")
            continue
        try:
            time_cs = int(fields[1])
        except ValueError:
            diags.append(f"line {line_no}: bad time {fields[1]!r}")
            continue
        if time_cs < 0 or time_cs < last_time:
            diags.append(f"line {line_no}: times must be non-negative and sorted")
            continue
        last_time = time_cs
        kind = fields[2]
        args = fields[3:]
        if kind not in _SCENARIO_ARITY:
            diags.append(f"line {line_no}: unknown event {kind!r}")
            continue
        if len(args) != _SCENARIO_ARITY[kind]:
            diags.append(f"line {line_no}: {kind} takes {_SCENARIO_ARITY[kind]} arguments")
            continue
        if kind == "sensor":
            try:
                args = (args[0], int(args[1]), int(args[2]))
            except ValueError:
                diags.append(f"line {line_no}: sensor id and value must be integers")
                continue
        elif kind == "upgrade":
            try:
                args = (args[0], int(args[1]))
            except ValueError:
                diags.append(f"line {line_no}: version must be an integer")
                continue
        else:
            args = tuple(args)
        events.append(ScenarioEvent(time_cs, kind, args))
    if diags:
        raise LoadError(diags)
    return Scenario(events=events)


def load_topology(path: str | Path) -> Topology:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError([f"cannot read {path}: {exc}"]) from None
    return parse_topology(text, base_dir=path.parent)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError([f"cannot read {path}: {exc}"]) from None
    return parse_scenario(text)


class Channel:
    """One direction of a link; a serial line with probabilistic loss."""

    def __init__(self, world: "World", link: "SimLink", loss: float, prop_us: int, byte_us: int):
        self._world = world
        self._link = link
        self.loss = loss
        self.prop_us = prop_us
        self.byte_us = byte_us
        self.receive: Callable[[bytes], None] = lambda data: None
        self._busy_until = 0
        self.transmissions = 0
        self.drops = 0

    def transmit(self, data: bytes) -> None:
        if self._link.severed:
            self.drops += 1
            return
        scheduler = self._world.scheduler
        start = max(scheduler.now, self._busy_until)
        finish = start + len(data) * self.byte_us
        self._busy_until = finish
        self.transmissions += 1
        if self._world.rng.random() < self.loss:
            self.drops += 1
            return
        scheduler.call_at(finish + self.prop_us, lambda: self._arrive(bytes(data)))

    def _arrive(self, data: bytes) -> None:
        if not self._link.severed:
            self.receive(data)


@dataclass
class SimLink:
    spec: LinkSpec
    severed: bool = False
    forward: Optional[Channel] = None  # a -> b
    backward: Optional[Channel] = None  # b -> a

    @property
    def drops(self) -> int:
        return self.forward.drops + self.backward.drops

    @property
    def transmissions(self) -> int:
        return self.forward.transmissions + self.backward.transmissions


@dataclass
class PortRuntime:
    protocol: PortProtocol
    link: SimLink
    peer_name: str
    peer_port: int


class SimModule:
    """Ground truth for one module plus its middleware node."""

    def __init__(self, world: "World", spec: ModuleSpec):
        self.world = world
        self.spec = spec
        self.name = spec.name
        self.center = spec.center
        self.port_labels = dict(spec.ports)
        self.sensors = dict(spec.sensors)
        self.speed = 0
        self.ports: dict[int, PortRuntime] = {}
        self.node = ServiceNode(host=self)
        self.node.file_store.update(spec.files)

    # host surface consumed by ServiceNode and the role engine

    @property
    def scheduler(self) -> Scheduler:
        return self.world.scheduler

    @property
    def link_config(self) -> LinkConfig:
        return self.world.link_config

    def log(self, kind: str, payload: str = "") -> None:
        self.world.log.log(self.name, kind, payload)

    def state_text(self) -> str:
        parts = [f"center={self.center}", f"speed={self.speed}"]
        port_bits = []
        for idx in sorted(self.port_labels):
            label = self.port_labels[idx]
            runtime = self.ports.get(idx)
            if runtime is not None and not runtime.link.severed:
                port_bits.append(f"{idx}:{label}:CLOSED:{runtime.peer_name}")
            else:
                port_bits.append(f"{idx}:{label}:OPEN")
        if port_bits:
            parts.append("ports=" + ",".join(port_bits))
        if self.sensors:
            parts.append("sensors=" + ",".join(
                f"{sid}:{self.sensors[sid]}" for sid in sorted(self.sensors)))
        return " ".join(parts)

    def snapshot(self) -> PhysSnapshot:
        connections: dict[str, list[str]] = {}
        for idx in sorted(self.ports):
            runtime = self.ports[idx]
            if not runtime.link.severed:
                connections.setdefault(self.port_labels[idx], []).append(runtime.peer_name)
        return PhysSnapshot(
            center=self.center,
            connections={k: tuple(v) for k, v in connections.items()},
            sensors=dict(self.sensors),
        )

    def actuate(self, value: int) -> None:
        if value != self.speed:
            self.speed = value
            self.log("TURN_CONTINUOUSLY", str(value))

    def send_port(self, port: int, msg: ServiceMessage) -> MessageTicket:
        return send_message(self.ports[port].protocol, msg)

    def connected_ports(self) -> list[int]:
        return [idx for idx in sorted(self.ports) if not self.ports[idx].link.severed]


class World:
    """A built topology plus scheduled scenario, ready to run."""

    def __init__(self, topology: Topology, scenario: Scenario | None = None, seed: int = 0):
        self.scheduler = Scheduler()
        self.rng = Rng(seed)
        self.log = EventLog(self.scheduler)
        self.link_config = topology.link_config
        self.modules: dict[str, SimModule] = {}
        for spec in topology.modules:
            self.modules[spec.name] = SimModule(self, spec)
        self.links: list[SimLink] = []
        for spec in topology.links:
            self._wire(spec, topology)
        for spec in topology.modules:
            module = self.modules[spec.name]
            is_root = spec.name == topology.root
            self.scheduler.call_at(0, lambda m=module, r=is_root: m.node.bootstrap(r))
        if scenario is not None:
            self._schedule(scenario)

    def _wire(self, spec: LinkSpec, topology: Topology) -> None:
        loss = spec.loss if spec.loss is not None else topology.default_loss
        prop_us = spec.prop_us if spec.prop_us is not None else topology.default_prop_us
        byte_us = spec.byte_us if spec.byte_us is not None else topology.default_byte_us
        link = SimLink(spec=spec)
        link.forward = Channel(self, link, loss, prop_us, byte_us)
        link.backward = Channel(self, link, loss, prop_us, byte_us)
        mod_a = self.modules[spec.module_a]
        mod_b = self.modules[spec.module_b]
        proto_a = PortProtocol(
            self.scheduler, link.forward.transmit,
            lambda data, m=mod_a, p=spec.port_a: m.node.on_link_payload(p, data),
            self.link_config,
        )
        proto_b = PortProtocol(
            self.scheduler, link.backward.transmit,
            lambda data, m=mod_b, p=spec.port_b: m.node.on_link_payload(p, data),
            self.link_config,
        )
        link.forward.receive = proto_b.on_bytes
        link.backward.receive = proto_a.on_bytes
        mod_a.ports[spec.port_a] = PortRuntime(proto_a, link, spec.module_b, spec.port_b)
        mod_b.ports[spec.port_b] = PortRuntime(proto_b, link, spec.module_a, spec.port_a)
        self.links.append(link)

    def _schedule(self, scenario: Scenario) -> None:
        diags = []
        for event in scenario.events:
            name = event.args[0] if event.kind in ("sensor", "upgrade", "start") else None
            if name is not None and name not in self.modules:
                diags.append(f"scenario references unknown module {name!r}")
            if event.kind in ("sever", "restore"):
                if self._find_link(event.args[0], event.args[1]) is None:
                    diags.append(f"scenario references unknown link {event.args[0]} {event.args[1]}")
        if diags:
            raise LoadError(diags)
        for event in scenario.events:
            self.scheduler.call_at(
                event.time_cs * US_PER_CS, lambda e=event: self._apply(e))

    def _find_link(self, end_a: str, end_b: str) -> Optional[SimLink]:
        def parse_end(token: str) -> tuple[str, int]:
            name, _, port = token.rpartition(".")
            return name, int(port) if port.isdigit() else -1

        a = parse_end(end_a)
        b = parse_end(end_b)
        for link in self.links:
            ends = {(link.spec.module_a, link.spec.port_a), (link.spec.module_b, link.spec.port_b)}
            if ends == {a, b}:
                return link
        return None

    def _apply(self, event: ScenarioEvent) -> None:
        if event.kind == "sensor":
            name, sensor_id, value = event.args
            module = self.modules[name]
            module.sensors[sensor_id] = value
            module.log("sensor", f"{sensor_id} {value}")
            module.node.on_sensor(sensor_id, value)
            module.node.on_phys_change()
        elif event.kind in ("sever", "restore"):
            link = self._find_link(event.args[0], event.args[1])
            assert link is not None  # validated at schedule time
            severed = event.kind == "sever"
            if link.severed == severed:
                return
            link.severed = severed
            mod_a = self.modules[link.spec.module_a]
            mod_b = self.modules[link.spec.module_b]
            mod_a.log(event.kind, f"{event.args[0]} {event.args[1]}")
            for module, port in ((mod_a, link.spec.port_a), (mod_b, link.spec.port_b)):
                if not severed:
                    module.node.on_link_up(port)
                module.node.on_phys_change()
        elif event.kind == "upgrade":
            name, version = event.args
            self.modules[name].node.upgrade_local(version)
        elif event.kind == "start":
            name, filename = event.args
            response = self.modules[name].node.start_program(filename)
            self.modules[name].log("start", f"{filename} {response}")

    def open_session(self, module_name: str) -> Session:
        return self.modules[module_name].node.open_session()

    def run_until_cs(self, t_cs: int) -> None:
        self.scheduler.run_until(t_cs * US_PER_CS)


def run(topology: Topology, scenario: Scenario | None, seed: int, until_cs: int) -> EventLog:
    """Build a world, run it to the horizon, and return its event log."""
    world = World(topology, scenario, seed)
    world.run_until_cs(until_cs)
    return world.log
