"""Radial feeder data model and the plain-text feeder file format.

A feeder file has two header keys and three CSV sections::

    Sbase_kVA = 1000
    Vbase_kV = 12.66

    [buses]
    id,kind,Pd_kW,Qd_kvar,Vset_pu
    0,slack,0,0,1.0
    ...
    [branches]
    from,to,R_ohm,X_ohm
    ...
    [ders]
    bus,capacity_kW,reg_up_kW,reg_down_kW,Pg0_kW
    ...

Lines starting with ``#`` are comments. Loads and DER ratings stay in kW/kvar on
the model; branch impedances are converted to per-unit on load.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np


class FeederFormatError(ValueError):
    """Raised when a feeder file cannot be parsed."""


class NetworkValidationError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid network: " + "; ".join(violations))


class BusKind(enum.Enum):
    SLACK = "slack"
    PQ = "PQ"
    PV = "PV"

    @classmethod
    def parse(cls, text: str) -> "BusKind":
        for kind in cls:
            if kind.value.lower() == text.strip().lower():
                return kind
        raise ValueError(f"unknown bus kind {text!r}")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    nominal_load_p: float  # kW
    nominal_load_q: float  # kvar
    v_setpoint: float | None = None  # p.u.


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float  # p.u.
    reactance: float  # p.u.


@dataclass(frozen=True)
class DerSpec:
    bus: int
    capacity: float  # kW
    reg_up: float  # kW, upper bound on regulation power
    reg_down: float  # kW, signed lower bound (<= 0)
    nominal_p: float = 0.0  # kW


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    ders: tuple[DerSpec, ...] = ()
    s_base: float = 1000.0  # kVA
    v_base: float = 12.66  # kV
    name: str = field(default="", compare=False)

    @property
    def n(self) -> int:
        """Number of non-slack buses."""
        return len(self.buses) - 1

    @property
    def z_base(self) -> float:
        return self.v_base**2 * 1e3 / self.s_base

    def bus(self, idx: int) -> Bus:
        return self.buses[idx]

    def indices(self, kind: BusKind) -> np.ndarray:
        return np.array([b.id for b in self.buses if b.kind is kind], dtype=int)

    @property
    def load_p_pu(self) -> np.ndarray:
        """Nominal active loads of buses 1..N in p.u."""
        return np.array([b.nominal_load_p for b in self.buses[1:]]) / self.s_base

    @property
    def load_q_pu(self) -> np.ndarray:
        return np.array([b.nominal_load_q for b in self.buses[1:]]) / self.s_base

    def _der_vector(self, attr: str) -> np.ndarray:
        out = np.zeros(self.n)
        for d in self.ders:
            out[d.bus - 1] += getattr(d, attr) / self.s_base
        return out

    @property
    def der_upper_pu(self) -> np.ndarray:
        return self._der_vector("reg_up")

    @property
    def der_lower_pu(self) -> np.ndarray:
        return self._der_vector("reg_down")

    @property
    def der_nominal_pu(self) -> np.ndarray:
        return self._der_vector("nominal_p")

    @property
    def der_buses(self) -> np.ndarray:
        return np.array(sorted({d.bus for d in self.ders}), dtype=int)

    def without_voltage_control(self) -> "NetworkModel":
        """Copy with every PV bus demoted to PQ."""
        buses = tuple(
            replace(b, kind=BusKind.PQ, v_setpoint=None) if b.kind is BusKind.PV else b
            for b in self.buses
        )
        return replace(self, buses=buses)

    def with_ders(self, ders) -> "NetworkModel":
        return replace(self, ders=tuple(ders))


def validate(model: NetworkModel) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out: list[str] = []
    ids = [b.id for b in model.buses]
    if sorted(ids) != list(range(len(ids))) or ids != sorted(ids):
        out.append(f"bus ids must be 0..{len(ids) - 1} in order, got {ids}")
    known = set(ids)

    slack_seen = False
    for b in model.buses:
        if b.kind is BusKind.SLACK:
            if b.id != 0:
                out.append(f"bus {b.id}: slack bus must be bus 0")
            elif slack_seen:
                out.append(f"bus {b.id}: duplicate slack bus")
            slack_seen = True
        elif b.id == 0:
            out.append("bus 0: must be the slack bus")
        if b.kind in (BusKind.SLACK, BusKind.PV):
            if b.v_setpoint is None or not b.v_setpoint > 0:
                out.append(f"bus {b.id}: {b.kind.value} bus needs v_setpoint > 0")
        if b.nominal_load_p < 0:
            out.append(f"bus {b.id}: negative active load {b.nominal_load_p}")
    if not slack_seen:
        out.append("no slack bus")

    for i, br in enumerate(model.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                out.append(f"branch {i} ({br.from_bus}-{br.to_bus}): unknown bus {end}")
        if br.from_bus == br.to_bus:
            out.append(f"branch {i}: self loop at bus {br.from_bus}")
        if br.resistance < 0:
            out.append(f"branch {i} ({br.from_bus}-{br.to_bus}): negative resistance")
        if br.resistance == 0 and br.reactance == 0:
            out.append(f"branch {i} ({br.from_bus}-{br.to_bus}): zero impedance")

    # connectivity from bus 0
    adj: dict[int, list[int]] = {i: [] for i in known}
    for br in model.branches:
        if br.from_bus in known and br.to_bus in known:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    if known:
        seen = {min(known)}
        stack = [min(known)]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        missing = sorted(known - seen)
        if missing:
            out.append(f"network is disconnected; unreachable buses {missing}")

    for d in model.ders:
        if d.bus not in known or d.bus == 0:
            out.append(f"DER at bus {d.bus}: no such load bus")
        if d.reg_down > 0:
            out.append(f"DER at bus {d.bus}: reg_down {d.reg_down} > 0")
        if d.reg_up < 0:
            out.append(f"DER at bus {d.bus}: reg_up {d.reg_up} < 0")
        if d.reg_up > d.capacity:
            out.append(f"DER at bus {d.bus}: reg_up exceeds capacity")
    return out


_SECTIONS = {
    "buses": ["id", "kind", "Pd_kW", "Qd_kvar", "Vset_pu"],
    "branches": ["from", "to", "R_ohm", "X_ohm"],
    "ders": ["bus", "capacity_kW", "reg_up_kW", "reg_down_kW", "Pg0_kW"],
}


def _num(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FeederFormatError(f"{where}: not a number: {text!r}") from None


def parse_network(text: str, name: str = "") -> NetworkModel:
    header: dict[str, float] = {}
    rows: dict[str, list[tuple[int, list[str]]]] = {k: [] for k in _SECTIONS}
    section = None
    expect_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise FeederFormatError(f"line {lineno}: unknown section [{section}]")
            expect_header = True
            continue
        if section is None:
            if "=" not in line:
                raise FeederFormatError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            header[key] = _num(val, f"line {lineno}")
            continue
        cells = next(csv.reader([line]))
        cells = [c.strip() for c in cells]
        if expect_header:
            expect_header = False
            if [c.lower() for c in cells] != [c.lower() for c in _SECTIONS[section]]:
                raise FeederFormatError(
                    f"line {lineno}: [{section}] header must be {','.join(_SECTIONS[section])}"
                )
            continue
        width = len(_SECTIONS[section])
        if section == "buses" and len(cells) == width - 1:
            cells.append("")
        if len(cells) != width:
            raise FeederFormatError(f"line {lineno}: expected {width} fields, got {len(cells)}")
        rows[section].append((lineno, cells))

    for key in ("Sbase_kVA", "Vbase_kV"):
        if key not in header:
            raise FeederFormatError(f"missing header key {key}")
    s_base, v_base = header["Sbase_kVA"], header["Vbase_kV"]
    if not (s_base > 0 and v_base > 0):
        raise FeederFormatError("Sbase_kVA and Vbase_kV must be positive")
    z_base = v_base**2 * 1e3 / s_base

    buses = []
    for lineno, (bid, kind, pd, qd, vset) in rows["buses"]:
        where = f"line {lineno}"
        try:
            k = BusKind.parse(kind)
        except ValueError as exc:
            raise FeederFormatError(f"{where}: {exc}") from None
        buses.append(
            Bus(
                id=int(_num(bid, where)),
                kind=k,
                nominal_load_p=_num(pd, where),
                nominal_load_q=_num(qd, where),
                v_setpoint=_num(vset, where) if vset else None,
            )
        )
    buses.sort(key=lambda b: b.id)
    branches = []
    for lineno, (f, t, r, x) in rows["branches"]:
        where = f"line {lineno}"
        branches.append(
            Branch(int(_num(f, where)), int(_num(t, where)), _num(r, where) / z_base, _num(x, where) / z_base)
        )
    ders = []
    for lineno, (b, cap, up, down, pg0) in rows["ders"]:
        where = f"line {lineno}"
        ders.append(DerSpec(int(_num(b, where)), _num(cap, where), _num(up, where), _num(down, where), _num(pg0, where)))

    model = NetworkModel(tuple(buses), tuple(branches), tuple(ders), s_base, v_base, name=name)
    violations = validate(model)
    if violations:
        raise NetworkValidationError(violations)
    return model


def load_network(path) -> NetworkModel:
    """Read and validate a feeder file.

    ``path`` may also be the name of a bundled feeder (``case33bw`` or
    ``case33_modified``).
    """
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in bundled_feeders():
        return parse_network(bundled_text(str(path)), name=str(path))
    if not p.exists():
        raise FileNotFoundError(f"feeder file not found: {path}")
    return parse_network(p.read_text(encoding="utf-8"), name=p.stem)


def bundled_feeders() -> list[str]:
    root = resources.files("derflow") / "data"
    return sorted(f.name[:-4] for f in root.iterdir() if f.name.endswith(".txt"))


def bundled_text(name: str) -> str:
    return (resources.files("derflow") / "data" / f"{name}.txt").read_text(encoding="utf-8")


def dumps_network(model: NetworkModel) -> str:
    buf = io.StringIO()
    buf.write(f"Sbase_kVA = {model.s_base!r}\nVbase_kV = {model.v_base!r}\n\n[buses]\n")
    buf.write(",".join(_SECTIONS["buses"]) + "\n")
    for b in model.buses:
        vs = "" if b.v_setpoint is None else repr(b.v_setpoint)
        buf.write(f"{b.id},{b.kind.value},{b.nominal_load_p!r},{b.nominal_load_q!r},{vs}\n")
    buf.write("\n[branches]\n" + ",".join(_SECTIONS["branches"]) + "\n")
    zb = model.z_base
    for br in model.branches:
        buf.write(f"{br.from_bus},{br.to_bus},{br.resistance * zb!r},{br.reactance * zb!r}\n")
    buf.write("\n[ders]\n" + ",".join(_SECTIONS["ders"]) + "\n")
    for d in model.ders:
        buf.write(f"{d.bus},{d.capacity!r},{d.reg_up!r},{d.reg_down!r},{d.nominal_p!r}\n")
    return buf.getvalue()


def save_network(model: NetworkModel, path) -> None:
    Path(path).write_text(dumps_network(model), encoding="utf-8")
