"""Case files: a versioned JSON schema and the builder that turns a case into model objects.

A case lists the network (a branch list that is Kron-reduced to the device
buses, or a prebuilt reduced ``G``/``B`` pair), the machines and inverters,
the communication graph, cost weights, noise and risk settings, and the
training hyperparameters.  Reduced node ids are 0-based with SGs first, in
list order, followed by GFMs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from .control import CostWeights
from .model import PowerSystem
from .network import GfmParams, ReducedNetwork, SgParams, admittance_matrix, kron_reduce
from .noise import NoiseModel
from .optimizer import TrainingConfig
from .policy import GainMask, build_mask
from .risk import RiskParams

SCHEMA_VERSION = 1
SHIPPED_CASES = ("toy3", "two_area")


class CaseError(ValueError):
    """A case file failed to parse or validate."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Branch(_Strict):
    from_bus: int = Field(ge=0)
    to_bus: int = Field(ge=0)
    r: float = Field(ge=0.0)
    x: float
    b: float = 0.0

    @model_validator(mode="after")
    def _nonzero(self):
        if self.r == 0.0 and self.x == 0.0:
            raise ValueError("branch impedance must be nonzero")
        if self.from_bus == self.to_bus:
            raise ValueError("branch endpoints must differ")
        return self


class Shunt(_Strict):
    bus: int = Field(ge=0)
    g: float = 0.0
    b: float = 0.0


class NetworkSpec(_Strict):
    """Either ``n_bus`` + ``branches`` (+ ``shunts``) or a prebuilt reduced ``G``/``B``."""

    n_bus: Optional[int] = Field(default=None, ge=2)
    branches: list[Branch] = Field(default_factory=list)
    shunts: list[Shunt] = Field(default_factory=list)
    G: Optional[list[list[float]]] = None
    B: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _one_form(self):
        prebuilt = self.G is not None or self.B is not None
        if prebuilt:
            if self.G is None or self.B is None:
                raise ValueError("a prebuilt network needs both G and B")
            if self.branches or self.shunts or self.n_bus is not None:
                raise ValueError("give either a branch list or a prebuilt G/B, not both")
        else:
            if self.n_bus is None or not self.branches:
                raise ValueError("a branch-list network needs n_bus and at least one branch")
            for br in self.branches:
                if max(br.from_bus, br.to_bus) >= self.n_bus:
                    raise ValueError(f"branch {br.from_bus}-{br.to_bus} refers to a bus >= n_bus")
            for sh in self.shunts:
                if sh.bus >= self.n_bus:
                    raise ValueError(f"shunt bus {sh.bus} >= n_bus")
        return self

    @property
    def prebuilt(self) -> bool:
        return self.G is not None


class SgSpec(_Strict):
    bus: Optional[int] = Field(default=None, ge=0)
    M: float = Field(gt=0.0)
    D: float = Field(ge=0.0)
    P: float
    V: float = Field(default=1.0, gt=0.0)


class GfmSpec(_Strict):
    bus: Optional[int] = Field(default=None, ge=0)
    tau: float = Field(default=0.01, gt=0.0)
    mp: float = Field(default=0.01, gt=0.0)
    mq: float = Field(default=0.05, gt=0.0)
    kpv: float = Field(default=0.01, ge=0.0)
    kiv: float = Field(default=5.86, ge=0.0)
    V_set: float = Field(default=1.0, gt=0.0)
    P_set: float = 0.0
    Q_set: float = 0.0


class WeightsSpec(_Strict):
    """Diagonal state/input weights, all multiplied by ``scale``."""

    angle: float = Field(default=0.1, ge=0.0)
    frequency: float = Field(default=1.0, ge=0.0)
    voltage: float = Field(default=1.0, ge=0.0)
    control: float = Field(default=0.1, gt=0.0)
    scale: float = Field(default=1.0, gt=0.0)


class NoiseSpec(_Strict):
    """Per-step innovations plus a persistent step-load offset per rollout.

    ``frequency_std`` acts on every speed state, ``voltage_error_std`` on the
    GFM voltage-error states and ``voltage_std`` on the GFM voltage magnitudes.  Step loads are uniform on ``[-step_level,
    step_level]`` pu per GFM bus with ``dQ = q_ratio * dP``.
    """

    kind: Literal["gaussian", "empirical"] = "gaussian"
    frequency_std: float = Field(default=0.0, ge=0.0)
    voltage_error_std: float = Field(default=0.0, ge=0.0)
    voltage_std: float = Field(default=0.0, ge=0.0)
    step_level: float = Field(default=1.0, ge=0.0)
    q_ratio: float = 0.2
    bank_path: Optional[str] = None

    @model_validator(mode="after")
    def _bank(self):
        if self.kind == "empirical" and not self.bank_path:
            raise ValueError("empirical noise needs bank_path")
        if self.kind == "gaussian" and self.bank_path:
            raise ValueError("bank_path is only used with kind='empirical'")
        return self


class RiskSpec(_Strict):
    c: float = Field(default=0.2, ge=0.0)
    Lambda: float = Field(default=100.0, ge=0.0)


class TrainingSpec(_Strict):
    """Training hyperparameters; ``window`` (seconds) sets the evaluation horizon, ``None`` means stationary."""

    r: float = Field(default=0.1, gt=0.0)
    eta: float = Field(default=1e-4, ge=0.0)
    M: int = Field(default=50, ge=1)
    N: int = Field(default=100, ge=1)
    penalty: float = Field(default=1e6, gt=0.0)
    antithetic: bool = False
    window: Optional[float] = Field(default=6.0, gt=0.0)


class CaseFile(_Strict):
    schema_version: Literal[1]
    name: str
    description: str = ""
    network: NetworkSpec
    sg: list[SgSpec] = Field(min_length=1)
    gfm: list[GfmSpec] = Field(min_length=1)
    communication: list[tuple[int, int]] = Field(default_factory=list)
    dt: float = Field(default=0.01, gt=0.0)
    omega0: float = Field(default=2 * math.pi * 60, gt=0.0)
    weights: WeightsSpec = Field(default_factory=WeightsSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    risk: RiskSpec = Field(default_factory=RiskSpec)
    training: TrainingSpec = Field(default_factory=TrainingSpec)
    _source_dir: Optional[Path] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _consistent(self):
        n_node = len(self.sg) + len(self.gfm)
        devices = [*self.sg, *self.gfm]
        if self.network.prebuilt:
            for name, mat in (("G", self.network.G), ("B", self.network.B)):
                if len(mat) != n_node or any(len(row) != n_node for row in mat):
                    raise ValueError(f"network.{name} must be {n_node}x{n_node} (one row per SG and GFM)")
            for k, d in enumerate(devices):
                if d.bus is not None and d.bus != k:
                    raise ValueError("with a prebuilt network, device buses must be omitted or equal their node id")
        else:
            buses = [d.bus for d in devices]
            if any(b is None for b in buses):
                raise ValueError("every SG and GFM needs a bus when the network is a branch list")
            if len(set(buses)) != len(buses):
                raise ValueError("two devices share a bus")
            if max(buses) >= self.network.n_bus:
                raise ValueError("device bus outside the network")
        for a, b in self.communication:
            for v in (a, b):
                if not 0 <= v < n_node:
                    raise ValueError(f"communication edge ({a}, {b}): vertex {v} is not a node id 0..{n_node - 1}")
        return self


def shipped_case_path(name: str) -> Path:
    if name not in SHIPPED_CASES:
        raise CaseError(f"unknown shipped case {name!r}; choose from {', '.join(SHIPPED_CASES)}")
    return Path(str(resources.files("gfmrisk") / "cases" / f"{name}.json"))


def resolve_case_path(ref) -> Path:
    """A path, or the name of a shipped case."""
    p = Path(ref)
    if p.exists():
        return p
    if str(ref) in SHIPPED_CASES:
        return shipped_case_path(str(ref))
    raise CaseError(f"case file not found: {ref}")


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def parse_case(doc: dict, source: str = "<case>") -> CaseFile:
    try:
        return CaseFile.model_validate(doc)
    except ValidationError as exc:
        raise CaseError(f"{source}: invalid case file\n{_format_validation(exc)}") from exc


def load_case(path) -> CaseFile:
    path = resolve_case_path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: not valid JSON ({exc})") from exc
    case = parse_case(doc, str(path))
    case._source_dir = Path(path).resolve().parent
    return case


def case_to_dict(case: CaseFile) -> dict:
    return case.model_dump(mode="json")


def save_case(case: CaseFile, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1) + "\n")


@dataclass
class CaseModel:
    """Everything a case defines, built into the model objects."""

    case: CaseFile
    system: PowerSystem
    mask: GainMask
    weights: CostWeights
    noise: NoiseModel
    risk: RiskParams
    training: TrainingConfig
    window: int | None

    @property
    def layout(self):
        return self.system.layout


def _network(case: CaseFile) -> ReducedNetwork:
    n_sg = len(case.sg)
    net = case.network
    if net.prebuilt:
        return ReducedNetwork(np.array(net.G, dtype=float), np.array(net.B, dtype=float), n_sg, len(case.gfm))
    Y = admittance_matrix(
        net.n_bus,
        [(b.from_bus, b.to_bus, b.r, b.x, b.b) for b in net.branches],
        [(s.bus, s.g, s.b) for s in net.shunts],
    )
    retained = [d.bus for d in case.sg] + [d.bus for d in case.gfm]
    return kron_reduce(Y, retained, n_sg=n_sg)


def _noise(case: CaseFile, system: PowerSystem) -> NoiseModel:
    L = system.layout
    spec = case.noise
    n = L.n_state
    E = system.load_input
    step_map = case.dt * (E[:, : L.n_gfm] + spec.q_ratio * E[:, L.n_gfm:])
    if spec.kind == "empirical":
        bank_path = Path(spec.bank_path)
        if not bank_path.is_absolute():
            bank_path = (case._source_dir or Path.cwd()) / bank_path
        return NoiseModel.from_bank_file(bank_path, step_map=step_map, step_level=spec.step_level)
    var = np.zeros(n)
    var[L.omega_g] = var[L.omega_f] = spec.frequency_std ** 2
    var[L.ve_f] = spec.voltage_error_std ** 2
    var[L.v_f] = spec.voltage_std ** 2
    return NoiseModel(n, cov=np.diag(var), step_map=step_map, step_level=spec.step_level)


def build_case(case: CaseFile) -> CaseModel:
    sg = [SgParams(s.M, s.D, s.P, s.V, case.omega0) for s in case.sg]
    gfm = [GfmParams(g.tau, g.mp, g.mq, g.kpv, g.kiv, g.V_set, g.P_set, g.Q_set) for g in case.gfm]
    system = PowerSystem(_network(case), sg, gfm, case.dt)
    w = case.weights
    base = CostWeights.default(system.layout, w.angle, w.frequency, w.voltage, w.control)
    weights = CostWeights(w.scale * base.Q, w.scale * base.R)
    t = case.training
    training = TrainingConfig(r=t.r, eta=t.eta, M=t.M, N=t.N, Lambda=case.risk.Lambda, penalty=t.penalty,
                              antithetic=t.antithetic)
    window = None if t.window is None else max(1, int(round(t.window / case.dt)))
    return CaseModel(
        case=case,
        system=system,
        mask=build_mask(case.communication, len(sg), len(gfm)),
        weights=weights,
        noise=_noise(case, system),
        risk=RiskParams(case.risk.c, case.risk.Lambda),
        training=training,
        window=window,
    )
