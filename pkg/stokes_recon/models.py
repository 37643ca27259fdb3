"""
Data models shared by the stokes_recon modules.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

FAMILIES = ("taylor_hood", "mini")
_ORDER_RANGE = {"taylor_hood": (2, 4), "mini": (1, 1)}
_ALIASES = {"th": "taylor_hood", "taylorhood": "taylor_hood", "taylor_hood": "taylor_hood", "mini": "mini"}


@dataclass(frozen=True)
class Element:
    """
    Inf-sup stable velocity/pressure pair together with the orders of the
    spaces used by its velocity reconstruction.
    """

    family: str
    order: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"Unknown element family '{self.family}'. Available families: {list(FAMILIES)}")
        lo, hi = _ORDER_RANGE[self.family]
        if not lo <= self.order <= hi:
            raise ValueError(f"{self.family} order must lie in [{lo}, {hi}], got {self.order}")

    @classmethod
    def parse(cls, text: str) -> "Element":
        """Parse ``"taylor_hood:3"``, ``"mini:1"``, ``"th3"`` or ``"mini"``."""
        m = re.fullmatch(r"\s*([A-Za-z_]+?)\s*[:\-]?\s*(\d*)\s*", text)
        if not m or m.group(1).lower() not in _ALIASES:
            raise ValueError(f"Invalid element specification: {text!r}")
        family = _ALIASES[m.group(1).lower()]
        if m.group(2):
            order = int(m.group(2))
        elif family == "mini":
            order = 1
        else:
            raise ValueError(f"Element specification {text!r} needs an order")
        return cls(family, order)

    @property
    def label(self) -> str:
        return f"{self.family}:{self.order}"

    @property
    def is_mini(self) -> bool:
        return self.family == "mini"

    @property
    def velocity_order(self) -> int:
        return self.order

    @property
    def pressure_order(self) -> int:
        return self.order if self.is_mini else self.order - 1

    @property
    def flux_order(self) -> int:
        """Raviart–Thomas order of the reconstruction."""
        return self.order + 1 if self.is_mini else self.order - 1

    @property
    def divergence_order(self) -> int:
        """Degree of the element-wise divergence space Q~."""
        return self.flux_order

    @property
    def koszul_order(self) -> int:
        """``k`` such that the multiplier space is kappa(Pi^{k-3})."""
        return self.order + 1 if self.is_mini else self.order

    @property
    def oscillation_order(self) -> int:
        """Polynomial order ``m`` of the data oscillation controlling consistency."""
        return self.order - 1 if self.is_mini else self.order - 2

    def __str__(self) -> str:
        return self.label


@dataclass
class PatchDiagnostics:
    """Sizes and conditioning of one local problem."""

    vertex: int
    n_cells: int
    n_sigma: int
    n_q: int
    n_w: int
    condition: float
    min_pivot: float

    @property
    def size(self) -> int:
        return self.n_sigma + self.n_q + self.n_w + 1


@dataclass
class Check:
    """One acceptance check of a CLI run: ``value`` compared against ``limit``."""

    name: str
    value: float
    limit: float
    kind: str = "max"  # "max": value <= limit, "min": value >= limit, "range": lower <= value <= limit
    lower: Optional[float] = None

    @property
    def passed(self) -> bool:
        if self.value is None or self.value != self.value:
            return False
        if self.kind == "min":
            return self.value >= self.limit
        if self.kind == "range":
            return self.lower <= self.value <= self.limit
        return self.value <= self.limit

    @property
    def limit_text(self) -> str:
        if self.kind == "min":
            return f">= {self.limit:g}"
        if self.kind == "range":
            return f"[{self.lower:g}, {self.limit:g}]"
        return f"<= {self.limit:g}"


@dataclass
class StokesResult:
    u: Any  # DiscreteFunction, two components
    p: Any  # DiscreteFunction
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class NavierStokesResult:
    u: Any
    p: Any
    iterations: int
    increments: List[float] = field(default_factory=list)
    converged: bool = True
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    """Validated experiment configuration (see ``config_loader``)."""

    elements: List[str] = field(default_factory=lambda: ["taylor_hood:2", "taylor_hood:3", "taylor_hood:4", "mini:1"])
    levels: List[int] = field(default_factory=lambda: [4, 8, 16, 32])
    nu: float = 1e-3
    nus: List[float] = field(default_factory=lambda: [10.0**j for j in range(-8, 4)])
    sweep_levels: List[int] = field(default_factory=lambda: [4, 8, 16])
    ns_levels: List[int] = field(default_factory=lambda: [14, 26])
    ns_orders: List[int] = field(default_factory=lambda: [2, 3, 4])
    ns_nu: float = 0.1
    verify_levels: List[int] = field(default_factory=lambda: [8])
    reconstruct: str = "both"
    seed: int = 0
    perturb: float = 0.0
    random_samples: int = 20
    picard_tol: float = 1e-11
    picard_max_iter: int = 50
    quad_extra: int = 10
    tolerances: Dict[str, float] = field(default_factory=dict)
    name: Optional[str] = None

    @property
    def element_list(self) -> List[Element]:
        return [Element.parse(e) for e in self.elements]

    @property
    def reconstruct_flags(self) -> List[bool]:
        return {"on": [True], "off": [False], "both": [True, False]}[self.reconstruct]
