"""Run configuration shared by the pipeline and the CLI."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

from .bias import NFS_CRITICAL
from .dataset import CANONICAL_FACTORS, DEFAULT_MIN_K
from .pooling import Z_CRIT

MODELS = ("auto", "fixed", "random")
FORMATS = ("json", "csv", "md")


@dataclass(frozen=True)
class RunConfig:
    """Defaults reproduce the published analysis configuration."""
    data_path: str = "bundled:studies.csv"
    mapping_path: str = "as-analysed"
    min_k: int = DEFAULT_MIN_K
    model: str = "auto"
    nfs_variant: str = "two_tailed_196"
    out_dir: str = "out"
    formats: tuple[str, ...] = ("json", "md")
    factors: tuple[str, ...] = ()
    moderators: bool = True
    subgroup_key: str = "region_class"
    regression_moderator: str = "male_pct"
    tau2_estimator: str = field(default="DerSimonian-Laird", init=False)
    ci_quantile: float = field(default=Z_CRIT, init=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.nfs_variant not in NFS_CRITICAL:
            raise ValueError(f"nfs_variant must be one of {tuple(NFS_CRITICAL)}, got {self.nfs_variant!r}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ValueError(f"unknown formats {bad}; choose from {FORMATS}")
        if self.min_k < 1:
            raise ValueError("min_k must be >= 1")
        object.__setattr__(self, "factors", tuple(canonical_factor(f) for f in self.factors))

    def settings(self) -> dict:
        """Echo of every analysis-affecting setting (paths excluded)."""
        d = asdict(self)
        for k in ("out_dir", "formats"):
            d.pop(k)
        d["formats"] = list(self.formats)
        d["factors"] = list(self.factors)
        d["nfs_critical_value"] = NFS_CRITICAL[self.nfs_variant]
        return d


def canonical_factor(name: str) -> str:
    """Resolve 'habit', 'perceived-cost', 'Perceived Cost' etc. to a canonical factor."""
    key = re.sub(r"[^a-z]", "", name.lower())
    for f in CANONICAL_FACTORS:
        if f.lower() == key:
            return f
    raise ValueError(f"unknown factor {name!r}; choose from {', '.join(CANONICAL_FACTORS)}")


def display_name(factor: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", " ", factor)
