"""Run configuration: every tunable the pipelines leave open, with defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import DataError
from .refine import RefineConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # loss / local_point region schedule
    loss_centers: int = 64
    loss_radius_fractions: tuple = (1 / 16, 1 / 4, 1.0)
    # refinement region schedule
    refine_centers: int = 128
    refine_radius_fractions: tuple = (0.05, 0.15, 0.5)
    refine_inverse_depth_weights: bool = False
    # scale-and-shift solver
    roe_method: str = "exact"
    roe_pair_samples: int = 4096
    cg_rtol: float = 1e-10
    z_max: float = None
    f1_thresholds: tuple = (5, 10, 15, 20, 25)
    aggregation: str = "image_mean"
    workers: int = 1

    def __post_init__(self):
        if self.roe_method not in ("exact", "sampled"):
            raise DataError(f"roe_method must be 'exact' or 'sampled', got {self.roe_method!r}")
        if self.aggregation not in ("image_mean", "pixel_mean"):
            raise DataError(f"aggregation must be 'image_mean' or 'pixel_mean', got {self.aggregation!r}")
        for name in ("loss_radius_fractions", "refine_radius_fractions", "f1_thresholds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def solver_kw(self) -> dict:
        return {"method": self.roe_method, "n_pairs": self.roe_pair_samples, "seed": self.seed}

    def refine_config(self) -> RefineConfig:
        return RefineConfig(self.refine_radius_fractions, self.refine_centers, self.seed,
                            self.refine_inverse_depth_weights, self.cg_rtol)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a JSON config file."""
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON config ({e})") from e
        except OSError as e:
            raise DataError(f"{path}: {e}") from e
