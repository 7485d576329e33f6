"""One-document run configuration with a stable content hash."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import UsageError
from .netbuild import NetConfig
from .trainer import HyperParams, PhantomSpec


def _merge(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    """Everything a run depends on.

    Projection settings (CVP threshold and mode, axis) live in
    ``hyperparams``. ``count`` and ``split_ratio`` describe the synthetic
    suite used when ``paths`` names no data directory. Output locations are
    not part of the config, so the hash depends only on inputs.
    """

    net: NetConfig = field(default_factory=lambda: NetConfig(width_factor=0.125))
    hyperparams: HyperParams = field(default_factory=HyperParams)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    paths: dict = field(default_factory=dict)
    seed: int = 0
    count: int = 50
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.hyperparams.width_factor != self.net.width_factor:
            self.hyperparams = replace(self.hyperparams, width_factor=self.net.width_factor)

    def to_dict(self):
        return {
            "net": asdict(self.net),
            "hyperparams": asdict(self.hyperparams),
            "phantom": {**asdict(self.phantom), "dims": list(self.phantom.dims),
                        "lesion_radius_range": list(self.phantom.lesion_radius_range),
                        "lesion_intensity_range": list(self.phantom.lesion_intensity_range),
                        "tissue_range": list(self.phantom.tissue_range)},
            "paths": dict(self.paths),
            "seed": self.seed,
            "count": self.count,
            "split_ratio": self.split_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"net", "hyperparams", "phantom", "paths", "seed",
                          "count", "split_ratio", "hash"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        ph = dict(d.get("phantom", {}))
        for key in ("dims", "lesion_radius_range", "lesion_intensity_range", "tissue_range"):
            if key in ph:
                ph[key] = tuple(ph[key])
        return cls(
            net=_merge(NetConfig, {"width_factor": 0.125, **d.get("net", {})}),
            hyperparams=_merge(HyperParams, d.get("hyperparams", {})),
            phantom=_merge(PhantomSpec, ph),
            paths=dict(d.get("paths", {})),
            seed=int(d.get("seed", 0)),
            count=int(d.get("count", 50)),
            split_ratio=float(d.get("split_ratio", 0.8)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_json(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def write(self, directory) -> Path:
        """Echo the effective config (with its hash) into ``directory``."""
        path = Path(directory) / "run_config.json"
        doc = self.to_dict()
        doc["hash"] = self.digest()
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
        return path
