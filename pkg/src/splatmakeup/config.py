"""Run configuration: a small nested key-value text format.

    # comment
    seed = 7
    [train]
    lr = 0.001

Sections map to pipeline stages; every default below mirrors the
package-wide defaults so an empty file is a valid configuration.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingAsset
from .guidance import MaskSpec, ProceduralMakeupSpec, RegionOverlay
from .training import TrainConfig
from .uvbake import BakeConfig


def parse_config_text(text: str) -> dict:
    sections: dict = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        sections[current][key.strip()] = value.strip()
    return sections


@dataclass
class RunConfig:
    sections: dict = field(default_factory=lambda: {"": {}})
    base_dir: Path = Path(".")
    text: str = ""

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingAsset(f"config file {path} does not exist")
        text = path.read_text()
        return cls(sections=parse_config_text(text), base_dir=path.parent, text=text)

    # ------------------------------------------------------------ accessors
    def get(self, section: str, key: str, default=None, cast=str):
        value = self.sections.get(section, {}).get(key)
        if value is None:
            return default
        try:
            if cast is bool:
                return value.lower() in ("1", "true", "yes", "on")
            return cast(value)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {value!r}: {exc}") from exc

    def set(self, section: str, key: str, value: str) -> None:
        self.sections.setdefault(section, {})[key] = value

    def apply_overrides(self, overrides: list[str]) -> None:
        """Apply ``section.key=value`` strings (top level: just key=value)."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, _, value = item.partition("=")
            key = key.strip()
            if "." in key:
                section, key = key.split(".", 1)
            else:
                section = ""
            self.set(section.strip(), key.strip(), value.strip())
            self.text += f"\n# override: {item}"

    def path(self, key: str, default: str | None = None) -> Path | None:
        value = self.get("paths", key, default)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, key: str) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigError(f"[paths] {key} is not configured")
        if not p.exists():
            raise MissingAsset(f"[paths] {key} = {p} does not exist")
        return p

    def out_dir(self, override=None) -> Path:
        out = Path(override) if override else (self.path("out") or self.base_dir / "out")
        out.mkdir(parents=True, exist_ok=True)
        return out

    # ------------------------------------------------------------- builders
    @property
    def seed(self) -> int:
        return self.get("", "seed", 0, int)

    @property
    def render_resolution(self) -> int:
        res = self.get("", "render_resolution", 512, int)
        if res <= 0:
            raise ConfigError("render_resolution must be positive")
        return res

    def train_config(self, seed: int | None = None) -> TrainConfig:
        g = lambda k, d, c: self.get("train", k, d, c)
        return TrainConfig(
            lambda1=g("lambda1", 10.0, float),
            lambda2=g("lambda2", 10.0, float),
            lr=g("lr", 1e-3, float),
            coarse_iters=g("coarse_iters", 10_000, int),
            refine_iters=g("refine_iters", 3_000, int),
            adam_beta1=g("adam_beta1", 0.9, float),
            adam_beta2=g("adam_beta2", 0.999, float),
            adam_eps=g("adam_eps", 1e-8, float),
            seed=self.seed if seed is None else seed,
            perceptual_weight=g("perceptual_weight", 0.0, float),
        )

    def bake_config(self, camera_ids=()) -> BakeConfig:
        return BakeConfig(
            num_views=self.get("bake", "num_views", 16, int),
            canonical_pose_id=self.get("bake", "canonical_pose", "canonical"),
            camera_ids=tuple(camera_ids),
            dilation_iters=self.get("bake", "dilation_iters", 8, int),
            resolution=self.get("bake", "resolution", 256, int),
        )

    def mask_spec(self) -> MaskSpec:
        raw = self.get("mask", "makeup_labels", "1 2 3")
        labels = frozenset(int(v) for v in raw.replace(",", " ").split())
        return MaskSpec(makeup_labels=labels)

    def makeup_spec(self) -> ProceduralMakeupSpec:
        overlays = {}
        for key, value in self.sections.get("makeup", {}).items():
            if not key.startswith("region."):
                continue
            label = int(key.split(".", 1)[1])
            parts = [float(v) for v in value.split()]
            if len(parts) != 4:
                raise ConfigError(f"[makeup] {key} needs 'r g b beta'")
            overlays[label] = RegionOverlay(color=tuple(parts[:3]), beta=parts[3])
        if not overlays:
            overlays = {
                1: RegionOverlay(color=(0.85, 0.08, 0.10), beta=1.0),
                2: RegionOverlay(color=(0.25, 0.30, 0.85), beta=1.0),
                3: RegionOverlay(color=(0.25, 0.30, 0.85), beta=1.0),
            }
        return ProceduralMakeupSpec(overlays=overlays)

    @property
    def background(self) -> np.ndarray:
        raw = self.get("", "background", "1 1 1")
        vals = [float(v) for v in raw.split()]
        if len(vals) != 3:
            raise ConfigError("background needs three components")
        return np.array(vals)


DEFAULT_CONFIG = """\
# splatmakeup run configuration (defaults shown)
seed = 7
render_resolution = 512      # square render size for all stages
background = 1 1 1

[paths]
avatar = assets/head.avatar
poses = assets/poses
cameras = assets/cameras.rig
out = out
# manifest = guidance/manifest.txt   # only for file-backed guidance

[bake]
num_views = 16               # canonical-expression views filling the UV map
resolution = 256             # texels per side
dilation_iters = 8
canonical_pose = canonical

[train]
lambda1 = 10.0
lambda2 = 10.0
lr = 0.001
coarse_iters = 10000
refine_iters = 3000
perceptual_weight = 0.0
checkpoint_interval = 0      # iterations between checkpoints; 0 = end only

[mask]
makeup_labels = 1 2 3        # lips + both eye regions

[makeup]
# per-region procedural overlay: r g b beta
region.1 = 0.85 0.08 0.10 1.0
region.2 = 0.25 0.30 0.85 1.0
region.3 = 0.25 0.30 0.85 1.0

[guidance]
source = procedural          # procedural | manifest

[synth]
lat = 32
lon = 32
density = 5                  # kernels per triangle
n_poses = 4
ring_cameras = 16

[animate]
camera = eval_0
poses = canonical

[eval]
poses = canonical
cameras = eval_p45 eval_0 eval_m45
uv_resolution = 64
"""
