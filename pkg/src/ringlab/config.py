"""JSON experiment configuration (schema ``ringlab.experiment/1``)."""
import json
import os
from dataclasses import dataclass, field, fields

from ringlab.attacks import AttackSpec
from ringlab.errors import InvalidArgument
from ringlab.grid import is_power_of_two
from ringlab.models import Condition, MixtureModel, default_model_spec
from ringlab.solvers import SolverConfig
from ringlab.watermark import CENTERS, HERMITIAN, PATTERNS

SCHEMA = "ringlab.experiment/1"
SHAPE_PRESETS = {"sd": (4, 64, 64), "flux": (16, 64, 64)}
INVERSION_MODES = {"rf": ("naive", "implicit"), "ddim": ("naive", "exact", "dpmpp2")}


class ConfigError(InvalidArgument):
    pass


@dataclass(frozen=True)
class GuidanceArm:
    """Which condition drives inversion, relative to the generating prompt k.

    matched -> exact(k); null -> null; perturbed -> perturbed(k, eta);
    adversarial -> exact((k + 1) mod K).
    """

    kind: str = "matched"
    eta: float = 0.0

    KINDS = ("matched", "null", "perturbed", "adversarial")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"guidance must be one of {self.KINDS}, got {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"perturbation eta must lie in [0, 1], got {self.eta}")

    @property
    def tag(self):
        return f"perturbed({self.eta:g})" if self.kind == "perturbed" else self.kind

    def condition(self, prompt, n_components):
        if self.kind == "matched":
            return Condition.exact(prompt)
        if self.kind == "null":
            return Condition.null()
        if self.kind == "perturbed":
            return Condition.perturbed(prompt, self.eta)
        return Condition.exact((prompt + 1) % n_components)

    def to_json(self):
        return {"perturbed": self.eta} if self.kind == "perturbed" else self.kind

    @classmethod
    def parse(cls, value):
        if isinstance(value, GuidanceArm):
            return value
        if isinstance(value, dict) and set(value) == {"perturbed"}:
            return cls("perturbed", float(value["perturbed"]))
        if isinstance(value, str):
            if value.startswith("perturbed"):
                _, _, eta = value.partition(":")
                return cls("perturbed", float(eta) if eta else 0.3)
            return cls(value)
        raise ConfigError(f"cannot parse guidance arm {value!r}")


@dataclass(frozen=True)
class WatermarkConfig:
    radius: float = 10.0
    channel: int = 0
    pattern: str = HERMITIAN
    key_seed: int = None  # defaults to the global seed
    center: str = "dc"

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"watermark pattern must be one of {PATTERNS}")
        if self.center not in CENTERS:
            raise ConfigError(f"watermark center must be one of {CENTERS}")


@dataclass(frozen=True)
class ExperimentConfig:
    global_seed: int = 0
    trials: int = 100
    latent_shape: tuple = (4, 64, 64)
    model: dict = None
    watermark: WatermarkConfig = field(default_factory=WatermarkConfig)
    family: str = "rf"
    inversion: str = "implicit"
    solver: SolverConfig = field(default_factory=SolverConfig.rf)
    guidance: tuple = (GuidanceArm("matched"),)
    attacks: tuple = (AttackSpec.none(),)
    workers: int = 1
    output_dir: str = "runs/experiment"
    kld_bins: int = 32
    fpr_levels: tuple = (0.01, 0.05, 0.10)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        c, h, w = self.latent_shape
        if c < 1 or not (is_power_of_two(h) and is_power_of_two(w)):
            raise ConfigError(f"latent planes must be power-of-two sized, got {self.latent_shape}")
        if self.family not in INVERSION_MODES:
            raise ConfigError(f"solver family must be one of {sorted(INVERSION_MODES)}")
        if self.inversion not in INVERSION_MODES[self.family]:
            raise ConfigError(f"inversion {self.inversion!r} unsupported for family {self.family!r}")
        if self.watermark.channel >= c:
            raise ConfigError("watermark channel exceeds latent channels")
        if not self.guidance or not self.attacks:
            raise ConfigError("need at least one guidance arm and one attack")

    @property
    def key_seed(self):
        return self.global_seed if self.watermark.key_seed is None else self.watermark.key_seed

    def build_model(self):
        spec = self.model or default_model_spec(self.latent_shape)
        try:
            model = MixtureModel.from_dict(spec, spec.get("_base_dir", "."))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model description: {exc}") from exc
        if tuple(model.shape) != tuple(self.latent_shape):
            raise ConfigError(f"model shape {model.shape} differs from latent shape {self.latent_shape}")
        return model

    def scenarios(self):
        return [(g, a) for a in self.attacks for g in self.guidance]

    def to_json(self):
        wm = self.watermark
        solver = {f.name: getattr(self.solver, f.name) for f in fields(SolverConfig)}
        model = None if self.model is None else {k: v for k, v in self.model.items() if k != "_base_dir"}
        return {
            "schema": SCHEMA,
            "global_seed": self.global_seed,
            "trials": self.trials,
            "latent_shape": list(self.latent_shape),
            "model": model,
            "watermark": {"radius": wm.radius, "channel": wm.channel, "pattern": wm.pattern,
                          "key_seed": wm.key_seed, "center": wm.center},
            "solver": {"family": self.family, "inversion": self.inversion, **solver},
            "guidance": [g.to_json() for g in self.guidance],
            "attack": [a.to_dict() for a in self.attacks],
            "workers": self.workers,
            "output_dir": self.output_dir,
            "kld_bins": self.kld_bins,
            "fpr_levels": list(self.fpr_levels),
        }


def _as_list(value):
    return value if isinstance(value, list) else [value]


def _reject_unknown(section, allowed, name):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {name} fields: {sorted(unknown)}")


def parse_config(raw, base_dir="."):
    """Build an ExperimentConfig from decoded JSON, validating every section."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
    top = {"schema", "global_seed", "trials", "latent_shape", "model", "watermark", "solver",
           "guidance", "attack", "workers", "output_dir", "kld_bins", "fpr_levels"}
    _reject_unknown(raw, top, "top-level")
    try:
        shape = raw.get("latent_shape", "sd")
        if isinstance(shape, str):
            if shape not in SHAPE_PRESETS:
                raise ConfigError(f"unknown latent shape preset {shape!r}")
            shape = SHAPE_PRESETS[shape]
        shape = tuple(int(v) for v in shape)
        if len(shape) != 3:
            raise ConfigError("latent_shape needs three entries")

        model = raw.get("model")
        if isinstance(model, str):
            path = os.path.join(base_dir, model)
            if not os.path.exists(path):
                raise ConfigError(f"model file {path} does not exist")
            with open(path) as fh:
                model = json.load(fh)
            model["_base_dir"] = os.path.dirname(os.path.abspath(path))
        elif isinstance(model, dict):
            model = {**model, "_base_dir": base_dir}
        elif model is not None:
            raise ConfigError("model must be a path, an object or null")

        wm_raw = raw.get("watermark", {})
        _reject_unknown(wm_raw, {"radius", "channel", "pattern", "key_seed", "center"}, "watermark")
        watermark = WatermarkConfig(**wm_raw)

        solver_raw = dict(raw.get("solver", {}))
        family = solver_raw.pop("family", "rf")
        inversion = solver_raw.pop("inversion", "implicit" if family == "rf" else "exact")
        _reject_unknown(solver_raw, {f.name for f in fields(SolverConfig)}, "solver")
        solver = SolverConfig.rf(**solver_raw) if family == "rf" else SolverConfig.ddim(**solver_raw)

        return ExperimentConfig(
            global_seed=int(raw.get("global_seed", 0)),
            trials=int(raw.get("trials", 100)),
            latent_shape=shape,
            model=model,
            watermark=watermark,
            family=family,
            inversion=inversion,
            solver=solver,
            guidance=tuple(GuidanceArm.parse(g) for g in _as_list(raw.get("guidance", "matched"))),
            attacks=tuple(AttackSpec.from_dict(a) for a in _as_list(raw.get("attack", {"kind": "none"}))),
            workers=int(raw.get("workers", 1)),
            output_dir=os.path.normpath(os.path.join(base_dir, raw.get("output_dir", "runs/experiment"))),
            kld_bins=int(raw.get("kld_bins", 32)),
            fpr_levels=tuple(float(v) for v in raw.get("fpr_levels", (0.01, 0.05, 0.10))),
        )
    except ConfigError:
        raise
    except (InvalidArgument, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))
