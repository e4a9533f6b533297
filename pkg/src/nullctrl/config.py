"""Plain-text ``key=value`` run configuration.

One assignment per line, ``#`` starts a comment, sections are dotted key
prefixes::

    experiment=linear-control
    grid.nx=32
    domain.omega=0.3,0.7,0.3,0.7
    dual.epsilon_sweep=1e-2,1e-3,1e-4,1e-5
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AdmissibilityError, ParseError, ValidationError
from .grid import GridSpec
from .hum import DualConfig
from .picard import PicardConfig
from .weights import DomainSpec, build_eta

EXPERIMENTS = ("trajectory", "linear-control", "nonlinear-control", "carleman-ratio",
               "neumann-demo", "weight-report")


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _str(s):
    return s


# key -> (parser, default). Defaults are the reference configuration.
SCHEMA = {
    "experiment": (_str, "weight-report"),
    "seed": (_int, 0),
    "output_dir": (_str, "out"),
    "domain.lengths": (_floats, (1.0, 1.0)),
    "domain.omega": (_floats, (0.3, 0.7, 0.3, 0.7)),
    "domain.omega0": (_floats, (0.4, 0.6, 0.4, 0.6)),
    "grid.nx": (_int, 32),
    "grid.ny": (_int, 32),
    "grid.nt": (_int, 64),
    "grid.T": (_float, 1.0),
    "weights.s": (_float, 2.0),
    "weights.lambda": (_float, 1.5),
    "dual.epsilon": (_float, 1e-4),
    "dual.epsilon_sweep": (_floats, ()),
    "dual.cg_tol": (_float, 1e-8),
    "dual.cg_max_iters": (_int, 500),
    "dual.observe_velocity": (_bool, False),
    "dual.j_index": (_int, 1),
    "picard.delta": (_float, 1e-3),
    "picard.max_outer": (_int, 8),
    "picard.outer_tol": (_float, 1e-6),
    "picard.epsilon_decay": (_bool, False),
    "picard.delta_sweep": (_floats, ()),
    "data.amplitude": (_float, 1e-2),
    "trajectory.amplitude": (_float, 1.0),
    "samples": (_int, 50),
    "verify.alpha_family": (_bool, False),
    "verify.s_sweep": (_floats, ()),
    "neumann.mass": (_float, 0.7),
    "neumann.advection": (_float, 0.0),
}


@dataclass
class RunConfig:
    domain: DomainSpec
    grid: GridSpec
    s: float
    lam: float
    dual: DualConfig
    picard: PicardConfig
    experiment: str
    output_dir: str
    seed: int
    values: dict = field(default_factory=dict)  # every resolved key, for the manifest

    def __getitem__(self, key):
        return self.values[key]

    def epsilons(self):
        return self.values["dual.epsilon_sweep"] or (self.dual.epsilon,)

    def to_text(self):
        """Resolved configuration in the input format, keys sorted."""
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"


def parse_pairs(text):
    """Parse ``key=value`` lines into a dict of typed values (no defaults)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        try:
            out[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {value!r} ({exc})", lineno) from None
    return out


def _box(key, vals):
    if len(vals) != 4:
        raise ValidationError(f"{key} needs 4 numbers x0,x1,y0,y1")
    return ((vals[0], vals[1]), (vals[2], vals[3]))


def build_config(values: dict) -> RunConfig:
    v = {k: d for k, (_, d) in SCHEMA.items()}
    v.update(values)
    if v["experiment"] not in EXPERIMENTS:
        raise ValidationError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    if len(v["domain.lengths"]) != 2:
        raise ValidationError("domain.lengths needs 2 numbers")
    if v["samples"] < 1:
        raise ValidationError("samples must be >= 1")
    if any(e <= 0 for e in v["dual.epsilon_sweep"]):
        raise ValidationError("dual.epsilon_sweep entries must be positive")
    try:
        domain = DomainSpec(lengths=tuple(v["domain.lengths"]),
                            omega=_box("domain.omega", v["domain.omega"]),
                            omega0=_box("domain.omega0", v["domain.omega0"]),
                            T=v["grid.T"])
        grid = GridSpec(v["grid.nx"], v["grid.ny"], v["grid.nt"], domain.Lx, domain.Ly,
                        v["grid.T"])
        dual = DualConfig(epsilon=v["dual.epsilon"], cg_tol=v["dual.cg_tol"],
                          cg_max_iters=v["dual.cg_max_iters"],
                          observe_velocity=v["dual.observe_velocity"],
                          j_index=v["dual.j_index"])
        picard = PicardConfig(delta=v["picard.delta"], max_outer=v["picard.max_outer"],
                              outer_tol=v["picard.outer_tol"],
                              epsilon_decay=v["picard.epsilon_decay"])
        if v["weights.s"] < 1 or v["weights.lambda"] < 1:
            raise ValidationError("weights.s and weights.lambda must be >= 1")
        if grid.nt < 8:
            raise ValidationError("grid.nt must be >= 8 for the time profile")
        build_eta(domain, grid)
    except ValidationError:
        raise
    except (ValueError, AdmissibilityError) as exc:
        raise ValidationError(str(exc)) from None
    return RunConfig(domain, grid, v["weights.s"], v["weights.lambda"], dual, picard,
                     v["experiment"], v["output_dir"], v["seed"], v)


def parse_config(text) -> RunConfig:
    """Parse and validate a configuration text, filling defaults."""
    return build_config(parse_pairs(text))
