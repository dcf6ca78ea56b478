"""Named numerical tolerances shared by all modules."""

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class ToleranceProfile:
    """Absolute and relative tolerances used by validation and checks.

    Every field must be strictly positive. Use :meth:`with_overrides` to
    derive a modified profile from a mapping, e.g. one read from a config
    file; unknown names are rejected.
    """

    symmetry: float = 1e-12
    majorization: float = 1e-9
    det_one: float = 1e-10
    volume: float = 1e-8
    tangency: float = 1e-8
    tangent_invariant: float = 1e-10
    barycenter_gradient: float = 1e-10
    barycenter_floor: float = 1e-6
    convexity: float = 1e-8
    lipschitz: float = 1e-8
    bochi: float = 1e-7
    lower_bound: float = 1e-5
    positive_exponent: float = 1e-6
    overflow: float = 1e150
    min_step: float = 1e-14

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and value > 0):
                raise ValueError(f"tolerance {f.name!r} must be positive, got {value!r}")

    def with_overrides(self, overrides):
        known = {f.name for f in fields(self)}
        for key in overrides:
            if key not in known:
                raise KeyError(f"unknown tolerance {key!r}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def to_dict(self):
        return asdict(self)


DEFAULT_TOLERANCES = ToleranceProfile()
