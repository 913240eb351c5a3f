import voluptuous as vo

from .model import make_preset

PRESETS = ["free", "constant", "cosine", "two-well", "shifted", "cosine-2d"]
LOGLEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


class AttrDict(dict):
    """dict whose keys read as attributes; missing keys read as None.

    >>> AttrDict(grid={"n": 64}).grid
    {'n': 64}
    """

    def __getattr__(self, item):
        return self.get(item, None)

    def __getstate__(self):
        return self

    def __setstate__(self, state):
        self.update(state)


def attrify(d):
    """Recursively turn mappings into AttrDicts."""
    if isinstance(d, dict):
        return AttrDict((k, attrify(v)) for k, v in d.items())
    if isinstance(d, list):
        return [attrify(v) for v in d]
    return d


def plain(d):
    """Recursively turn AttrDicts and tuples back into builtin dicts and lists."""
    if isinstance(d, dict):
        return {k: plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [plain(v) for v in d]
    return d


class AttrSchema(vo.Schema):
    """Schema whose validated output is an :class:`AttrDict` tree."""

    def __call__(self, d):
        return attrify(super().__call__(d))


def Choice(kind, choices):
    def checker(value):
        if value not in choices:
            raise vo.Invalid(f"{value} not valid for {kind}")
        return value

    return checker


def Positive(kind="value"):
    def checker(value):
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise vo.Invalid(f"{kind} must be a number, got {value!r}")
        if not value > 0:
            raise vo.Invalid(f"{kind} must be positive, got {value}")
        return value

    return checker


def Odd(kind="value"):
    def checker(value):
        if value % 2 == 0:
            raise vo.Invalid(f"{kind} must be odd, got {value}")
        return value

    return checker


def _count(kind, low, high=None):
    return vo.All(vo.Coerce(int), vo.Range(min=low, max=high, msg=f"{kind} out of range"))


def _validate_regularize(conf):
    if not 0 < conf["s"] < conf["t"] <= 0.5:
        raise vo.Invalid(f"regularize needs 0 < s < t <= 0.5, got s={conf['s']} t={conf['t']}")
    return conf


def _validate_experiment(conf):
    try:
        dim = make_preset(conf["preset"]["name"], conf["preset"]["params"]).potential.dim
    except (TypeError, ValueError) as e:
        raise vo.Invalid(f"invalid preset parameters: {e}")
    if conf["grid"]["dim"] is None:
        conf["grid"]["dim"] = dim
    elif conf["grid"]["dim"] != dim:
        raise vo.Invalid(f"grid.dim={conf['grid']['dim']} but preset has dimension {dim}")
    return conf


schema_preset = AttrSchema(
    {
        vo.Optional("name", default="cosine"): vo.All(str, Choice("preset", PRESETS)),
        vo.Optional("params", default=dict): dict,
        vo.Optional("p_bound", default=None): vo.Any(None, Positive("p_bound")),
        vo.Optional("v_bound", default=None): vo.Any(None, Positive("v_bound")),
    }
)

schema_grid = AttrSchema(
    {
        vo.Optional("n", default=128): _count("grid.n", 8),
        vo.Optional("dim", default=None): vo.Any(None, vo.All(vo.Coerce(int), vo.In([1, 2]))),
    }
)

schema_semigroup = AttrSchema(
    {
        vo.Optional("dt", default=1e-2): vo.All(
            Positive("semigroup.dt"), vo.Range(max=0.1, msg="semigroup.dt must be <= 0.1")
        ),
        vo.Optional("v_grid", default=33): vo.All(_count("semigroup.v_grid", 3), Odd("v_grid")),
        vo.Optional("refine_tol", default=1e-8): Positive("semigroup.refine_tol"),
        vo.Optional("scheme", default="cubic"): Choice("scheme", ["linear", "cubic"]),
        vo.Optional("refine", default=True): bool,
        vo.Optional("tol", default=1e-6): Positive("semigroup.tol"),
        vo.Optional("max_iters", default=200000): _count("semigroup.max_iters", 1),
    }
)

schema_regularize = AttrSchema(
    vo.All(
        {
            vo.Optional("t", default=0.1): Positive("regularize.t"),
            vo.Optional("s", default=0.05): Positive("regularize.s"),
            vo.Optional("dt_flow", default=5e-3): vo.All(
                Positive("regularize.dt_flow"),
                vo.Range(max=1e-2, msg="regularize.dt_flow must be <= 1e-2"),
            ),
            vo.Optional("c_max", default=60.0): Positive("regularize.c_max"),
            vo.Optional("max_variation", default=0.25): Positive("regularize.max_variation"),
        },
        _validate_regularize,
    )
)

schema_aubry = AttrSchema(
    {
        vo.Optional("eps_res", default=1e-2): Positive("aubry.eps_res"),
        vo.Optional("T_recur", default=2.0): Positive("aubry.T_recur"),
        vo.Optional("dt_curve", default=1e-3): Positive("aubry.dt_curve"),
        vo.Optional("bump_height", default=1e-2): vo.All(vo.Coerce(float), vo.Range(min=0)),
        vo.Optional("bump_radius", default=0.1): Positive("aubry.bump_radius"),
        vo.Optional("n_curves", default=16): _count("aubry.n_curves", 1),
    }
)

schema_flow = AttrSchema(
    {
        vo.Optional("dt", default=1e-2): vo.All(
            Positive("flow.dt"), vo.Range(max=1e-2, msg="flow.dt must be <= 1e-2")
        ),
        vo.Optional("dt_jacobian", default=1e-3): vo.All(
            Positive("flow.dt_jacobian"), vo.Range(max=1e-2, msg="flow.dt_jacobian must be <= 1e-2")
        ),
        vo.Optional("T_attractor", default=10.0): Positive("flow.T_attractor"),
        vo.Optional("p_samples", default=41): vo.All(_count("flow.p_samples", 3), Odd("p_samples")),
        vo.Optional("seeds_per_axis", default=16): _count("flow.seeds_per_axis", 8),
        vo.Optional("n_trajectories", default=100): _count("flow.n_trajectories", 1),
        vo.Optional("T_lyap", default=5.0): Positive("flow.T_lyap"),
        vo.Optional("p_max", default=2.0): Positive("flow.p_max"),
    }
)

schema_rate = AttrSchema(
    {
        vo.Optional("T", default=2.0): vo.All(
            Positive("rate.T"), vo.Range(min=1.0, msg="rate.T must be >= 1")
        ),
        vo.Optional("stride", default=20): _count("rate.stride", 1),
        vo.Optional("alpha_mode", default="single"): Choice("alpha_mode", ["single", "piecewise"]),
    }
)

schema_tolerances = AttrSchema(
    {
        vo.Optional("tol_sub", default=5e-3): Positive("tol_sub"),
        vo.Optional("tol_dom", default=1e-3): Positive("tol_dom"),
        vo.Optional("tol_aubry", default=1e-3): Positive("tol_aubry"),
        vo.Optional("tol_lyap", default=1e-3): Positive("tol_lyap"),
        vo.Optional("tol_semigroup", default=5e-3): Positive("tol_semigroup"),
        vo.Optional("tol_order", default=5e-3): Positive("tol_order"),
        vo.Optional("tol_calib", default=2e-3): Positive("tol_calib"),
        vo.Optional("tol_fix", default=1e-6): Positive("tol_fix"),
        vo.Optional("tol_strict", default=2e-3): Positive("tol_strict"),
        vo.Optional("tol_value", default=1e-2): Positive("tol_value"),
        vo.Optional("tol_dirac", default=2e-3): Positive("tol_dirac"),
        vo.Optional("min_sink_residual", default=0.1): Positive("min_sink_residual"),
        vo.Optional("max_refine_constant", default=10.0): Positive("max_refine_constant"),
    }
)

schema_output = AttrSchema({vo.Optional("dir", default="weakkam-out"): str})

schema_experiment = AttrSchema(
    vo.All(
        {
            vo.Optional("preset", default={}): schema_preset,
            vo.Optional("lambda", default=0.5): Positive("lambda"),
            vo.Optional("grid", default={}): schema_grid,
            vo.Optional("semigroup", default={}): schema_semigroup,
            vo.Optional("regularize", default={}): schema_regularize,
            vo.Optional("aubry", default={}): schema_aubry,
            vo.Optional("flow", default={}): schema_flow,
            vo.Optional("rate", default={}): schema_rate,
            vo.Optional("tolerances", default={}): schema_tolerances,
            vo.Optional("output", default={}): schema_output,
            vo.Optional("seed", default=0): vo.Coerce(int),
            vo.Optional("workers", default=1): _count("workers", 1, 64),
            vo.Optional("loglevel", default="INFO"): vo.All(str, Choice("loglevel", LOGLEVELS)),
        },
        _validate_experiment,
    )
)
