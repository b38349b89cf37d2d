"""
Domain models for the augmented control-function toolkit
Plain dataclasses holding data, model choices and fit results
"""

import json
import re
from dataclasses import dataclass, field, asdict, fields
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from estimation.exceptions import ConfigError, NonFiniteInput, RankDeficient


def _as_matrix(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a vector or a matrix. Got shape {arr.shape}.")
    return arr


def _as_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector. Got shape {arr.shape}.")
    return arr


def constant_columns(block):
    """Boolean mask of columns that are constant and nonzero"""
    block = np.asarray(block)
    if block.shape[0] == 0:
        return np.zeros(block.shape[1], dtype=bool)
    return np.all(block == block[0], axis=0) & (block[0] != 0)


@dataclass(frozen=True)
class DesignMatrix:
    """Dense n x k regressor block with semantic column names"""
    values: np.ndarray
    column_labels: Tuple[str, ...]

    def __post_init__(self):
        values = _as_matrix(self.values, "design")
        labels = tuple(self.column_labels)
        n, k = values.shape
        if k < 1:
            raise ValueError(f"design needs at least one column. Got shape {values.shape}.")
        if n < k:
            raise RankDeficient(n, float("inf"), k, what=f"design with {n} rows")
        if len(labels) != k:
            raise ValueError(f"expected {k} column labels, got {len(labels)}")
        if len(set(labels)) != k:
            raise ValueError(f"column labels must be unique: {labels}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("design contains non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def column(self, label):
        return self.values[:, self.column_labels.index(label)]


@dataclass(frozen=True)
class ProjectionResult:
    """Least-squares projection of a target on a design"""
    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rank: int
    condition_number: float


@dataclass(frozen=True)
class Dataset:
    """
    Observation matrix split by role

    y: response, d: scalar endogenous regressor,
    x: exogenous block (must contain a constant column), z: instruments
    """
    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y_label: str = "y"
    d_label: str = "d"
    x_labels: Tuple[str, ...] = ("const",)
    z_labels: Tuple[str, ...] = ("z",)

    def __post_init__(self):
        y = _as_vector(self.y, "y")
        d = _as_vector(self.d, "d")
        x = _as_matrix(self.x, "x")
        z = _as_matrix(self.z, "z")
        n = y.shape[0]
        if not (d.shape[0] == x.shape[0] == z.shape[0] == n):
            raise ValueError(
                f"y, d, x and z must have the same number of rows. "
                f"Got {n}, {d.shape[0]}, {x.shape[0]}, {z.shape[0]}."
            )
        for name, arr in (("y", y), ("d", d), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"{name} contains non-finite values")
        if z.shape[1] < 1:
            raise ValueError("at least one instrument column is required")
        if not constant_columns(x).any():
            raise ValueError("the exogenous block x must contain a constant column")
        x_labels = tuple(self.x_labels)
        z_labels = tuple(self.z_labels)
        if len(x_labels) != x.shape[1] or len(z_labels) != z.shape[1]:
            raise ValueError("label count does not match x / z columns")
        labels = (self.y_label, self.d_label) + x_labels + z_labels
        if len(set(labels)) != len(labels):
            raise ValueError(f"role labels must be unique: {labels}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x_labels", x_labels)
        object.__setattr__(self, "z_labels", z_labels)

    @classmethod
    def from_arrays(cls, y, d, z, x=None, **labels) -> "Dataset":
        """Build a dataset, adding a constant when no exogenous block is given"""
        n = np.asarray(y).shape[0]
        if x is None:
            return cls(y=y, d=d, x=np.ones((n, 1)), z=z, **labels)
        x = _as_matrix(x, "x")
        x_labels = labels.pop("x_labels", tuple(f"x{j + 1}" for j in range(x.shape[1])))
        if not constant_columns(x).any():
            x = np.column_stack([np.ones(n), x])
            x_labels = ("const",) + tuple(x_labels)
        return cls(y=y, d=d, x=x, z=z, x_labels=x_labels, **labels)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    def take(self, indices) -> "Dataset":
        """Row subset (used for resampling)"""
        indices = np.asarray(indices)
        return Dataset(
            y=self.y[indices], d=self.d[indices], x=self.x[indices], z=self.z[indices],
            y_label=self.y_label, d_label=self.d_label,
            x_labels=self.x_labels, z_labels=self.z_labels,
        )


@dataclass(frozen=True)
class LinearFit:
    """OLS or 2SLS fit of Y on (D, X)"""
    estimator: str
    alpha1: float
    alpha2: np.ndarray
    residuals: np.ndarray
    hc_variance: np.ndarray  # variance of (alpha1, alpha2), HC0, already divided by n
    labels: Tuple[str, ...]
    first_stage_f: Optional[float] = None

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.alpha1], self.alpha2])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.hc_variance), 0.0, None))


@dataclass(frozen=True)
class BiasOracleResult:
    """Monte Carlo evaluation of the 2SLS probability-limit bias"""
    bias: float
    sigma_h: float
    cross_moment: float
    mc_draws: int
    mc_standard_error: float


class SkedasticFamily(Enum):
    UNIT = "unit"
    LINEAR_POWER = "linear"
    LOG_LINEAR = "loglinear"


@dataclass(frozen=True)
class SkedasticSpec:
    """
    Parametric model for the first-stage scale h(X, Z; gamma)

    LinearPower: h^2 = w'gamma with w = (1, |Z|, |X nonconstant|)
    LogLinear:   h^2 = exp(w'gamma) with w = (1, log|Z|, log|X nonconstant|)
    Unit:        h = 1, no parameters
    """
    family: SkedasticFamily = SkedasticFamily.UNIT

    @classmethod
    def from_name(cls, name) -> "SkedasticSpec":
        if isinstance(name, SkedasticSpec):
            return name
        try:
            return cls(SkedasticFamily(str(name).lower()))
        except ValueError:
            choices = ", ".join(f.value for f in SkedasticFamily)
            raise ConfigError(f"unknown skedastic family '{name}' (choose from {choices})")

    @property
    def name(self) -> str:
        return self.family.value

    def features(self, x, z, constant_mask=None) -> np.ndarray:
        """
        Feature matrix w_i, one row per observation

        constant_mask marks the constant X columns; it is inferred from x when
        omitted (for a single row, columns equal to 1 count as constant).
        """
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
            z = z[None, :]
        n = x.shape[0]
        if self.family is SkedasticFamily.UNIT:
            return np.empty((n, 0))
        if constant_mask is None:
            constant_mask = constant_columns(x) if n > 1 else (x[0] == 1.0)
        # the constant column duplicates the intercept
        x_free = x[:, ~np.asarray(constant_mask, dtype=bool)]
        block = np.abs(np.column_stack([z, x_free]))
        if self.family is SkedasticFamily.LOG_LINEAR:
            block = np.log(block + config.LOG_EPSILON)
        return np.column_stack([np.ones(n), block])

    def feature_labels(self, data: "Dataset") -> Tuple[str, ...]:
        if self.family is SkedasticFamily.UNIT:
            return ()
        free = [lab for lab, c in zip(data.x_labels, constant_columns(data.x)) if not c]
        wrap = "log|{}|" if self.family is SkedasticFamily.LOG_LINEAR else "|{}|"
        return ("const",) + tuple(wrap.format(lab) for lab in list(data.z_labels) + free)

    def variance(self, gamma, features) -> np.ndarray:
        """Unfloored fitted variance h^2 at gamma"""
        features = np.atleast_2d(features)
        if self.family is SkedasticFamily.UNIT:
            return np.ones(features.shape[0])
        index = features @ np.asarray(gamma, dtype=np.float64)
        if self.family is SkedasticFamily.LINEAR_POWER:
            return index
        return np.exp(np.clip(index, -700.0, 700.0))


@dataclass(frozen=True)
class SkedasticFit:
    """Fitted scale model evaluated at every observation"""
    spec: SkedasticSpec
    gamma: np.ndarray
    h_values: np.ndarray
    grad_h: np.ndarray
    nls_iterations: int
    converged: bool
    floor: float
    floored: np.ndarray
    features: np.ndarray
    gamma_init: Optional[np.ndarray] = None
    objective: float = 0.0

    @property
    def n_floored(self) -> int:
        return int(np.count_nonzero(self.floored))


@dataclass(frozen=True)
class FirstStageFit:
    """First-stage OLS of D on (Z, X) plus the normalized control function"""
    pi1: np.ndarray
    pi2: np.ndarray
    skedastic: SkedasticFit
    v_raw: np.ndarray
    v_hat: np.ndarray
    f_statistic: float = float("nan")

    @property
    def phi(self) -> np.ndarray:
        return np.concatenate([self.pi1, self.pi2, self.skedastic.gamma])

    @property
    def dim_phi(self) -> int:
        return self.phi.shape[0]


_TERM_PATTERN = re.compile(r"^v(\d*)(?:d(\d*))?(?:x(\d*))?$")


@dataclass(frozen=True)
class CfTerm:
    """
    Control-function monomial D^s * X^q * V^j

    With x_power > 0 the term expands to one column per nonconstant X column.
    """
    v_power: int
    d_power: int = 0
    x_power: int = 0

    def __post_init__(self):
        if self.v_power < 1:
            raise ConfigError("control-function terms need a positive power of V")
        if self.d_power < 0 or self.x_power < 0:
            raise ConfigError("powers of D and X must be nonnegative")

    @classmethod
    def parse(cls, token) -> "CfTerm":
        """Parse tokens such as 'v', 'v2', 'vd', 'vd2', 'v2d', 'vx'"""
        match = _TERM_PATTERN.match(token.strip().lower())
        if not match:
            raise ConfigError(f"cannot parse control-function term '{token}'")
        v, d, x = match.groups()
        d_power = 0 if d is None else int(d or 1)
        x_power = 0 if x is None else int(x or 1)
        return cls(v_power=int(v or 1), d_power=d_power, x_power=x_power)

    def label(self, x_label=None) -> str:
        parts = ["V" if self.v_power == 1 else f"V^{self.v_power}"]
        if self.d_power:
            parts.append("D" if self.d_power == 1 else f"D^{self.d_power}")
        if self.x_power:
            name = x_label or "X"
            parts.append(name if self.x_power == 1 else f"{name}^{self.x_power}")
        return "*".join(parts)


CF_PRESETS: Dict[str, Tuple[CfTerm, ...]] = {
    "cf1": (CfTerm(1), CfTerm(1, 1)),
    "cf2": (CfTerm(1), CfTerm(1, 1), CfTerm(1, 2)),
    "v": (CfTerm(1),),
    "v+v2": (CfTerm(1), CfTerm(2)),
    "v+vd": (CfTerm(1), CfTerm(1, 1)),
    "v+vd+v2": (CfTerm(1), CfTerm(1, 1), CfTerm(2)),
    "v+vd+v2+v2d": (CfTerm(1), CfTerm(1, 1), CfTerm(2), CfTerm(2, 1)),
}

GRID_PRESETS = ("v", "v+v2", "v+vd", "v+vd+v2", "v+vd+v2+v2d")


@dataclass(frozen=True)
class CfModel:
    """Ordered control-function term set plus the first-stage scale model"""
    terms: Tuple[CfTerm, ...] = (CfTerm(1),)
    skedastic_spec: SkedasticSpec = field(default_factory=SkedasticSpec)
    name: str = "custom"

    def __post_init__(self):
        terms = tuple(self.terms)
        if len(set(terms)) != len(terms):
            raise ConfigError(f"duplicate control-function terms in {self.name}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_name(cls, name, skedastic="unit") -> "CfModel":
        """Preset name ('cf1', 'v+vd', ...) or custom list ('v,vd,v2d')"""
        spec = SkedasticSpec.from_name(skedastic)
        key = str(name).strip().lower()
        if key in CF_PRESETS:
            return cls(terms=CF_PRESETS[key], skedastic_spec=spec, name=key)
        if key in ("", "none"):
            return cls(terms=(), skedastic_spec=spec, name="none")
        tokens = [tok for tok in re.split(r"[+,]", key) if tok.strip()]
        return cls(terms=tuple(CfTerm.parse(tok) for tok in tokens), skedastic_spec=spec, name=key)


@dataclass(frozen=True)
class PhiInference:
    """Sample Hessian and scores of the first-step estimator phi = (pi1, pi2, gamma)"""
    sigma_phi: np.ndarray
    m_scores: np.ndarray
    n_pi: int
    n_gamma: int


@dataclass(frozen=True)
class SandwichResult:
    """Influence-function sandwich for the second-step coefficients"""
    omega: np.ndarray
    sigma_alpha: np.ndarray
    psi: np.ndarray
    correction_term: np.ndarray

    def se(self, n) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega), 0.0, None) / n)


@dataclass(frozen=True)
class WaldTest:
    """Chi-square test that a block of coefficients is zero"""
    statistic: float
    df: int
    p_value: float
    labels: Tuple[str, ...] = ()


@dataclass(frozen=True)
class CfFit:
    """Second-step OLS of Y on R(phi-hat) = (D, X, CF terms)"""
    alpha: np.ndarray
    regressors: DesignMatrix
    u_hat: np.ndarray
    first_stage: FirstStageFit
    model: CfModel
    omega: Optional[np.ndarray] = None
    omega_naive: Optional[np.ndarray] = None
    sandwich: Optional[SandwichResult] = None

    @property
    def alpha1(self) -> float:
        return float(self.alpha[0])

    @property
    def alpha_w(self) -> np.ndarray:
        return self.alpha[1:]

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.regressors.column_labels

    @property
    def n(self) -> int:
        return self.regressors.n

    @property
    def cf_indices(self) -> np.ndarray:
        """Positions of the control-function columns in alpha"""
        k_fixed = 1 + self.first_stage.pi2.shape[0]
        return np.arange(k_fixed, self.alpha.shape[0])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega), 0.0, None) / self.n)

    @property
    def se_naive(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega_naive), 0.0, None) / self.n)


@dataclass(frozen=True)
class BootstrapResult:
    """Pairs-bootstrap replicates and their summaries"""
    replicates: np.ndarray
    se: np.ndarray
    ci_percentile: np.ndarray  # shape (k, 2)
    failed_replicates: int
    B: int

    @property
    def b_effective(self) -> int:
        return self.B - self.failed_replicates


class _JsonConfig:
    """dict conversion for flat dataclass configs read from JSON"""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
        return cls(**data)


SCALE_FORMS = ("variance", "level")
MC_ESTIMATORS = ("ols", "2sls", "cf1", "cf2")


@dataclass(frozen=True)
class McConfig(_JsonConfig):
    """
    Monte Carlo design

    Y = a1*D + a2*X + g(D,X)*(U + lam*V), D = pi1*Z + pi2*X + h(Z,X)*V,
    g = d1*D + d2*D^2 + d3*X, Z ~ |N(0,1)|, X = 1.
    scale_form 'variance': h^2 = g1*Z + g2*X; 'level': h = g1*Z + g2*X.
    """
    n: int = 1000
    replications: int = config.DEFAULT_REPLICATIONS
    lam: float = 1.0
    gamma1: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    pi1: float = 1.0
    pi2: float = 1.0
    delta3: float = 1.0
    gamma2: float = 1.0
    seed: int = 0
    scale_form: str = "variance"

    def __post_init__(self):
        if self.n < 50:
            raise ConfigError(f"n must be at least 50, got {self.n}")
        if self.replications < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if self.scale_form not in SCALE_FORMS:
            raise ConfigError(f"scale_form must be one of {SCALE_FORMS}")


@dataclass(frozen=True)
class EstimatorSummary:
    """Monte Carlo moments of one estimator of alpha1"""
    name: str
    bias: float
    variance: float
    mean_est_variance: float
    coverage95: float
    mean_est_variance_naive: float = float("nan")
    median_est_variance: float = float("nan")
    coverage95_naive: float = float("nan")
    successes: int = 0
    failures: int = 0


@dataclass(frozen=True)
class McResult:
    """Aggregated Monte Carlo output for one design"""
    config: McConfig
    estimators: Dict[str, EstimatorSummary]
    failures: Dict[str, int]
    floored_observations: int = 0

    def __getitem__(self, name) -> EstimatorSummary:
        return self.estimators[name]


@dataclass(frozen=True)
class TableConfig(_JsonConfig):
    """Grid of Monte Carlo designs laid out like one results table"""
    name: str = "custom"
    lam: float = 1.0
    gamma1: float = 0.0
    n_grid: Tuple[int, ...] = (250, 500, 1000)
    delta1_grid: Tuple[float, ...] = (0.0, 1.0)
    delta2_grid: Tuple[float, ...] = (0.0, 0.2)
    replications: int = config.DEFAULT_REPLICATIONS
    seed: int = 0
    estimators: Tuple[str, ...] = MC_ESTIMATORS
    scale_form: str = "variance"

    def __post_init__(self):
        for name in ("n_grid", "delta1_grid", "delta2_grid", "estimators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = set(self.estimators) - set(MC_ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators: {', '.join(sorted(unknown))}")

    def cells(self) -> List[McConfig]:
        """Designs in table order: delta1, then delta2, then n"""
        return [
            McConfig(n=int(n), replications=self.replications, lam=self.lam,
                     gamma1=self.gamma1, delta1=float(d1), delta2=float(d2),
                     seed=self.seed, scale_form=self.scale_form)
            for d1 in self.delta1_grid
            for d2 in self.delta2_grid
            for n in self.n_grid
        ]

    @classmethod
    def load_presets(cls, filepath=None) -> Dict[str, "TableConfig"]:
        filepath = filepath or config.SIMULATION_PRESETS
        with open(filepath, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return {name: cls.from_dict({"name": name, **body}) for name, body in raw.items()}


@dataclass(frozen=True)
class FitConfig(_JsonConfig):
    """Column roles and estimator choices for fitting a CSV dataset"""
    csv_path: str = ""
    y: str = ""
    d: str = ""
    x: Tuple[str, ...] = ()
    z: Tuple[str, ...] = ()
    estimator: str = "cf"
    cf_terms: str = "cf1"
    skedastic: str = "linear"
    bootstrap: int = 0
    seed: Optional[int] = None
    workers: int = 1
    grid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "z", tuple(self.z))
        if not self.csv_path:
            raise ConfigError("--csv is required")
        if not self.y or not self.d:
            raise ConfigError("--y and --d are required")
        if not self.z:
            raise ConfigError("at least one instrument column (--z) is required")
        roles = [self.y, self.d, *self.x, *self.z]
        if len(set(roles)) != len(roles):
            raise ConfigError(f"role columns must be disjoint: {roles}")
        if self.estimator not in ("ols", "2sls", "cf"):
            raise ConfigError(f"unknown estimator '{self.estimator}'")
        if self.bootstrap < 0 or self.bootstrap == 1:
            raise ConfigError("--bootstrap must be 0 or at least 2")
        SkedasticSpec.from_name(self.skedastic)
