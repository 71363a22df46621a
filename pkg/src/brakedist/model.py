"""Domain types and design-matrix construction.

The regression works on log brake response times. Each stimulus type
owns a block of polynomial-in-headway coefficients, so a model with S
stimulus types and polynomial degree ``degree`` has p = S * (degree + 1)
coefficients; an observation's feature row is zero outside its stimulus
block and holds (1, t, t^2, ..., t^degree) inside it.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import check_symmetric, is_psd

# Observations with a longer response are rejected as sensor error;
# non-stopping events must be filtered upstream.
MAX_BRT_S = 60.0

OBSERVATION_CSV_HEADER = ["driver_id", "stimulus", "headway_s", "brt_s"]


class UnknownStimulus(ValueError):
    """Raised for a stimulus id or name not present in the registry."""


@dataclass(frozen=True)
class StimulusType:
    """One braking trigger category (index plus human-readable label)."""

    id: int
    name: str


class StimulusRegistry:
    """Ordered set of stimulus names; ids are contiguous positions."""

    def __init__(self, names):
        names = tuple(str(n) for n in names)
        if not names:
            raise ValueError("registry needs at least one stimulus")
        if len(set(names)) != len(names):
            raise ValueError("stimulus names must be unique")
        self._names = names
        self._ids = {name: i for i, name in enumerate(names)}

    @property
    def names(self):
        return self._names

    def id_of(self, name):
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownStimulus(f"unknown stimulus name {name!r}") from None

    def name_of(self, stimulus_id):
        if not 0 <= stimulus_id < len(self._names):
            raise UnknownStimulus(f"stimulus id {stimulus_id} out of range")
        return self._names[stimulus_id]

    def __len__(self):
        return len(self._names)

    def __iter__(self):
        return (StimulusType(i, n) for i, n in enumerate(self._names))

    def __eq__(self, other):
        return isinstance(other, StimulusRegistry) and self._names == other._names

    def __repr__(self):
        return f"StimulusRegistry({list(self._names)!r})"


@dataclass(frozen=True)
class Observation:
    """One braking event: who, what triggered it, when, and how fast.

    ``headway_s`` is the time headway to the stimulus source at stimulus
    onset and ``brt_s`` the observed brake response time, both in
    seconds. Both must be positive (the response enters the model as
    log(brt_s)) and brt_s must not exceed MAX_BRT_S.
    """

    driver_id: str
    stimulus: int
    headway_s: float
    brt_s: float

    def __post_init__(self):
        if not isinstance(self.stimulus, (int, np.integer)) or self.stimulus < 0:
            raise ValueError(f"stimulus id must be a nonnegative integer, got {self.stimulus!r}")
        object.__setattr__(self, "stimulus", int(self.stimulus))
        object.__setattr__(self, "headway_s", float(self.headway_s))
        object.__setattr__(self, "brt_s", float(self.brt_s))
        if not np.isfinite(self.headway_s) or self.headway_s <= 0:
            raise ValueError(f"headway_s must be positive and finite, got {self.headway_s}")
        if not np.isfinite(self.brt_s) or self.brt_s <= 0:
            raise ValueError(f"brt_s must be positive and finite, got {self.brt_s}")
        if self.brt_s > MAX_BRT_S:
            raise ValueError(f"brt_s {self.brt_s} exceeds sanity bound {MAX_BRT_S}")


@dataclass(frozen=True)
class ModelSpec:
    """Shape of the coefficient vector: stimulus count and polynomial degree."""

    num_stimuli: int
    degree: int = 2

    def __post_init__(self):
        if self.num_stimuli < 1:
            raise ValueError("num_stimuli must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")

    @property
    def p(self):
        """Total coefficient count across stimulus blocks."""
        return self.num_stimuli * (self.degree + 1)


@dataclass(eq=False)
class FitInfo:
    """Bookkeeping from a training run."""

    converged: bool
    loglik: float
    iterations: int
    seed: int


@dataclass(eq=False)
class TrainedModel:
    """Population-level parameters estimated from a training study.

    Immutable by convention once constructed; safe to share across
    threads for concurrent reads.
    """

    spec: ModelSpec
    stimuli: StimulusRegistry
    beta: np.ndarray
    sigma2: float
    sigma_gamma: np.ndarray
    beta_cov: np.ndarray
    t_star: float = 1.5
    fit_info: FitInfo | None = None

    def __post_init__(self):
        p = self.spec.p
        if len(self.stimuli) != self.spec.num_stimuli:
            raise ValueError("registry size does not match spec.num_stimuli")
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (p,):
            raise ValueError(f"beta must have shape ({p},), got {self.beta.shape}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.sigma_gamma = check_symmetric(self.sigma_gamma)
        self.beta_cov = check_symmetric(self.beta_cov)
        if self.sigma_gamma.shape != (p, p) or self.beta_cov.shape != (p, p):
            raise ValueError("covariance matrices must be p x p")
        if not is_psd(self.sigma_gamma, 1e-8):
            raise ValueError("sigma_gamma is not positive semidefinite")
        if not is_psd(self.beta_cov, 1e-8):
            raise ValueError("beta_cov is not positive semidefinite")
        if not self.t_star > 0:
            raise ValueError("t_star must be positive")


def feature_row(spec, stimulus, headway_s):
    """Design row for one observation.

    Zero everywhere except the stimulus block, which holds the headway
    powers (1, t, ..., t^degree).

    Raises:
        UnknownStimulus: if the stimulus id is outside [0, num_stimuli).
    """
    if not 0 <= stimulus < spec.num_stimuli:
        raise UnknownStimulus(f"stimulus id {stimulus} out of range [0, {spec.num_stimuli})")
    if not headway_s > 0:
        raise ValueError(f"headway_s must be positive, got {headway_s}")
    row = np.zeros(spec.p)
    start = stimulus * (spec.degree + 1)
    row[start : start + spec.degree + 1] = float(headway_s) ** np.arange(spec.degree + 1)
    return row


def build_design(spec, observations):
    """Stack feature rows and log responses for a list of observations.

    Returns:
        (X, y): X is (n, p) with row i = feature_row(obs[i]) and
        y[i] = ln(brt_s) of obs[i]; input order is preserved.
    """
    obs = list(observations)
    if not obs:
        return np.zeros((0, spec.p)), np.zeros(0)
    X = np.vstack([feature_row(spec, o.stimulus, o.headway_s) for o in obs])
    y = np.log(np.array([o.brt_s for o in obs], dtype=float))
    return X, y


def read_observations_csv(path, registry=None):
    """Read observation rows from a CSV file.

    The header must be ``driver_id,stimulus,headway_s,brt_s`` and the
    stimulus column carries names. When ``registry`` is None, a registry
    is built from the names in order of first appearance; otherwise the
    names are validated against the given registry.

    Returns:
        (registry, observations)

    Raises:
        ValueError: on a malformed header or row; the message carries
            the 1-based line number.
        UnknownStimulus: when a name is missing from a given registry.
    """
    observations = []
    names_seen = []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != OBSERVATION_CSV_HEADER:
            raise ValueError(
                f"line 1: expected header {','.join(OBSERVATION_CSV_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"line {lineno}: expected 4 fields, got {len(row)}")
            driver_id, name, headway, brt = row
            if registry is None and name not in names_seen:
                names_seen.append(name)
            rows.append((lineno, driver_id, name, headway, brt))
    if registry is None:
        if not names_seen:
            raise ValueError("CSV contains no observations")
        registry = StimulusRegistry(names_seen)
    for lineno, driver_id, name, headway, brt in rows:
        try:
            stim_id = registry.id_of(name)
            obs = Observation(driver_id, stim_id, float(headway), float(brt))
        except UnknownStimulus:
            raise
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        observations.append(obs)
    return registry, observations


def write_observations_csv(path, observations, registry):
    """Write observations as CSV with stimulus names from the registry."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_CSV_HEADER)
        for o in observations:
            writer.writerow([o.driver_id, registry.name_of(o.stimulus), repr(o.headway_s), repr(o.brt_s)])
