"""Synthetic training-study generator.

Stands in for a driving-simulator data collection: draws per-driver
coefficient offsets from a population covariance, samples headways
uniformly per stimulus type, and emits observed response times
``brt = exp(X beta + X gamma_d + eps)``. Sampling is Box-Muller on a
counter-based PRNG (Philox) keyed by (seed, driver index), so any
driver's stream can be regenerated independently and the whole dataset
is bit-reproducible for a given config.

The committed default config is the canonical fixture for the test
suite; its parameter values were tuned once so that the generated data
look like published headway/response-time scatter (right-skewed,
increasing with headway) while keeping every population parameter
recoverable from a D=200 study.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, Observation, StimulusRegistry
from .numerics import check_symmetric, is_psd
from .training import TrainingSet

DEFAULT_STIMULI = ("traffic_signal", "lead_car_brake", "pedestrian_crossing")


@dataclass(eq=False)
class SimConfig:
    """Generating parameters for a synthetic training study."""

    spec: ModelSpec
    stimuli: StimulusRegistry
    beta_true: np.ndarray
    sigma2_true: float
    sigma_gamma_true: np.ndarray
    num_drivers: int
    obs_per_driver: tuple
    headway_range: tuple
    seed: int

    def __post_init__(self):
        self.beta_true = np.asarray(self.beta_true, dtype=float)
        self.sigma_gamma_true = check_symmetric(self.sigma_gamma_true)
        p = self.spec.p
        if len(self.stimuli) != self.spec.num_stimuli:
            raise ValueError("registry size does not match spec.num_stimuli")
        if self.beta_true.shape != (p,):
            raise ValueError(f"beta_true must have shape ({p},)")
        if self.sigma_gamma_true.shape != (p, p):
            raise ValueError("sigma_gamma_true must be p x p")
        if not is_psd(self.sigma_gamma_true, 1e-10):
            raise ValueError("sigma_gamma_true must be positive semidefinite")
        # Zero noise is allowed here (degenerate but useful for exactness
        # checks); training is what requires a strictly positive sigma2.
        if self.sigma2_true < 0:
            raise ValueError("sigma2_true must be nonnegative")
        if self.num_drivers < 1:
            raise ValueError("num_drivers must be >= 1")
        self.obs_per_driver = tuple(int(c) for c in self.obs_per_driver)
        if len(self.obs_per_driver) != self.spec.num_stimuli:
            raise ValueError("obs_per_driver needs one count per stimulus")
        if any(c < 0 for c in self.obs_per_driver):
            raise ValueError("observation counts must be >= 0")
        lo, hi = self.headway_range
        if not (0 < lo < hi):
            raise ValueError("headway_range must satisfy 0 < min < max")
        self.headway_range = (float(lo), float(hi))
        self.seed = int(self.seed)


# Committed default study parameters. Drivers differ mostly in level
# (intercept s.d. 0.14 on the log scale) with correlated levels across
# stimulus types, smaller slope offsets, and a slight curvature offset
# that partially cancels the slope at long headways. The mean response
# rises from ~0.5 s at minimal headway to ~0.7 s at 1.5 s and keeps
# rising through 6 s. Values are the canonical test fixture; the
# recovery tolerances in the acceptance suite were validated against
# exactly this configuration.
_VAR_INTERCEPT = 0.02
_VAR_SLOPE = 0.005
_VAR_CURV = 1.65e-4
_CORR_CROSS_INTERCEPT = 0.3   # same-driver levels move together across stimuli
_CORR_INT_SLOPE = 0.07
_CORR_SLOPE_CURV = -0.29      # fast risers flatten out sooner
_CORR_INT_CURV = 0.26
_MEAN_BRT_AT_REF = (0.705, 0.705, 0.71)   # seconds at a 1.5 s headway
_BETA_CURV = (-0.035, -0.038, -0.038)
_SLOPE_MARGIN = (0.013, 0.013, 0.021)     # keeps d(mean)/dt > 0 through 6 s


def default_config():
    """Committed default study: S=3 stimulus types, quadratic headway model,
    200 drivers with 10 observations per stimulus type."""
    spec = ModelSpec(num_stimuli=3, degree=2)
    sg = np.zeros((9, 9))
    sd_i, sd_s, sd_c = math.sqrt(_VAR_INTERCEPT), math.sqrt(_VAR_SLOPE), math.sqrt(_VAR_CURV)
    for s in range(3):
        b = 3 * s
        sg[b, b] = _VAR_INTERCEPT
        sg[b + 1, b + 1] = _VAR_SLOPE
        sg[b + 2, b + 2] = _VAR_CURV
        sg[b, b + 1] = sg[b + 1, b] = _CORR_INT_SLOPE * sd_i * sd_s
        sg[b + 1, b + 2] = sg[b + 2, b + 1] = _CORR_SLOPE_CURV * sd_s * sd_c
        sg[b, b + 2] = sg[b + 2, b] = _CORR_INT_CURV * sd_i * sd_c
    for s1 in range(3):
        for s2 in range(3):
            if s1 != s2:
                sg[3 * s1, 3 * s2] = _CORR_CROSS_INTERCEPT * _VAR_INTERCEPT
    sigma2 = 0.04
    beta = np.zeros(9)
    w15 = np.array([1.0, 1.5, 2.25])
    for s in range(3):
        b2 = _BETA_CURV[s]
        b1 = -12.0 * b2 + _SLOPE_MARGIN[s]  # positive derivative up to t = 6
        blk = sg[3 * s : 3 * s + 3, 3 * s : 3 * s + 3]
        var15 = float(w15 @ blk @ w15) + sigma2
        mu15 = math.log(_MEAN_BRT_AT_REF[s]) - 0.5 * var15
        beta[3 * s : 3 * s + 3] = (mu15 - 1.5 * b1 - 2.25 * b2, b1, b2)
    return SimConfig(
        spec=spec,
        stimuli=StimulusRegistry(DEFAULT_STIMULI),
        beta_true=beta,
        sigma2_true=sigma2,
        sigma_gamma_true=sg,
        num_drivers=200,
        obs_per_driver=(10, 10, 10),
        headway_range=(0.31, 8.1),
        seed=42,
    )


def _psd_sqrt(sg):
    """Lower-triangular square root; eigendecomposition when singular."""
    try:
        return np.linalg.cholesky(sg)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(sg)
        return eigvecs * np.sqrt(np.maximum(eigvals, 0.0))


def _driver_rng(seed, driver_index):
    ss = np.random.SeedSequence((seed % (1 << 64), driver_index))
    return np.random.Generator(np.random.Philox(ss))


def _standard_normals(rng, count):
    """Box-Muller transform of uniform pairs; deterministic given rng state."""
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1]: keeps the log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(2.0 * np.pi * u2)
    z[1::2] = radius * np.sin(2.0 * np.pi * u2)
    return z[:count]


def generate(config):
    """Draw a full synthetic training set plus its ground truth.

    Per driver d (independently reproducible from (seed, d)), in this
    order: the study design first (headways for every stimulus type,
    uniform over the configured range), then the driver's latent offsets
    ``gamma_d`` through the PSD square root of the population
    covariance, then the observation noise. Responses are
    ``brt = exp(x'(beta + gamma_d) + eps)`` with ``eps ~ N(0, sigma2)``.

    Returns:
        (training_set, truth) where truth maps driver_id to its drawn
        gamma vector.

    Raises:
        ValueError: if a drawn response violates the observation sanity
            bound (a sign the config's tails are unphysical).
    """
    spec = config.spec
    p = spec.p
    root = _psd_sqrt(config.sigma_gamma_true)
    sigma = math.sqrt(config.sigma2_true)
    lo, hi = config.headway_range
    width = len(str(max(config.num_drivers - 1, 1)))
    counts = config.obs_per_driver
    total = sum(counts)
    splits = np.cumsum(counts)[:-1]

    drivers = {}
    truth = {}
    powers = np.arange(spec.degree + 1)
    for d in range(config.num_drivers):
        rng = _driver_rng(config.seed, d)
        driver_id = f"driver_{d:0{width}d}"
        headways = np.split(lo + (hi - lo) * rng.random(total), splits)
        gamma = root @ _standard_normals(rng, p)
        eps = np.split(sigma * _standard_normals(rng, total), splits)
        coeffs = config.beta_true + gamma
        obs = []
        for s in range(spec.num_stimuli):
            n_s = counts[s]
            if n_s == 0:
                continue
            # Full-width rows keep the dot product bit-identical to the
            # design matrices built downstream.
            rows = np.zeros((n_s, p))
            start = s * (spec.degree + 1)
            rows[:, start : start + spec.degree + 1] = headways[s][:, None] ** powers
            mean_log = rows @ coeffs
            for t, y in zip(headways[s], mean_log + eps[s]):
                obs.append(Observation(driver_id, s, float(t), float(np.exp(y))))
        drivers[driver_id] = obs
        truth[driver_id] = gamma
    ts = TrainingSet(spec=spec, stimuli=config.stimuli, drivers=drivers)
    return ts, truth


def config_to_dict(config):
    return {
        "num_stimuli": config.spec.num_stimuli,
        "degree": config.spec.degree,
        "stimuli": list(config.stimuli.names),
        "beta_true": config.beta_true.tolist(),
        "sigma2_true": float(config.sigma2_true),
        "sigma_gamma_true": config.sigma_gamma_true.tolist(),
        "num_drivers": int(config.num_drivers),
        "obs_per_driver": list(config.obs_per_driver),
        "headway_range": list(config.headway_range),
        "seed": int(config.seed),
    }


def config_from_dict(doc):
    spec = ModelSpec(num_stimuli=int(doc["num_stimuli"]), degree=int(doc["degree"]))
    counts = doc["obs_per_driver"]
    if isinstance(counts, int):
        counts = [counts] * spec.num_stimuli
    return SimConfig(
        spec=spec,
        stimuli=StimulusRegistry(doc["stimuli"]),
        beta_true=np.array(doc["beta_true"], dtype=float),
        sigma2_true=float(doc["sigma2_true"]),
        sigma_gamma_true=np.array(doc["sigma_gamma_true"], dtype=float),
        num_drivers=int(doc["num_drivers"]),
        obs_per_driver=counts,
        headway_range=tuple(doc["headway_range"]),
        seed=int(doc["seed"]),
    )


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def write_ground_truth(truth, path):
    """Sidecar JSON mapping driver_id to its generating gamma vector."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: v.tolist() for k, v in truth.items()}, fh, indent=2)
        fh.write("\n")
