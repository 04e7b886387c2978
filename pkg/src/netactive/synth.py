"""Digital-twin stand-in: a Gaussian-mixture scenario density model plus an
analytic throughput world that labels induced scenarios and generates
telemetry-like datasets.

Synthetic feature schema (F = 19)
---------------------------------
 0  pos_x          position x in meters
 1  pos_y          position y in meters
 2  speed          m/s, mode-dependent
 3  mode           0 = walking, 1 = driving
 4  compass_deg    facing direction, degrees in [0, 360), math convention
 5  trajectory_deg movement heading, degrees in [0, 360)
 6  dist_bs0       measured distance to base station 0 (meters, noisy)
 7  dist_bs1
 8  dist_bs2
 9  rss_bs0        signal-strength proxy -20*log10(1+d) (noisy)
10  rss_bs1
11  rss_bs2
12  serving_bs     index of the nearest base station
13  blockage_obs   blockage-zone indicator plus observation noise
14  center_dist    distance from the loop centroid
15  sin_compass
16  cos_compass
17  sin_traj
18  cos_traj

Positions are drawn along a closed 400 m x 250 m rectangular loop
(perimeter 1300 m) centered at the origin, with Gaussian jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import ORIGIN_INGESTED, Sample

VARIANCE_FLOOR = 1e-6

LOOP_WIDTH = 400.0
LOOP_HEIGHT = 250.0
LOOP_PERIMETER = 2.0 * (LOOP_WIDTH + LOOP_HEIGHT)
POSITION_JITTER = 8.0

MODE_WALKING = 0
MODE_DRIVING = 1

FEATURE_NAMES = [
    "pos_x", "pos_y", "speed", "mode", "compass_deg", "trajectory_deg",
    "dist_bs0", "dist_bs1", "dist_bs2", "rss_bs0", "rss_bs1", "rss_bs2",
    "serving_bs", "blockage_obs", "center_dist",
    "sin_compass", "cos_compass", "sin_traj", "cos_traj",
]
N_FEATURES = len(FEATURE_NAMES)
TARGET_NAME = "throughput"
MODE_VALUE_NAMES = {MODE_WALKING: "walking", MODE_DRIVING: "driving"}


# ---------------------------------------------------------------------------
# Gaussian mixture density model
# ---------------------------------------------------------------------------


@dataclass
class GaussianMixture:
    """Diagonal-covariance mixture; weights sum to 1, variances floored."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.variances.shape != self.means.shape:
            raise ValueError("component count mismatch between weights/means/variances")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]


def _log_component_probs(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Per-sample, per-component joint log density log(w_k * N(x; mu_k, v_k))."""
    diff = x[:, None, :] - gmm.means[None, :, :]
    quad = (diff * diff / gmm.variances[None, :, :]).sum(axis=-1)
    norm = (np.log(2.0 * np.pi * gmm.variances)).sum(axis=-1)
    with np.errstate(divide="ignore"):
        log_w = np.where(gmm.weights > 0.0, np.log(gmm.weights), -np.inf)
    return log_w[None, :] - 0.5 * (norm[None, :] + quad)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def gmm_log_likelihood(gmm: GaussianMixture, x: np.ndarray) -> float:
    return float(_logsumexp(_log_component_probs(gmm, np.asarray(x, dtype=float)), axis=1).sum())


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(k - 1):
        d2 = np.min(
            ((x[:, None, :] - np.stack(centers)[None, :, :]) ** 2).sum(axis=-1), axis=1
        )
        total = d2.sum()
        probs = d2 / total if total > 0.0 else np.full(x.shape[0], 1.0 / x.shape[0])
        centers.append(x[rng.choice(x.shape[0], p=probs)])
    return np.stack(centers)


def _init_gmm(x: np.ndarray, k: int, rng: np.random.Generator) -> GaussianMixture:
    """Seeded k-means++ centers, hard assignment, per-cluster moments."""
    n, f = x.shape
    centers = _kmeanspp_centers(x, k, rng)
    assign = np.argmin(((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1), axis=1)
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    weights = np.zeros(k)
    means = np.zeros((k, f))
    variances = np.tile(global_var, (k, 1))
    for c in range(k):
        members = x[assign == c]
        weights[c] = len(members) / n
        if len(members) >= 1:
            means[c] = members.mean(axis=0)
        else:
            means[c] = centers[c]
        if len(members) >= 2:
            variances[c] = np.maximum(members.var(axis=0), VARIANCE_FLOOR)
    return GaussianMixture(weights=weights, means=means, variances=variances)


def fit_gmm(features: np.ndarray, k: int, em_iters: int, rng_seed: int) -> GaussianMixture:
    """Fit a diagonal-covariance mixture with EM.

    Initialization is k-means++ style seeding with hard moment estimates;
    EM then runs for em_iters iterations or until the log-likelihood
    improves by less than 1e-6.  The per-iteration log-likelihood trace is
    attached to the returned mixture.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.shape[0] < k:
        raise ValueError(f"need at least {k} points to fit {k} components, got {x.shape[0]}")
    if em_iters < 0:
        raise ValueError("em_iters must be >= 0")
    rng = np.random.default_rng(rng_seed)
    gmm = _init_gmm(x, k, rng)
    trace: list[float] = []
    n = x.shape[0]
    for _ in range(em_iters):
        log_joint = _log_component_probs(gmm, x)
        log_norm = _logsumexp(log_joint, axis=1)
        ll = float(log_norm.sum())
        if trace and ll - trace[-1] < 1e-6:
            trace.append(ll)
            break
        trace.append(ll)
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0)
        safe_nk = np.where(nk > 0.0, nk, 1.0)
        new_means = (resp.T @ x) / safe_nk[:, None]
        diff = x[:, None, :] - new_means[None, :, :]
        new_vars = np.einsum("nk,nkf->kf", resp, diff * diff) / safe_nk[:, None]
        keep = nk <= 0.0  # frozen degenerate components
        gmm = GaussianMixture(
            weights=nk / n,
            means=np.where(keep[:, None], gmm.means, new_means),
            variances=np.maximum(
                np.where(keep[:, None], gmm.variances, new_vars), VARIANCE_FLOOR
            ),
        )
    gmm.log_likelihood_trace = trace
    return gmm


def sample_gmm(gmm: GaussianMixture, n: int, rng_seed: int) -> np.ndarray:
    """Draw n points: component by weight, then a diagonal Gaussian draw."""
    if n < 0:
        raise ValueError("n must be >= 0")
    f = gmm.means.shape[1]
    if n == 0:
        return np.zeros((0, f))
    rng = np.random.default_rng(rng_seed)
    comps = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    z = rng.standard_normal((n, f))
    return gmm.means[comps] + np.sqrt(gmm.variances[comps]) * z


# ---------------------------------------------------------------------------
# Analytic twin world
# ---------------------------------------------------------------------------


@dataclass
class BlockageZone:
    """Axis-aligned rectangle that attenuates throughput inside it."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    attenuation: float

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def _default_base_stations() -> np.ndarray:
    return np.array([[-150.0, 90.0], [160.0, -60.0], [-40.0, -120.0]])


def default_blockage_zones() -> list[BlockageZone]:
    return [
        BlockageZone(-200.0, 105.0, -60.0, 145.0, attenuation=0.5),
        BlockageZone(175.0, -125.0, 225.0, 10.0, attenuation=0.6),
    ]


@dataclass
class TwinWorld:
    """Deterministic ground-truth throughput surface over the loop area."""

    base_stations: np.ndarray = field(default_factory=_default_base_stations)
    blockage_zones: list[BlockageZone] = field(default_factory=default_blockage_zones)
    mode_factors: dict[int, float] = field(
        default_factory=lambda: {MODE_WALKING: 1.0, MODE_DRIVING: 0.8}
    )
    peak_rate: float = 2000.0
    range_scale: float = 300.0
    noise_std: float = 50.0
    # beam response: misalignment between the facing direction and the
    # serving-station bearing swings the rate by up to orientation_gain,
    # scaled per mode (a vehicle-mounted directional antenna suffers from
    # misalignment, a handheld does not). Driving traffic is the rare,
    # hard-to-predict minority of the loop population.
    orientation_gain: float = 1.0
    orientation_lobes: int = 1
    mode_orientation_weights: dict[int, float] = field(
        default_factory=lambda: {MODE_WALKING: 0.0, MODE_DRIVING: 1.0}
    )
    walking_fraction: float = 0.8

    def __post_init__(self):
        self.base_stations = np.asarray(self.base_stations, dtype=float)
        if self.base_stations.ndim != 2 or self.base_stations.shape[1] != 2:
            raise ValueError("base_stations must be an (n, 2) array")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")


def twin_label(world: TwinWorld, features: np.ndarray, noise_seed: int) -> float:
    """Ground-truth throughput for a feature vector (Mbps, clamped at 0).

    Reads position, mode and compass from the schema; the rate is
    peak * exp(-d/range) scaled by mode, blockage and orientation factors,
    plus Gaussian noise when noise_std > 0.  Deterministic per
    (features, noise_seed)."""
    f = np.asarray(features, dtype=float)
    if f.shape[0] < 5:
        raise ValueError("feature vector too short for the synthetic schema")
    x, y = f[0], f[1]
    mode_code = f[3]
    if mode_code != int(mode_code) or int(mode_code) not in world.mode_factors:
        raise ValueError(f"unknown mode code {mode_code!r}")
    mode_factor = world.mode_factors[int(mode_code)]

    deltas = world.base_stations - np.array([x, y])
    dists = np.sqrt((deltas * deltas).sum(axis=1))
    nearest = int(np.argmin(dists))
    d = float(dists[nearest])

    if d < 1e-9:
        orientation = 1.0
    else:
        heading = np.array([math.cos(math.radians(f[4])), math.sin(math.radians(f[4]))])
        to_bs = deltas[nearest] / d
        cos_angle = float(np.clip(heading @ to_bs, -1.0, 1.0))
        angle = math.acos(cos_angle)
        lobe = (1.0 - math.cos(world.orientation_lobes * angle)) / 2.0
        weight = world.mode_orientation_weights.get(int(mode_code), 1.0)
        orientation = 1.0 - world.orientation_gain * weight * lobe

    attenuation = 1.0
    for zone in world.blockage_zones:
        if zone.contains(float(x), float(y)):
            attenuation *= zone.attenuation

    rate = world.peak_rate * math.exp(-d / world.range_scale)
    rate *= mode_factor * attenuation * orientation
    if world.noise_std > 0.0:
        rate += float(np.random.default_rng(noise_seed).normal(0.0, world.noise_std))
    return max(rate, 0.0)


def _loop_point(t: float) -> tuple[float, float, float]:
    """Map perimeter position t in [0, LOOP_PERIMETER) to (x, y, tangent_deg)."""
    half_w, half_h = LOOP_WIDTH / 2.0, LOOP_HEIGHT / 2.0
    if t < LOOP_WIDTH:
        return -half_w + t, -half_h, 0.0
    t -= LOOP_WIDTH
    if t < LOOP_HEIGHT:
        return half_w, -half_h + t, 90.0
    t -= LOOP_HEIGHT
    if t < LOOP_WIDTH:
        return half_w - t, half_h, 180.0
    t -= LOOP_WIDTH
    return -half_w, half_h - t, 270.0


def in_blockage(world: TwinWorld, x: float, y: float) -> float:
    return 1.0 if any(z.contains(x, y) for z in world.blockage_zones) else 0.0


def make_feature_vector(
    world: TwinWorld,
    pos: tuple[float, float],
    speed: float,
    mode: int,
    compass_deg: float,
    trajectory_deg: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Assemble the 19-feature vector: core coordinates plus noisy derived views."""
    x, y = pos
    deltas = world.base_stations - np.array([x, y])
    true_d = np.sqrt((deltas * deltas).sum(axis=1))
    dist_obs = np.maximum(true_d + rng.normal(0.0, 5.0, size=3), 0.0)
    rss = -20.0 * np.log10(1.0 + true_d) + rng.normal(0.0, 2.0, size=3)
    features = np.empty(N_FEATURES)
    features[0] = x
    features[1] = y
    features[2] = speed
    features[3] = float(mode)
    features[4] = compass_deg
    features[5] = trajectory_deg
    features[6:9] = dist_obs
    features[9:12] = rss
    features[12] = float(np.argmin(true_d))
    features[13] = in_blockage(world, x, y) + rng.normal(0.0, 0.1)
    features[14] = math.hypot(x, y)
    features[15] = math.sin(math.radians(compass_deg))
    features[16] = math.cos(math.radians(compass_deg))
    features[17] = math.sin(math.radians(trajectory_deg))
    features[18] = math.cos(math.radians(trajectory_deg))
    return features


def generate_synthetic_dataset(world: TwinWorld, n: int, rng_seed: int) -> list[Sample]:
    """Draw n labeled samples along the loop, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    samples = []
    for i in range(n):
        t = rng.uniform(0.0, LOOP_PERIMETER)
        bx, by, tangent = _loop_point(t)
        jitter = rng.normal(0.0, POSITION_JITTER, size=2)
        pos = (bx + jitter[0], by + jitter[1])
        mode = MODE_WALKING if rng.random() < world.walking_fraction else MODE_DRIVING
        if mode == MODE_WALKING:
            speed = abs(rng.normal(1.4, 0.3))
        else:
            speed = abs(rng.normal(8.0, 2.0))
        trajectory = (tangent + rng.normal(0.0, 10.0)) % 360.0
        compass = (trajectory + rng.normal(0.0, 25.0)) % 360.0
        features = make_feature_vector(world, pos, speed, mode, compass, trajectory, rng)
        noise_seed = int(rng.integers(0, 2**31))
        label = twin_label(world, features, noise_seed)
        samples.append(Sample(id=i, features=features, label=label, origin=ORIGIN_INGESTED))
    return samples


def project_to_schema(world: TwinWorld, features: np.ndarray) -> np.ndarray:
    """Snap a proposed feature vector onto the valid synthetic schema.

    Density-model proposals have continuous mode values and may carry
    negative speeds; the twin world only guarantees a ground truth for
    valid coordinates."""
    f = np.asarray(features, dtype=float).copy()
    codes = np.array(sorted(world.mode_factors))
    f[3] = codes[np.argmin(np.abs(codes - f[3]))]
    f[2] = max(f[2], 0.0)
    return f


def realize_scenario(
    world: TwinWorld, proposal: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Induce a proposed scenario and observe a full consistent record.

    Only the core coordinates (position, speed, mode, compass, trajectory)
    of a density-model proposal are inducible; the derived measurement
    features are re-observed from the world so the record lies on the
    telemetry manifold instead of carrying the proposal's inconsistent
    derived values."""
    core = project_to_schema(world, proposal)
    return make_feature_vector(
        world,
        pos=(float(core[0]), float(core[1])),
        speed=float(core[2]),
        mode=int(core[3]),
        compass_deg=float(core[4] % 360.0),
        trajectory_deg=float(core[5] % 360.0),
        rng=rng,
    )


def write_synthetic_csv(samples: list[Sample], path: str) -> None:
    """Emit the ingestion-compatible CSV: header row, mode as a category name."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(FEATURE_NAMES + [TARGET_NAME]) + "\n")
        for s in samples:
            cells = []
            for idx, value in enumerate(s.features):
                if FEATURE_NAMES[idx] == "mode":
                    cells.append(MODE_VALUE_NAMES[int(value)])
                else:
                    cells.append(repr(float(value)))
            cells.append(repr(float(s.label)))
            fh.write(",".join(cells) + "\n")


MODE_MAPPING = {name: float(code) for code, name in MODE_VALUE_NAMES.items()}
