"""Lumped RC model of a small insulated test box.

Three structural variants stand in for increasingly detailed building models:

* ``SingleLayer``: one homogeneous 12 cm wall, one capacitive wall node.
* ``MultiLayer``: 3 cm massive skins around 6 cm of insulation, two wall nodes.
* ``MultiLayerInfiltration``: as ``MultiLayer`` plus wind-driven air leakage
  through a crack around the window.

The air node has negligible capacity compared with the walls and is solved
algebraically at every sub-step; wall nodes are integrated with explicit
Euler on a sub-step small enough for stability.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import qmc

# geometry (m) and fixed properties
INNER_SIDE = 0.96
WALL_THICKNESS = 0.12
SKIN_THICKNESS = 0.03
CORE_THICKNESS = 0.06
GLAZING_AREA = 0.52 * 0.52
ENVELOPE_AREA = 6.0 * (INNER_SIDE + WALL_THICKNESS) ** 2 - GLAZING_AREA
GLAZING_U = 2.8                  # W/m2K
GLAZING_TRANSMITTANCE = 0.6
H_INSIDE = 3.0                   # W/m2K
H_OUTSIDE = 15.0                 # W/m2K
AIR_HEAT_CAPACITY = 1200.0       # J/m3K
DISCHARGE_COEFF = 0.15
WINDOW_AZIMUTH = 180.0           # degrees, direction the window faces
MAX_STEP_CHANGE = 50.0           # degC per output step


class Variant(str, Enum):
    SINGLE_LAYER = "SingleLayer"
    MULTI_LAYER = "MultiLayer"
    MULTI_LAYER_INFILTRATION = "MultiLayerInfiltration"


# name: (lower, upper, reference value, unit)
PARAMETERS = {
    "wall_k": (0.07, 0.13, 0.10, "W/mK"),
    "wall_c": (1680.0, 3120.0, 2400.0, "kJ/m3K"),
    "crack_area": (700.0, 1300.0, 790.0, "mm2"),
    "wall_ext_k": (0.7, 1.3, 1.05, "W/mK"),
    "wall_ext_c": (2240.0, 4160.0, 3361.0, "kJ/m3K"),
    "wall_ins_k": (0.035, 0.065, 0.048, "W/mK"),
    "wall_ins_c": (112.0, 208.0, 179.0, "kJ/m3K"),
    "rc_split": (0.53, 0.98, 0.79, "-"),
}

VARIANT_PARAMETERS = {
    Variant.SINGLE_LAYER: ("wall_k", "wall_c", "rc_split"),
    Variant.MULTI_LAYER: ("wall_ext_k", "wall_ext_c", "wall_ins_k", "wall_ins_c",
                          "rc_split"),
    Variant.MULTI_LAYER_INFILTRATION: ("crack_area", "wall_ext_k", "wall_ext_c",
                                       "wall_ins_k", "wall_ins_c", "rc_split"),
}

BOUNDARY_NAMES = ("Te", "Gv", "Ws", "Wd", "RHP")
BOUNDARY_UNITS = ("degC", "W/m2", "m/s", "deg", "W")


def parameter_names(variant) -> tuple[str, ...]:
    return VARIANT_PARAMETERS[Variant(variant)]


def parameter_bounds(variant):
    names = parameter_names(variant)
    lo = np.array([PARAMETERS[n][0] for n in names])
    hi = np.array([PARAMETERS[n][1] for n in names])
    return lo, hi


def reference_parameters(variant) -> dict:
    return {n: PARAMETERS[n][2] for n in parameter_names(variant)}


@dataclass(frozen=True)
class BoxVariantSpec:
    variant: Variant
    parameters: dict = field(default_factory=dict)
    step_minutes: int = 15

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        expected = set(VARIANT_PARAMETERS[variant])
        given = set(self.parameters)
        if given != expected:
            raise ValueError(f"{variant.value} takes parameters {sorted(expected)}, "
                             f"got {sorted(given)}")
        for name, value in self.parameters.items():
            lo, hi = PARAMETERS[name][:2]
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")
        if self.step_minutes <= 0:
            raise ValueError("step_minutes must be positive")

    @classmethod
    def reference(cls, variant, step_minutes=15, **overrides):
        params = reference_parameters(variant)
        params.update(overrides)
        return cls(Variant(variant), params, step_minutes)

    def with_parameters(self, **values) -> "BoxVariantSpec":
        params = dict(self.parameters)
        params.update(values)
        return BoxVariantSpec(self.variant, params, self.step_minutes)


@dataclass(frozen=True)
class BoundarySeries:
    external_temp: np.ndarray
    solar_vertical: np.ndarray
    wind_speed: np.ndarray
    wind_direction: np.ndarray
    heat_pulses: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.external_temp, self.solar_vertical, self.wind_speed,
                   self.wind_direction, self.heat_pulses)]
        n = arrays[0].shape
        if any(a.shape != n or a.ndim != 1 for a in arrays):
            raise ValueError("boundary series must be 1-D and of equal length")
        if np.any(arrays[4] < 0) or np.any(arrays[2] < 0):
            raise ValueError("heat pulses and wind speed must be nonnegative")
        for name, a in zip(("external_temp", "solar_vertical", "wind_speed",
                            "wind_direction", "heat_pulses"), arrays):
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.external_temp.size

    def as_matrix(self) -> np.ndarray:
        """N x 5 matrix in the column order of BOUNDARY_NAMES."""
        return np.column_stack([self.external_temp, self.solar_vertical,
                                self.wind_speed, self.wind_direction, self.heat_pulses])

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(*(M[:, i] for i in range(5)))

    @classmethod
    def constant(cls, n, temp, solar=0.0, wind=0.0, direction=0.0, pulses=0.0):
        full = lambda v: np.full(n, float(v))
        return cls(full(temp), full(solar), full(wind), full(direction), full(pulses))


@dataclass(frozen=True)
class _Network:
    cap: np.ndarray           # wall node capacitances, outer first (J/K)
    g_ext: float              # outer node to outside air
    g_link: float             # outer to inner node (two-node walls)
    g_air: float              # innermost node to inside air
    g_glazing: float
    crack_area: float         # m2
    rc_split: float


def _network(spec: BoxVariantSpec) -> _Network:
    p = spec.parameters
    A = ENVELOPE_AREA
    if spec.variant is Variant.SINGLE_LAYER:
        half = 0.5 * WALL_THICKNESS / p["wall_k"]
        cap = np.array([A * WALL_THICKNESS * p["wall_c"] * 1e3])
        g_ext = A / (1.0 / H_OUTSIDE + half)
        g_air = A / (1.0 / H_INSIDE + half)
        g_link = 0.0
        crack = 0.0
    else:
        skin_half = 0.5 * SKIN_THICKNESS / p["wall_ext_k"]
        core = CORE_THICKNESS / p["wall_ins_k"]
        node_cap = A * (SKIN_THICKNESS * p["wall_ext_c"]
                        + 0.5 * CORE_THICKNESS * p["wall_ins_c"]) * 1e3
        cap = np.array([node_cap, node_cap])
        g_ext = A / (1.0 / H_OUTSIDE + skin_half)
        g_link = A / (2.0 * skin_half + core)
        g_air = A / (1.0 / H_INSIDE + skin_half)
        crack = p.get("crack_area", 0.0) * 1e-6
    return _Network(cap, g_ext, g_link, g_air, GLAZING_U * GLAZING_AREA, crack,
                    p["rc_split"])


def infiltration_conductance(crack_area_m2, wind_speed, wind_direction):
    """Air-exchange conductance (W/K) of a leak driven by wind pressure.

    Flow scales with crack area and wind speed; the direction factor is a
    cosine weighting relative to the window azimuth, between 0 and 1.
    """
    facing = 0.5 * (1.0 + np.cos(np.deg2rad(np.asarray(wind_direction) - WINDOW_AZIMUTH)))
    return AIR_HEAT_CAPACITY * DISCHARGE_COEFF * crack_area_m2 * np.asarray(wind_speed) * facing


@dataclass(frozen=True)
class SimulationResult:
    air_temp: np.ndarray          # N, degC
    wall_temps: np.ndarray        # N x nodes
    pulse_energy: float           # J supplied over the run
    solar_energy: float           # J transmitted over the run
    loss_energy: float            # J lost to the outside over the run
    stored_energy: float          # J change of wall heat content


def simulate_detailed(spec: BoxVariantSpec, boundary: BoundarySeries,
                      initial_temp: float) -> SimulationResult:
    """Integrate the network and return temperatures plus an energy ledger.

    Boundary values are held constant over each output step; the reported
    air temperature is the one at the end of the step, and the first entry
    is the initial state.
    """
    n = len(boundary)
    if n < 2:
        raise ValueError("at least two output steps are required")
    net = _network(spec)
    dt = spec.step_minutes * 60.0
    nodes = net.cap.size
    Te, Gv = boundary.external_temp, boundary.solar_vertical
    Ginf = infiltration_conductance(net.crack_area, boundary.wind_speed,
                                    boundary.wind_direction)
    Qp = boundary.heat_pulses
    solar = GLAZING_TRANSMITTANCE * GLAZING_AREA * Gv

    # stability: largest node rate bound over the run
    g_out_max = net.g_glazing + float(np.max(Ginf))
    g_inner_eff = net.g_air * g_out_max / (net.g_air + g_out_max) if g_out_max > 0 else 0.0
    rates = []
    if nodes == 1:
        rates.append((net.g_ext + net.g_air) / net.cap[0])
    else:
        rates.append((net.g_ext + net.g_link) / net.cap[0])
        rates.append((net.g_link + net.g_air) / net.cap[1])
    n_sub = max(1, int(np.ceil(dt * max(rates) / 0.5)))
    h = dt / n_sub

    T = np.full(nodes, float(initial_temp))
    air = np.empty(n)
    walls = np.empty((n, nodes))
    e_pulse = e_solar = e_loss = 0.0
    e_start = float(net.cap @ T)

    def air_temperature(T_in, k):
        g_out = net.g_glazing + Ginf[k]
        return ((net.g_air * T_in + g_out * Te[k] + (1.0 - net.rc_split) * Qp[k])
                / (net.g_air + g_out))

    air[0] = air_temperature(T[-1], 0)
    walls[0] = T
    for k in range(1, n):
        T_prev_step = T.copy()
        for _ in range(n_sub):
            Ta = air_temperature(T[-1], k)
            q_rad = net.rc_split * Qp[k] + solar[k]
            flux = np.empty(nodes)
            if nodes == 1:
                q_ext = net.g_ext * (T[0] - Te[k])
                flux[0] = -q_ext + net.g_air * (Ta - T[0]) + q_rad
            else:
                q_ext = net.g_ext * (T[0] - Te[k])
                q_link = net.g_link * (T[0] - T[1])
                flux[0] = -q_ext - q_link
                flux[1] = q_link + net.g_air * (Ta - T[1]) + q_rad
            q_air_out = (net.g_glazing + Ginf[k]) * (Ta - Te[k])
            T = T + h * flux / net.cap
            e_pulse += h * Qp[k]
            e_solar += h * solar[k]
            e_loss += h * (q_ext + q_air_out)
        if np.any(np.abs(T - T_prev_step) > MAX_STEP_CHANGE) or not np.all(np.isfinite(T)):
            raise FloatingPointError("explicit Euler step is unstable: reduce step")
        walls[k] = T
        air[k] = air_temperature(T[-1], k)
    return SimulationResult(air, walls, e_pulse, e_solar, e_loss,
                            float(net.cap @ T) - e_start)


def simulate(spec: BoxVariantSpec, boundary: BoundarySeries, initial_temp: float) -> np.ndarray:
    """Internal air temperature (degC) at every output step."""
    return simulate_detailed(spec, boundary, initial_temp).air_temp


def steady_state_rise(spec: BoxVariantSpec, power: float, radiative=None) -> float:
    """Closed-form interior-air temperature rise for constant heating and no wind or sun."""
    net = _network(spec)
    r = net.rc_split if radiative is None else radiative
    if net.cap.size == 1:
        g_wall_node = net.g_ext
    else:
        g_wall_node = 1.0 / (1.0 / net.g_ext + 1.0 / net.g_link)
    g_win = net.g_glazing
    # inner node T_i, air T_a (rise above outside):
    #   g_wall_node*T_i = g_air*(T_a - T_i) + r*Q ;  g_air*(T_i - T_a) + (1-r)*Q = g_win*T_a
    A = np.array([[g_wall_node + net.g_air, -net.g_air],
                  [-net.g_air, net.g_air + g_win]])
    _, Ta = np.linalg.solve(A, [r * power, (1.0 - r) * power])
    return float(Ta)


def generate_rolbs(pulse_power, total_steps, seed=None, levels=6):
    """Randomly ordered logarithmic binary sequence of heat pulses.

    On and off durations are drawn without replacement from a set of
    logarithmically spaced lengths (1 step up to total_steps / 8); each block
    uses every length once for "on" and once for "off", in shuffled order,
    so the duty cycle stays close to one half.
    """
    if total_steps < 16:
        raise ValueError("ROLBS needs at least 16 steps")
    rng = np.random.default_rng(seed)
    longest = max(2, total_steps // 8)
    durations = np.unique(np.round(np.geomspace(1, longest, levels)).astype(int))
    out = np.empty(0)
    while out.size < total_steps:
        on = rng.permutation(durations)
        off = rng.permutation(durations)
        block = np.concatenate([np.concatenate([np.ones(a), np.zeros(b)])
                                for a, b in zip(on, off)])
        out = np.concatenate([out, block])
    return float(pulse_power) * out[:total_steps]


def synthetic_boundary(n_steps=384, step_minutes=15, seed=0, pulse_power=60.0):
    """Summer-like weather for a south-facing window plus a ROLBS heating signal."""
    rng = np.random.default_rng(seed)
    hours = np.arange(n_steps) * step_minutes / 60.0
    day = np.floor(hours / 24.0).astype(int)
    n_days = int(day.max()) + 1

    def ar1(sd, phi):
        e = rng.standard_normal(n_steps) * sd * np.sqrt(1.0 - phi ** 2)
        x = np.empty(n_steps)
        x[0] = e[0] / np.sqrt(1.0 - phi ** 2)
        for i in range(1, n_steps):
            x[i] = phi * x[i - 1] + e[i]
        return x

    daily_mean = 24.0 + rng.normal(0.0, 1.5, n_days)
    te = (daily_mean[day] + 5.0 * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
          + ar1(0.8, 0.95))
    clear = rng.uniform(0.4, 1.0, n_days)
    sun = np.clip(np.sin(np.pi * (hours % 24 - 6.0) / 12.0), 0.0, None)
    gv = 550.0 * clear[day] * sun * np.clip(1.0 + ar1(0.15, 0.9), 0.2, None)
    ws = np.exp(np.log(2.5) + 0.5 * np.sin(2 * np.pi * (hours - 14.0) / 24.0)
                + ar1(0.7, 0.97))
    wd = (150.0 + 110.0 * np.sin(2 * np.pi * (hours - 13.0) / 24.0)
          + 25.0 * ar1(1.0, 0.98)) % 360.0
    pulses = generate_rolbs(pulse_power, n_steps, seed=rng.integers(2 ** 32))
    return BoundarySeries(te, gv, ws, wd, pulses)


def make_synthetic_observation(truth_spec: BoxVariantSpec, boundary: BoundarySeries,
                               noise_variance_ratio=0.01, seed=None, initial_temp=None):
    """Noisy observation of the truth model; returns (y*, noise variance)."""
    if noise_variance_ratio < 0:
        raise ValueError("noise_variance_ratio must be nonnegative")
    t0 = boundary.external_temp[0] if initial_temp is None else initial_temp
    clean = simulate(truth_spec, boundary, t0)
    noise_var = float(noise_variance_ratio * np.var(clean))
    rng = np.random.default_rng(seed)
    if noise_var == 0.0:
        return clean.copy(), 0.0
    return clean + rng.normal(0.0, np.sqrt(noise_var), clean.size), noise_var


def sample_design(bounds, M, seed=None):
    """Latin-hypercube design in the unit cube, one stratum per run and column.

    ``bounds`` is (lower, upper) or just the number of parameters.
    """
    if M < 2:
        raise ValueError("at least two design points are required")
    P = bounds if isinstance(bounds, (int, np.integer)) else len(np.atleast_1d(bounds[0]))
    return qmc.LatinHypercube(d=int(P), seed=np.random.default_rng(seed)).random(M)


def run_ensemble(variant, design, boundary, step_minutes=15, initial_temp=None):
    """Simulate every design row (unit-cube coordinates); returns N x M."""
    names = parameter_names(variant)
    lo, hi = parameter_bounds(variant)
    settings = lo + np.asarray(design) * (hi - lo)
    t0 = boundary.external_temp[0] if initial_temp is None else initial_temp
    cols = []
    for row in settings:
        spec = BoxVariantSpec(Variant(variant), dict(zip(names, map(float, row))), step_minutes)
        cols.append(simulate(spec, boundary, t0))
    return np.column_stack(cols), settings
