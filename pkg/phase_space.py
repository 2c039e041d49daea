"""
一维相空间网格上的 Wigner 函数：网格定义、高斯初态、可观测量、
动量谱的空间平均相干函数 Γ(s) 及其 |p| 包络。

值数组形状为 (n_p, n_x)，第 0 轴为动量。x 方向周期，p 网格关于 0 对称。
"""
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence
from unittest import TestCase

import numpy as np

from common.constants import HBAR, ATOMIC_MASS, GAUSSIAN_TAIL, MIN_CELLS_PER_SIGMA
from common.exceptions import ConfigError, ModelError

UNITS_LABEL = "simulation"


@dataclass(frozen=True)
class SimulationUnits:
    """
    模拟单位（ħ = m = 1）与 SI 的换算：长度单位 L，
    时间单位 m L²/ħ，动量单位 ħ/L。
    """
    mass: float  # kg
    length: float  # m

    def __post_init__(self):
        if not (self.mass > 0 and self.length > 0):
            raise ConfigError("units", f"原子质量与长度单位必须为正: {self.mass}, {self.length}")

    @classmethod
    def for_isotope(cls, mass_number: float, length: float = 1e-6) -> "SimulationUnits":
        return cls(mass_number * ATOMIC_MASS, length)

    @property
    def time(self) -> float:
        return self.mass * self.length ** 2 / HBAR

    @property
    def momentum(self) -> float:
        return HBAR / self.length

    def rate_to_simulation(self, rate_si: float) -> float:
        return rate_si * self.time

    def rate_to_si(self, rate: float) -> float:
        return rate / self.time

    def to_dict(self) -> dict:
        return {"mass_kg": self.mass, "length_m": self.length, "time_s": self.time,
                "momentum_kg_m_s": self.momentum}


@dataclass(frozen=True)
class GridSpec:
    """x ∈ [x_min, x_max) 周期网格，p = jΔp，j = −J..J，n_p = 2J + 1"""
    x_min: float
    x_max: float
    n_x: int
    p_max: float
    n_p: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigError("grid.x_max", f"x_max 必须大于 x_min: [{self.x_min}, {self.x_max})")
        if self.n_x < 2:
            raise ConfigError("grid.n_x", f"x 网格点数至少为 2: {self.n_x}")
        if not self.p_max > 0:
            raise ConfigError("grid.p_max", f"p_max 必须为正: {self.p_max}")
        if self.n_p < 3 or self.n_p % 2 == 0:
            raise ConfigError("grid.n_p", f"p 网格点数必须为不小于 3 的奇数: {self.n_p}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def dp(self) -> float:
        return 2.0 * self.p_max / (self.n_p - 1)

    @property
    def half(self) -> int:
        return (self.n_p - 1) // 2

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @property
    def p(self) -> np.ndarray:
        return self.dp * np.arange(-self.half, self.half + 1)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_x": self.n_x, "p_max": self.p_max,
                "n_p": self.n_p, "dx": self.dx, "dp": self.dp}


@dataclass(eq=False)
class WignerGrid:
    """
    网格上的 Wigner 函数。absorbed 为累计从 p 边界流失的质量，
    mass + absorbed 在整个演化中守恒。
    """
    spec: GridSpec
    values: np.ndarray
    time: float = 0.0
    absorbed: float = 0.0
    hbar: float = 1.0
    particle_mass: float = 1.0
    units: str = field(default=UNITS_LABEL)

    def __post_init__(self):
        if self.values.shape != (self.spec.n_p, self.spec.n_x):
            raise ModelError(f"Wigner 数组形状 {self.values.shape} 与网格 ({self.spec.n_p}, {self.spec.n_x}) 不符")

    def evolved(self, values: np.ndarray, dt: float = 0.0, absorbed: float = 0.0) -> "WignerGrid":
        return replace(self, values=values, time=self.time + dt, absorbed=self.absorbed + absorbed)

    def total_mass(self) -> float:
        return float(np.sum(self.values) * self.spec.dx * self.spec.dp)

    def momentum_marginal(self) -> np.ndarray:
        """n(p) = ∫W dx"""
        return np.sum(self.values, axis=1) * self.spec.dx

    def position_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=0) * self.spec.dp

    def metadata(self) -> dict:
        return {"time": self.time, "units": self.units, "hbar": self.hbar, "mass": self.particle_mass,
                "absorbed": self.absorbed, "grid": self.spec.to_dict()}


def _check_gaussian(spec: GridSpec, x0: float, p0: float, sigma_x: float, sigma_p: float) -> None:
    slack = 1.0 - 1e-9
    if not sigma_x >= MIN_CELLS_PER_SIGMA * spec.dx * slack:
        raise ConfigError("initial.sigma_x", f"σ_x={sigma_x} 小于 {MIN_CELLS_PER_SIGMA} 个网格 (Δx={spec.dx})")
    if not sigma_p >= MIN_CELLS_PER_SIGMA * spec.dp * slack:
        raise ConfigError("initial.sigma_p", f"σ_p={sigma_p} 小于 {MIN_CELLS_PER_SIGMA} 个网格 (Δp={spec.dp})")
    edge_x = min(x0 - spec.x_min, spec.x_max - x0)
    edge_p = min(p0 + spec.p_max, spec.p_max - p0)
    if edge_x <= 0 or math.exp(-0.5 * (edge_x / sigma_x) ** 2) >= GAUSSIAN_TAIL:
        raise ConfigError("initial.x0", f"高斯在 x 边界处未衰减到 {GAUSSIAN_TAIL}，请扩大盒子")
    if edge_p <= 0 or math.exp(-0.5 * (edge_p / sigma_p) ** 2) >= GAUSSIAN_TAIL:
        raise ConfigError("initial.p0", f"高斯在 ±p_max 处未衰减到 {GAUSSIAN_TAIL}，请增大 p_max")


def init_gaussian(spec: GridSpec, x0: float, p0: float, sigma_x: float, sigma_p: float,
                  hbar: float = 1.0, particle_mass: float = 1.0) -> WignerGrid:
    """
    W(x, p) ∝ exp(−(x−x0)²/2σ_x² − (p−p0)²/2σ_p²)，按离散和归一化到 1。
    宽度必须覆盖至少两个网格，边缘处的值必须小于峰值的 1e-10。
    """
    _check_gaussian(spec, x0, p0, sigma_x, sigma_p)
    gx = np.exp(-0.5 * ((spec.x - x0) / sigma_x) ** 2)
    gp = np.exp(-0.5 * ((spec.p - p0) / sigma_p) ** 2)
    values = np.outer(gp, gx)
    values /= np.sum(values) * spec.dx * spec.dp
    return WignerGrid(spec, values, hbar=hbar, particle_mass=particle_mass)


def gaussian_characteristic(k, s, x0, p0, sigma_x: float, sigma_p: float, hbar: float = 1.0,
                            dimension: int = 1):
    """
    高斯初态的 Fourier 表示 W̃(k, s) = ∫∫W e^{−i(k·x + p·s/ħ)}。
    dimension > 1 时 k、s 的最后一维为空间分量。
    """
    k = np.asarray(k, dtype=float)
    s = np.asarray(s, dtype=float)
    if dimension == 1:
        dot_kx, dot_sp = k * x0, s * p0
        kk, ss = k * k, s * s
    else:
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (dimension,))
        p0 = np.broadcast_to(np.asarray(p0, dtype=float), (dimension,))
        dot_kx, dot_sp = k @ x0, s @ p0
        kk, ss = np.sum(k * k, axis=-1), np.sum(s * s, axis=-1)
    return np.exp(-1j * dot_kx - 1j * dot_sp / hbar - 0.5 * sigma_x ** 2 * kk
                  - 0.5 * sigma_p ** 2 * ss / hbar ** 2)


class ObservableRow(NamedTuple):
    time: float
    mean_x: float
    var_x: float
    mean_p: float
    var_p: float
    mass: float
    absorbed: float
    min_w: float


OBSERVABLE_HEADER = list(ObservableRow._fields)


def _moments(x: np.ndarray, weights: np.ndarray, total: float) -> tuple[float, float]:
    mean = float(np.dot(weights, x) / total)
    var = float(np.dot(weights, (x - mean) ** 2) / total)
    return mean, var


def observables(w: WignerGrid) -> ObservableRow:
    """⟨x⟩、Var x、⟨p⟩、Var p（按当前质量归一），以及总质量与最小值"""
    spec = w.spec
    n_p = w.momentum_marginal()
    n_x = w.position_marginal()
    mass = float(np.sum(n_p) * spec.dp)
    if not mass > 0:
        raise ModelError("Wigner 函数总质量为零，无法计算矩")
    mean_x, var_x = _moments(spec.x, n_x * spec.dx, mass)
    mean_p, var_p = _moments(spec.p, n_p * spec.dp, mass)
    return ObservableRow(w.time, mean_x, var_x, mean_p, var_p, mass, w.absorbed, float(np.min(w.values)))


@dataclass
class ObservableSeries:
    rows: list[ObservableRow] = field(default_factory=list)

    def append(self, row: ObservableRow) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("time")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class CoherenceFunction:
    separations: np.ndarray
    values: np.ndarray
    time: float = 0.0

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)

    def normalized(self) -> np.ndarray:
        """|Γ(s)|/Γ(0)"""
        center = np.argmin(np.abs(self.separations))
        return self.modulus / abs(self.values[center])


def coherence_grid(spec: GridSpec, samples: int | None = None, s_max: float | None = None,
                   hbar: float = 1.0) -> np.ndarray:
    """
    对称的 s 网格 s_k = kΔs，k = −K..K。
    默认 s_max = πħ/Δp（动量网格的 Nyquist 范围），K = n_p − 1。
    """
    limit = math.pi * hbar / spec.dp
    s_max = limit if s_max is None else s_max
    if not 0 < s_max <= limit * (1 + 1e-12):
        raise ConfigError("coherence.s_max", f"s_max 必须在 (0, πħ/Δp={limit}] 内: {s_max}")
    half = spec.n_p - 1 if samples is None else (samples - 1) // 2
    if half < 1:
        raise ConfigError("coherence.samples", f"s 采样数至少为 3: {samples}")
    return (s_max / half) * np.arange(-half, half + 1)


def _fourier_sum(p: np.ndarray, n: np.ndarray, s: np.ndarray, dp: float, hbar: float) -> np.ndarray:
    phase = np.outer(s, p) / hbar
    return (np.sum(np.cos(phase) * n, axis=1) - 1j * np.sum(np.sin(phase) * n, axis=1)) * dp


def coherence(w: WignerGrid, separations: Sequence[float] | None = None) -> CoherenceFunction:
    """Γ(s) = ∫ n(p) e^{−ips/ħ} dp，满足 Γ(−s) = Γ(s)*，|Γ(s)| ≤ Γ(0)"""
    s = coherence_grid(w.spec, hbar=w.hbar) if separations is None else np.asarray(separations, dtype=float)
    values = _fourier_sum(w.spec.p, w.momentum_marginal(), s, w.spec.dp, w.hbar)
    return CoherenceFunction(s, values, w.time)


def abs_momentum_marginal(w: WignerGrid) -> tuple[np.ndarray, np.ndarray]:
    """m(|p|)：把 ±p 的 n(p) 合并到 |p| ≥ 0"""
    n = w.momentum_marginal()
    half = w.spec.half
    folded = n[half:].copy()
    folded[1:] += n[:half][::-1]
    return w.spec.p[half:], folded


def coherence_envelope(w: WignerGrid, separations: Sequence[float]) -> np.ndarray:
    """|Σ m(|p|) e^{−i|p|s} Δp|，在无外力的弹性演化下不变"""
    p_abs, folded = abs_momentum_marginal(w)
    s = np.asarray(separations, dtype=float)
    return np.abs(_fourier_sum(p_abs, folded, s, w.spec.dp, w.hbar))


def envelope_width(separations: Sequence[float], envelope: Sequence[float]) -> float:
    """包络在 s ≥ 0 上下降到 1/e 的位置（线性插值）"""
    s = np.asarray(separations, dtype=float)
    env = np.asarray(envelope, dtype=float)
    mask = s >= 0
    s, env = s[mask], env[mask]
    order = np.argsort(s)
    s, env = s[order], env[order] / env[order][0]
    below = np.nonzero(env <= math.exp(-1.0))[0]
    if below.size == 0:
        raise ModelError("包络在采样范围内没有下降到 1/e，请增大 s 范围")
    k = below[0]
    return float(np.interp(math.exp(-1.0), [env[k], env[k - 1]], [s[k], s[k - 1]]))


class TestGrid(TestCase):

    def setUp(self):
        self.spec = GridSpec(-20.0, 20.0, 256, 2.0, 81)

    def test_grid_axes(self):
        self.assertAlmostEqual(self.spec.dx, 40.0 / 256)
        self.assertAlmostEqual(self.spec.dp, 0.05)
        self.assertEqual(self.spec.p[self.spec.half], 0.0)
        np.testing.assert_array_equal(self.spec.p, -self.spec.p[::-1])
        with self.assertRaises(ConfigError):
            GridSpec(-1.0, 1.0, 64, 1.0, 40)

    def test_gaussian_moments(self):
        w = init_gaussian(self.spec, 0.0, 0.0, 1.0, 0.25)
        row = observables(w)
        self.assertAlmostEqual(row.mass, 1.0, places=12)
        self.assertAlmostEqual(row.var_x, 1.0, delta=1e-3)
        self.assertAlmostEqual(row.var_p, 0.0625, delta=0.0625e-3)
        self.assertGreaterEqual(row.min_w, 0.0)

    def test_gaussian_guards(self):
        with self.assertRaises(ConfigError):
            init_gaussian(self.spec, 0.0, 0.0, 0.1, 0.25)
        with self.assertRaises(ConfigError):
            init_gaussian(self.spec, 17.0, 0.0, 1.0, 0.25)
        with self.assertRaises(ConfigError) as ctx:
            init_gaussian(self.spec, 0.0, 1.5, 1.0, 0.25)
        self.assertEqual(ctx.exception.key, "initial.p0")

    def test_units(self):
        rubidium = SimulationUnits.for_isotope(86.909, 1e-6)
        self.assertAlmostEqual(rubidium.time, 1.3683e-3, delta=1e-6)
        self.assertAlmostEqual(rubidium.rate_to_si(rubidium.rate_to_simulation(75.0)), 75.0)


class TestCoherence(TestCase):

    def setUp(self):
        self.spec = GridSpec(-20.0, 20.0, 128, 2.0, 81)
        self.w = init_gaussian(self.spec, 0.0, -0.5, 1.0, 0.2)

    def test_gaussian_coherence(self):
        gamma = coherence(self.w)
        s = gamma.separations
        np.testing.assert_allclose(gamma.normalized(), np.exp(-0.5 * 0.2 ** 2 * s ** 2), atol=1e-6)
        np.testing.assert_allclose(gamma.values, np.conj(gamma.values[::-1]), rtol=0, atol=1e-14)
        self.assertTrue(np.all(gamma.modulus <= abs(gamma.values[len(s) // 2]) + 1e-15))
        np.testing.assert_allclose(gamma.values, gaussian_characteristic(0.0, s, 0.0, -0.5, 1.0, 0.2), atol=1e-9)

    def test_envelope(self):
        w = init_gaussian(self.spec, 0.0, -1.0, 1.0, 0.1)
        s = np.linspace(-20, 20, 401)
        env = coherence_envelope(w, s)
        p_abs, folded = abs_momentum_marginal(w)
        self.assertAlmostEqual(float(np.sum(folded) * self.spec.dp), 1.0, places=12)
        self.assertTrue(np.all(p_abs >= 0))
        self.assertAlmostEqual(envelope_width(s, env), math.sqrt(2) / 0.1, delta=0.01)

    def test_s_range(self):
        with self.assertRaises(ConfigError):
            coherence_grid(self.spec, s_max=10 * math.pi / self.spec.dp)
        self.assertEqual(len(coherence_grid(self.spec, samples=11)), 11)
