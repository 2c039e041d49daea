"""
非弹性（白噪声、动量扩散）输运：在 Fourier 表示 W̃(k, s) 中沿特征线精确求解

    W̃(k, s; t) = W̃₀(k, s + ħkt/m) · exp(−γ∫₀ᵗ [1 − C(s + ħkτ/m)] dτ)
                 · exp(−iF·(st + ħkt²/2m)/ħ)

k = 0 的切片就是空间平均相干函数 Γ(s; t)。
"""
import logging
import math
import warnings
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence
from unittest import TestCase

import numpy as np
from scipy import integrate

from common.constants import CHARACTERISTIC_TOL
from common.exceptions import ConvergenceError, ModelError
from field_correlation import CorrelationModel, LorentzianCorrelation, TabulatedCorrelation
from phase_space import gaussian_characteristic

CharacteristicFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class InelasticParams:
    """
    :param gamma: 白噪声散射率 γ（局域散射率 × 空间平均）
    :param correlation: 空间相关函数 C(s)，C(0) = 1
    :param force: 外力 F，二维时为长度 2 的向量
    :param dimension: 1 或 2
    """
    gamma: float
    correlation: CorrelationModel
    force: float | Sequence[float] = 0.0
    dimension: int = 1
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ModelError(f"散射率 γ 不能为负: {self.gamma}")
        if self.dimension not in (1, 2):
            raise ModelError(f"维数只支持 1 或 2: {self.dimension}")
        if not (self.hbar > 0 and self.mass > 0):
            raise ModelError("ħ 与质量必须为正")
        force = np.atleast_1d(np.asarray(self.force, dtype=float))
        if force.size == 1 and self.dimension > 1:
            force = np.repeat(force, self.dimension)
        if force.shape != (self.dimension,):
            raise ModelError(f"外力维数 {force.shape} 与空间维数 {self.dimension} 不符")
        object.__setattr__(self, "force", tuple(float(f) for f in force))
        if abs(float(self.correlation(0.0)) - 1.0) > 1e-12:
            raise ModelError("相关函数必须满足 C(0) = 1")

    @property
    def force_vector(self) -> np.ndarray:
        return np.asarray(self.force)


def _point_arrays(k, s, dimension: int) -> tuple[np.ndarray, np.ndarray, tuple]:
    k = np.asarray(k, dtype=float)
    s = np.asarray(s, dtype=float)
    if dimension == 1:
        k, s = np.broadcast_arrays(k, s)
        return k.reshape(-1, 1), s.reshape(-1, 1), k.shape
    if k.shape[-1:] != (dimension,) or s.shape[-1:] != (dimension,):
        raise ModelError(f"{dimension} 维输入的最后一维必须为 {dimension}")
    k, s = np.broadcast_arrays(k, s)
    return k.reshape(-1, dimension), s.reshape(-1, dimension), k.shape[:-1]


def _layout(points: np.ndarray, shape: tuple, dimension: int) -> np.ndarray:
    return points.reshape(shape) if dimension == 1 else points.reshape(shape + (dimension,))


def _crossings(s: float, v: float, t: float, nodes: Sequence[float]) -> list[float]:
    """一维特征线 |s + vτ| 穿过表格节点的时刻"""
    taus = []
    for node in nodes:
        for target in (node, -node):
            tau = (target - s) / v
            if 0.0 < tau < t:
                taus.append(tau)
    return sorted(set(taus))


def decay_exponent(s: np.ndarray, k: np.ndarray, params: InelasticParams, t: float) -> float:
    """沿特征线的衰减指数 γ∫₀ᵗ [1 − C(|s + ħkτ/m|)] dτ（单个 (k, s) 点）"""
    model = params.correlation
    v = params.hbar * np.asarray(k, dtype=float) / params.mass
    s = np.asarray(s, dtype=float)
    if params.gamma == 0.0 or t == 0.0:
        return 0.0
    if not np.any(v):
        return params.gamma * t * (1.0 - float(model(np.linalg.norm(s))))

    def integrand(tau: float) -> float:
        return 1.0 - float(model(np.linalg.norm(s + v * tau)))

    points = None
    if params.dimension == 1 and model.breakpoints:
        points = _crossings(float(s[0]), float(v[0]), t, model.breakpoints) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(integrand, 0.0, t, epsabs=CHARACTERISTIC_TOL,
                                      epsrel=CHARACTERISTIC_TOL,
                                      limit=max(200, 2 * len(points or ()) + 10), points=points)
        except integrate.IntegrationWarning as e:
            raise ConvergenceError(f"特征线积分未收敛: k={k}, s={s}, t={t}: {e}") from e
    return params.gamma * value


def evolve_fourier(initial: CharacteristicFunction, params: InelasticParams, t: float, k, s) -> np.ndarray:
    """
    返回 W̃(k, s; t)。
    :param initial: 初态的 Fourier 表示 W̃₀(k, s)，需支持数组输入
    :param k: 一维为任意形状数组；二维时最后一维为 2
    :param s: 与 k 可广播
    """
    if t < 0:
        raise ValueError(f"时间不能为负: {t}")
    dim = params.dimension
    kv, sv, shape = _point_arrays(k, s, dim)
    shifted = sv + params.hbar * t / params.mass * kv
    start = np.asarray(initial(_layout(kv, shape, dim), _layout(shifted, shape, dim)), dtype=complex).reshape(-1)
    decay = np.array([decay_exponent(sv[i], kv[i], params, t) for i in range(len(kv))])
    force = params.force_vector
    phase = -(sv @ force * t + params.hbar * (kv @ force) * t ** 2 / (2.0 * params.mass)) / params.hbar
    return (start * np.exp(-decay) * np.exp(1j * phase)).reshape(shape)


def coherence_decay(gamma0, s, params: InelasticParams, t: float) -> np.ndarray:
    """
    Γ(s; t) = Γ₀(s) exp(−γt[1 − C(s)]) exp(−iF·st/ħ)。
    外力只贡献相位，|Γ| 与 F 无关；二维时 s 的最后一维为 2。
    """
    if t < 0:
        raise ValueError(f"时间不能为负: {t}")
    s = np.asarray(s, dtype=float)
    if params.dimension == 1:
        distance, along = np.abs(s), s * params.force[0]
    else:
        distance, along = np.linalg.norm(s, axis=-1), s @ params.force_vector
    decay = params.gamma * t * (1.0 - params.correlation(distance))
    return np.asarray(gamma0) * np.exp(-decay - 1j * along * t / params.hbar)


def momentum_diffusion_coefficient(params: InelasticParams) -> float:
    """D_p = ħ²γa（每个空间方向），a 为 C(s) ≈ 1 − a s² 的原点曲率"""
    curvature = params.correlation.curvature
    if curvature is None:
        raise ModelError("相关函数没有给出原点曲率，无法计算动量扩散")
    return params.hbar ** 2 * params.gamma * curvature


def momentum_variance(params: InelasticParams, var_p0: float, t: float, printed: bool = False) -> float:
    """
    Var p(t) = Var p(0) + 2 D_p t，与 Γ 在 s = 0 处的曲率一致。
    printed=True 时返回未修正的 Var p(0) + D_p t（少一个因子 2）。
    """
    if t < 0:
        raise ValueError(f"时间不能为负: {t}")
    factor = 1.0 if printed else 2.0
    return var_p0 + factor * momentum_diffusion_coefficient(params) * t


def position_variance_longtime(params: InelasticParams, var_x0: float, var_p0: float, t: float) -> float:
    """Var x(t) = Var x(0) + Var p(0) t²/m² + (2D_p/3) t³/m²"""
    if t < 0:
        raise ValueError(f"时间不能为负: {t}")
    d_p = momentum_diffusion_coefficient(params)
    return var_x0 + var_p0 * t ** 2 / params.mass ** 2 + 2.0 * d_p * t ** 3 / (3.0 * params.mass ** 2)


def heating_rate(params: InelasticParams) -> float:
    """每个方向的动能增长率 d⟨p²/2m⟩/dt = D_p/m"""
    return momentum_diffusion_coefficient(params) / params.mass


def coherence_length(params: InelasticParams, t: float) -> float:
    """ξ = l_c（γt < 1），ξ = l_c/sqrt(γt)（γt ≥ 1）；γ = 0 时为无穷大"""
    if t < 0:
        raise ValueError(f"时间不能为负: {t}")
    if params.gamma == 0:
        return math.inf
    lc = params.correlation.length
    gt = params.gamma * t
    return lc if gt < 1.0 else lc / math.sqrt(gt)


def curvature_moments(initial: CharacteristicFunction, params: InelasticParams, t: float,
                      h_k: float | None = None, h_s: float | None = None) -> tuple[float, float]:
    """
    由 ln|W̃| 在原点的二阶差分得到 (Var x, Var p)，二维时取第一个方向。
    默认步长 h_s = 0.05 l_c，h_k 使特征线位移 ħh_k t/m = 0.01 l_c。
    """
    lc = params.correlation.length
    h_s = 0.05 * lc if h_s is None else h_s
    if h_k is None:
        h_k = 0.01 * lc * params.mass / (params.hbar * t) if t > 0 else 0.01 / lc
    unit = np.zeros(params.dimension)
    unit[0] = 1.0
    steps = np.array([-1.0, 0.0, 1.0])
    if params.dimension == 1:
        along_k, along_s, origin = steps * h_k, steps * h_s, np.zeros(3)
    else:
        along_k, along_s = np.outer(steps * h_k, unit), np.outer(steps * h_s, unit)
        origin = np.zeros((3, params.dimension))
    log_k = np.log(np.abs(evolve_fourier(initial, params, t, along_k, origin)))
    log_s = np.log(np.abs(evolve_fourier(initial, params, t, origin, along_s)))
    var_x = -(log_k[0] - 2.0 * log_k[1] + log_k[2]) / h_k ** 2
    var_p = -(log_s[0] - 2.0 * log_s[1] + log_s[2]) / h_s ** 2 * params.hbar ** 2
    logging.debug(f"t={t} 曲率矩 Var x={var_x:.6e} Var p={var_p:.6e}")
    return float(var_x), float(var_p)


class TestCoherenceDecay(TestCase):

    def setUp(self):
        self.params = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0))

    def test_decay_values(self):
        self.assertAlmostEqual(float(np.abs(coherence_decay(1.0, 1.0, self.params, 1.0))), math.exp(-0.5),
                               places=12)
        self.assertAlmostEqual(float(np.abs(coherence_decay(1.0, 1e9, self.params, 3.0))), math.exp(-3.0),
                               places=12)
        self.assertEqual(float(np.abs(coherence_decay(1.0, 0.0, self.params, 100.0))), 1.0)

    def test_force_only_adds_phase(self):
        s = np.linspace(-5, 5, 41)
        reference = np.abs(coherence_decay(1.0, s, self.params, 2.0))
        for force in (1.0, 10.0):
            pushed = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0), force=force)
            np.testing.assert_allclose(np.abs(coherence_decay(1.0, s, pushed, 2.0)), reference, rtol=1e-12)
        planar = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0), force=(3.0, -1.0), dimension=2)
        vectors = np.stack([s, np.zeros_like(s)], axis=-1)
        np.testing.assert_allclose(np.abs(coherence_decay(1.0, vectors, planar, 2.0)), reference, rtol=1e-12)

    def test_monotone_in_time(self):
        s = np.linspace(0, 4, 9)
        earlier = np.abs(coherence_decay(1.0, s, self.params, 1.0))
        later = np.abs(coherence_decay(1.0, s, self.params, 2.0))
        self.assertTrue(np.all(later <= earlier))

    def test_coherence_length(self):
        self.assertEqual(coherence_length(self.params, 0.5), 1.0)
        self.assertAlmostEqual(coherence_length(self.params, 4.0), 0.5)
        frozen = InelasticParams(gamma=0.0, correlation=LorentzianCorrelation(1.0))
        self.assertEqual(coherence_length(frozen, 10.0), math.inf)
        with self.assertRaises(ValueError):
            coherence_length(self.params, -1.0)


class TestCharacteristics(TestCase):

    def setUp(self):
        self.initial = partial(gaussian_characteristic, x0=0.3, p0=0.5, sigma_x=1.0, sigma_p=0.5)
        self.params = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0), force=0.2)

    def test_k_zero_slice_is_coherence(self):
        s = np.linspace(-3, 3, 13)
        full = evolve_fourier(self.initial, self.params, 2.0, 0.0, s)
        reduced = coherence_decay(self.initial(0.0, s), s, self.params, 2.0)
        np.testing.assert_allclose(full, reduced, atol=1e-10)

    def test_free_motion(self):
        k = np.array([0.3, -0.7, 1.1])
        s = np.array([0.5, 0.0, -2.0])
        t = 1.5
        expected = np.abs(self.initial(k, s + k * t))
        free = InelasticParams(gamma=0.0, correlation=LorentzianCorrelation(1.0))
        np.testing.assert_allclose(np.abs(evolve_fourier(self.initial, free, t, k, s)), expected, rtol=1e-12)
        flat = InelasticParams(gamma=2.0, correlation=TabulatedCorrelation([0.0, 1.0], [1.0, 1.0]))
        np.testing.assert_allclose(np.abs(evolve_fourier(self.initial, flat, t, k, s)), expected, rtol=1e-10)

    def test_tabulated_matches_lorentzian(self):
        grid = np.linspace(0, 40, 4001)
        table = TabulatedCorrelation(grid, LorentzianCorrelation(1.0)(grid), curvature=1.0)
        tabulated = InelasticParams(gamma=1.0, correlation=table, force=0.2)
        k = np.array([0.2, -0.4])
        s = np.array([0.7, 1.5])
        np.testing.assert_allclose(evolve_fourier(self.initial, tabulated, 3.0, k, s),
                                   evolve_fourier(self.initial, self.params, 3.0, k, s), rtol=1e-4)

    def test_momentum_diffusion(self):
        params = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0))
        early = curvature_moments(self.initial, params, 5.0)[1]
        late = curvature_moments(self.initial, params, 50.0)[1]
        self.assertLess(abs((late - early) / 45.0 / 2.0 - 1), 0.01)
        self.assertLess(abs(late / momentum_variance(params, 0.25, 50.0) - 1), 0.01)
        self.assertAlmostEqual(heating_rate(params), 1.0)

    def test_momentum_variance_values(self):
        params = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0))
        self.assertAlmostEqual(momentum_variance(params, 0.25, 2.0, printed=True), 2.25)
        self.assertAlmostEqual(momentum_variance(params, 0.25, 2.0), 4.25)
        still = InelasticParams(gamma=0.0, correlation=LorentzianCorrelation(1.0))
        self.assertEqual(momentum_variance(still, 0.25, 7.0), 0.25)

    def test_position_spreading(self):
        params = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0))
        var_x, _ = curvature_moments(self.initial, params, 10.0)
        self.assertLess(abs(var_x / position_variance_longtime(params, 1.0, 0.25, 10.0) - 1), 0.02)

    def test_two_dimensional_axis_matches_line(self):
        planar = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0), dimension=2)
        line = InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0))
        initial_2d = partial(gaussian_characteristic, x0=0.0, p0=0.5, sigma_x=1.0, sigma_p=0.5, dimension=2)
        initial_1d = partial(gaussian_characteristic, x0=0.0, p0=0.5, sigma_x=1.0, sigma_p=0.5)
        np.testing.assert_allclose(curvature_moments(initial_2d, planar, 4.0),
                                   curvature_moments(initial_1d, line, 4.0), rtol=1e-8)

    def test_requires_curvature(self):
        params = InelasticParams(gamma=1.0, correlation=TabulatedCorrelation([0.0, 1.0], [1.0, 0.0]))
        with self.assertRaises(ModelError):
            momentum_variance(params, 0.0, 1.0)
        with self.assertRaises(ModelError):
            InelasticParams(gamma=1.0, correlation=LorentzianCorrelation(1.0), force=(1.0, 2.0))
