"""
磁噪声的横向空间相关：半空间上方的归一化相关函数、洛伦兹模型、
表格模型，以及弹性散射核 γ(p) = γ₀ exp(−|p| l_c)。
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union
from unittest import TestCase

import numpy as np
from scipy import integrate

from common.constants import QUAD_TOL
from common.exceptions import ModelError
from near_field_noise import HalfSpace, two_point_tensor


def halfspace_correlation_analytic(z: float, s):
    """半空间的闭式结果 C(s) = tr Y(s)/tr Y(0) = 1/sqrt(1 + s²/(4z²))"""
    s = np.asarray(s, dtype=float)
    return 1.0 / np.sqrt(1.0 + (s / (2.0 * z)) ** 2)


def fitted_correlation_length(z: float) -> float:
    """与半空间相关函数半高宽一致的洛伦兹相关长度 l_c = 2√3 z"""
    if not z > 0:
        raise ModelError(f"距离 z 必须为正: {z}")
    return 2.0 * math.sqrt(3.0) * z


def halfspace_correlation_profile(z: float, separations: Sequence[float], tol: float = QUAD_TOL,
                                  workers: int = 1) -> np.ndarray:
    """数值求积得到的 C(s)，s = 0 的归一化只计算一次"""
    geometry = HalfSpace(z)
    reference = two_point_tensor(geometry, 0.0, tol=tol, workers=workers).trace
    values = []
    for s in separations:
        trace = reference if s == 0 else two_point_tensor(geometry, float(s), tol=tol, workers=workers).trace
        values.append(trace / reference)
    return np.asarray(values)


def halfspace_correlation_numeric(z: float, s: float, tol: float = QUAD_TOL, workers: int = 1) -> float:
    """
    C(s) = tr Y(x1, x2)/tr Y(x1, x1)，x1、x2 等高、横向间距 s
    :param z: 观察点高度
    :param s: 横向间距
    """
    return float(halfspace_correlation_profile(z, [s], tol=tol, workers=workers)[0])


def lorentzian_correlation(s, lc: float):
    return LorentzianCorrelation(lc)(s)


@dataclass(frozen=True)
class LorentzianCorrelation:
    """C(s) = 1/(1 + s²/l_c²)"""
    lc: float

    def __post_init__(self):
        if not self.lc > 0:
            raise ModelError(f"相关长度必须为正: {self.lc}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return 1.0 / (1.0 + (s / self.lc) ** 2)

    @property
    def curvature(self) -> float:
        """C(s) ≈ 1 − a s²，a = 1/l_c²"""
        return 1.0 / self.lc ** 2

    @property
    def length(self) -> float:
        return self.lc

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class TabulatedCorrelation:
    """
    分段线性的表格相关函数，自变量取 |s|，超出表格范围保持最后一个值。
    curvature 给出原点处 C ≈ 1 − a s² 的 a，动量扩散需要它。
    """
    separations: tuple[float, ...]
    values: tuple[float, ...]
    curvature: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "separations", tuple(float(x) for x in self.separations))
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))
        xs, vs = self.separations, self.values
        if len(xs) < 2 or len(xs) != len(vs):
            raise ModelError("相关表格至少需要两个点，且间距与取值长度一致")
        if xs[0] != 0.0 or vs[0] != 1.0:
            raise ModelError("相关表格必须从 C(0) = 1 开始")
        if np.any(np.diff(xs) <= 0):
            raise ModelError("相关表格的间距必须严格递增")
        if min(vs) < 0.0 or max(vs) > 1.0:
            raise ModelError("相关表格取值必须在 [0, 1] 内")
        if self.curvature is not None and not self.curvature > 0:
            raise ModelError(f"原点曲率必须为正: {self.curvature}")

    def __call__(self, s):
        return np.interp(np.abs(np.asarray(s, dtype=float)), self.separations, self.values)

    @property
    def length(self) -> float:
        """有曲率时取 1/sqrt(a)，否则取半高处的间距"""
        if self.curvature is not None:
            return 1.0 / math.sqrt(self.curvature)
        xs, vs = np.asarray(self.separations), np.asarray(self.values)
        below = np.nonzero(vs <= 0.5)[0]
        if below.size == 0:
            return float(xs[-1])
        k = below[0]
        return float(np.interp(0.5, [vs[k], vs[k - 1]], [xs[k], xs[k - 1]]))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.separations[1:]


CorrelationModel = Union[LorentzianCorrelation, TabulatedCorrelation]


def decoherence_rate(s, gamma: float, model: CorrelationModel):
    """间距 s 上的退相干速率 γ(1 − C(s))"""
    return gamma * (1.0 - model(s))


def momentum_kernel(q, model: CorrelationModel, hbar: float = 1.0):
    """
    单次散射的动量转移分布 S(q) = (1/πħ)∫₀^∞ C(s) cos(qs/ħ) ds，∫S dq = 1。
    洛伦兹模型为 (l_c/2ħ) exp(−|q| l_c/ħ)；表格模型逐段积分，
    表格末端之外的常数部分（q = 0 处的 δ 峰）不计入。
    """
    if isinstance(model, LorentzianCorrelation):
        q = np.asarray(q, dtype=float)
        return model.lc / (2.0 * hbar) * np.exp(-np.abs(q) * model.lc / hbar)
    if model.values[-1] > 0:
        logging.warning(f"相关表格末端 C={model.values[-1]} 不为零，动量核缺少 q=0 处的 δ 峰")
    xs = model.separations

    def one(qv: float) -> float:
        kappa = abs(qv) / hbar
        total = 0.0
        for lo, hi in zip(xs[:-1], xs[1:]):
            if kappa == 0.0:
                part, _ = integrate.quad(model, lo, hi)
            else:
                part, _ = integrate.quad(model, lo, hi, weight="cos", wvar=kappa)
            total += part
        return total / (math.pi * hbar)

    values = np.vectorize(one, otypes=[float])(q)
    return float(values) if values.ndim == 0 else values


@dataclass(frozen=True)
class ScatteringKernel:
    """弹性散射速率 γ(p) = γ₀ exp(−|p| l_c)（模拟单位）"""
    gamma0: float
    lc: float
    white_noise: bool = False

    def __post_init__(self):
        if self.gamma0 < 0:
            raise ModelError(f"散射率 γ₀ 不能为负: {self.gamma0}")
        if self.lc < 0:
            raise ModelError(f"相关长度不能为负: {self.lc}")

    def rate(self, p):
        if self.white_noise:
            return self.gamma0 * np.ones_like(np.asarray(p, dtype=float))
        return self.gamma0 * np.exp(-np.abs(np.asarray(p, dtype=float)) * self.lc)


def elastic_rate(p, kernel: ScatteringKernel):
    return kernel.rate(p)


class TestHalfSpaceCorrelation(TestCase):

    def test_numeric_matches_closed_form(self):
        z = 1.0
        separations = [0.0, 0.5, 1.0, 3.0, 10.0]
        numeric = halfspace_correlation_profile(z, separations, tol=1e-5)
        np.testing.assert_allclose(numeric, halfspace_correlation_analytic(z, separations), atol=1e-4)
        self.assertEqual(numeric[0], 1.0)
        self.assertTrue(np.all(np.abs(numeric) <= 1.0 + 1e-9))

    def test_half_width_and_tail(self):
        z = 2.0
        half = fitted_correlation_length(z)
        self.assertAlmostEqual(float(halfspace_correlation_analytic(z, half)), 0.5, places=12)
        self.assertAlmostEqual(halfspace_correlation_numeric(z, half, tol=1e-5), 0.5, delta=1e-4)
        self.assertAlmostEqual(float(halfspace_correlation_analytic(z, 10 * z)), 0.196, places=3)

    def test_lorentzian_fit_near_origin(self):
        z = 1.0
        s = np.linspace(0, 2 * z, 21)
        fit = lorentzian_correlation(s, fitted_correlation_length(z))
        self.assertLess(np.max(np.abs(fit - halfspace_correlation_analytic(z, s))), 0.2)

    def test_scale_invariance(self):
        self.assertAlmostEqual(halfspace_correlation_numeric(1.0, 2.0, tol=1e-6),
                               halfspace_correlation_numeric(3.0, 6.0, tol=1e-6), places=5)


class TestModels(TestCase):

    def test_lorentzian(self):
        model = LorentzianCorrelation(2.0)
        self.assertEqual(float(model(0.0)), 1.0)
        self.assertAlmostEqual(float(model(2.0)), 0.5)
        self.assertAlmostEqual(model.curvature, 0.25)
        with self.assertRaises(ModelError):
            LorentzianCorrelation(0.0)

    def test_tabulated(self):
        model = TabulatedCorrelation([0, 1, 2], [1.0, 0.4, 0.0])
        self.assertAlmostEqual(float(model(-0.5)), 0.7)
        self.assertEqual(float(model(5.0)), 0.0)
        self.assertAlmostEqual(model.length, 5.0 / 6.0)
        self.assertEqual(model.breakpoints, (1.0, 2.0))
        with self.assertRaises(ModelError):
            TabulatedCorrelation([0, 1], [0.9, 0.1])
        with self.assertRaises(ModelError):
            TabulatedCorrelation([0, 1, 1], [1.0, 0.5, 0.1])

    def test_momentum_kernel_normalized(self):
        model = LorentzianCorrelation(0.5)
        total, _ = integrate.quad(lambda q: momentum_kernel(q, model), -np.inf, np.inf)
        self.assertAlmostEqual(total, 1.0, places=8)

    def test_tabulated_kernel_triangle(self):
        length = 2.0
        model = TabulatedCorrelation([0.0, length], [1.0, 0.0])
        for q in (0.0, 0.7, 3.0):
            expected = length / (2 * math.pi) if q == 0 else (1 - math.cos(q * length)) / (math.pi * q ** 2 * length)
            self.assertAlmostEqual(momentum_kernel(q, model), expected, places=9)

    def test_scattering_kernel(self):
        kernel = ScatteringKernel(gamma0=1.0, lc=0.1)
        np.testing.assert_allclose(elastic_rate([-1.0, 0.0, 1.0], kernel), [math.exp(-0.1), 1.0, math.exp(-0.1)])
        flat = ScatteringKernel(gamma0=2.0, lc=0.1, white_noise=True)
        np.testing.assert_allclose(flat.rate([-3.0, 3.0]), [2.0, 2.0])
        with self.assertRaises(ModelError):
            ScatteringKernel(gamma0=-1.0, lc=0.1)

    def test_decoherence_rate(self):
        model = LorentzianCorrelation(1.0)
        self.assertAlmostEqual(float(decoherence_rate(1.0, 2.0, model)), 1.0)
        self.assertEqual(float(decoherence_rate(0.0, 2.0, model)), 0.0)
