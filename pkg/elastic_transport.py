"""
弹性散射（动量大小守恒、只翻转方向）的一维相空间演化。

算子分裂：
- 平流步：精确的恒力轨道 x → x + pΔt + FΔt²/2，p → p + FΔt，
  在网格上用线性插值取前像（先沿 p，再逐行沿 x，x 方向周期）。
- 散射步：每对 (+p, −p) 上的 2×2 精确指数，双随机矩阵，p = 0 行不变。

Strang（默认）为二阶，Lie 为一阶。质量、正性、无外力时的 |p| 边缘分布
都在机器精度内守恒。
"""
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence
from unittest import TestCase

import numpy as np
from tqdm import tqdm

from common.constants import SCATTER_ACCURACY, DEFAULT_DT_RATE, P_SHIFT_FRACTION, WRAP_TOLERANCE, OVERFLOW_TOLERANCE
from common.decorators import timer
from common.exceptions import ConfigError, GuardViolation, ModelError
from field_correlation import ScatteringKernel
from phase_space import (
    GridSpec, WignerGrid, ObservableSeries, CoherenceFunction,
    init_gaussian, observables, coherence, coherence_envelope, envelope_width, abs_momentum_marginal,
)
from utils.utils import linear_fit

SPLITTINGS = ("strang", "lie")
OVERFLOW_POLICIES = ("absorb", "error")
ROW_BLOCK = 16  # 平流按固定行块分发给线程


@dataclass(frozen=True)
class EvolutionConfig:
    """
    :param dt: 时间步长，要求 γ₀Δt ≤ 0.5
    :param t_end: 结束时间，必须是 dt 的整数倍
    :param kernel: 弹性散射核
    :param force: 恒定外力 F
    :param splitting: strang | lie
    :param record_every: 每隔多少步记录一次可观测量
    :param p_overflow: 动量越过 ±p_max 时 absorb（计入 absorbed）或 error
    :param workers: 平流线程数，不影响结果
    :param progress: 是否在 stderr 显示进度条
    """
    dt: float
    t_end: float
    kernel: ScatteringKernel
    force: float = 0.0
    splitting: str = "strang"
    record_every: int = 1
    p_overflow: str = "absorb"
    workers: int = 1
    progress: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("run.dt", f"时间步长必须为正: {self.dt}")
        if self.t_end < 0:
            raise ConfigError("run.t_end", f"结束时间不能为负: {self.t_end}")
        steps = round(self.t_end / self.dt)
        if abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ConfigError("run.t_end", f"t_end={self.t_end} 不是 dt={self.dt} 的整数倍")
        if self.kernel.gamma0 * self.dt > SCATTER_ACCURACY:
            raise ConfigError("run.dt", f"γ₀Δt={self.kernel.gamma0 * self.dt:.3g} 超过 {SCATTER_ACCURACY}，请减小步长")
        if self.splitting not in SPLITTINGS:
            raise ConfigError("run.splitting", f"未知分裂方式 {self.splitting}，可选 {SPLITTINGS}")
        if self.p_overflow not in OVERFLOW_POLICIES:
            raise ConfigError("run.p_overflow", f"未知越界策略 {self.p_overflow}，可选 {OVERFLOW_POLICIES}")
        if self.record_every < 1:
            raise ConfigError("run.record_every", f"记录间隔至少为 1: {self.record_every}")
        if self.workers < 1:
            raise ConfigError("workers", f"线程数至少为 1: {self.workers}")

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)


def default_step(kernel: ScatteringKernel) -> float:
    """Δt = 0.05/γ₀；没有散射时取 0.05"""
    return DEFAULT_DT_RATE / kernel.gamma0 if kernel.gamma0 > 0 else DEFAULT_DT_RATE


class EvolutionResult(NamedTuple):
    final: WignerGrid
    series: ObservableSeries
    snapshots: dict[float, WignerGrid]


def _complementary(frac):
    """返回和严格为 1 的权重 (1 − f, f')"""
    near = 1.0 - frac
    return near, 1.0 - near


def _advect_rows(block: np.ndarray, shift_cells: np.ndarray) -> np.ndarray:
    """new[i] = (1−α) W[i−n] + α W[i−n−1]，n = ⌊g⌋，α = g − n，周期边界"""
    n_x = block.shape[1]
    whole = np.floor(shift_cells)
    near, far = _complementary(shift_cells - whole)
    cols = np.arange(n_x)
    source = (cols[None, :] - whole.astype(np.int64)[:, None]) % n_x
    return (near[:, None] * np.take_along_axis(block, source, axis=1)
            + far[:, None] * np.take_along_axis(block, (source - 1) % n_x, axis=1))


def _shift_momentum(values: np.ndarray, shift_rows: float) -> np.ndarray:
    """new[j] = 原分布在 p_j − FΔt 处的线性插值，落在网格外的部分记为零"""
    whole = math.floor(shift_rows)
    near, far = _complementary(shift_rows - whole)
    n = values.shape[0]
    out = np.zeros_like(values)
    for offset, weight in ((whole, near), (whole + 1, far)):
        if weight == 0.0 or abs(offset) >= n:
            continue
        if offset >= 0:
            out[offset:] += weight * values[:n - offset]
        else:
            out[:n + offset] += weight * values[-offset:]
    return out


def _snap(cells: np.ndarray) -> np.ndarray:
    nearest = np.rint(cells)
    return np.where(np.abs(cells - nearest) < 1e-9, nearest, cells)


def ballistic_step(w: WignerGrid, dt: float, force: float = 0.0, p_overflow: str = "absorb",
                   workers: int = 1, step: int | None = None) -> WignerGrid:
    """
    精确恒力轨道的一步平流：W'(x, p) = W(x − pΔt + FΔt²/2, p − FΔt)。
    越过 ±p_max 的质量在 absorb 策略下累计到 absorbed。
    """
    spec = w.spec
    if abs(force * dt) > P_SHIFT_FRACTION * spec.p_max:
        raise GuardViolation(f"单步动量平移 |FΔt|={abs(force * dt):.3g} 超过 p_max/10", step)
    values = w.values
    absorbed = 0.0
    if force != 0.0:
        shifted = _shift_momentum(values, force * dt / spec.dp)
        before = float(np.sum(values))
        lost = before - float(np.sum(shifted))
        if p_overflow == "error" and lost > OVERFLOW_TOLERANCE * before:
            raise GuardViolation(f"动量越过 ±p_max，损失质量比例 {lost / before:.2e}", step)
        absorbed = max(lost, 0.0) * spec.dx * spec.dp
        values = shifted

    cells = _snap((spec.p * dt - 0.5 * force * dt * dt) / spec.dx)
    out = np.empty_like(values)
    blocks = [slice(i, i + ROW_BLOCK) for i in range(0, spec.n_p, ROW_BLOCK)]

    def work(rows: slice) -> None:
        out[rows] = _advect_rows(values[rows], cells[rows])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, blocks))
    else:
        for rows in blocks:
            work(rows)
    return w.evolved(out, dt, absorbed)


def scatter_step(w: WignerGrid, dt: float, kernel: ScatteringKernel) -> WignerGrid:
    """
    (+p, −p) 对上的精确解：
    W₊' = a W₊ + b W₋，W₋' = b W₊ + a W₋，b = (1 − e^{−2γ(p)Δt})/2，a = 1 − b
    """
    half = w.spec.half
    rates = kernel.rate(w.spec.p[half + 1:])
    a, b = _complementary(-0.5 * np.expm1(-2.0 * rates * dt))
    up = w.values[half + 1:]
    down = w.values[:half][::-1]
    values = w.values.copy()
    values[half + 1:] = a[:, None] * up + b[:, None] * down
    values[:half] = (b[:, None] * up + a[:, None] * down)[::-1]
    return w.evolved(values, dt)


def split_step(w: WignerGrid, dt: float, config: EvolutionConfig, step: int | None = None) -> WignerGrid:
    """Lie：平流后散射；Strang：半步散射、平流、半步散射"""
    if config.splitting == "lie":
        moved = ballistic_step(w, dt, config.force, config.p_overflow, config.workers, step)
        result = scatter_step(moved, dt, config.kernel)
    else:
        half = scatter_step(w, 0.5 * dt, config.kernel)
        moved = ballistic_step(half, dt, config.force, config.p_overflow, config.workers, step)
        result = scatter_step(moved, 0.5 * dt, config.kernel)
    return replace(result, time=w.time + dt)


def _edge_cells(spec: GridSpec) -> int:
    return max(2, spec.n_x // 100)


def _check_state(w: WignerGrid, step: int) -> None:
    edge = _edge_cells(w.spec)
    total = float(np.sum(w.values))
    strip = float(np.sum(w.values[:, :edge]) + np.sum(w.values[:, -edge:]))
    if strip > WRAP_TOLERANCE * total:
        raise GuardViolation(f"云团触及 x 周期边界（边缘质量比例 {strip / total:.2e}），请扩大盒子", step)
    lowest = float(np.min(w.values))
    if lowest < -1e-14 * float(np.max(w.values)):
        raise GuardViolation(f"Wigner 函数出现负值 {lowest:.3e}", step)


def cloud_extent(x0: float, p0: float, sigma_x: float, sigma_p: float, kernel: ScatteringKernel,
                 force: float, t_end: float, mass: float = 1.0, width: float = 5.0) -> tuple[float, float]:
    """
    估计云团在 [0, t_end] 内可能到达的 x 范围（偏保守）。
    有外力时弹性散射只翻转 p 的符号，p²/2m − F x 沿每条轨道守恒；
    无外力时取未散射弹道部分与扩散核心两者中较远的一个。
    """
    x_lo, x_hi = x0 - width * sigma_x, x0 + width * sigma_x
    p_fast = abs(p0) + width * sigma_p
    if force != 0.0:
        back = p_fast ** 2 / (2.0 * mass * abs(force))
        ahead = (p_fast + abs(force) * t_end) ** 2 / (2.0 * mass * abs(force))
        return (x_lo - back, x_hi + ahead) if force > 0 else (x_lo - ahead, x_hi + back)
    slowest = float(kernel.rate(p_fast))
    if not slowest > 0:
        reach = p_fast * t_end / mass
    else:
        # 未散射部分衰减到 WRAP_TOLERANCE 以下之前的弹道距离
        ballistic = p_fast / mass * min(t_end, math.log(1.0 / WRAP_TOLERANCE) / slowest)
        p_typical = abs(p0) + 3.0 * sigma_p
        rate = float(kernel.rate(p_typical))
        spread = width * math.sqrt(p_typical ** 2 * t_end / (mass ** 2 * rate))
        reach = max(ballistic, p_typical / (2.0 * mass * rate) + spread)
    return x_lo - reach, x_hi + reach


def fits_box(spec: GridSpec, extent: tuple[float, float]) -> bool:
    """extent 是否落在去掉边缘检查带后的盒子内"""
    margin = _edge_cells(spec) * spec.dx
    return spec.x_min + margin < extent[0] and extent[1] < spec.x_max - margin


def _capture_steps(config: EvolutionConfig, times: Sequence[float]) -> dict[int, float]:
    steps = {}
    for t in times:
        step = round(t / config.dt)
        if abs(step * config.dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= step <= config.n_steps:
            raise ConfigError("run.snapshot_times", f"快照时间 {t} 必须是 dt 的整数倍且不超过 t_end")
        steps[step] = float(t)
    return steps


@timer(unit="s")
def run_evolution(w0: WignerGrid, config: EvolutionConfig, snapshot_times: Sequence[float] = ()) -> EvolutionResult:
    """
    演化到 t_end，按 record_every 记录可观测量，并在给定时刻保存相空间快照。
    每一步都检查 x 边界与正性，触发时抛出带步号的 GuardViolation。
    """
    capture = _capture_steps(config, snapshot_times)
    series = ObservableSeries()
    snapshots = {}
    _check_state(w0, 0)
    series.append(observables(w0))
    if 0 in capture:
        snapshots[capture[0]] = w0

    logging.info(f"开始演化: {config.n_steps} 步, Δt={config.dt}, F={config.force}, "
                 f"网格 {w0.spec.n_p}×{w0.spec.n_x}, 分裂={config.splitting}")
    w = w0
    steps = tqdm(range(1, config.n_steps + 1), desc="演化", unit="步", file=sys.stderr,
                 disable=not config.progress)
    for step in steps:
        w = replace(split_step(w, config.dt, config, step), time=w0.time + step * config.dt)
        _check_state(w, step)
        if step % config.record_every == 0 or step == config.n_steps:
            series.append(observables(w))
        if step in capture:
            snapshots[capture[step]] = w
    final = series.rows[-1]
    logging.info(f"演化结束: t={w.time:g}, ⟨x⟩={final.mean_x:.6g}, Var x={final.var_x:.6g}, "
                 f"质量={final.mass:.12g}, 吸收={final.absorbed:.3g}")
    return EvolutionResult(w, series, snapshots)


def evolve(w0: WignerGrid, config: EvolutionConfig) -> tuple[WignerGrid, ObservableSeries]:
    result = run_evolution(w0, config)
    return result.final, result.series


def phase_space_snapshots(w0: WignerGrid, config: EvolutionConfig, times: Sequence[float]) -> dict[float, WignerGrid]:
    return run_evolution(w0, config, times).snapshots


def elastic_coherence_series(w0: WignerGrid, config: EvolutionConfig, times: Sequence[float],
                             separations: Sequence[float] | None = None) -> list[CoherenceFunction]:
    """在给定时刻计算 Γ(s)，无外力时 |p| 包络不变、振荡周期为 πħ/p₀"""
    snapshots = phase_space_snapshots(w0, config, times)
    return [coherence(snapshots[float(t)], separations) for t in times]


def _order(coarse: float, fine: float) -> float:
    # 差值为零（例如整格平移的纯弹道）时阶数无定义
    return math.log2(coarse / fine) if coarse > 0 and fine > 0 else math.nan


def convergence_report(w0: WignerGrid, config: EvolutionConfig, halvings: int = 2,
                       observable: str = "mean_x") -> dict:
    """
    固定 t_end，步长依次减半，估计时间离散的收敛阶 log2(|v₀ − v₁|/|v₁ − v₂|)。
    """
    if halvings < 2:
        raise ValueError("至少需要两次减半才能估计收敛阶")
    dts, values = [], []
    for level in range(halvings + 1):
        dt = config.dt / 2 ** level
        refined = replace(config, dt=dt, record_every=round(config.t_end / dt), progress=False)
        _, series = evolve(w0, refined)
        dts.append(dt)
        values.append(float(getattr(series.rows[-1], observable)))
    orders = [_order(abs(values[i] - values[i + 1]), abs(values[i + 1] - values[i + 2]))
              for i in range(len(values) - 2)]
    logging.info(f"{config.splitting} 分裂收敛阶: {orders}")
    return {"splitting": config.splitting, "observable": observable, "dts": dts, "values": values,
            "orders": orders, "order": orders[-1]}


# ===== 解析长时极限（单一 |p| 类的电报过程） =====

@dataclass(frozen=True)
class AsymptoticPrediction:
    p: float
    rate: float
    displacement: float  # ⟨x⟩(∞) − x₀ = p/(2mγ)
    diffusion_coefficient: float  # D = p²/(2m²γ)
    variance_slope: float  # dVar x/dt = 2D

    def to_dict(self) -> dict:
        return {"p": self.p, "rate": self.rate, "displacement": self.displacement,
                "diffusion_coefficient": self.diffusion_coefficient, "variance_slope": self.variance_slope}


def laplace_asymptotics(p: float, kernel: ScatteringKernel, mass: float = 1.0) -> AsymptoticPrediction:
    rate = float(kernel.rate(p))
    if not rate > 0:
        raise ModelError("散射率为零时不存在扩散极限")
    d = p ** 2 / (2.0 * mass ** 2 * rate)
    return AsymptoticPrediction(p, rate, p / (2.0 * mass * rate), d, 2.0 * d)


def laplace_roots(k: float, p: float, rate: float, mass: float = 1.0) -> tuple[complex, complex]:
    """ζ = −γ ± sqrt(γ² − k²v²)，返回 (慢根, 快根)"""
    v = p / mass
    disc = complex(rate ** 2 - (k * v) ** 2) ** 0.5
    return -rate + disc, -rate - disc


def slow_root_estimate(k: float, p: float, rate: float, mass: float = 1.0) -> float:
    """小 k 时慢根 ≈ −k²v²/(2γ)，即扩散系数 D = v²/(2γ)"""
    return -(k * p / mass) ** 2 / (2.0 * rate)


def laplace_solution(k: float, zeta: complex, p: float, rate: float, w0_plus: complex, w0_minus: complex,
                     mass: float = 1.0) -> tuple[complex, complex]:
    """(ζ + γ + ikv)W₊ − γW₋ = W₀₊，(ζ + γ − ikv)W₋ − γW₊ = W₀₋ 的解"""
    ikv = 1j * k * p / mass
    det = (zeta + rate) ** 2 + (k * p / mass) ** 2 - rate ** 2
    plus = ((zeta + rate - ikv) * w0_plus + rate * w0_minus) / det
    minus = ((zeta + rate + ikv) * w0_minus + rate * w0_plus) / det
    return plus, minus


def laplace_inverse(k: float, t: float, p: float, rate: float, w0_plus: complex, w0_minus: complex,
                    mass: float = 1.0) -> tuple[complex, complex]:
    """对两个极点取留数得到时域 (W₊(k, t), W₋(k, t))"""
    slow, fast = laplace_roots(k, p, rate, mass)
    if abs(slow - fast) < 1e-12 * max(rate, 1e-300):
        raise ModelError(f"k={k} 处两根重合，留数公式不可用")
    ikv = 1j * k * p / mass

    def residue(numerator) -> complex:
        return (numerator(slow) * np.exp(slow * t) - numerator(fast) * np.exp(fast * t)) / (slow - fast)

    plus = residue(lambda z: (z + rate - ikv) * w0_plus + rate * w0_minus)
    minus = residue(lambda z: (z + rate + ikv) * w0_minus + rate * w0_plus)
    return plus, minus


def laplace_moments(t: float, p: float, rate: float, x0: float = 0.0, sigma_x: float = 1.0,
                    mass: float = 1.0, h: float = 1e-4) -> tuple[float, float]:
    """从 +p 出发的高斯云 (⟨x⟩, Var x)，由 ln W̃(k) 在 k = 0 的差分得到"""
    def log_total(k: float) -> complex:
        start = np.exp(-1j * k * x0 - 0.5 * (sigma_x * k) ** 2)
        plus, minus = laplace_inverse(k, t, p, rate, start, 0.0, mass)
        return np.log(plus + minus)

    forward, center, backward = log_total(h), log_total(0.0), log_total(-h)
    mean = (1j * (forward - backward) / (2.0 * h)).real
    var = -(forward - 2.0 * center + backward).real / h ** 2
    return float(mean), float(var)


class TestSteps(TestCase):

    def test_scatter_pair(self):
        spec = GridSpec(-4.0, 4.0, 16, 1.0, 3)
        values = np.zeros((3, 16))
        values[2, 5] = 1.0
        w = WignerGrid(spec, values)
        kernel = ScatteringKernel(gamma0=1.0, lc=0.0)
        out = scatter_step(w, 0.5, kernel).values
        self.assertAlmostEqual(out[2, 5], math.exp(-0.5) * math.cosh(0.5), places=12)
        self.assertAlmostEqual(out[0, 5], math.exp(-0.5) * math.sinh(0.5), places=12)
        self.assertAlmostEqual(out[2, 5], 0.68394, places=5)

    def test_zero_row_untouched(self):
        spec = GridSpec(-4.0, 4.0, 16, 2.0, 5)
        values = np.random.default_rng(7).random((5, 16))
        out = scatter_step(WignerGrid(spec, values), 0.3, ScatteringKernel(1.0, 0.1)).values
        np.testing.assert_array_equal(out[2], values[2])
        np.testing.assert_allclose(out.sum(axis=None), values.sum(), rtol=1e-14)

    def test_ballistic_integer_shift(self):
        spec = GridSpec(-8.0, 8.0, 32, 2.0, 5)
        values = np.random.default_rng(3).random((5, 32))
        out = ballistic_step(WignerGrid(spec, values), 0.5).values
        for j, p in enumerate(spec.p):
            np.testing.assert_allclose(out[j], np.roll(values[j], int(p)), rtol=0, atol=1e-15)

    def test_ballistic_force_law(self):
        spec = GridSpec(-20.0, 20.0, 512, 3.0, 121)
        w = init_gaussian(spec, -1.0, 0.5, 1.0, 0.2)
        force, dt = 0.1, 0.05
        for step in range(100):
            w = ballistic_step(w, dt, force, workers=2)
        row = observables(w)
        t = 100 * dt
        self.assertAlmostEqual(row.mean_x, -1.0 + 0.5 * t + 0.5 * force * t * t, delta=5e-3 * 3.75)
        self.assertAlmostEqual(row.mean_p, 0.5 + force * t, places=9)
        self.assertAlmostEqual(w.time, t)

    def test_momentum_shift_guard(self):
        spec = GridSpec(-8.0, 8.0, 32, 1.0, 21)
        w = WignerGrid(spec, np.ones((21, 32)))
        with self.assertRaises(GuardViolation):
            ballistic_step(w, 0.5, force=1.0, step=4)

    def test_worker_count_is_bit_stable(self):
        spec = GridSpec(-10.0, 10.0, 200, 2.0, 81)
        w = init_gaussian(spec, 0.0, 0.3, 1.0, 0.2)
        one = ballistic_step(w, 0.07, 0.2, workers=1).values
        many = ballistic_step(w, 0.07, 0.2, workers=4).values
        self.assertTrue(np.array_equal(one, many))


class TestEvolution(TestCase):

    @staticmethod
    def small_grid() -> WignerGrid:
        return init_gaussian(GridSpec(-16.0, 16.0, 128, 1.2, 49), 0.0, -0.5, 1.0, 0.1)

    def test_conservation_over_many_steps(self):
        w0 = self.small_grid()
        config = EvolutionConfig(dt=0.001, t_end=10.0, kernel=ScatteringKernel(1.0, 0.1), record_every=100)
        final, series = evolve(w0, config)
        self.assertEqual(config.n_steps, 10_000)
        mass = series.column("mass")
        self.assertLess(np.max(np.abs(mass / mass[0] - 1)), 1e-12)
        self.assertTrue(np.all(series.column("min_w") >= 0.0))
        _, before = abs_momentum_marginal(w0)
        _, after = abs_momentum_marginal(final)
        self.assertLess(np.max(np.abs(after - before)), 1e-12 * np.max(before))
        second = series.column("var_p") + series.column("mean_p") ** 2
        self.assertLess(np.max(np.abs(second / second[0] - 1)), 1e-12)

    def test_config_guards(self):
        kernel = ScatteringKernel(1.0, 0.1)
        with self.assertRaises(ConfigError) as ctx:
            EvolutionConfig(dt=0.6, t_end=6.0, kernel=kernel)
        self.assertEqual(ctx.exception.key, "run.dt")
        with self.assertRaises(ConfigError):
            EvolutionConfig(dt=0.3, t_end=1.0, kernel=kernel)
        with self.assertRaises(ConfigError):
            EvolutionConfig(dt=0.1, t_end=1.0, kernel=kernel, splitting="yoshida")

    def test_wrap_guard_reports_step(self):
        w0 = init_gaussian(GridSpec(-8.0, 8.0, 64, 3.0, 61), 0.0, 1.0, 1.0, 0.2)
        config = EvolutionConfig(dt=0.1, t_end=10.0, kernel=ScatteringKernel(0.0, 0.1))
        with self.assertRaises(GuardViolation) as ctx:
            evolve(w0, config)
        self.assertIsNotNone(ctx.exception.step)
        self.assertGreater(ctx.exception.step, 0)

    def test_wrap_guard_between_records(self):
        # 两次记录之间云团已漂移出盒子
        w0 = init_gaussian(GridSpec(-12.8, 12.8, 128, 4.0, 81), 0.0, 2.0, 1.0, 0.2)
        config = EvolutionConfig(dt=0.1, t_end=50.0, kernel=ScatteringKernel(0.0, 0.1), record_every=500)
        with self.assertRaises(GuardViolation) as ctx:
            evolve(w0, config)
        self.assertLess(ctx.exception.step, 100)

    def test_elastic_coherence_series(self):
        w0 = self.small_grid()
        config = EvolutionConfig(dt=0.05, t_end=4.0, kernel=ScatteringKernel(1.0, 0.1))
        s = np.linspace(-10 * math.pi, 10 * math.pi, 2001)
        initial, late = elastic_coherence_series(w0, config, [0.0, 4.0], s)
        self.assertEqual((initial.time, late.time), (0.0, 4.0))
        envelope = coherence_envelope(w0, s)
        peak = envelope.max()
        # 初态全部在 p < 0，|Γ| 就是 |p| 包络
        np.testing.assert_allclose(initial.modulus, envelope, atol=1e-5 * peak)
        self.assertAlmostEqual(envelope_width(s, envelope), math.sqrt(2) / 0.1, delta=0.05)
        # ±p 对称化之后 Γ 为实数驻波，受同一包络约束
        self.assertLess(np.max(np.abs(late.values.imag)), 2e-3 * peak)
        self.assertTrue(np.all(late.modulus <= envelope + 2e-3 * peak))
        first_node = int(np.argmin(np.abs(s - math.pi)))
        self.assertLess(late.normalized()[first_node], 0.02)

    def test_cloud_extent(self):
        kernel = ScatteringKernel(1.0, 0.1)
        lo, hi = cloud_extent(0.0, 0.0, 1.0, 0.1, kernel, force=0.2, t_end=10.0)
        self.assertAlmostEqual(lo, -5.0 - 0.25 / 0.4)
        self.assertAlmostEqual(hi, 5.0 + 2.5 ** 2 / 0.4)
        lo, hi = cloud_extent(0.0, 0.0, 1.0, 0.1, kernel, force=-0.2, t_end=10.0)
        self.assertAlmostEqual(hi, 5.0 + 0.25 / 0.4)
        free = cloud_extent(0.0, -1.0, 1.0, 0.1, ScatteringKernel(0.0, 0.1), force=0.0, t_end=10.0)
        self.assertAlmostEqual(free[1], 5.0 + 15.0)
        self.assertFalse(fits_box(GridSpec(-16.0, 16.0, 128, 2.0, 41), free))
        self.assertTrue(fits_box(GridSpec(-25.6, 25.6, 256, 2.0, 41), free))

    def test_overflow_policies(self):
        w0 = init_gaussian(GridSpec(-20.0, 20.0, 256, 2.0, 81), -10.0, 1.0, 1.0, 0.1)
        no_scatter = ScatteringKernel(0.0, 0.1)
        strict = EvolutionConfig(dt=0.05, t_end=6.0, kernel=no_scatter, force=0.2, p_overflow="error")
        with self.assertRaises(GuardViolation):
            evolve(w0, strict)
        absorbing = replace(strict, p_overflow="absorb", record_every=20)
        _, series = evolve(w0, absorbing)
        self.assertGreater(series.rows[-1].absorbed, 0.0)
        total = series.column("mass") + series.column("absorbed")
        np.testing.assert_allclose(total, 1.0, rtol=1e-12)

    def test_splitting_orders(self):
        w0 = self.small_grid()
        base = EvolutionConfig(dt=0.05, t_end=2.0, kernel=ScatteringKernel(1.0, 0.1))
        strang = convergence_report(w0, base)
        lie = convergence_report(w0, replace(base, splitting="lie"))
        self.assertGreaterEqual(strang["order"], 1.8)
        self.assertGreaterEqual(lie["order"], 0.9)

    def test_forced_run(self):
        w0 = init_gaussian(GridSpec(-51.2, 51.2, 1024, 4.0, 161), 0.0, -1.0, 1.0, 0.1)
        kernel = ScatteringKernel(1.0, 0.1)
        force = 0.2
        config = EvolutionConfig(dt=0.05, t_end=20.0, kernel=kernel, force=force)
        _, series = evolve(w0, config)
        times, mean_p, mean_x = series.times, series.column("mean_p"), series.column("mean_x")
        initial_slope = (mean_p[1] - mean_p[0]) / config.dt
        expected = force - 2.0 * float(kernel.rate(-1.0)) * -1.0
        self.assertLess(abs(initial_slope / expected - 1), 0.1)
        # 散射使 ⟨p⟩ 比纯弹道 p₀ + Ft 更快离开 p₀
        self.assertGreater(mean_p[10] - (-1.0 + force * times[10]), 0.3)
        late = times >= times[-1] * 2 / 3
        _, _, r_squared = linear_fit(times[late], mean_x[late])
        self.assertGreater(r_squared, 0.99)


class TestLongTimeLimit(TestCase):
    """无外力、2048×73 网格、Δx = |p₀|Δt，演化到 γ₀t = 50"""

    @classmethod
    def setUpClass(cls):
        cls.p0, cls.sigma_p = -1.0, 0.1
        cls.kernel = ScatteringKernel(1.0, 0.1)
        cls.w0 = init_gaussian(GridSpec(-51.2, 51.2, 2048, 1.8, 73), 0.0, cls.p0, 1.0, cls.sigma_p)
        config = EvolutionConfig(dt=0.05, t_end=50.0, kernel=cls.kernel, record_every=4, workers=2)
        cls.result = run_evolution(cls.w0, config, snapshot_times=[0.0, 5.0])
        cls.prediction = laplace_asymptotics(cls.p0, cls.kernel)

    def test_prediction_values(self):
        self.assertAlmostEqual(self.prediction.displacement, -0.5526, places=4)
        self.assertAlmostEqual(self.prediction.variance_slope, 1.1052, places=4)

    def test_mean_displacement(self):
        final = self.result.series.rows[-1]
        self.assertLess(abs(final.mean_x / self.prediction.displacement - 1), 0.05)

    def test_variance_slope(self):
        series = self.result.series
        window = series.times >= 10.0
        slope, _, _ = linear_fit(series.times[window], series.column("var_x")[window])
        self.assertLess(abs(slope / self.prediction.variance_slope - 1), 0.10)

    def test_invariants(self):
        series = self.result.series
        self.assertLess(np.max(np.abs(series.column("mass") - 1.0)), 1e-12)
        self.assertTrue(np.all(series.column("min_w") >= 0.0))

    def test_laplace_oracle(self):
        series = self.result.series
        rate = float(self.kernel.rate(self.p0))
        for t in (1.0, 3.0, 10.0):
            row = series.rows[int(round(t / 0.2))]
            self.assertAlmostEqual(row.time, t)
            mean, var = laplace_moments(t, self.p0, rate)
            self.assertLess(abs(row.mean_x / mean - 1), 0.02)
            self.assertLess(abs(row.var_x / var - 1), 0.05)

    def test_coherence_envelope_is_invariant(self):
        s = np.linspace(-40, 40, 801)
        widths = [envelope_width(s, coherence_envelope(self.result.snapshots[t], s)) for t in (0.0, 5.0)]
        self.assertLess(abs(widths[1] / widths[0] - 1), 0.02)
        self.assertAlmostEqual(widths[0], math.sqrt(2) / self.sigma_p, delta=0.05)

    def test_standing_wave_oscillation(self):
        s = 0.01 * np.arange(-600, 601)
        modulus = coherence(self.result.snapshots[5.0], s).modulus
        interior = (modulus[1:-1] < modulus[:-2]) & (modulus[1:-1] < modulus[2:])
        minima = s[1:-1][interior]
        minima = minima[minima > 0]
        self.assertAlmostEqual(minima[0], math.pi / (2 * abs(self.p0)), delta=0.02)
        self.assertAlmostEqual(minima[1] - minima[0], math.pi / abs(self.p0), delta=0.03)
        initial = coherence(self.result.snapshots[0.0], s)
        np.testing.assert_allclose(initial.normalized(), np.exp(-0.5 * (self.sigma_p * s) ** 2), atol=1e-6)


class TestLaplace(TestCase):

    def test_slow_root(self):
        slow, fast = laplace_roots(1e-3, 1.0, 0.9)
        self.assertAlmostEqual(slow.real / slow_root_estimate(1e-3, 1.0, 0.9), 1.0, places=5)
        self.assertAlmostEqual(fast.real, -1.8, places=5)

    def test_initial_condition_and_equations(self):
        plus, minus = laplace_inverse(0.4, 0.0, 1.0, 0.7, 0.6 + 0.1j, 0.3)
        self.assertAlmostEqual(plus, 0.6 + 0.1j, places=12)
        self.assertAlmostEqual(minus, 0.3, places=12)
        k, zeta, p, rate = 0.3, 0.2 + 0.5j, -1.0, 0.8
        wp, wm = laplace_solution(k, zeta, p, rate, 1.0, 0.5)
        self.assertAlmostEqual((zeta + rate + 1j * k * p) * wp - rate * wm, 1.0, places=12)
        self.assertAlmostEqual((zeta + rate - 1j * k * p) * wm - rate * wp, 0.5, places=12)

    def test_telegraph_mean(self):
        rate = 0.9
        for t in (0.5, 2.0, 20.0):
            mean, _ = laplace_moments(t, 1.0, rate)
            self.assertAlmostEqual(mean, (1 - math.exp(-2 * rate * t)) / (2 * rate), places=6)

    def test_no_scattering_has_no_limit(self):
        with self.assertRaises(ModelError):
            laplace_asymptotics(1.0, ScatteringKernel(0.0, 0.1))
