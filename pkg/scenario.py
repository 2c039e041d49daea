"""
场景：把 YAML 配置解析成某个子命令的参数，运行对应的计算，
计算全部成功后才把 CSV 与元数据 sidecar 写到输出目录。

配置文件按子命令分段（rates / correlation / decohere / evolve），
evolve 下再分 grid / initial / kernel / run 四个子段。
元数据 sidecar 本身也能作为 --config 重新输入，得到逐字节相同的 CSV。
"""
import copy
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple
from unittest import TestCase

import numpy as np
import scipy

from common.constants import (
    CONSTANTS_VERSION, CONSTANT_TABLE, SOFTWARE_VERSION, QUAD_TOL_RANGE, WIRE_FAR_MIN,
)
from common.decorators import timer
from common.exceptions import ConfigError, ModelError
from config.settings import Settings
from elastic_transport import (
    EvolutionConfig, run_evolution, laplace_asymptotics, convergence_report, cloud_extent, fits_box, default_step,
)
from field_correlation import (
    LorentzianCorrelation, ScatteringKernel, halfspace_correlation_analytic, halfspace_correlation_profile,
    fitted_correlation_length, lorentzian_correlation,
)
from inelastic_transport import InelasticParams, coherence_decay, coherence_length, momentum_diffusion_coefficient
from near_field_noise import (
    GEOMETRY_KINDS, WIRE_SERIES, MaterialParams, SpinCoupling, Wire, rate_sweep, skin_depth,
    wire_far_field_trace, wire_trace_series,
)
from phase_space import (
    GridSpec, OBSERVABLE_HEADER, init_gaussian, coherence, coherence_grid, coherence_envelope, envelope_width,
)
from utils import utils
from utils.utils import write_csv, write_matrix, linear_fit, power_law_slope, time_label
from utils.yaml_util import YamlHandler

MICRON = 1e-6
RATE_HEADER = ["distance_m", "Y11", "Y22", "Y33", "trY", "gamma_per_s"]
CORRELATION_HEADER = ["separation_over_z", "C_numeric", "C_lorentzian"]
SUBCOMMANDS = Settings.SUBCOMMANDS


@dataclass(frozen=True)
class Scenario:
    """
    一次运行的完整描述：子命令、参数、输出目录。
    所有计算都是确定性的，同一个场景总是得到相同的 CSV。
    """
    subcommand: str
    params: dict
    out_prefix: Path
    deterministic: bool = True

    def inputs(self) -> dict:
        """可以直接作为 --config 重新输入的参数段"""
        return {self.subcommand: copy.deepcopy(self.params)}


@dataclass
class Artifacts:
    """待写出的文件。计算成功之前不落盘，失败时不会留下残缺结果"""
    tables: list = field(default_factory=list)
    matrices: list = field(default_factory=list)
    documents: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def table(self, name: str, header, rows) -> None:
        self.tables.append((name, list(header), [tuple(row) for row in rows]))

    def matrix(self, name: str, values: np.ndarray, header: str = "") -> None:
        self.matrices.append((name, np.array(values, copy=True), header))

    def document(self, name: str, data: dict) -> None:
        self.documents.append((name, data))

    def names(self) -> list[str]:
        return [entry[0] for entry in self.tables + self.matrices + self.documents]

    def write(self, prefix: Path) -> list[Path]:
        files = [write_csv(prefix / name, header, rows) for name, header, rows in self.tables]
        files += [write_matrix(prefix / name, values, header) for name, values, header in self.matrices]
        for name, data in self.documents:
            YamlHandler.write_yaml(data, prefix / name)
            files.append(prefix / name)
        return files


class RunReport(NamedTuple):
    scenario: Scenario
    files: list[Path]
    wall_time: float
    results: dict


# ===== 配置解析 =====

def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ConfigError(key, f"需要数值: {value!r}")
    if isinstance(value, (int, float)):
        number = float(value)
    elif isinstance(value, str):
        # YAML 1.1 把 1e-6 这类不带小数点的写法读成字符串
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(key, f"需要数值: {value!r}") from None
    else:
        raise ConfigError(key, f"需要数值: {value!r}")
    if not math.isfinite(number):
        raise ConfigError(key, f"数值必须有限: {value!r}")
    return number


def _coerce(key: str, default: Any, value: Any) -> Any:
    """按默认值的类型转换配置值"""
    if default is None:
        return None if value is None else _as_float(key, value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"需要布尔值: {value!r}")
        return value
    if isinstance(default, int):
        number = _as_float(key, value)
        if not number.is_integer():
            raise ConfigError(key, f"需要整数: {value!r}")
        return int(number)
    if isinstance(default, float):
        return _as_float(key, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"需要字符串: {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"需要列表: {value!r}")
        return [_as_float(f"{key}[{i}]", v) for i, v in enumerate(value)]
    raise ConfigError(key, f"不支持的参数类型 {type(default).__name__}")


def merge_params(defaults: dict, updates: dict | None, path: str = "") -> dict:
    """
    用 updates 覆盖 defaults，返回新字典。
    未知键、类型不符都抛出 ConfigError，错误信息里带完整的键路径（例如 grid.n_x）。
    """
    merged = copy.deepcopy(defaults)
    if updates is None:
        return merged
    if not isinstance(updates, dict):
        raise ConfigError(path.rstrip(".") or "config", f"需要键值段: {updates!r}")
    for key, value in updates.items():
        name = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(name, "未知参数")
        if isinstance(defaults[key], dict):
            merged[key] = merge_params(defaults[key], value, f"{name}.")
        else:
            merged[key] = _coerce(name, defaults[key], value)
    return merged


def nest_overrides(overrides: dict[str, Any]) -> dict:
    """{"grid.n_x": 64} -> {"grid": {"n_x": 64}}"""
    nested: dict = {}
    for dotted, value in overrides.items():
        *parents, leaf = dotted.split(".")
        node = nested
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def read_config_file(path: str | Path) -> dict:
    """读取场景文件或元数据 sidecar，返回按子命令分段的参数"""
    try:
        data = YamlHandler.safe_read_yaml(path)
    except FileNotFoundError:
        raise ConfigError("config", f"配置文件不存在: {path}") from None
    except ValueError as e:
        raise ConfigError("config", str(e)) from e
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config", "顶层必须是按子命令分段的映射")
    if "scenario" in data and "inputs" in data:
        data = data["inputs"]
        if not isinstance(data, dict):
            raise ConfigError("inputs", "sidecar 中的 inputs 必须是映射")
    for section in data:
        if section not in SUBCOMMANDS:
            raise ConfigError(str(section), f"未知配置段，可选 {SUBCOMMANDS}")
    return data


def load_scenario(subcommand: str, config_file: str | Path | None = None, overrides: dict | None = None,
                  out_prefix: str | Path | None = None, settings: Settings | None = None) -> Scenario:
    """
    合并参数：conf/config.yaml 默认值 < --config 文件 < 命令行
    :param overrides: 命令行参数，键可以是 grid.n_x 这样的点分路径
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"未知子命令 {subcommand}，可选 {SUBCOMMANDS}")
    settings = settings or Settings()
    params = settings.defaults(subcommand)
    if config_file is not None:
        params = merge_params(params, read_config_file(config_file).get(subcommand))
    if overrides:
        params = merge_params(params, nest_overrides(overrides))
    return Scenario(subcommand, params, Path(out_prefix or Settings.OUTPUT_DIR))


# ===== 各子命令 =====

def _positive(key: str, value: float) -> float:
    if not value > 0:
        raise ConfigError(key, f"必须为正: {value}")
    return value


def _samples(key: str, value: int, minimum: int = 2) -> int:
    if value < minimum:
        raise ConfigError(key, f"采样数至少为 {minimum}: {value}")
    return value


def _tolerance(key: str, value: float) -> float:
    lo, hi = QUAD_TOL_RANGE
    if not lo < value < hi:
        raise ConfigError(key, f"求积容差必须在 ({lo}, {hi}) 内: {value}")
    return value


def _rate_distances(params: dict) -> np.ndarray:
    """返回到表面的距离（m），导线为间隙 R − a"""
    if params["R"] is not None:
        if params["geometry"] != "wire":
            raise ConfigError("R", "只有导线几何使用 R")
        return np.array([(params["R"] - params["a"]) * MICRON])
    if params["z"] is not None:
        return np.array([_positive("z", params["z"]) * MICRON])
    lo = _positive("sweep_min", params["sweep_min"])
    hi = params["sweep_max"]
    if not hi > lo:
        raise ConfigError("sweep_max", f"扫描上限必须大于下限: [{lo}, {hi}]")
    return np.geomspace(lo, hi, _samples("samples", params["samples"])) * MICRON


def run_rates(params: dict, workers: int = 1, progress: bool = False) -> Artifacts:
    kind = params["geometry"]
    if kind not in GEOMETRY_KINDS:
        raise ConfigError("geometry", f"未知几何类型 {kind}，可选 {GEOMETRY_KINDS}")
    if params["wire_series"] not in WIRE_SERIES:
        raise ConfigError("wire_series", f"可选 {tuple(WIRE_SERIES)}")
    if len(params["bias"]) != 3 or abs(np.linalg.norm(params["bias"]) - 1.0) > 1e-9:
        raise ConfigError("bias", f"偏置方向必须是三维单位向量: {params['bias']}")
    if params["mu"] < 0:
        raise ConfigError("mu", f"磁矩不能为负: {params['mu']}")
    material = MaterialParams(_positive("temperature", params["temperature"]),
                              _positive("resistivity", params["resistivity"]))
    coupling = SpinCoupling.bohr(params["mu"])
    distances = _rate_distances(params)
    a = _positive("a", params["a"]) * MICRON
    rows = rate_sweep(kind, distances, material, coupling, params["bias"],
                      thickness=_positive("d", params["d"]) * MICRON, radius=a,
                      wire_series=params["wire_series"], tol=_tolerance("tol", params["tol"]), workers=workers)

    art = Artifacts()
    art.table("rates.csv", RATE_HEADER, [tuple(row)[:6] for row in rows])
    art.results["gamma_per_s"] = [row.gamma for row in rows]
    art.results["method"] = [row.method for row in rows]

    delta = skin_depth(2.0 * math.pi * _positive("frequency", params["frequency"]), material.resistivity)
    art.results["skin_depth_m"] = delta
    if distances[-1] > 0.1 * delta:
        logging.warning(f"距离 {distances[-1]:.3g} m 与趋肤深度 {delta:.3g} m 相比不够小，磁准静态近似可能失效")

    axis = distances + a if kind == "wire" else distances
    far = axis >= axis[-1] / 10.0
    if len(rows) >= 2 and np.count_nonzero(far) >= 2:
        slope = power_law_slope(axis[far], [row.gamma for row, keep in zip(rows, far) if keep])
        art.results["far_field_slope"] = slope
        logging.info(f"{kind} 远场双对数斜率 {slope:.3f}")

    if kind == "wire":
        wires = [Wire(R, a) for R in axis if R / a >= WIRE_FAR_MIN]
        if wires:
            art.table("wire_far_field.csv", ["R_over_a", "trace_leading", "trace_printed", "trace_derived",
                                             "trace_series"],
                      [(w.R / w.a, math.pi ** 2 * w.a ** 2 / (2.0 * w.R ** 3), wire_far_field_trace(w, "printed"),
                        wire_far_field_trace(w, "derived"), wire_trace_series(w)) for w in wires])
    return art


def run_correlation(params: dict, workers: int = 1, progress: bool = False) -> Artifacts:
    z = _positive("z", params["z"]) * MICRON
    ratios = np.linspace(0.0, _positive("s_max", params["s_max"]), _samples("samples", params["samples"]))
    lc = fitted_correlation_length(z) if params["lc_over_z"] is None else _positive("lc_over_z", params["lc_over_z"]) * z
    separations = ratios * z
    numeric = halfspace_correlation_profile(z, separations, tol=_tolerance("tol", params["tol"]), workers=workers)
    analytic = halfspace_correlation_analytic(z, separations)
    lorentz = lorentzian_correlation(separations, lc)

    art = Artifacts()
    art.table("correlation.csv", CORRELATION_HEADER, zip(ratios, numeric, lorentz))
    art.results.update({"lc_over_z": lc / z, "max_abs_error": float(np.max(np.abs(numeric - analytic))),
                        "half_value_s_over_z": 2.0 * math.sqrt(3.0)})
    return art


def run_decohere(params: dict, workers: int = 1, progress: bool = False) -> Artifacts:
    lc = _positive("lc", params["lc"])
    times = params["times"]
    if not times or min(times) < 0:
        raise ConfigError("times", f"需要非空的非负时间列表: {times}")
    model = LorentzianCorrelation(lc)
    inelastic = InelasticParams(params["gamma"], model, params["force"])
    s = np.linspace(0.0, _positive("s_max", params["s_max"]) * lc, _samples("samples", params["samples"]))
    columns = [s / lc] + [np.abs(coherence_decay(1.0, s, inelastic, t)) for t in times]

    art = Artifacts()
    art.table("decohere.csv", ["s_over_lc"] + [f"abs_gamma_t{time_label(t)}" for t in times], zip(*columns))
    art.results["coherence_length"] = {time_label(t): coherence_length(inelastic, t) for t in times}
    art.results["momentum_diffusion"] = momentum_diffusion_coefficient(inelastic)
    return art


def _telegraph_reference(series, p0: float, rate: float) -> list[tuple]:
    """
    单一 |p| 类电报过程的精确均值与方差（v = p0，翻转率 γ）：
    ⟨X⟩ = v(1 − e^{−2γt})/2γ，⟨X²⟩ = 2v²[t/2γ − (1 − e^{−2γt})/4γ²]
    """
    a = 2.0 * rate
    var_x0 = series.rows[0].var_x
    x0 = series.rows[0].mean_x
    rows = []
    for t in series.times:
        decay = -math.expm1(-a * t)
        mean = p0 * decay / a
        second = 2.0 * p0 ** 2 * (t / a - decay / a ** 2)
        rows.append((x0 + mean, var_x0 + second - mean ** 2))
    return rows


def _elastic_summary(series, p0: float, kernel: ScatteringKernel, t_end: float) -> dict:
    """无外力时的长时极限：预测值与 t ∈ [t_end/5, t_end] 上的拟合值"""
    prediction = laplace_asymptotics(p0, kernel)
    times = series.times
    window = times >= t_end / 5.0
    summary = {"prediction": prediction.to_dict()}
    if np.count_nonzero(window) >= 2:
        slope, _, r2 = linear_fit(times[window], series.column("var_x")[window])
        displacement = float(series.rows[-1].mean_x - series.rows[0].mean_x)
        summary["measured"] = {
            "displacement": displacement,
            "variance_slope": slope,
            "r_squared": r2,
            "displacement_ratio": displacement / prediction.displacement,
            "variance_slope_ratio": slope / prediction.variance_slope,
        }
    return summary


def _forced_summary(series, force: float, p0: float, kernel: ScatteringKernel) -> dict:
    """有外力时：⟨p⟩ 的初始斜率（预期 F − 2γ(p0)p0）与末三分之一 ⟨x⟩ 的线性漂移"""
    times = series.times
    summary = {"expected_initial_slope": force - 2.0 * float(kernel.rate(p0)) * p0}
    if len(times) >= 2:
        mean_p = series.column("mean_p")
        summary["initial_slope"] = float((mean_p[1] - mean_p[0]) / (times[1] - times[0]))
    tail = times >= times[-1] * 2.0 / 3.0
    if np.count_nonzero(tail) >= 2:
        velocity, _, r2 = linear_fit(times[tail], series.column("mean_x")[tail])
        summary["drift"] = {"velocity": velocity, "r_squared": r2}
    return summary


def run_evolve(params: dict, workers: int = 1, progress: bool = False) -> Artifacts:
    grid, initial, kernel_params, run = params["grid"], params["initial"], params["kernel"], params["run"]
    spec = GridSpec(**grid)
    w0 = init_gaussian(spec, initial["x0"], initial["p0"], initial["sigma_x"], initial["sigma_p"])
    kernel = ScatteringKernel(kernel_params["gamma0"], kernel_params["lc"])
    dt = default_step(kernel) if run["dt"] is None else run["dt"]
    config = EvolutionConfig(dt=dt, t_end=run["t_end"], kernel=kernel, force=run["force"],
                             splitting=run["splitting"], record_every=run["record_every"],
                             p_overflow=run["p_overflow"], workers=workers, progress=progress)
    extent = cloud_extent(initial["x0"], initial["p0"], initial["sigma_x"], initial["sigma_p"], kernel,
                          config.force, config.t_end)
    if not fits_box(spec, extent):
        logging.warning(f"云团在 t_end 前可能到达 x ∈ [{extent[0]:.3g}, {extent[1]:.3g}]，"
                        f"超出盒子 [{spec.x_min:g}, {spec.x_max:g})，可能触发边界保护")
    snapshot_times = sorted(set(run["snapshot_times"]))
    separations = coherence_grid(spec, samples=_samples("run.coherence_samples", run["coherence_samples"], 3))
    result = run_evolution(w0, config, snapshot_times)
    series = result.series
    p0, force = initial["p0"], run["force"]

    art = Artifacts()
    art.table("observables.csv", OBSERVABLE_HEADER, series.rows)
    times = series.times
    header = ["time", "free_mean_x", "free_mean_p"]
    columns = [times, initial["x0"] + p0 * times + 0.5 * force * times ** 2, p0 + force * times]
    if force == 0.0 and kernel.gamma0 > 0:
        art.results["asymptotics"] = _elastic_summary(series, p0, kernel, config.t_end)
        telegraph = _telegraph_reference(series, p0, float(kernel.rate(p0)))
        header += ["telegraph_mean_x", "telegraph_var_x"]
        columns += [[row[0] for row in telegraph], [row[1] for row in telegraph]]
    elif force != 0.0:
        art.results["forced"] = _forced_summary(series, force, p0, kernel)
    art.table("reference.csv", header, zip(*columns))

    art.results["coherence"] = {}
    for t in snapshot_times:
        w = result.snapshots[t]
        label = time_label(t)
        art.matrix(f"snapshot_t{label}.csv", w.values, header=f"rows: p ({spec.n_p}), columns: x ({spec.n_x})")
        art.document(f"snapshot_t{label}.meta.yaml", w.metadata())
        gamma = coherence(w, separations)
        envelope = coherence_envelope(w, separations)
        names = ["s"] + (["s_over_lc"] if kernel.lc > 0 else []) + ["re", "im", "abs", "envelope"]
        cols = [separations] + ([separations / kernel.lc] if kernel.lc > 0 else [])
        cols += [gamma.values.real, gamma.values.imag, gamma.modulus, envelope]
        art.table(f"coherence_t{label}.csv", names, zip(*cols))
        try:
            width = envelope_width(separations, envelope)
        except ModelError:
            width = None
        art.results["coherence"][label] = {"envelope_width": width}
    art.results["final"] = dict(series.rows[-1]._asdict())
    art.results["dt"] = config.dt
    if run["check_convergence"]:
        art.results["convergence"] = convergence_report(w0, config)
    return art


RUNNERS: dict[str, Callable[..., Artifacts]] = {
    "rates": run_rates,
    "correlation": run_correlation,
    "decohere": run_decohere,
    "evolve": run_evolve,
}


# ===== 运行与元数据 =====

def software_versions() -> dict:
    return {"wgt": SOFTWARE_VERSION, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def constants_table() -> dict:
    return {"version": CONSTANTS_VERSION,
            "table": {name: {"value": value, "unit": unit} for name, value, unit in CONSTANT_TABLE}}


def sidecar(scenario: Scenario, artifacts: Artifacts, wall_time: float, workers: int) -> dict:
    """元数据：inputs 段可以直接作为 --config 重跑"""
    return {
        "scenario": scenario.subcommand,
        "inputs": scenario.inputs(),
        "deterministic": scenario.deterministic,
        "constants": constants_table(),
        "software": software_versions(),
        "workers": workers,
        "created": utils.iso_datetime,
        "wall_time_s": round(wall_time, 3),
        "files": artifacts.names(),
        "results": artifacts.results,
    }


def run(scenario: Scenario, workers: int = 1, progress: bool = False) -> RunReport:
    """运行场景，成功后写出 CSV 与 <subcommand>.meta.yaml"""
    logging.info(f"运行 {scenario.subcommand} -> {scenario.out_prefix}")
    started = time.perf_counter()
    artifacts = RUNNERS[scenario.subcommand](scenario.params, workers=workers, progress=progress)
    wall_time = time.perf_counter() - started
    files = artifacts.write(scenario.out_prefix)
    meta = scenario.out_prefix / f"{scenario.subcommand}.meta.yaml"
    YamlHandler.write_yaml(sidecar(scenario, artifacts, wall_time, workers), meta)
    files.append(meta)
    logging.info(f"{scenario.subcommand} 完成，耗时 {wall_time:.2f}s，写出 {len(files)} 个文件")
    return RunReport(scenario, files, wall_time, artifacts.results)


def _figure_run(key: str, sections: Any) -> tuple[str, dict]:
    if not isinstance(sections, dict) or len(sections) != 1:
        raise ConfigError(key, "每个图的运行必须恰好包含一个子命令段")
    (subcommand, section), = sections.items()
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"{key}.{subcommand}", f"未知子命令，可选 {SUBCOMMANDS}")
    return subcommand, section


@timer(unit="s")
def reproduce_figures(out_prefix: str | Path, workers: int = 1, progress: bool = False,
                      only: tuple[str, ...] = ()) -> dict[str, list[RunReport]]:
    """按 conf/config.yaml 中的 figures 段运行七组场景，写到 <out_prefix>/figures/figN/<run>/"""
    settings = Settings()
    figures = settings.config.get("figures") or {}
    for name in only:
        if name not in figures:
            raise ConfigError("figures", f"未知图 {name}，可选 {sorted(figures)}")
    reports = {}
    for name in sorted(figures):
        if only and name not in only:
            continue
        reports[name] = []
        for run_name, sections in figures[name].items():
            subcommand, section = _figure_run(f"figures.{name}.{run_name}", sections)
            params = merge_params(settings.defaults(subcommand), section)
            target = Path(out_prefix) / "figures" / name / run_name
            reports[name].append(run(Scenario(subcommand, params, target), workers, progress))
        logging.info(f"{name} 数据已生成")
    return reports


class TestConfig(TestCase):

    def test_merge_and_coerce(self):
        defaults = Settings().defaults("evolve")
        merged = merge_params(defaults, {"grid": {"n_x": 64.0, "p_max": "3"}, "run": {"snapshot_times": [0, 1]}})
        self.assertEqual(merged["grid"]["n_x"], 64)
        self.assertIsInstance(merged["grid"]["n_x"], int)
        self.assertEqual(merged["grid"]["p_max"], 3.0)
        self.assertEqual(merged["run"]["snapshot_times"], [0.0, 1.0])
        self.assertEqual(defaults["grid"]["n_x"], 1024)

    def test_errors_name_the_key(self):
        defaults = Settings().defaults("evolve")
        with self.assertRaises(ConfigError) as ctx:
            merge_params(defaults, {"grid": {"nx": 3}})
        self.assertEqual(ctx.exception.key, "grid.nx")
        with self.assertRaises(ConfigError) as ctx:
            merge_params(defaults, {"grid": {"n_x": 10.5}})
        self.assertEqual(ctx.exception.key, "grid.n_x")
        with self.assertRaises(ConfigError) as ctx:
            merge_params(Settings().defaults("rates"), {"z": "one"})
        self.assertEqual(ctx.exception.key, "z")

    def test_optional_values(self):
        rates = merge_params(Settings().defaults("rates"), {"R": 5, "z": "1e-3"})
        self.assertEqual(rates["R"], 5.0)
        self.assertEqual(rates["z"], 1e-3)

    def test_nested_overrides(self):
        self.assertEqual(nest_overrides({"grid.n_x": 64, "run.dt": 0.1, "z": 1}),
                         {"grid": {"n_x": 64}, "run": {"dt": 0.1}, "z": 1})

    def test_config_file_and_sidecar(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scenario.yaml"
            YamlHandler.write_yaml({"decohere": {"gamma": 3, "times": [1]}}, path)
            scenario = load_scenario("decohere", path, {"lc": 2.0}, out_prefix=tmp)
            self.assertEqual(scenario.params["gamma"], 3.0)
            self.assertEqual(scenario.params["lc"], 2.0)
            self.assertEqual(scenario.params["times"], [1.0])

            meta = Path(tmp) / "decohere.meta.yaml"
            YamlHandler.write_yaml({"scenario": "decohere", "inputs": scenario.inputs()}, meta)
            self.assertEqual(load_scenario("decohere", meta).params, scenario.params)

            YamlHandler.write_yaml({"evolv": {}}, path)
            with self.assertRaises(ConfigError):
                load_scenario("evolve", path)


class TestRuns(TestCase):

    @staticmethod
    def small_evolve(**run) -> dict:
        return merge_params(Settings().defaults("evolve"), {
            "grid": {"x_min": -12.8, "x_max": 12.8, "n_x": 128, "p_max": 2.5, "n_p": 81},
            "initial": {"sigma_p": 0.15},
            "run": {"t_end": 2.0, "record_every": 4, "coherence_samples": 41, **run},
        })

    def test_decohere_values(self):
        params = merge_params(Settings().defaults("decohere"), {"times": [1.0, 3.0], "s_max": 100.0,
                                                                "samples": 101})
        art = run_decohere(params)
        name, header, rows = art.tables[0]
        self.assertEqual(header, ["s_over_lc", "abs_gamma_t1", "abs_gamma_t3"])
        by_s = {round(row[0], 9): row for row in rows}
        self.assertAlmostEqual(by_s[1.0][1], math.exp(-0.5), places=12)
        self.assertAlmostEqual(by_s[0.0][2], 1.0, places=12)
        # s = 100 l_c 处 C ≈ 1e-4，接近 e^{-γt}
        self.assertAlmostEqual(by_s[100.0][2], math.exp(-3.0 * (1.0 - 1.0 / 10001.0)), places=12)

    def test_rates_benchmark(self):
        params = merge_params(Settings().defaults("rates"), {"z": 1.0})
        art = run_rates(params)
        _, header, rows = art.tables[0]
        self.assertEqual(header, ["distance_m", "Y11", "Y22", "Y33", "trY", "gamma_per_s"])
        gamma = rows[0][header.index("gamma_per_s")]
        self.assertAlmostEqual(gamma / 59.2, 1.0, delta=0.02)
        self.assertAlmostEqual(rows[0][0], 1e-6)
        self.assertEqual(art.results["method"], ["analytic"])

    def test_rates_sweep_slopes(self):
        for kind, expected in (("halfspace", -1.0), ("wire", -3.0)):
            params = merge_params(Settings().defaults("rates"),
                                  {"geometry": kind, "sweep_min": 100.0, "sweep_max": 1000.0, "samples": 5})
            art = run_rates(params)
            self.assertAlmostEqual(art.results["far_field_slope"], expected, delta=0.05)
        self.assertIn("wire_far_field.csv", art.names())

    def test_rates_guards(self):
        defaults = Settings().defaults("rates")
        for update, key in (({"geometry": "sphere"}, "geometry"), ({"bias": [1, 1, 0]}, "bias"),
                            ({"R": 2.0}, "R"), ({"tol": 0.5}, "tol")):
            with self.assertRaises(ConfigError) as ctx:
                run_rates(merge_params(defaults, update))
            self.assertEqual(ctx.exception.key, key)

    def test_correlation_small(self):
        params = merge_params(Settings().defaults("correlation"), {"s_max": 4.0, "samples": 3, "tol": 1e-5})
        art = run_correlation(params)
        self.assertEqual(art.tables[0][1], ["separation_over_z", "C_numeric", "C_lorentzian"])
        self.assertLess(art.results["max_abs_error"], 1e-4)
        self.assertAlmostEqual(art.results["lc_over_z"], 2.0 * math.sqrt(3.0))

    def test_evolve_outputs(self):
        art = run_evolve(self.small_evolve(snapshot_times=[0.0, 1.0]))
        names = art.names()
        for expected in ("observables.csv", "reference.csv", "snapshot_t0.csv", "snapshot_t1.csv",
                         "snapshot_t1.meta.yaml", "coherence_t0.csv", "coherence_t1.csv"):
            self.assertIn(expected, names)
        self.assertIn("asymptotics", art.results)
        final = art.results["final"]
        self.assertAlmostEqual(final["mass"] + final["absorbed"], 1.0, places=12)
        tables = {name: (header, rows) for name, header, rows in art.tables}
        header, rows = tables["coherence_t0.csv"]
        self.assertEqual(header, ["s", "s_over_lc", "re", "im", "abs", "envelope"])
        self.assertEqual(len(rows), 41)

    def test_evolve_forced_summary(self):
        art = run_evolve(self.small_evolve(force=0.1))
        self.assertIn("forced", art.results)
        self.assertNotIn("asymptotics", art.results)

    def test_default_step_follows_gamma0(self):
        self.assertIsNone(Settings().defaults("evolve")["run"]["dt"])
        params = self.small_evolve()
        params["kernel"]["gamma0"] = 2.0
        art = run_evolve(params)
        self.assertAlmostEqual(art.results["dt"], 0.025)
        self.assertNotIn("convergence", art.results)

    def test_convergence_report_in_sidecar(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            report = run(Scenario("evolve", self.small_evolve(check_convergence=True), Path(tmp)))
            meta = YamlHandler.safe_read_yaml(report.files[-1])
        convergence = meta["results"]["convergence"]
        self.assertEqual(convergence["dts"], [0.05, 0.025, 0.0125])
        self.assertEqual(convergence["splitting"], "strang")
        self.assertEqual(len(convergence["values"]), 3)
        self.assertEqual(meta["inputs"]["evolve"]["run"]["check_convergence"], True)

    def test_shipped_figures_fit_their_boxes(self):
        settings = Settings()
        checked = 0
        for name, runs in settings.config["figures"].items():
            for run_name, sections in runs.items():
                subcommand, section = _figure_run(f"figures.{name}.{run_name}", sections)
                if subcommand != "evolve":
                    continue
                params = merge_params(settings.defaults("evolve"), section)
                initial, run_params, grid = params["initial"], params["run"], params["grid"]
                kernel = ScatteringKernel(params["kernel"]["gamma0"], params["kernel"]["lc"])
                extent = cloud_extent(initial["x0"], initial["p0"], initial["sigma_x"], initial["sigma_p"], kernel,
                                      run_params["force"], run_params["t_end"])
                fastest = abs(initial["p0"]) + 5 * initial["sigma_p"] + abs(run_params["force"]) * run_params["t_end"]
                with self.subTest(figure=name, run=run_name):
                    self.assertTrue(fits_box(GridSpec(**grid), extent), extent)
                    self.assertLess(fastest, grid["p_max"])
                checked += 1
        self.assertEqual(checked, 4)

    def test_failed_run_writes_nothing(self):
        import tempfile
        params = self.small_evolve(snapshot_times=[0.33])
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "out"
            with self.assertRaises(ConfigError):
                run(Scenario("evolve", params, target))
            self.assertFalse(target.exists())

    def test_run_is_byte_identical(self):
        import tempfile
        params = merge_params(Settings().defaults("decohere"), {"times": [0.5, 2.0]})
        with tempfile.TemporaryDirectory() as tmp:
            first = run(Scenario("decohere", params, Path(tmp) / "a"))
            second = run(Scenario("decohere", params, Path(tmp) / "b"))
            self.assertEqual(first.files[0].read_bytes(), second.files[0].read_bytes())
            meta = YamlHandler.safe_read_yaml(first.files[-1])
            self.assertEqual(meta["scenario"], "decohere")
            self.assertEqual(meta["constants"]["version"], CONSTANTS_VERSION)
            self.assertEqual(meta["files"], ["decohere.csv"])
