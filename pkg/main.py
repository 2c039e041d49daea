import logging
from pathlib import Path
from typing import Any, Callable
from unittest import TestCase

import click

from common.constants import CONSTANT_TABLE, CONSTANTS_VERSION, SOFTWARE_VERSION
from common.decorators import timer, performance_metrics
from common.exceptions import WaveguideError
from common.logger import Logger
from config.settings import Settings
import scenario as scenarios

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def init(level: str | None = None, log_file: str | None = None):
    """初始化日志（控制台走 stderr，stdout 只留给正式输出）"""
    Logger.init(
        level=getattr(logging, level.upper()) if level else None,
        log_file=log_file,
        max_bytes=10_000_000,
        backup_count=5,
        console=True,
        colored=True,
        force=True
    )
    logging.debug("日志初始化完成")


def print_constants():
    click.echo(f"# constants {CONSTANTS_VERSION}")
    click.echo("name,value,unit")
    for name, value, unit in CONSTANT_TABLE:
        click.echo(f"{name},{value:.10e},{unit}")


def _execute(ctx: click.Context, action: Callable[[], Any]) -> Any:
    """库代码只抛异常，在这里统一映射成退出码"""
    try:
        return action()
    except WaveguideError as e:
        logging.error(str(e))
        ctx.exit(e.exit_code)
    except OSError as e:
        logging.error(f"写出结果失败: {e}")
        ctx.exit(1)


def _run_subcommand(ctx: click.Context, subcommand: str, config: str | None, out_prefix: str,
                    overrides: dict[str, Any]) -> None:
    options = ctx.obj
    given = {key: value for key, value in overrides.items() if value is not None and value != ()}

    def action():
        scenario = scenarios.load_scenario(subcommand, config, given, out_prefix)
        report = scenarios.run(scenario, workers=options["workers"], progress=options["progress"])
        for path in report.files:
            click.echo(str(path))

    _execute(ctx, action)


def _time_list(ctx: click.Context, param: click.Parameter, value: str | None) -> list[float] | None:
    if value is None:
        return None
    try:
        times = [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"需要逗号分隔的数值: {value!r}") from None
    if not times:
        raise click.BadParameter("时间列表不能为空")
    return times


def scenario_options(func):
    func = click.option("--out-prefix", type=click.Path(file_okay=False), default=str(Settings.OUTPUT_DIR),
                        show_default=True, help="输出目录")(func)
    func = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
                        help="场景 YAML 文件或元数据 sidecar")(func)
    return func


@click.group(invoke_without_command=True, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--constants", "show_constants", is_flag=True, help="打印物理常数表后退出")
@click.option("--workers", type=click.IntRange(min=1), default=Settings.WORKERS, show_default=True,
              help="求积与平流的线程数，不影响结果")
@click.option("--progress/--no-progress", default=False, help="在 stderr 显示演化进度条")
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None)
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="同时写入滚动日志文件")
@click.version_option(SOFTWARE_VERSION, prog_name="wgt")
@click.pass_context
def cli(ctx, show_constants, workers, progress, log_level, log_file):
    """原子波导中的相干物质波输运：散射率、噪声相关、退相干与相空间演化"""
    init(log_level, log_file)
    ctx.obj = {"workers": workers, "progress": progress}
    if show_constants:
        print_constants()
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@scenario_options
@click.option("--geometry", type=click.Choice(["halfspace", "layer", "wire"]), default=None)
@click.option("--z", type=float, default=None, help="到表面的距离 µm（导线为 R − a）")
@click.option("--R", "axis_distance", type=float, default=None, help="导线：到轴线的距离 µm")
@click.option("--d", "thickness", type=float, default=None, help="薄层厚度 µm")
@click.option("--a", "radius", type=float, default=None, help="导线半径 µm")
@click.option("--sweep-min", type=float, default=None)
@click.option("--sweep-max", type=float, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--temperature", type=float, default=None, help="K")
@click.option("--resistivity", type=float, default=None, help="Ω·m")
@click.option("--mu", type=float, default=None, help="磁矩矩阵元，单位 μ_B")
@click.option("--bias", type=float, nargs=3, default=None, help="偏置场方向（单位向量）")
@click.option("--wire-series", type=click.Choice(["printed", "derived"]), default=None)
@click.option("--tol", type=float, default=None)
@click.option("--frequency", type=float, default=None, help="Hz，趋肤深度检查")
@click.pass_context
def rates(ctx, config, out_prefix, geometry, z, axis_distance, thickness, radius, sweep_min, sweep_max, samples,
          temperature, resistivity, mu, bias, wire_series, tol, frequency):
    """几何张量与散射率（单点或按距离扫描）"""
    _run_subcommand(ctx, "rates", config, out_prefix, {
        "geometry": geometry, "z": z, "R": axis_distance, "d": thickness, "a": radius,
        "sweep_min": sweep_min, "sweep_max": sweep_max, "samples": samples, "temperature": temperature,
        "resistivity": resistivity, "mu": mu, "bias": list(bias) if bias else None,
        "wire_series": wire_series, "tol": tol, "frequency": frequency,
    })


@cli.command()
@scenario_options
@click.option("--z", type=float, default=None, help="观察点高度 µm")
@click.option("--s-max", type=float, default=None, help="最大横向间距，单位 z")
@click.option("--samples", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--lc-over-z", type=float, default=None, help="洛伦兹相关长度，单位 z")
@click.pass_context
def correlation(ctx, config, out_prefix, z, s_max, samples, tol, lc_over_z):
    """半空间上方磁噪声的横向相关函数"""
    _run_subcommand(ctx, "correlation", config, out_prefix, {
        "z": z, "s_max": s_max, "samples": samples, "tol": tol, "lc_over_z": lc_over_z,
    })


@cli.command()
@scenario_options
@click.option("--gamma", type=float, default=None)
@click.option("--lc", type=float, default=None)
@click.option("--force", type=float, default=None)
@click.option("--times", callback=_time_list, default=None, help="逗号分隔的时间列表，例如 0.1,1,10")
@click.option("--s-max", type=float, default=None, help="单位 l_c")
@click.option("--samples", type=int, default=None)
@click.pass_context
def decohere(ctx, config, out_prefix, gamma, lc, force, times, s_max, samples):
    """白噪声下的空间退相干 |Γ(s; t)|"""
    _run_subcommand(ctx, "decohere", config, out_prefix, {
        "gamma": gamma, "lc": lc, "force": force, "times": times,
        "s_max": s_max, "samples": samples,
    })


@cli.command()
@scenario_options
@click.option("--x-min", type=float, default=None)
@click.option("--x-max", type=float, default=None)
@click.option("--n-x", type=int, default=None)
@click.option("--p-max", type=float, default=None)
@click.option("--n-p", type=int, default=None)
@click.option("--x0", type=float, default=None)
@click.option("--p0", type=float, default=None)
@click.option("--sigma-x", type=float, default=None)
@click.option("--sigma-p", type=float, default=None)
@click.option("--gamma0", type=float, default=None)
@click.option("--lc", type=float, default=None)
@click.option("--dt", type=float, default=None, help="默认 0.05/γ₀")
@click.option("--t-end", type=float, default=None)
@click.option("--force", type=float, default=None)
@click.option("--record-every", type=int, default=None)
@click.option("--splitting", type=click.Choice(["strang", "lie"]), default=None)
@click.option("--p-overflow", type=click.Choice(["absorb", "error"]), default=None)
@click.option("--snapshot", "snapshots", type=float, multiple=True, help="快照时间，可重复")
@click.option("--coherence-samples", type=int, default=None)
@click.option("--check-convergence/--no-check-convergence", default=None,
              help="步长两次减半，估计收敛阶并写入 sidecar")
@click.pass_context
def evolve(ctx, config, out_prefix, x_min, x_max, n_x, p_max, n_p, x0, p0, sigma_x, sigma_p, gamma0, lc, dt,
           t_end, force, record_every, splitting, p_overflow, snapshots, coherence_samples, check_convergence):
    """弹性散射下的一维相空间演化"""
    _run_subcommand(ctx, "evolve", config, out_prefix, {
        "grid.x_min": x_min, "grid.x_max": x_max, "grid.n_x": n_x, "grid.p_max": p_max, "grid.n_p": n_p,
        "initial.x0": x0, "initial.p0": p0, "initial.sigma_x": sigma_x, "initial.sigma_p": sigma_p,
        "kernel.gamma0": gamma0, "kernel.lc": lc,
        "run.dt": dt, "run.t_end": t_end, "run.force": force, "run.record_every": record_every,
        "run.splitting": splitting, "run.p_overflow": p_overflow,
        "run.snapshot_times": list(snapshots) if snapshots else None,
        "run.coherence_samples": coherence_samples,
        "run.check_convergence": check_convergence,
    })


@cli.command()
@click.option("--out-prefix", type=click.Path(file_okay=False), default=str(Settings.OUTPUT_DIR),
              show_default=True, help="数据写到 <out-prefix>/figures/figN/")
@click.option("--only", multiple=True, type=click.Choice([f"fig{i}" for i in range(1, 8)]), help="只生成指定的图")
@click.pass_context
def figures(ctx, out_prefix, only):
    """生成七组图的数据集"""
    options = ctx.obj

    def action():
        reports = scenarios.reproduce_figures(out_prefix, options["workers"], options["progress"], tuple(only))
        for name, runs in reports.items():
            for report in runs:
                click.echo(f"{name}: {report.scenario.out_prefix}")
        logging.debug(performance_metrics(scenarios.reproduce_figures))

    _execute(ctx, action)


@timer(unit="ms")
def main():
    cli(prog_name="wgt")


class TestCli(TestCase):

    def setUp(self):
        import tempfile
        from click.testing import CliRunner
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()
        # CliRunner 关闭了捕获流，日志重新指向真实 stderr
        Logger.init(level=logging.WARNING, force=True)

    def invoke(self, *args):
        return self.runner.invoke(cli, ["--log-level", "WARNING", *args])

    def test_constants(self):
        result = self.invoke("--constants")
        self.assertEqual(result.exit_code, 0)
        self.assertIn("hbar,1.0545718170e-34,J s", result.stdout)
        self.assertIn("mu_B,9.2740100783e-24,J/T", result.stdout)

    def test_rates_benchmark(self):
        result = self.invoke("rates", "--z", "1", "--out-prefix", str(self.out / "rates"))
        self.assertEqual(result.exit_code, 0, result.output)
        lines = (self.out / "rates" / "rates.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "distance_m,Y11,Y22,Y33,trY,gamma_per_s")
        header, row = lines[0].split(","), lines[1].split(",")
        gamma = float(row[header.index("gamma_per_s")])
        self.assertAlmostEqual(gamma / 59.2, 1.0, delta=0.02)
        self.assertTrue((self.out / "rates" / "rates.meta.yaml").exists())

    def test_malformed_key_exits_2_without_files(self):
        config = self.out / "bad.yaml"
        config.write_text("rates:\n  zz: 1.0\n", encoding="utf-8")
        target = self.out / "bad"
        result = self.invoke("rates", "--config", str(config), "--out-prefix", str(target))
        self.assertEqual(result.exit_code, 2)
        self.assertFalse(target.exists())

    def test_usage_error_exits_2(self):
        result = self.invoke("rates", "--geometry", "sphere")
        self.assertEqual(result.exit_code, 2)

    def test_guard_exits_3(self):
        target = self.out / "guard"
        result = self.invoke("evolve", "--x-min", "-8", "--x-max", "8", "--n-x", "64", "--p-max", "3",
                             "--n-p", "61", "--sigma-p", "0.25", "--gamma0", "0", "--t-end", "8",
                             "--record-every", "1", "--out-prefix", str(target))
        self.assertEqual(result.exit_code, 3)
        self.assertFalse((target / "observables.csv").exists())

    def test_check_convergence_flag(self):
        target = self.out / "converge"
        result = self.invoke("evolve", "--x-min", "-12.8", "--x-max", "12.8", "--n-x", "128", "--p-max", "2.5",
                             "--n-p", "81", "--sigma-p", "0.15", "--t-end", "1", "--record-every", "4",
                             "--coherence-samples", "41", "--check-convergence", "--out-prefix", str(target))
        self.assertEqual(result.exit_code, 0, result.output)
        from utils.yaml_util import YamlHandler
        meta = YamlHandler.safe_read_yaml(target / "evolve.meta.yaml")
        self.assertEqual(meta["results"]["dt"], 0.05)
        self.assertEqual(len(meta["results"]["convergence"]["dts"]), 3)

    def test_identical_runs_are_byte_identical(self):
        args = ("correlation", "--s-max", "4", "--samples", "3", "--tol", "1e-5")
        first = self.runner.invoke(cli, ["--workers", "1", *args, "--out-prefix", str(self.out / "a")])
        second = self.runner.invoke(cli, ["--workers", "3", *args, "--out-prefix", str(self.out / "b")])
        self.assertEqual(first.exit_code, 0, first.output)
        self.assertEqual(second.exit_code, 0, second.output)
        header = (self.out / "a" / "correlation.csv").read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(header, "separation_over_z,C_numeric,C_lorentzian")
        self.assertEqual((self.out / "a" / "correlation.csv").read_bytes(),
                         (self.out / "b" / "correlation.csv").read_bytes())

    def test_sidecar_reproduces_run(self):
        first = self.invoke("decohere", "--gamma", "2", "--times", "0.5,3",
                            "--out-prefix", str(self.out / "a"))
        self.assertEqual(first.exit_code, 0, first.output)
        sidecar = self.out / "a" / "decohere.meta.yaml"
        second = self.invoke("decohere", "--config", str(sidecar), "--out-prefix", str(self.out / "b"))
        self.assertEqual(second.exit_code, 0, second.output)
        self.assertEqual((self.out / "a" / "decohere.csv").read_bytes(),
                         (self.out / "b" / "decohere.csv").read_bytes())
        header = (self.out / "a" / "decohere.csv").read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(header, "s_over_lc,abs_gamma_t0.5,abs_gamma_t3")

    def test_bad_time_list_exits_2(self):
        result = self.invoke("decohere", "--times", "0.5,soon", "--out-prefix", str(self.out / "bad"))
        self.assertEqual(result.exit_code, 2)
        self.assertFalse((self.out / "bad").exists())

    def test_figure_three(self):
        result = self.invoke("figures", "--only", "fig3", "--out-prefix", str(self.out))
        self.assertEqual(result.exit_code, 0, result.output)
        path = self.out / "figures" / "fig3" / "decohere" / "decohere.csv"
        lines = path.read_text(encoding="utf-8").splitlines()
        header = lines[0].split(",")
        rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
        at_lc = next(row for row in rows if abs(row[0] - 1.0) < 1e-9)
        self.assertAlmostEqual(at_lc[header.index("abs_gamma_t1")], 0.6065306597126334, places=10)


if __name__ == "__main__":
    main()
