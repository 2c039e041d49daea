import csv
import logging
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence
from unittest import TestCase

import numpy as np

from common.constants import CSV_FLOAT_FORMAT

now = datetime.now()

iso_datetime = now.strftime("%Y-%m-%d %H:%M:%S")  # 2025-06-17 10:23:45


def format_value(value) -> str:
    """浮点数统一用 {:.12e}，保证同一输入逐字节相同"""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT.format(float(value))
    return str(value)


def time_label(t: float) -> str:
    """用于文件名的时间标签，例如 0.5 -> '0.5'"""
    return f"{float(t):g}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """写 CSV（带表头），自动创建父目录"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    logging.info(f"已保存 {count} 行到 {path}")
    return path


def write_matrix(path: str | Path, matrix: np.ndarray, header: str = "") -> Path:
    """二维数组按行写出（逗号分隔，{:.12e}），用于相空间快照"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(matrix), fmt="%.12e", delimiter=",", header=header, comments="# ")
    logging.info(f"已保存矩阵 {np.shape(matrix)} 到 {path}")
    return path


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """最小二乘直线，返回 (斜率, 截距, R²)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("直线拟合至少需要两个点")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = np.sum((y - np.mean(y)) ** 2)
    r_squared = 1.0 - np.sum(residual ** 2) / spread if spread > 0 else 1.0
    return float(slope), float(intercept), float(r_squared)


def power_law_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """双对数坐标下的斜率，例如散射率随距离的标度指数"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("幂律拟合要求数据为正")
    return linear_fit(np.log(x), np.log(y))[0]


class TestUtils(TestCase):

    def test_format(self):
        self.assertEqual(format_value(0.1), "1.000000000000e-01")
        self.assertEqual(format_value(np.int64(3)), "3")
        self.assertEqual(format_value("analytic"), "analytic")
        self.assertEqual(time_label(5.0), "5")

    def test_write_csv(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(Path(tmp) / "a" / "rates.csv", ["z", "gamma"], [(1e-6, 59.2), (2e-6, 29.6)])
            lines = path.read_text(encoding="utf-8").splitlines()
            self.assertEqual(lines[0], "z,gamma")
            self.assertEqual(lines[1], "1.000000000000e-06,5.920000000000e+01")

    def test_fits(self):
        x = np.linspace(1, 10, 10)
        slope, intercept, r2 = linear_fit(x, 3 * x + 1)
        self.assertAlmostEqual(slope, 3.0)
        self.assertAlmostEqual(intercept, 1.0)
        self.assertAlmostEqual(r2, 1.0)
        self.assertAlmostEqual(power_law_slope(x, 2.0 / x ** 3), -3.0)
