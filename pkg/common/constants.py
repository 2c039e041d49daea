from unittest import TestCase

TIME_OUT_5 = 5  # 超过5秒的耗时

# 物理常数表版本（写入元数据，保证可复现）
CONSTANTS_VERSION = "CODATA-2018"
SOFTWARE_VERSION = "0.1.0"

# ===== SI 物理常数（10 位有效数字） =====
HBAR = 1.054571817e-34  # 约化普朗克常数 J·s
K_B = 1.380649e-23  # 玻尔兹曼常数 J/K
C_LIGHT = 299792458.0  # 光速 m/s
EPSILON_0 = 8.8541878128e-12  # 真空介电常数 F/m
MU_0 = 1.25663706212e-6  # 真空磁导率 N/A²
MU_B = 9.2740100783e-24  # 玻尔磁子 J/T
ATOMIC_MASS = 1.66053906660e-27  # 原子质量单位 kg

# 铜的电阻率 1.7e-6 Ω·cm
RHO_CU = 1.7e-8  # Ω·m
ROOM_TEMPERATURE = 300.0  # K

# 常数表（--constants 输出顺序）
CONSTANT_TABLE = [
    ("hbar", HBAR, "J s"),
    ("k_B", K_B, "J/K"),
    ("c", C_LIGHT, "m/s"),
    ("epsilon_0", EPSILON_0, "F/m"),
    ("mu_0", MU_0, "N/A^2"),
    ("mu_B", MU_B, "J/T"),
    ("u", ATOMIC_MASS, "kg"),
    ("rho_Cu", RHO_CU, "ohm m"),
]

# ===== 数值默认值 =====
QUAD_TOL = 1e-6  # 几何张量求积默认相对误差
QUAD_TOL_RANGE = (1e-10, 1e-2)  # 允许的求积误差范围（开区间）
QUAD_NODES = 8  # 每个子区间的 Gauss-Legendre 节点数
QUAD_MAX_LEVEL = 5  # 二分细化最大层数
QUAD_CHUNK = 4  # 外层节点分块大小（决定求和顺序，与线程数无关）

WIRE_FAR_MIN = 1.6  # R/a ≥ 1.6 使用远场展开
WIRE_NEAR_MAX = 0.05  # (R-a)/a ≤ 0.05 使用近场公式

CHARACTERISTIC_TOL = 1e-8  # 特征线积分容差

GAUSSIAN_TAIL = 1e-10  # 初始高斯在网格边缘允许的相对值
MIN_CELLS_PER_SIGMA = 2  # 高斯宽度至少覆盖的网格数
SCATTER_ACCURACY = 0.5  # γ₀Δt 上限（精度约束）
DEFAULT_DT_RATE = 0.05  # 未给出步长时 Δt = 0.05/γ₀
P_SHIFT_FRACTION = 0.1  # 单步动量平移 ≤ p_max/10
WRAP_TOLERANCE = 1e-6  # x 边缘带内允许的质量比例
OVERFLOW_TOLERANCE = 1e-10  # error 策略下允许越界的质量比例

CSV_FLOAT_FORMAT = "{:.12e}"  # CSV 浮点格式（保证逐字节可复现）


class TestConstants(TestCase):
    """与 scipy.constants 对照（CODATA 修订只影响第 9 位以后）"""

    def test_against_scipy(self):
        from scipy import constants
        pairs = [
            (HBAR, constants.hbar), (K_B, constants.k), (C_LIGHT, constants.c),
            (EPSILON_0, constants.epsilon_0), (MU_0, constants.mu_0),
            (MU_B, constants.physical_constants["Bohr magneton"][0]),
            (ATOMIC_MASS, constants.physical_constants["atomic mass constant"][0]),
        ]
        for ours, reference in pairs:
            self.assertLessEqual(abs(ours - reference), 1e-8 * abs(reference))

    def test_table_order(self):
        self.assertEqual([name for name, _, _ in CONSTANT_TABLE][:2], ["hbar", "k_B"])
