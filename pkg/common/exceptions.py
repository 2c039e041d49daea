class WaveguideError(Exception):
    """所有计算异常的基类，exit_code 对应命令行退出码"""
    exit_code = 1


class ConfigError(WaveguideError, ValueError):
    """配置解析错误，message 中给出出错的键"""
    exit_code = 2

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"配置项 '{key}' 无效: {message}")


class GeometryError(WaveguideError, ValueError):
    """几何参数越界（观察点不在导体外部等）"""
    exit_code = 2


class ModelError(WaveguideError, ValueError):
    """模型不满足运算前提（例如相关函数没有二次顶点）"""
    exit_code = 2


class QuadratureRequiredError(WaveguideError):
    """导线处于中间区间，解析展开不可用，需要走数值求积"""
    exit_code = 3


class ConvergenceError(WaveguideError, ArithmeticError):
    """数值求积在细化预算内未收敛"""
    exit_code = 3


class GuardViolation(WaveguideError, ArithmeticError):
    """演化过程中触发数值保护，step 为出错的步号"""
    exit_code = 3

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        where = f"（第 {step} 步）" if step is not None else ""
        super().__init__(f"{message}{where}")
