"""
모든 모듈이 공유하는 예외 계층.

CLI는 exit_code 속성만 보고 종료 코드를 결정합니다.
"""
from typing import Optional


class DlmError(Exception):
    exit_code = 1


class ConfigError(DlmError):
    """설정 값이 잘못되었거나 서로 모순될 때"""
    exit_code = 2


class ParameterDomainError(ConfigError, ValueError):
    """range(θ) <= 0 처럼 모수가 정의역을 벗어난 경우"""


class ContractError(DlmError, ValueError):
    """모듈 사이에 넘겨진 배열의 차원이 맞지 않는 경우"""
    exit_code = 2


class EmptyReportError(DlmError):
    exit_code = 2


class IngestionError(DlmError):
    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalBreakdownError(DlmError, ArithmeticError):
    exit_code = 4

    def __init__(self, message: str, t: Optional[int] = None, iteration: Optional[int] = None):
        self.t = t
        self.iteration = iteration
        self.detail = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.iteration is not None:
            where.append(f"iteration={self.iteration}")
        if self.t is not None:
            where.append(f"t={self.t}")
        return f"{self.detail} ({', '.join(where)})" if where else self.detail

    def at_iteration(self, iteration: int) -> "NumericalBreakdownError":
        # 체인 루프에서 반복 번호를 덧붙여 다시 던질 때 사용
        return NumericalBreakdownError(self.detail, t=self.t, iteration=iteration)
