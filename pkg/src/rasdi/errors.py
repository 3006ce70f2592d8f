"""Exception hierarchy shared by all solver modules.

Every error carries a short machine-readable ``code`` that the CLI reports
on failure.
"""


class RasdiError(Exception):
    code = "error"


class DimensionMismatch(RasdiError, ValueError):
    code = "dimension_mismatch"


class SingularMatrixError(RasdiError, ArithmeticError):
    code = "singular_matrix"


class SingularD(SingularMatrixError):
    code = "singular_d"


class SingularStepMatrix(SingularMatrixError):
    code = "singular_step_matrix"


class SingularLocalMatrix(SingularMatrixError):
    code = "singular_local_matrix"


class SingularAlgebraicBlock(SingularMatrixError):
    code = "singular_algebraic_block"


class InconsistentInitialState(RasdiError, ValueError):
    code = "inconsistent_initial_state"


class NotACover(RasdiError, ValueError):
    code = "not_a_cover"


class EmptyInterface(RasdiError, ValueError):
    code = "empty_interface"


class UnknownSelector(RasdiError, KeyError):
    code = "unknown_selector"


class NotTwoPartitions(RasdiError, ValueError):
    code = "not_two_partitions"


class UnitEigenvalue(RasdiError, ArithmeticError):
    code = "unit_eigenvalue"


class RankDeficientHistory(RasdiError, ArithmeticError):
    code = "rank_deficient_history"


class ConvergenceError(RasdiError, RuntimeError):
    code = "no_convergence"


class HistoryNotFull(RasdiError, ValueError):
    code = "history_not_full"


class CoefficientBlowup(RasdiError, ArithmeticError):
    code = "coefficient_blowup"


class UnknownCircuitId(RasdiError, KeyError):
    code = "unknown_circuit"


class FloatingNode(RasdiError, ValueError):
    code = "floating_node"


class NetlistSyntaxError(RasdiError, ValueError):
    code = "netlist_syntax"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where += ": "
        super().__init__(where + message)
