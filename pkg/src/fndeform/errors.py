"""Exception hierarchy.

The CLI maps these onto exit codes: ``InputError`` -> 1, ``BudgetExhausted``
-> 2, ``CertificationFailed`` -> 3.
"""


class FnDeformError(Exception):
    """Base class; ``stage`` names the pipeline step that raised, if any."""

    stage = None

    def tagged(self, stage):
        self.stage = stage
        return self


class InputError(FnDeformError, ValueError):
    pass


class SpecMismatch(InputError):
    pass


class NotRegularError(InputError):
    pass


class CutLocusError(FnDeformError):
    pass


class BudgetExhausted(FnDeformError):
    def __init__(self, phase, best_distance, message=None):
        self.phase = phase
        self.best_distance = best_distance
        super().__init__(message or f"phase {phase}: best distance {best_distance:.6g} not inside target ball")


class NetUnreachable(BudgetExhausted):
    def __init__(self, max_len, covered_fraction):
        self.max_len = max_len
        self.covered_fraction = covered_fraction
        super().__init__("net", float("nan"),
                         f"net coverage not reached by word length {max_len} "
                         f"(covered fraction {covered_fraction:.4f})")


class TargetTooFar(BudgetExhausted):
    def __init__(self, distance, limit):
        self.limit = limit
        super().__init__("newton", distance,
                         f"torsion target at distance {distance:.3g} exceeds step limit {limit:.3g}")


class NoConvergence(BudgetExhausted):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__("newton", residual,
                         f"Gauss-Newton stalled after {iterations} iterations, residual {residual:.3g}")


class QmaxTooSmall(BudgetExhausted):
    def __init__(self, bound, allowed):
        self.bound = bound
        self.allowed = allowed
        super().__init__("torsion_project", bound,
                         f"torsion projection bound {bound:.4g} is not below {allowed:.4g}; increase qmax")


class CertificationFailed(FnDeformError):
    pass


class ReplayMismatch(CertificationFailed):
    def __init__(self, move_index, residual):
        self.move_index = move_index
        self.residual = residual
        super().__init__(f"replay diverges at move {move_index} (residual {residual:.3g})")
