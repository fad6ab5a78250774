"""Exception types shared across the solver."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (counts, extents, material ranges)."""


class GeometryError(ValueError):
    """Degenerate or inconsistent geometric input (bad cutter, open loops)."""


class AssemblyError(RuntimeError):
    """Internal inconsistency detected during assembly (dof map vs cut state)."""


class ElementInversionError(RuntimeError):
    """A solid element reached non-positive Jacobian determinant."""

    def __init__(self, elem, detf):
        self.elem = int(elem)
        self.detf = float(detf)
        super().__init__(f"element {elem} inverted (det F = {detf:.3e})")


class MeshDistortionError(RuntimeError):
    """ALE mesh motion produced an inverted patch element."""

    def __init__(self, elem, detj):
        self.elem = int(elem)
        self.detj = float(detj)
        super().__init__(f"patch element {elem} distorted (det J = {detj:.3e})")


class NonlinearDivergenceError(RuntimeError):
    """Newton loop exceeded the iteration budget."""

    def __init__(self, history):
        self.history = list(history)
        super().__init__(
            "Newton did not converge; residual history: "
            + ", ".join(f"{r:.3e}" for r in self.history)
        )


class SolverError(RuntimeError):
    """Linear solver failure (singular or numerically rank-deficient system)."""

class CycleLimitError(RuntimeError):
    """Function-space-change cycles exceeded the per-step cap."""

    def __init__(self, cycles):
        self.cycles = int(cycles)
        super().__init__(f"active dof set kept changing after {cycles} cycles")
