"""Exception types shared across the package."""


class ChainStructureError(ValueError):
    """Matrix shapes of a chain do not agree with each other."""


class InvalidChainError(ValueError):
    """A chain failed validation; ``violations`` lists what went wrong."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid Markov chain:\n{lines}")


class NonConvergenceError(RuntimeError):
    """Fixed-point iteration ran out of iterations before reaching ``tol``."""

    def __init__(self, last_iterate, residual, n_iter):
        self.last_iterate = last_iterate
        self.residual = residual
        self.n_iter = n_iter
        super().__init__(
            f"fixed-point iteration did not converge after {n_iter} iterations "
            f"(residual {residual:.3e})"
        )


class SolverError(RuntimeError):
    """Dense linear solve failed (singular I - Q)."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, learning_rate, loss):
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}: loss={loss!r} "
            f"with learning_rate={learning_rate}"
        )


class TrajectoryCapError(RuntimeError):
    """A sampled trajectory exceeded the step cap without absorbing."""


class DatasetError(ValueError):
    """Dataset is empty or indexes outside ``[1..M]`` / ``[1..K]``."""
