"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid algorithm, problem, or experiment configuration.

    Carries every violation found, not just the first, so a config file can
    be fixed in one pass.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DivergedError(RuntimeError):
    """An iterate or gradient estimator stopped being finite.

    The optimizer state is left at the last finite iterate; ``step`` is the
    1-based index of the step that failed.
    """

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite values encountered at step {step}")
