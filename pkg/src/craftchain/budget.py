"""Global frame accounting for online training.

Training may interact with environments only through a shared FrameBudget:
every wrapped env step consumes exactly one frame, and stepping past the cap
raises BudgetExhausted, which trainers convert into checkpoint-and-stop.
Evaluation episodes use bare environments and are never counted.
"""

from __future__ import annotations

from .errors import BudgetExhausted


class FrameBudget:
    def __init__(self, cap: int, used: int = 0):
        if cap < 0:
            raise ValueError("cap must be nonnegative")
        if not 0 <= used <= cap:
            raise ValueError("used must be within [0, cap]")
        self.cap = int(cap)
        self._used = int(used)

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> int:
        return self.cap - self._used

    def consume(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("cannot consume a negative frame count")
        if self._used + n > self.cap:
            raise BudgetExhausted(
                f"frame budget exhausted: {self._used} used + {n} requested "
                f"exceeds cap {self.cap}")
        self._used += n

    def to_dict(self) -> dict:
        return {"cap": self.cap, "used": self._used}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameBudget":
        return cls(cap=d["cap"], used=d["used"])


class BudgetedEnv:
    """Environment wrapper that charges one frame per step."""

    def __init__(self, env, budget: FrameBudget):
        self.env = env
        self.budget = budget

    def reset(self, seed: int, variant=None):
        return self.env.reset(seed, variant) if variant is not None \
            else self.env.reset(seed)

    def step(self, action_vec):
        self.budget.consume(1)
        return self.env.step(action_vec)

    @property
    def state(self):
        return self.env.state

    @property
    def config(self):
        return self.env.config

    @property
    def codec(self):
        return self.env.codec

    def action_vector(self, action):
        return self.env.action_vector(action)

    def score(self) -> float:
        return self.env.score()
