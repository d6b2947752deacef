from typing import List, Optional, Sequence

import numpy as np


class MomentumSgd:
    """SGD with heavy-ball momentum and coupled L2 weight decay.

    Update per array: g ← grad + wd·p; v ← μ·v + g; p ← p − lr·v.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: Optional[List[np.ndarray]] = None

    def step(
        self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
    ) -> List[np.ndarray]:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p, dtype=np.float64) for p in params]
        updated = []
        for index, (param, grad) in enumerate(zip(params, grads)):
            g = grad + self.weight_decay * param
            self._velocity[index] = self.momentum * self._velocity[index] + g
            updated.append(param - self.learning_rate * self._velocity[index])
        return updated
