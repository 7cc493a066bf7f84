"""
Parameter containers.

``Module`` collects ``Parameter`` attributes and child modules in attribute
order, which gives every parameter a stable dotted name. Those names are what
checkpoints are keyed by.
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.autodiff.tensor import DiffTensor, get_default_dtype
from src.utils.errors import CheckpointError


class Parameter(DiffTensor):
    """
    Trainable tensor plus its Adam state.

    ``m``/``v`` are the first/second moment buffers and always match the
    parameter's shape; ``step`` counts applied updates.
    """

    def __init__(self, data: np.ndarray, name: Optional[str] = None, trainable: bool = True):
        super().__init__(np.array(data, dtype=get_default_dtype()), requires_grad=trainable, name=name)
        self.trainable = trainable
        self.reset_state()

    def reset_state(self) -> None:
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def cast(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)
        if self._grad is not None:
            self._grad = self._grad.astype(dtype)


class Module:
    """Base class for every network in the pipeline."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # ------------------------------------------------------------------ #
    #  Parameter traversal
    # ------------------------------------------------------------------ #
    def named_parameters(self, prefix: str = "", include_frozen: bool = True) -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            full = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                if value.name is None:
                    value.name = full
                if include_frozen or value.trainable:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.", include_frozen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.", include_frozen)
                    elif isinstance(item, Parameter) and (include_frozen or item.trainable):
                        yield f"{full}.{i}", item

    def parameters(self, include_frozen: bool = False) -> List[Parameter]:
        return [p for _, p in self.named_parameters(include_frozen=include_frozen)]

    def zero_grad(self) -> None:
        for p in self.parameters(include_frozen=True):
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    # ------------------------------------------------------------------ #
    #  State
    # ------------------------------------------------------------------ #
    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise CheckpointError(f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if state[name].shape != p.data.shape:
                raise CheckpointError(f"Shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype, copy=True)
            p.reset_state()

    def to(self, dtype) -> "Module":
        """Cast every parameter, e.g. to float64 for gradient checks."""
        for p in self.parameters(include_frozen=True):
            p.cast(dtype)
        return self
