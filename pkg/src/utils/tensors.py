# src/utils/tensors.py
"""Conversions between H×W×C numpy frames/flows and (1, C, H, W) graph tensors."""

from typing import Union

import numpy as np

from src.autodiff.tensor import DiffTensor, get_default_dtype


def to_tensor(array: np.ndarray, requires_grad: bool = False) -> DiffTensor:
    """H×W (mask), H×W×C (frame / flow) -> (1, C, H, W)."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"expected an H×W or H×W×C array, got shape {arr.shape}")
    nchw = np.ascontiguousarray(arr.transpose(2, 0, 1)[None], dtype=get_default_dtype())
    return DiffTensor(nchw, requires_grad=requires_grad)


def to_array(tensor: Union[DiffTensor, np.ndarray]) -> np.ndarray:
    """(1, C, H, W) -> H×W×C (C == 1 collapses to H×W)."""
    data = tensor.data if isinstance(tensor, DiffTensor) else np.asarray(tensor)
    out = data[0].transpose(1, 2, 0)
    return out[..., 0] if out.shape[-1] == 1 else out


def ensure_tensor(value: Union[DiffTensor, np.ndarray]) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else to_tensor(value)
