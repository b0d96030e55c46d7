import os
import numpy as np
from typing import Sequence, Tuple


class MsdError(Exception):
    """Base class for simulation errors"""


class NumericError(MsdError, ArithmeticError):
    """Non-finite input, scale overflow, degenerate reference or inexact accumulation"""


class ShapeError(MsdError, ValueError):
    """Operand shapes do not conform"""


class ConfigError(MsdError, ValueError):
    """Invalid experiment configuration or command-line usage"""


class FileUtils:
    @staticmethod
    def ensure_directory(directory_path: str) -> str:
        """Ensure directory exists, create if not"""
        os.makedirs(directory_path, exist_ok=True)
        return directory_path

    @staticmethod
    def ensure_parent(file_path: str) -> str:
        """Create the parent directory of a file path"""
        FileUtils.ensure_directory(os.path.dirname(os.path.abspath(file_path)))
        return file_path


class ValidationUtils:
    @staticmethod
    def require_finite(values: np.ndarray, what: str = "input") -> np.ndarray:
        """Raise NumericError when any element is NaN or infinite"""
        arr = np.asarray(values)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in {what}")
        return arr

    @staticmethod
    def require_matrix(values: np.ndarray, what: str) -> np.ndarray:
        """Validate a 2-D array"""
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise ShapeError(f"{what} must be 2-D, got shape {arr.shape}")
        return arr

    @staticmethod
    def require_conformant(x_shape: Tuple[int, ...], w_shape: Tuple[int, ...]) -> None:
        """Check x (b x n) against w (m x n)"""
        if len(x_shape) != 2 or len(w_shape) != 2 or x_shape[1] != w_shape[1]:
            raise ShapeError(f"shape mismatch: x {x_shape} vs w {w_shape}")

    @staticmethod
    def require_block_aligned(length: int, block: int, what: str) -> None:
        """Reject lengths that are not a whole number of blocks"""
        if length <= 0 or length % block != 0:
            raise ShapeError(f"{what} length {length} is not divisible by {block}")

    @staticmethod
    def require_positive(values: Sequence[int], names: Sequence[str]) -> None:
        """Validate positive integer parameters"""
        for value, name in zip(values, names):
            if int(value) <= 0:
                raise ShapeError(f"{name} must be positive, got {value}")
