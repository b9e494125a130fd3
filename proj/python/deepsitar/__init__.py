from ._core import DimMismatch, FormatError, IoError, Model, eval_basis, run_cli, simulate

__all__ = ["DimMismatch", "FormatError", "IoError", "Model", "eval_basis", "run_cli", "simulate"]
