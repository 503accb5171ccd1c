"""Fixed-rank Tucker tensor completion with a preconditioned Riemannian CG."""
from .tensor_core import SparseTensor3, backend_name, set_backend, set_threads
from .tucker import GroupElement, TuckerPoint, TuckerTangent

__version__ = "0.1.0"
