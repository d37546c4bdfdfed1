import torch


def _as_state(x, dim=None):
    """Coerces coordinates into a float64 state tensor.

    Args:
        x: sequence of reals or tensor of shape (N,) or (B, N).
        dim (int, optional): expected number of coordinates.

    Returns:
        torch.Tensor: float64 tensor.
    """
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(x, dtype=torch.float64)
    elif x.dtype != torch.float64:
        x = x.to(torch.float64)
    if x.dim() == 0:
        x = x.reshape(1)
    if dim is not None and x.size(-1) != dim:
        raise ValueError("State has {} coordinates but the model dimension is {}"
                         .format(x.size(-1), dim))
    return x


def _as_time(t, name='t', strict=True):
    t = float(t)
    if strict and not t > 0:
        raise ValueError("{} must be positive, got {}".format(name, t))
    if not strict and t < 0:
        raise ValueError("{} must be nonnegative, got {}".format(name, t))
    return t


def inner(u, v):
    """Batched Euclidean inner product over the last axis.
    """
    return (u * v).sum(dim=-1)
