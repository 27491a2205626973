import numpy as np
import torch

DTYPE = torch.float64


def as_tensor(x):
    """
    Convert an array (or scalar) to a float64 tensor on the CPU.

    Args:
        :x (array-like): Values to convert

    Returns:
        :tensor (torch.Tensor): float64 tensor
    """
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def embedding_wavelengths(n_freqs, shortest=1.0, longest=1000.0):
    """
    Geometrically spaced wavelengths of the sinusoidal time features.

    Args:
        :n_freqs (int): Number of wavelengths
        :shortest (float, default=1.0): Smallest wavelength
        :longest (float, default=1000.0): Largest wavelength

    Returns:
        :wavelengths (torch.Tensor): Tensor of shape (n_freqs,)
    """
    if n_freqs == 1:
        return torch.tensor([shortest], dtype=DTYPE)
    return torch.logspace(np.log10(shortest), np.log10(longest), n_freqs, dtype=DTYPE)


def time_embedding(t, n_freqs):
    """
    Sinusoidal features [sin(log t / w_j), cos(log t / w_j)] of the diffusion time.

    Args:
        :t (torch.Tensor): Times of shape (n,), all > 0
        :n_freqs (int): Number of wavelengths w_j

    Returns:
        :emb (torch.Tensor): Features of shape (n, 2 * n_freqs)
    """
    arg = torch.log(t)[:, None] / embedding_wavelengths(n_freqs)[None, :]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


def quadratic_norm(r, G):
    """Per-row quadratic form r G r^T."""
    return torch.einsum('ni,ij,nj->n', r, G, r)


def noise_scale(t):
    """sigma_t = sqrt(1 - exp(-t)) for a tensor of times."""
    return torch.sqrt(-torch.expm1(-t))


def flat_parameters(net):
    """All parameters of a module as one detached float64 vector."""
    return torch.nn.utils.parameters_to_vector(net.parameters()).detach().clone()


def set_flat_parameters(net, vector):
    """Overwrite the parameters of a module from a flat vector."""
    torch.nn.utils.vector_to_parameters(as_tensor(vector), net.parameters())
