"""Pure color-mixing math for ordered translucent layers.

Conventions: an alpha vector has K+1 entries with slot 0 reserved for the
always-opaque background (alpha_0 = 1); log-weights also have K+1 entries and
their exponentials sum to 1. All functions accept either numpy-compatible
array-likes or torch tensors; tensors pass through and stay differentiable,
everything else comes back as float64 numpy. Batching over leading
dimensions is supported everywhere, with layers on the last axis.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import LengthMismatch, NotNormalized

# log(0) is replaced by this before any summation: exp(-80) ~ 1.8e-35 cannot
# disturb float64 sums but keeps every gradient finite.
LOG_FLOOR = -80.0

# |sum(exp(w)) - 1| above this fails validation in logweights_to_color.
NORMALIZATION_TOL = 1e-4


def _tensor(x) -> tuple[torch.Tensor, bool]:
    if torch.is_tensor(x):
        return x, True
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr), False


def _palette_tensor(palette) -> tuple[torch.Tensor, bool]:
    colors = getattr(palette, "colors", palette)
    return _tensor(colors)


def _finish(result: torch.Tensor, *was_tensor: bool):
    if any(was_tensor):
        return result
    return result.detach().numpy()


def over(color_a, alpha_a, color_b, alpha_b):
    """Composite translucent a over b (premature opacity folding included).

    Returns (color, alpha). Colors broadcast over leading dims with the
    channel axis last.
    """
    ca = np.asarray(color_a, dtype=np.float64)
    cb = np.asarray(color_b, dtype=np.float64)
    aa = np.asarray(alpha_a, dtype=np.float64)
    ab = np.asarray(alpha_b, dtype=np.float64)
    color = ca * aa[..., None] + cb * (ab * (1.0 - aa))[..., None]
    alpha = aa + ab * (1.0 - aa)
    return color, alpha


def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x).clamp_min(LOG_FLOOR)


def composite_direct(palette, alphas):
    """Ordered back-to-front composite written as the telescoping sum

        c_K + sum_i (c_{i-1} - c_i) * prod_{j>=i} (1 - alpha_j).

    Equivalent to folding `over` upward from the opaque background.
    """
    colors, t1 = _palette_tensor(palette)
    a, t2 = _tensor(alphas)
    if a.shape[-1] != colors.shape[0]:
        raise LengthMismatch(
            f"alphas have {a.shape[-1]} entries but palette has {colors.shape[0]}"
        )
    q = 1.0 - a[..., 1:]                       # (..., K), layer survivals
    # S[..., i] = prod_{j >= i} q_j
    s = torch.flip(torch.cumprod(torch.flip(q, [-1]), dim=-1), [-1])
    diffs = colors[:-1] - colors[1:]           # (K, 3): c_{i-1} - c_i
    result = colors[-1] + torch.einsum("...k,kc->...c", s, diffs)
    return _finish(result, t1, t2)


def alphas_to_logweights(alphas):
    """Opacity vector -> log-domain generalized barycentric coordinates.

    w_0 collects every layer's survival log; layer i keeps log(alpha_i) plus
    the survivals of everything above it, so the topmost layer is just
    log(alpha_K). Zero logs clamp to LOG_FLOOR before summation.
    """
    a, was_tensor = _tensor(alphas)
    la = _safe_log(a[..., 1:])                 # (..., K)
    lq = _safe_log(1.0 - a[..., 1:])
    # above[..., i] = sum_{j > i} lq_j
    rev = torch.flip(torch.cumsum(torch.flip(lq, [-1]), dim=-1), [-1])
    above = rev - lq
    w0 = rev[..., :1]
    w = torch.cat([w0, la + above], dim=-1)
    return _finish(w, was_tensor)


def logweights_to_color(logweights, palette):
    """Blend palette colors with exp(w); requires sum(exp(w)) ~ 1."""
    w, t1 = _tensor(logweights)
    colors, t2 = _palette_tensor(palette)
    if w.shape[-1] != colors.shape[0]:
        raise LengthMismatch(
            f"weights have {w.shape[-1]} entries but palette has {colors.shape[0]}"
        )
    s = torch.exp(w)
    err = (s.sum(dim=-1) - 1.0).abs().max()
    if err.item() > NORMALIZATION_TOL:
        raise NotNormalized(f"sum(exp(w)) deviates from 1 by {err.item():.3g}")
    result = torch.einsum("...k,kc->...c", s, colors)
    return _finish(result, t1, t2)


def weights_to_alphas(logweights):
    """Invert the log-weight conversion back to per-layer opacities.

    alpha_i = exp(w_i) / sum_{j<=i} exp(w_j); prefix sums below 1e-9 give 0
    (the order is undeterminable underneath a fully opaque layer).
    """
    w, was_tensor = _tensor(logweights)
    s = torch.exp(w)
    prefix = torch.cumsum(s, dim=-1)
    alphas = torch.where(
        prefix > 1e-9, s / prefix.clamp_min(1e-300), torch.zeros_like(s)
    )
    return _finish(alphas, was_tensor)


def blend_activation(logits):
    """Sigmoid opacities followed by the log-space weight conversion.

    Works directly in log-sigmoid form: log(alpha) = logsigmoid(x) and
    log(1 - alpha) = logsigmoid(-x), so no log(1 - sigmoid(x)) subtraction
    ever happens and the map stays smooth and stable for |logit| <= 40.
    Input (..., K) logits for layers 1..K; output (..., K+1) log-weights.
    """
    x, was_tensor = _tensor(logits)
    la = F.logsigmoid(x)
    lq = F.logsigmoid(-x)
    rev = torch.flip(torch.cumsum(torch.flip(lq, [-1]), dim=-1), [-1])
    above = rev - lq
    w0 = rev[..., :1]
    w = torch.cat([w0, la + above], dim=-1)
    return _finish(w, was_tensor)


def direct_opaque_weights(logits):
    """Ablation path: softmax over [background, layers] instead of ordered
    alpha blending. Returns (..., K+1) linear (not log) weights."""
    x, was_tensor = _tensor(logits)
    padded = torch.cat([torch.zeros_like(x[..., :1]), x], dim=-1)
    return _finish(torch.softmax(padded, dim=-1), was_tensor)
