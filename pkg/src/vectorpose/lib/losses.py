"""
Pretext and fine-tuning objectives.

VP: mean over vectors of the L1 errors of sigmoid(r), sigmoid(theta) and
tanh(phi) predictions against normalized spherical targets. The phi term is
the minimum over the wrap candidates phi, phi - 2 and phi + 2 (normalized
units), ties going to the first candidate.

BFR: mean voxel L1 (or L2 for the plain-reconstruction control) plus alpha
times the mean boundary L1.

Total: lambda * BFR + (1 - lambda) * VP.

Batch losses are means over crops of per-crop losses.
"""

from collections import namedtuple
from dataclasses import asdict, dataclass, field
import logging

import torch
import torch.nn.functional as F

from ..errors import InvalidArgumentError

__all__ = [
    "BFRLogits",
    "LossBreakdown",
    "RECONSTRUCTION_CRITERIA",
    "vp_loss",
    "vp_loss_terms",
    "bfr_loss",
    "bfr_loss_terms",
    "total_loss",
    "pretext_loss",
    "soft_dice_loss",
    "segmentation_loss",
]

logger = logging.getLogger(__name__)

RECONSTRUCTION_CRITERIA = ("l1", "l2")

BFRLogits = namedtuple("BFRLogits", ["voxel", "boundary"])


@dataclass
class LossBreakdown:
    l_vp: float
    l_bfr: float
    l_total: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _as_tensor(value, like):
    return torch.as_tensor(value, dtype=like.dtype, device=like.device)


def _batched(tensor, ndim):
    return tensor.unsqueeze(0) if tensor.dim() == ndim - 1 else tensor


def vp_loss_terms(logits, targets):
    """
    Per-crop, per-vector (r, theta, phi) terms with shape (B, n, 3).

    logits: (B, n, 3) or (n, 3); targets: same or broadcastable, a
    VPTargetSet is accepted as well.
    """
    targets = getattr(targets, "targets", targets)
    logits = _batched(logits, 3)
    targets = _batched(_as_tensor(targets, logits), 3)
    if logits.shape[-2:] != targets.shape[-2:] or logits.shape[-1] != 3:
        raise InvalidArgumentError(
            f"VP logits {tuple(logits.shape)} don't match "
            f"targets {tuple(targets.shape)}"
        )

    r_term = (targets[..., 0] - torch.sigmoid(logits[..., 0])).abs()
    theta_term = (targets[..., 1] - torch.sigmoid(logits[..., 1])).abs()

    phi_pred = torch.tanh(logits[..., 2])
    phi = targets[..., 2]
    # identified angles outside [-1, 1] are wrapped back first
    phi = torch.where(
        phi.abs() > 1, torch.remainder(phi + 1, 2) - 1, phi
    )
    candidates = torch.stack([phi, phi - 2, phi + 2], dim=-1)
    # torch.min picks the first minimal candidate
    phi_term, _ = (candidates - phi_pred.unsqueeze(-1)).abs().min(dim=-1)

    return torch.stack([r_term, theta_term, phi_term], dim=-1)


def vp_loss(logits, targets):
    terms = vp_loss_terms(logits, targets)
    # mean over vectors, then over crops
    return terms.sum(dim=-1).mean(dim=-1).mean()


def _check_same_shape(*tensors):
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise InvalidArgumentError(
            f"BFR logits and targets have different extents: {sorted(shapes)}"
        )


def bfr_loss_terms(
    logits, voxel_target, boundary_target, reconstruction="l1"
):
    """(voxel, boundary) mean errors; boundary is None without a target"""
    if reconstruction not in RECONSTRUCTION_CRITERIA:
        raise InvalidArgumentError(
            f"Unknown reconstruction criterion: {reconstruction!r}"
        )
    if torch.is_tensor(logits):
        # (B, 2, D, H, W) as the BFR head outputs it
        logits = BFRLogits(logits[:, 0], logits[:, 1])
    voxel_logits, boundary_logits = logits
    voxel_target = _as_tensor(voxel_target, voxel_logits)

    _check_same_shape(voxel_logits, voxel_target)
    diff = voxel_target - torch.sigmoid(voxel_logits)
    voxel_term = diff.abs() if reconstruction == "l1" else diff * diff
    voxel_term = voxel_term.mean()

    if boundary_target is None:
        return voxel_term, None

    boundary_target = _as_tensor(boundary_target, boundary_logits)
    _check_same_shape(voxel_logits, boundary_logits, boundary_target)
    boundary_term = (boundary_target - torch.sigmoid(boundary_logits)).abs()
    return voxel_term, boundary_term.mean()


def bfr_loss(
    logits, voxel_target, boundary_target, alpha=5.0, reconstruction="l1"
):
    voxel_term, boundary_term = bfr_loss_terms(
        logits, voxel_target, boundary_target, reconstruction
    )
    if boundary_term is None:
        return voxel_term
    return voxel_term + alpha * boundary_term


def total_loss(l_vp, l_bfr, lambda_=0.5):
    if not 0 <= lambda_ <= 1:
        raise InvalidArgumentError(
            f"lambda should be in [0, 1], given: {lambda_!r}"
        )
    return lambda_ * l_bfr + (1 - lambda_) * l_vp


def pretext_loss(
    vp_logits,
    vp_targets,
    bfr_logits,
    voxel_target,
    boundary_target,
    *,
    alpha=5.0,
    lambda_=0.5,
    reconstruction="l1",
):
    """
    Combined objective for a batch as (loss tensor, LossBreakdown).

    vp_logits is None when vector prediction is disabled, boundary_target is
    None when boundary reconstruction is disabled; the missing term is 0.
    """
    diagnostics = {}
    voxel_term, boundary_term = bfr_loss_terms(
        bfr_logits, voxel_target, boundary_target, reconstruction
    )
    l_bfr = voxel_term
    diagnostics["voxel"] = float(voxel_term.detach())
    if boundary_term is not None:
        l_bfr = l_bfr + alpha * boundary_term
        diagnostics["boundary"] = float(boundary_term.detach())

    if vp_logits is None:
        l_vp = torch.zeros((), dtype=l_bfr.dtype, device=l_bfr.device)
    else:
        terms = vp_loss_terms(vp_logits, vp_targets)
        l_vp = terms.sum(dim=-1).mean(dim=-1).mean()
        names = ("r", "theta", "phi")
        for name, value in zip(names, terms.detach().unbind(-1)):
            diagnostics[name] = float(value.mean())

    loss = total_loss(l_vp, l_bfr, lambda_)
    l_vp_value = float(l_vp.detach())
    l_bfr_value = float(l_bfr.detach())
    breakdown = LossBreakdown(
        l_vp=l_vp_value,
        l_bfr=l_bfr_value,
        l_total=total_loss(l_vp_value, l_bfr_value, lambda_),
        diagnostics=diagnostics,
    )
    return loss, breakdown


def soft_dice_loss(logits, labels, num_classes, eps=1e-6):
    """1 - mean soft Dice over foreground classes"""
    probs = torch.softmax(logits, dim=1)
    one_hot = F.one_hot(labels.long(), num_classes).movedim(-1, 1)
    one_hot = one_hot.to(probs.dtype)
    dims = (0,) + tuple(range(2, probs.dim()))
    intersection = (probs * one_hot).sum(dims)
    denominator = probs.sum(dims) + one_hot.sum(dims)
    dice = (2 * intersection + eps) / (denominator + eps)
    return 1 - dice[1:].mean()


def segmentation_loss(logits, labels, num_classes):
    """Voxel-wise cross-entropy plus soft Dice"""
    labels = labels.long()
    return F.cross_entropy(logits, labels) + soft_dice_loss(
        logits, labels, num_classes
    )
