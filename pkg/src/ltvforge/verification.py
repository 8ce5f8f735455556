"""Finite-difference verification of every loss term on a tiny model.

Discrete and detached quantities (predicted buckets, the marginals fed to the
alignment gate, the whale-branch input and the trunk output read by the
distillation heads) are pinned at their base-point values, and dropout is off.
The noise draw is keyed on the context, so it is identical across evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buckets import assign_bucket, fit_bucket_spec
from .cascade import CascadeConfig
from .data import GeneratorConfig, generate
from .model import LOSS_COMPONENTS, Batch, CascadeOrdinalNet, ModelConfig
from .nn import ForwardContext, ParamSet, grad_check

CHECK_COMPONENTS = (*LOSS_COMPONENTS, "total")
TOLERANCE = 1e-4


def tiny_config(**overrides) -> ModelConfig:
    """All modules on, well under 2k parameters."""
    base = dict(encoder_hidden=(8, 6), cascade=CascadeConfig(trunk_hidden=6, trunk_output=6, head_width=4),
                bucket_embedding_dim=3, align_dim=6, residual_dims=(5, 4), attention_hidden=4,
                dual_head_hidden=(6, 4))
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class CheckProblem:
    net: CascadeOrdinalNet
    params: ParamSet
    batch: Batch
    y: np.ndarray
    held_buckets: np.ndarray


def tiny_problem(seed: int = 0, batch_size: int = 8, jitter: float = 0.2,
                 cfg: ModelConfig | None = None) -> CheckProblem:
    """A batch that covers the zero bucket, the top bucket and the middle.

    Biases start at zero, which leaves relu units sitting exactly on their kink
    for zero inputs; ``jitter`` perturbs every parameter to move them off it.
    The held bucket assignment is the true one, so the whale set is never empty.
    """
    cfg = cfg or tiny_config(seed=seed)
    ds = generate(GeneratorConfig(n_samples=400, n_numeric=3, n_categorical=1, cat_cardinality=4,
                                  signal_corr=0.9, seed=seed))
    spec = fit_bucket_spec(ds.y, cfg.n_buckets)
    net = CascadeOrdinalNet(cfg, ds.numeric.shape[1], ds.cardinalities, spec, baseline_scale=float(ds.y.mean()))
    params = net.init_params(seed)
    rng = np.random.default_rng([seed, 99])
    for value in params.values.values():
        value += rng.normal(0.0, jitter, value.shape)
    buckets = assign_bucket(ds.y, spec)
    zero = np.flatnonzero(buckets == 1)[:2]
    top = np.flatnonzero(buckets == cfg.n_buckets)[:3]
    rest = np.setdiff1d(np.arange(len(ds)), np.concatenate([zero, top]))
    rows = np.concatenate([zero, top, rng.choice(rest, batch_size - zero.size - top.size, replace=False)])
    y = ds.y[rows]
    return CheckProblem(net, params, Batch(ds.numeric[rows], ds.categorical[rows]), y,
                        assign_bucket(y, spec))


def component_checks(problem: CheckProblem | None = None, eps: float = 1e-5, corrupt: float = 1.0,
                     components=CHECK_COMPONENTS) -> dict[str, dict]:
    """Worst relative error per loss component (``total`` is the full composite)."""
    problem = problem or tiny_problem()
    out = {}
    for comp in components:
        use = LOSS_COMPONENTS if comp == "total" else (comp,)
        ctx = ForwardContext(train=True, seed=0, step=3, update_stats=False, dropout=False,
                             extras={"detached": {"b_hat": problem.held_buckets}})

        def loss_and_grad(params, use=use, ctx=ctx):
            params.zero_grad()
            _, _, br = problem.net.run(params, problem.batch, ctx, problem.y, theta=0.5,
                                       temperature=1.5, backward=True, components=use)
            return br["terms"], {k: v.copy() for k, v in params.grads.items()}

        worst, per_tensor = grad_check(problem.params, loss_and_grad, eps=eps, max_params=2000,
                                       corrupt=corrupt)
        out[comp] = {"worst": worst, "passed": worst <= TOLERANCE,
                     "tensor": max(per_tensor, key=per_tensor.get) if per_tensor else None}
    return out
