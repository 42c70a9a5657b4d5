"""End-to-end toy study: synthetic images flow through partition planning,
the gated global mixture, per-patch query compression, relevance routing,
and a linear readout trained against a frozen teacher.

The teacher reads the mean feature token over every full-scale patch of the
image, so the downsampled global view alone cannot reach zero error while
the local patches carry the missing detail. Staged training (global adapter
first, then local compression with the adapter frozen, then everything
jointly) competes against single-stage joint training on that gap.

All randomness is seeded; evaluation always runs with gate and router noise
disabled. Selection through the router is a hard gather, so training
gradients flow only through kept tokens and the gradient of one step treats
that step's selection as constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adapters import (
    GateParams,
    MlpParams,
    QFormerParams,
    adapter_grads,
    init_gate,
    init_mlp,
    init_qformer,
    moe_apply,
    qformer_forward,
    qformer_vjp,
)
from .numerics import make_rng
from .routing import RouterConfig, RouterSelection, apply_selection, route_tokens
from .slicing import extract_patches, make_global_view, plan_partition, resize_bilinear

__all__ = [
    "PipelineConfig",
    "Sample",
    "ToyTask",
    "PipelineParams",
    "StageSchedule",
    "RunReport",
    "make_toy_task",
    "init_params",
    "forward",
    "batch_loss_and_grads",
    "evaluate",
    "ablate",
    "train",
    "default_schedule",
    "stage_plan",
    "params_arrays",
    "params_vector",
    "set_params_vector",
]

PARAM_GROUPS = ("adapter", "local", "readout")
FORWARD_MODES = ("full", "global_only", "local_only")


@dataclass(frozen=True)
class PipelineConfig:
    feat_dim: int = 8          # vision-feature width per token
    model_dim: int = 8         # readout-space width
    out_dim: int = 4
    local_queries: int = 4
    gamma: float = 0.75
    router_noise_sigma: float = 0.1
    gate_noise: bool = True
    base: int = 96             # tile side in pixels
    grid: int = 3              # feature cells per tile side
    max_grid: int = 6
    sizes: tuple[int, ...] = (96, 128, 160, 192, 224, 256, 288)
    n_train: int = 20
    n_eval: int = 10

    def __post_init__(self):
        if self.base % self.grid != 0:
            raise ValueError("tile side must be divisible by the cell grid")

    @property
    def cell(self) -> int:
        return self.base // self.grid

    @property
    def tokens_per_tile(self) -> int:
        return self.grid * self.grid


@dataclass
class Sample:
    width: int
    height: int
    global_tokens: np.ndarray            # (grid^2, feat_dim)
    patch_tokens: list[np.ndarray]       # per patch, (grid^2, feat_dim)
    target: np.ndarray                   # (out_dim,)


@dataclass
class ToyTask:
    """Frozen data, featurizer, teacher, and routing text for one experiment.

    The teacher is linear in two frozen views: the mean token over every
    full-scale patch (fine detail, weight w_teacher) and the mean token of
    the downsampled global view (coarse context, weight w_teacher_coarse).
    Each branch therefore carries signal the other cannot fully supply."""

    cfg: PipelineConfig
    seed: int
    w_feat: np.ndarray            # (cell^2, feat_dim) shared pixel->token map
    w_teacher: np.ndarray         # (feat_dim, out_dim) on the patch-token mean
    w_teacher_coarse: np.ndarray  # (feat_dim, out_dim) on the global-token mean
    text_embed: np.ndarray        # (1, model_dim)
    train_set: list[Sample]
    eval_set: list[Sample]


def _featurize_tile(tile: np.ndarray, w_feat: np.ndarray, grid: int) -> np.ndarray:
    cell = tile.shape[0] // grid
    cells = tile.reshape(grid, cell, grid, cell).transpose(0, 2, 1, 3)
    return cells.reshape(grid * grid, cell * cell) @ w_feat


def _build_sample(pixels: np.ndarray, cfg: PipelineConfig, w_feat: np.ndarray,
                  w_teacher: np.ndarray, w_teacher_coarse: np.ndarray) -> Sample:
    h, w = pixels.shape
    plan = plan_partition(w, h, base=cfg.base, max_grid=cfg.max_grid)
    g_tokens = _featurize_tile(make_global_view(pixels, base=cfg.base), w_feat, cfg.grid)
    p_tokens = [_featurize_tile(p, w_feat, cfg.grid)
                for p in extract_patches(pixels, plan)]
    target = (np.vstack(p_tokens).mean(axis=0) @ w_teacher
              + g_tokens.mean(axis=0) @ w_teacher_coarse)
    return Sample(width=w, height=h, global_tokens=g_tokens,
                  patch_tokens=p_tokens, target=target)


def make_toy_task(seed: int, cfg: PipelineConfig | None = None) -> ToyTask:
    cfg = cfg or PipelineConfig()
    rng = make_rng(seed)
    cell_px = cfg.cell * cfg.cell
    w_feat = rng.standard_normal((cell_px, cfg.feat_dim)) / cfg.cell
    w_teacher = rng.standard_normal((cfg.feat_dim, cfg.out_dim)) / np.sqrt(cfg.feat_dim)
    # the coarse term is kept small so fine detail dominates the objective,
    # but large enough that dropping the global branch measurably hurts
    w_teacher_coarse = 0.3 * rng.standard_normal((cfg.feat_dim, cfg.out_dim)) \
        / np.sqrt(cfg.feat_dim)
    text_embed = rng.standard_normal((1, cfg.model_dim))

    def draw(n):
        # smooth field the global view can recover plus fine texture that
        # only survives in the near-full-scale local patches
        out = []
        for _ in range(n):
            w = int(rng.choice(cfg.sizes))
            h = int(rng.choice(cfg.sizes))
            smooth = resize_bilinear(rng.random((5, 5)), h, w)
            fine = rng.random((h, w))
            out.append(_build_sample(0.7 * smooth + 0.3 * fine, cfg,
                                     w_feat, w_teacher, w_teacher_coarse))
        return out

    return ToyTask(cfg=cfg, seed=seed, w_feat=w_feat, w_teacher=w_teacher,
                   w_teacher_coarse=w_teacher_coarse, text_embed=text_embed,
                   train_set=draw(cfg.n_train), eval_set=draw(cfg.n_eval))


@dataclass
class PipelineParams:
    mlp: MlpParams
    qf_global: QFormerParams   # one query per global token position
    gate: GateParams
    qf_local: QFormerParams
    readout: np.ndarray        # (model_dim, out_dim)


def init_params(task: ToyTask, seed: int) -> PipelineParams:
    cfg = task.cfg
    rng = make_rng(seed ^ 0x5EED)
    return PipelineParams(
        mlp=init_mlp(rng, cfg.feat_dim, cfg.model_dim),
        qf_global=init_qformer(rng, cfg.tokens_per_tile, cfg.feat_dim, cfg.model_dim),
        gate=init_gate(rng, cfg.feat_dim, noise_enabled=cfg.gate_noise),
        qf_local=init_qformer(rng, cfg.local_queries, cfg.feat_dim, cfg.model_dim),
        readout=rng.standard_normal((cfg.model_dim, cfg.out_dim)) / np.sqrt(cfg.model_dim),
    )


def params_arrays(params: PipelineParams) -> dict[str, list[np.ndarray]]:
    """Arrays by trainable group; the group split drives stage freezing."""
    return {
        "adapter": [params.mlp.w1, params.mlp.b1, params.mlp.w2, params.mlp.b2,
                    params.qf_global.queries, params.qf_global.wk,
                    params.qf_global.wv, params.qf_global.wo,
                    params.gate.w_g, params.gate.w_noise],
        "local": [params.qf_local.queries, params.qf_local.wk,
                  params.qf_local.wv, params.qf_local.wo],
        "readout": [params.readout],
    }


def params_vector(params: PipelineParams) -> np.ndarray:
    chunks = []
    for group in PARAM_GROUPS:
        chunks.extend(a.ravel() for a in params_arrays(params)[group])
    return np.concatenate(chunks)


def set_params_vector(params: PipelineParams, vec: np.ndarray) -> None:
    pos = 0
    for group in PARAM_GROUPS:
        for a in params_arrays(params)[group]:
            a.flat[:] = vec[pos:pos + a.size]
            pos += a.size
    if pos != vec.size:
        raise ValueError("parameter vector length mismatch")


@dataclass
class ForwardCache:
    mode: str
    gate_sample: object | None
    selection: RouterSelection | None
    n_global: int
    n_rows: int
    pooled: np.ndarray
    pred: np.ndarray


def forward(sample: Sample, params: PipelineParams, task: ToyTask,
            mode: str = "full", rng: np.random.Generator | None = None,
            gate_override=None,
            fixed_selection: RouterSelection | None = None):
    """One image through the pipeline; returns (prediction, cache).

    With a generator the gate noise and router sort noise are live (training
    mode); without one the pass is deterministic (evaluation mode).
    """
    if mode not in FORWARD_MODES:
        raise ValueError(f"unknown forward mode '{mode}'")
    cfg = task.cfg
    rows = []
    gate_s = None
    sel = None
    n_global = 0
    if mode != "local_only":
        g_out, gate_s = moe_apply(sample.global_tokens, params.mlp,
                                  params.qf_global, params.gate,
                                  rng=rng, gate_override=gate_override)
        n_global = g_out.shape[0]
        rows.append(g_out)
    if mode != "global_only":
        local = np.vstack([qformer_forward(t, params.qf_local)
                           for t in sample.patch_tokens])
        if fixed_selection is not None:
            sel = fixed_selection
        else:
            router = RouterConfig(gamma=cfg.gamma,
                                  train_noise_sigma=cfg.router_noise_sigma,
                                  training_mode=rng is not None)
            sel = route_tokens(local, task.text_embed, router, rng)
        rows.append(apply_selection(local, sel))
    feats = np.vstack(rows)
    pooled = feats.mean(axis=0)
    pred = pooled @ params.readout
    cache = ForwardCache(mode=mode, gate_sample=gate_s, selection=sel,
                         n_global=n_global, n_rows=feats.shape[0],
                         pooled=pooled, pred=pred)
    return pred, cache


def _zero_grads(params: PipelineParams) -> PipelineParams:
    return PipelineParams(
        mlp=MlpParams(*(np.zeros_like(a) for a in
                        (params.mlp.w1, params.mlp.b1, params.mlp.w2, params.mlp.b2))),
        qf_global=QFormerParams(*(np.zeros_like(a) for a in
                                  (params.qf_global.queries, params.qf_global.wk,
                                   params.qf_global.wv, params.qf_global.wo))),
        gate=GateParams(np.zeros_like(params.gate.w_g),
                        np.zeros_like(params.gate.w_noise),
                        params.gate.noise_enabled),
        qf_local=QFormerParams(*(np.zeros_like(a) for a in
                                 (params.qf_local.queries, params.qf_local.wk,
                                  params.qf_local.wv, params.qf_local.wo))),
        readout=np.zeros_like(params.readout),
    )


def _accumulate(total: PipelineParams, part: PipelineParams, weight: float) -> None:
    for t_arrs, p_arrs in zip(params_arrays(total).values(), params_arrays(part).values()):
        for t, p in zip(t_arrs, p_arrs):
            t += weight * p


def _add_fields(dst, src, names) -> None:
    for name in names:
        getattr(dst, name).__iadd__(getattr(src, name))


def _sample_loss_and_grads(sample: Sample, params: PipelineParams, task: ToyTask,
                           mode: str, rng, gate_override, fixed_selection):
    pred, cache = forward(sample, params, task, mode, rng, gate_override,
                          fixed_selection)
    resid = pred - sample.target
    sloss = 0.5 * float(resid @ resid)
    grads = _zero_grads(params)
    grads.readout += np.outer(cache.pooled, resid)
    drow = (params.readout @ resid) / cache.n_rows
    if mode != "local_only":
        dglobal = np.tile(drow, (cache.n_global, 1))
        d_mlp, d_qfg, d_gate, _ = adapter_grads(
            sample.global_tokens, params.mlp, params.qf_global, params.gate,
            dglobal, cache.gate_sample)
        _add_fields(grads.mlp, d_mlp, ("w1", "b1", "w2", "b2"))
        _add_fields(grads.qf_global, d_qfg, ("queries", "wk", "wv", "wo"))
        _add_fields(grads.gate, d_gate, ("w_g", "w_noise"))
    if mode != "global_only":
        sel = cache.selection
        nq = params.qf_local.n_queries
        n_local = nq * len(sample.patch_tokens)
        dlocal = np.zeros((n_local, task.cfg.model_dim))
        dlocal[sel.kept_indices] = drow
        for p_idx, tokens in enumerate(sample.patch_tokens):
            dout_p = dlocal[p_idx * nq:(p_idx + 1) * nq]
            if not dout_p.any():
                continue
            d_qfl, _ = qformer_vjp(tokens, params.qf_local, dout_p)
            _add_fields(grads.qf_local, d_qfl, ("queries", "wk", "wv", "wo"))
    return sloss, grads


def batch_loss_and_grads(samples, params: PipelineParams, task: ToyTask,
                         mode: str = "full", rng=None, gate_override=None,
                         fixed_selections=None):
    """Mean loss (0.5 ||pred - target||^2 per image) and mean gradients."""
    total = _zero_grads(params)
    total_loss = 0.0
    inv = 1.0 / len(samples)
    for i, sample in enumerate(samples):
        fixed = fixed_selections[i] if fixed_selections is not None else None
        sloss, grads = _sample_loss_and_grads(sample, params, task, mode, rng,
                                              gate_override, fixed)
        total_loss += inv * sloss
        _accumulate(total, grads, inv)
    return total_loss, total


def evaluate(params: PipelineParams, task: ToyTask, mode: str = "full") -> float:
    """Mean held-out loss with gate and router noise disabled."""
    total = 0.0
    for sample in task.eval_set:
        pred, _ = forward(sample, params, task, mode, rng=None)
        resid = pred - sample.target
        total += 0.5 * float(resid @ resid)
    return total / len(task.eval_set)


def ablate(params: PipelineParams, task: ToyTask, arm: str) -> float:
    """Held-out loss with the other branch's tokens removed before pooling."""
    modes = {"only_global": "global_only", "only_local": "local_only"}
    if arm not in modes:
        raise ValueError("arm must be 'only_global' or 'only_local'")
    return evaluate(params, task, modes[arm])


@dataclass(frozen=True)
class StageSchedule:
    """Training recipe: stage count is fixed by the mode (3 for alternating,
    1 otherwise); steps and learning rates are per stage."""

    mode: str
    steps: tuple[int, ...]
    lr: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        n = len(stage_plan(self.mode))
        if len(self.steps) != n or len(self.lr) != n:
            raise ValueError(f"mode '{self.mode}' takes exactly {n} stage(s)")


def stage_plan(mode: str) -> list[tuple[str, str, frozenset]]:
    """(label, forward mode, trainable groups) per stage."""
    plans = {
        "alternating": [
            ("I", "global_only", frozenset({"adapter"})),
            ("II", "full", frozenset({"local"})),
            ("III", "full", frozenset({"adapter", "local", "readout"})),
        ],
        "e2e": [("e2e", "full", frozenset({"adapter", "local", "readout"}))],
        "only_global": [("only_global", "global_only",
                         frozenset({"adapter", "readout"}))],
        "only_local": [("only_local", "local_only",
                        frozenset({"local", "readout"}))],
    }
    if mode not in plans:
        raise ValueError(f"unknown training mode '{mode}'")
    return plans[mode]


def default_schedule(mode: str, seed: int = 0, total_steps: int = 240,
                     lr: float = 0.25) -> StageSchedule:
    n = len(stage_plan(mode))
    per = total_steps // n
    steps = tuple([per] * (n - 1) + [total_steps - per * (n - 1)])
    return StageSchedule(mode=mode, steps=steps, lr=(lr,) * n, seed=seed)


@dataclass
class RunReport:
    mode: str
    seed: int
    steps: list[tuple[int, str, float]]    # (step, stage label, training loss)
    final_eval: float
    only_global_eval: float
    only_local_eval: float
    config: dict
    diverged: bool = False

    def to_csv(self) -> str:
        lines = ["step,stage,loss"]
        for step, stage, loss_val in self.steps:
            lines.append(f"{step},{stage},{loss_val!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "final_eval": self.final_eval,
            "only_global_eval": self.only_global_eval,
            "only_local_eval": self.only_local_eval,
            "diverged": self.diverged,
        }


def train(schedule: StageSchedule, task: ToyTask) -> RunReport:
    """Full-batch descent under the schedule's stage plan.

    Stage freezes are exact: parameters outside a stage's trainable groups
    are never touched. A non-finite loss flags the report as diverged and
    stops training instead of raising.
    """
    params = init_params(task, schedule.seed)
    noise_rng = make_rng((schedule.seed << 8) ^ 0xA17E12)
    rows: list[tuple[int, str, float]] = []
    diverged = False
    step_idx = 0
    # a diverging run overflows before the flag trips; keep that path quiet
    with np.errstate(over="ignore", invalid="ignore"):
        for (label, fmode, groups), n_steps, lr in zip(stage_plan(schedule.mode),
                                                       schedule.steps, schedule.lr):
            for _ in range(n_steps):
                loss_val, grads = batch_loss_and_grads(task.train_set, params, task,
                                                       fmode, rng=noise_rng)
                rows.append((step_idx, label, loss_val))
                step_idx += 1
                if not np.isfinite(loss_val):
                    diverged = True
                    break
                garr = params_arrays(grads)
                for group, arrs in params_arrays(params).items():
                    if group not in groups:
                        continue
                    for p_arr, g_arr in zip(arrs, garr[group]):
                        p_arr -= lr * g_arr
            if diverged:
                break
        final_eval = evaluate(params, task, "full")
        only_global = ablate(params, task, "only_global")
        only_local = ablate(params, task, "only_local")
    report = RunReport(
        mode=schedule.mode,
        seed=schedule.seed,
        steps=rows,
        final_eval=final_eval,
        only_global_eval=only_global,
        only_local_eval=only_local,
        config={
            "mode": schedule.mode,
            "steps": list(schedule.steps),
            "lr": list(schedule.lr),
            "seed": schedule.seed,
            "gamma": task.cfg.gamma,
            "local_queries": task.cfg.local_queries,
            "feat_dim": task.cfg.feat_dim,
            "model_dim": task.cfg.model_dim,
        },
        diverged=diverged,
    )
    return report
