# --------------------------------------------------------------------
# trainer.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Thursday March 13, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
The training loop.  Each step draws a batch of rays from one training
image, renders them through the field, and takes one Adam step over
every network and, when pose refinement is on, the per-frame pose
corrections.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import ParamStore, Tape, Tensor
from uvhfield.body_model import Pose, PosedMesh, SkinnedTemplate, skin_vertices
from uvhfield.checkpoint import Checkpoint, save_checkpoint
from uvhfield.container import write_container
from uvhfield.datagen import DatasetManifest, FrameRecord, Split, load_frame
from uvhfield.errors import ConfigurationError, NonFiniteLossError, UndefinedMetricError
from uvhfield.events import EventBus, Events
from uvhfield.field import Ablation, FieldConfig, FieldParams, FrameContext, offset_penalty, prepare_frame
from uvhfield.imaging import write_png
from uvhfield.optim import AdamState, Schedule, adam_step, lr_at_step
from uvhfield.render import RenderConfig, generate_rays, masked_psnr, render_frame, render_rays
from uvhfield.typedefs import Array, BoolArray, JsonDict, PathSpec
from uvhfield.utils import finite_or_sentinel

# --------------------------------------------------------------------
FAILED_BATCH_KIND = "failed-batch"


# --------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    rays_per_step: int = 4096
    samples: int = 128
    offset_weight: float = 1e-3
    pose_refine: bool = False
    pose_lr_scale: float = 0.1
    foreground_fraction: float = 0.8
    schedule: str = Schedule.EXPONENTIAL
    lr_start: float = 1e-2
    lr_end: float = 1e-3
    ckpt_every: int = 1000
    ablate: str = Ablation.NONE
    seed: int = 0

    def validate(self) -> "TrainConfig":
        for key in ("steps", "rays_per_step", "samples"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"train.{key}", "must be positive")
        if self.offset_weight < 0:
            raise ConfigurationError("train.offset_weight", "must not be negative")
        if not 0.0 <= self.foreground_fraction <= 1.0:
            raise ConfigurationError("train.foreground_fraction", "must lie in [0, 1]")
        if self.schedule not in Schedule.ALL:
            raise ConfigurationError("train.schedule", f"unknown schedule {self.schedule!r}")
        if self.ckpt_every < 0:
            raise ConfigurationError("train.ckpt_every", "must not be negative")
        Ablation.flags(self.ablate)
        return self

    def to_dict(self) -> JsonDict:
        return asdict(self)


# --------------------------------------------------------------------
class FrameCorrection:
    """
    Learnable additive pose deltas, one slot per training pose, stored
    in the field's parameter store under the "pose_correction" group.
    Zero at creation.
    """

    AXIS_ANGLE = "pose_correction.axis_angle"
    ROOT = "pose_correction.root"

    @classmethod
    def add(cls, store: ParamStore, n_frames: int, n_joints: int):
        if cls.AXIS_ANGLE not in store:
            store.add(cls.AXIS_ANGLE, np.zeros((n_frames, n_joints, 3)))
            store.add(cls.ROOT, np.zeros((n_frames, 3)))

    @classmethod
    def present(cls, store: ParamStore) -> bool:
        return cls.AXIS_ANGLE in store

    @classmethod
    def for_frame(cls, store: ParamStore, slot: int) -> tuple[Tensor, Tensor]:
        return ad.getitem(store[cls.AXIS_ANGLE], slot), ad.getitem(store[cls.ROOT], slot)

    @classmethod
    def applied(cls, store: ParamStore, slot: int, pose: Pose) -> Pose:
        aa = store[cls.AXIS_ANGLE].data[slot].astype(np.float64)
        rt = store[cls.ROOT].data[slot].astype(np.float64)
        return Pose(pose.axis_angle + aa, pose.root_translation + rt)


# --------------------------------------------------------------------
@dataclass
class TrainFrame:
    record: FrameRecord
    image: Array
    mask: BoolArray
    foreground: np.ndarray
    background: np.ndarray


# --------------------------------------------------------------------
@dataclass
class TrainState:
    cfg: TrainConfig
    params: FieldParams
    adam: AdamState
    manifest: DatasetManifest
    template: SkinnedTemplate
    render_cfg: RenderConfig
    rng: np.random.Generator
    slots: dict[int, int]
    out_dir: Optional[Path] = None
    config_hash: str = ""
    run_hash: str = ""
    step: int = 0
    last_loss: Optional[float] = None
    frames: list[TrainFrame] = field(default_factory=list)
    posed_cache: dict[int, PosedMesh] = field(default_factory=dict)

    @property
    def store(self) -> ParamStore:
        return self.params.store

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.params,
            adam=self.adam,
            step=self.step,
            config_hash=self.config_hash,
            dataset_hash=self.manifest.dataset_hash,
            extra={
                "run_config_hash": self.run_hash,
                "ablation": self.params.cfg.ablation,
                "pose_slots": [int(i) for i in self.slots],
                "train_config": self.cfg.to_dict(),
                "final_loss": self.last_loss,
            },
        )


# --------------------------------------------------------------------
def build_ablation(cfg: TrainConfig, field_cfg: FieldConfig, dtype=np.float32) -> FieldParams:
    """
    The field variant selected by `cfg.ablate`: without remapping uvh
    passes through unchanged, without the residual trunk a plain MLP
    that never sees the pose latent decodes the encoding.
    """
    return FieldParams.create(field_cfg.with_ablation(cfg.ablate), seed=cfg.seed, dtype=dtype)


# --------------------------------------------------------------------
def _load_frames(manifest: DatasetManifest) -> list[TrainFrame]:
    frames = []
    for record in manifest.records_for(Split.TRAIN):
        image, mask = load_frame(manifest, record)
        frames.append(
            TrainFrame(
                record=record,
                image=image,
                mask=mask,
                foreground=np.argwhere(mask),
                background=np.argwhere(~mask),
            )
        )
    return frames


# --------------------------------------------------------------------
def create_state(
    manifest: DatasetManifest,
    template: SkinnedTemplate,
    field_cfg: FieldConfig,
    cfg: TrainConfig,
    render_cfg: Optional[RenderConfig] = None,
    out_dir: Optional[PathSpec] = None,
    config_hash: str = "",
    run_hash: str = "",
    checkpoint: Optional[Checkpoint] = None,
) -> TrainState:
    cfg.validate()
    if render_cfg is None:
        render_cfg = RenderConfig(samples=cfg.samples, background=manifest.background, seed=cfg.seed)
    if checkpoint is not None:
        params, adam, step = checkpoint.params, checkpoint.adam, checkpoint.step
    else:
        params, adam, step = build_ablation(cfg, field_cfg), AdamState(), 0

    slots = {pose_index: slot for slot, pose_index in enumerate(manifest.train_poses())}
    if cfg.pose_refine:
        FrameCorrection.add(params.store, len(slots), template.n_joints)

    frames = _load_frames(manifest)
    if not frames:
        raise ConfigurationError("split", "the dataset has no training records")
    return TrainState(
        cfg=cfg,
        params=params,
        adam=adam,
        manifest=manifest,
        template=template,
        render_cfg=render_cfg,
        rng=np.random.default_rng([cfg.seed, step]),
        slots=slots,
        out_dir=None if out_dir is None else Path(out_dir),
        config_hash=config_hash,
        run_hash=run_hash,
        step=step,
        last_loss=None if checkpoint is None else checkpoint.extra.get("final_loss"),
        frames=frames,
    )


# --------------------------------------------------------------------
def sample_pixels(frame: TrainFrame, n: int, fg_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """(col, row) pixels, `fg_fraction` of them drawn from inside the mask."""
    fg, bg = frame.foreground, frame.background
    n_fg = int(round(fg_fraction * n))
    if len(bg) == 0:
        n_fg = n
    if len(fg) == 0:
        n_fg = 0
    picks = []
    if n_fg:
        picks.append(fg[rng.integers(len(fg), size=n_fg)])
    if n - n_fg:
        picks.append(bg[rng.integers(len(bg), size=n - n_fg)])
    rows_cols = np.concatenate(picks)
    return rows_cols[:, ::-1].copy()


# --------------------------------------------------------------------
def _frame_context(state: TrainState, record: FrameRecord) -> FrameContext:
    shape = record.shape
    pose = record.pose_fitted
    if state.cfg.pose_refine and record.pose_index in state.slots:
        correction = FrameCorrection.for_frame(state.store, state.slots[record.pose_index])
        return prepare_frame(state.params, state.template, pose, shape, correction)
    posed = state.posed_cache.get(record.pose_index)
    if posed is None:
        posed = skin_vertices(state.template, shape, pose)
        state.posed_cache[record.pose_index] = posed
    return prepare_frame(state.params, state.template, pose, shape, posed=posed)


# --------------------------------------------------------------------
def _dump_batch(state: TrainState, frame_index: int, pixels: np.ndarray, target: Array) -> Optional[Path]:
    if state.out_dir is None:
        return None
    path = state.out_dir / ("failed_step%06d.bin" % state.step)
    write_container(
        path,
        FAILED_BATCH_KIND,
        {"step": state.step, "frame": frame_index, "image": state.frames[frame_index].record.image},
        {"pixels": pixels.astype(np.int64), "target": target, **state.store.state_dict()},
    )
    return path


# --------------------------------------------------------------------
def train_step(state: TrainState, frame_index: Optional[int] = None) -> tuple[float, JsonDict]:
    """
    One optimization step on a batch of rays from one training image.
    Returns the loss and the step metrics, including per-group
    gradient norms.
    """
    cfg = state.cfg
    if frame_index is None:
        frame_index = int(state.rng.integers(len(state.frames)))
    frame = state.frames[frame_index]
    camera = state.manifest.camera(frame.record.camera)
    pixels = sample_pixels(frame, cfg.rays_per_step, cfg.foreground_fraction, state.rng)
    origins, dirs = generate_rays(camera, pixels)
    dtype = state.store.dtype
    target = frame.image[pixels[:, 1], pixels[:, 0]].astype(dtype)

    with Tape() as tape:
        ctx = _frame_context(state, frame.record)
        color, _, samples = render_rays(origins, dirs, state.params, ctx, state.render_cfg, state.rng)
        mse = ad.mean((color - target) ** 2)
        penalty = ad.as_tensor(np.zeros((), dtype=dtype))
        if samples.deltas and cfg.offset_weight > 0:
            penalty = offset_penalty(ad.concat(samples.deltas, axis=0))
        loss = mse + cfg.offset_weight * penalty

        if not np.isfinite(loss.data):
            path = _dump_batch(state, frame_index, pixels, target)
            EventBus.get().emit(Events.ERROR, "train", {"step": state.step, "dump": str(path)})
            raise NonFiniteLossError(state.step, path)
        if not loss.is_leaf:
            tape.backward(loss)

    norms = state.store.grad_norms()
    lr = lr_at_step(state.step, cfg.steps, cfg.lr_start, cfg.lr_end, cfg.schedule)
    adam_step(state.store, state.adam, lr, {"pose_correction": cfg.pose_lr_scale})
    state.step += 1

    metrics = {
        "step": state.step,
        "total": cfg.steps,
        "lr": lr,
        "loss": float(loss.data),
        "mse": float(mse.data),
        "offset": float(penalty.data),
        "grad_norms": norms,
        "frame": frame.record.image,
        "evaluated": int(samples.evaluated.sum()),
    }
    state.last_loss = metrics["loss"]
    EventBus.get().emit(Events.STEP, "train", metrics)

    if state.out_dir is not None and cfg.ckpt_every and state.step % cfg.ckpt_every == 0:
        save_checkpoint(state.out_dir / ("step%06d.ckpt" % state.step), state.checkpoint())
    return metrics["loss"], metrics


# --------------------------------------------------------------------
def train(state: TrainState, steps: Optional[int] = None) -> list[float]:
    """Run until `steps` more steps, or the configured total, are done."""
    end = state.cfg.steps if steps is None else state.step + steps
    bus = EventBus.get()
    bus.emit(Events.INFO, "train", f"training {state.params.cfg.ablation} from step {state.step} to {end}")
    losses = []
    while state.step < end:
        loss, _ = train_step(state)
        losses.append(loss)
    if state.out_dir is not None:
        save_checkpoint(state.out_dir / "final.ckpt", state.checkpoint())
    return losses


# --------------------------------------------------------------------
def pose_refinement_error(state: TrainState) -> JsonDict:
    """Mean joint-angle error of the fitted and refined training poses."""
    initial, refined = [], []
    refining = FrameCorrection.present(state.store)
    for pose_index, record in state.manifest.train_poses().items():
        initial.append(record.pose_fitted.angle_error(record.pose))
        pose = record.pose_fitted
        if refining and pose_index in state.slots:
            pose = FrameCorrection.applied(state.store, state.slots[pose_index], pose)
        refined.append(pose.angle_error(record.pose))
    return {
        "initial": float(np.mean(initial)) if initial else 0.0,
        "refined": float(np.mean(refined)) if refined else 0.0,
    }


# --------------------------------------------------------------------
def artifact_stamp(state: TrainState) -> dict[str, str]:
    """PNG text entries tying a render to its run and model."""
    stamp = {"config_hash": state.run_hash or state.config_hash}
    if state.config_hash:
        stamp["model_hash"] = state.config_hash
    return stamp


# --------------------------------------------------------------------
def _eval_pose(state: TrainState, record: FrameRecord) -> Pose:
    if FrameCorrection.present(state.store) and record.pose_index in state.slots:
        return FrameCorrection.applied(state.store, state.slots[record.pose_index], record.pose_fitted)
    return record.pose_fitted


# --------------------------------------------------------------------
def evaluate(
    state: TrainState,
    split: str,
    render_dir: Optional[PathSpec] = None,
    max_frames: Optional[int] = None,
) -> JsonDict:
    """
    Masked PSNR of every record in `split`, rendered with the refined
    pose where one was learned.  Optionally writes the renders.
    """
    if split not in (Split.TRAIN, Split.NOVEL_VIEW, Split.NOVEL_POSE):
        raise ConfigurationError("split", f"cannot evaluate split {split!r}")
    records = state.manifest.records_for(split)
    if max_frames is not None:
        records = records[:max_frames]

    cfg = RenderConfig(
        samples=state.render_cfg.samples,
        background=state.manifest.background,
        seed=state.cfg.seed,
        chunk=state.render_cfg.chunk,
    )
    frames, pairs, crossings = [], 0, 0
    for record in records:
        image, mask = load_frame(state.manifest, record)
        camera = state.manifest.camera(record.camera)
        ctx = prepare_frame(state.params, state.template, _eval_pose(state, record), record.shape)
        result = render_frame(camera, ctx, state.params, cfg)
        try:
            psnr: Optional[float] = masked_psnr(result.rgb, image, mask)
        except UndefinedMetricError:
            psnr = None
        pairs += result.seams["pairs"]
        crossings += result.seams["crossings"]
        if render_dir is not None:
            write_png(
                Path(render_dir) / split / Path(record.image).name,
                result.rgb,
                result.alpha,
                text=artifact_stamp(state),
            )
        frames.append(
            {
                "image": record.image,
                "camera": record.camera,
                "pose_index": record.pose_index,
                "psnr": None if psnr is None else finite_or_sentinel(psnr),
            }
        )

    scores = [f["psnr"] for f in frames if f["psnr"] is not None]
    mean: Optional[float | str] = None
    if scores:
        mean = "inf" if "inf" in scores else float(np.mean(scores))
    report = {
        "split": split,
        "frames": frames,
        "mean_psnr": mean,
        "seams": {
            "pairs": pairs,
            "crossings": crossings,
            "fraction": crossings / pairs if pairs else 0.0,
        },
    }
    EventBus.get().emit(Events.EVAL, "evaluate", {"split": split, "mean_psnr": mean})
    return report


# --------------------------------------------------------------------
def evaluation_report(
    state: TrainState, render_dir: Optional[PathSpec] = None, max_frames: Optional[int] = None
) -> JsonDict:
    novel_view = evaluate(state, Split.NOVEL_VIEW, render_dir, max_frames)
    novel_pose = evaluate(state, Split.NOVEL_POSE, render_dir, max_frames)
    return {
        "ablation": state.params.cfg.ablation,
        "step": state.step,
        "config_hash": state.config_hash,
        "run_config_hash": state.run_hash,
        "dataset_hash": state.manifest.dataset_hash,
        "novel_view": novel_view,
        "novel_pose": novel_pose,
        "novel_view_psnr": novel_view["mean_psnr"],
        "novel_pose_psnr": novel_pose["mean_psnr"],
        "pose_error": pose_refinement_error(state),
        "final_loss": state.last_loss,
    }


# --------------------------------------------------------------------
ABLATION_LABELS = {
    Ablation.NONE: "full",
    Ablation.NO_RESNET: "w/o ResNet",
    Ablation.NO_REMAP: "w/o remapping",
    Ablation.BOTH: "w/o both",
}


# --------------------------------------------------------------------
def ablation_table(reports: dict[str, JsonDict]) -> list[JsonDict]:
    """One row per variant in the fixed order full, no_resnet, no_remap, both."""
    rows = []
    for name in Ablation.ALL:
        report = reports.get(name, {})
        rows.append(
            {
                "variant": name,
                "label": ABLATION_LABELS[name],
                "novel_view_psnr": report.get("novel_view_psnr"),
                "novel_pose_psnr": report.get("novel_pose_psnr"),
                "final_loss": report.get("final_loss"),
            }
        )
    return rows


# --------------------------------------------------------------------
def format_table(rows: list[JsonDict]) -> str:
    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return "%.2f" % value
        return str(value)

    lines = ["%-14s %10s %10s" % ("variant", "view", "pose")]
    for row in rows:
        lines.append(
            "%-14s %10s %10s"
            % (row["label"], cell(row["novel_view_psnr"]), cell(row["novel_pose_psnr"]))
        )
    return "\n".join(lines)
