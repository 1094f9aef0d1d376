# --------------------------------------------------------------------
# cli.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Saturday March 15, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
The `uvhfield` command: dataset generation, training, rendering,
evaluation, the ablation matrix and pose-sequence animation.
"""

import json
import sys
import traceback
from argparse import ArgumentParser, HelpFormatter
from pathlib import Path
from typing import Callable, Optional

from uvhfield.body_model import Pose, Shape, SkinnedTemplate
from uvhfield.checkpoint import Checkpoint, load_checkpoint
from uvhfield.config import RunConfig
from uvhfield.console import ConsoleHook, TextDecorator
from uvhfield.console import disable as disable_color
from uvhfield.console import enable as enable_color
from uvhfield.datagen import (
    MANIFEST_NAME,
    DatasetManifest,
    generate_dataset,
    load_manifest,
    resolve_template,
)
from uvhfield.errors import ConfigurationError, UvhError
from uvhfield.events import EventBus, Events, JsonLinesSink
from uvhfield.field import Ablation
from uvhfield.imaging import write_png
from uvhfield.motions import MOTIONS, sequence
from uvhfield.recipe import Recipe, recipe
from uvhfield.render import render_image
from uvhfield.trainer import (
    ablation_table,
    create_state,
    evaluation_report,
    format_table,
    train,
)
from uvhfield.utils import dump_json

# --------------------------------------------------------------------
REPORT_FIELDS = ("novel_view_psnr", "novel_pose_psnr", "pose_error", "config_hash", "dataset_hash")
TRAIN_LOG = "train_log.jsonl"
FINAL_CHECKPOINT = "final.ckpt"
REPORT_NAME = "report.json"
TABLE_NAME = "table.json"


# --------------------------------------------------------------------
class Config:
    class Command:
        DATAGEN = "datagen"
        TRAIN = "train"
        RENDER = "render"
        EVAL = "eval"
        ABLATE = "ablate"
        ANIMATE = "animate"

        ALL = (DATAGEN, TRAIN, RENDER, EVAL, ABLATE, ANIMATE)
        NEEDS_DATASET = (TRAIN, RENDER, EVAL, ANIMATE)
        NEEDS_CHECKPOINT = (RENDER, EVAL, ANIMATE)

    class ColorOptions:
        YES = "yes"
        NO = "no"
        AUTO = "auto"

    class SortingHelpFormatter(HelpFormatter):
        def add_arguments(self, actions):
            actions = sorted(actions, key=lambda a: a.option_strings)
            super().add_arguments(actions)

    def __init__(self):
        self.command = ""
        self.config: list[str] = []
        self.out = "out"
        self.dataset: Optional[str] = None
        self.checkpoint: Optional[str] = None
        self.seed: Optional[int] = None
        self.steps: Optional[int] = None
        self.holdout_camera: Optional[int] = None
        self.ablate: Optional[str] = None
        self.set: list[str] = []
        self.camera: Optional[str] = None
        self.pose_file: Optional[str] = None
        self.motion = "arm_rotation"
        self.frames = 24
        self.max_frames: Optional[int] = None
        self.renders = False
        self.force = False
        self.quiet = False
        self.debug = False
        self.color = self.ColorOptions.AUTO

    def _argparser(self):
        parser = ArgumentParser(
            prog="uvhfield",
            formatter_class=Config.SortingHelpFormatter,
            description="Pose-controllable surface-aligned radiance fields.",
        )
        parser.add_argument("command", choices=self.Command.ALL, help="The subcommand to run.")
        parser.add_argument(
            "--config",
            action="append",
            default=[],
            help="A JSON config file, may be given more than once.  Later files win.",
        )
        parser.add_argument("--out", "-o", help="Output directory.")
        parser.add_argument("--dataset", "-d", help="Dataset manifest or directory.")
        parser.add_argument("--checkpoint", "-k", help="Checkpoint to evaluate, render or resume.")
        parser.add_argument("--seed", type=int, help="Override `seed`.")
        parser.add_argument("--steps", type=int, help="Override `train.steps`.")
        parser.add_argument(
            "--holdout-camera", type=int, help="Override `data.holdout_camera`, a camera index."
        )
        parser.add_argument("--ablate", choices=Ablation.ALL, help="Override `train.ablate`.")
        parser.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override any config key, VALUE parsed as JSON when it can be.",
        )
        parser.add_argument("--camera", help="Camera id for render and animate.")
        parser.add_argument("--pose-file", help="JSON file of pose vectors for render and animate.")
        parser.add_argument("--motion", choices=sorted(MOTIONS), help="Pose sequence for animate.")
        parser.add_argument("--frames", type=int, help="Number of animation frames.")
        parser.add_argument("--max-frames", type=int, help="Evaluate at most this many images per split.")
        parser.add_argument(
            "--renders", action="store_true", help="Write the evaluation renders next to the report."
        )
        parser.add_argument(
            "--force",
            action="store_true",
            help="Use a checkpoint even when its config or dataset hash does not match.",
        )
        parser.add_argument("--quiet", "-q", action="store_true", help="Only print warnings and errors.")
        parser.add_argument("--debug", "-D", action="store_true", help="Print tracebacks on failure.")
        parser.add_argument(
            "--color",
            choices=["yes", "no", "auto"],
            default="auto",
            help="Choose when to enable colorized output.",
        )
        return parser

    def parse_args(self, *args):
        parser = self._argparser()
        parser.parse_args(args, namespace=self)
        if self.command in self.Command.NEEDS_DATASET and self.dataset is None:
            parser.error(f"{self.command} needs --dataset")
        if self.command in self.Command.NEEDS_CHECKPOINT and self.checkpoint is None:
            parser.error(f"{self.command} needs --checkpoint")
        if self.frames < 1:
            parser.error("--frames must be positive")
        return self

    def run_config(self) -> RunConfig:
        cfg = RunConfig().load_files(self.config)
        for key, value in (
            ("seed", self.seed),
            ("train.steps", self.steps),
            ("data.holdout_camera", self.holdout_camera),
            ("train.ablate", self.ablate),
        ):
            if value is not None:
                cfg.set(key, value)
        for assignment in self.set:
            cfg.set_assignment(assignment)
        return cfg


# --------------------------------------------------------------------
COMMANDS: dict[str, Callable[[Config, RunConfig], int]] = {}


# --------------------------------------------------------------------
def command(name: str):
    def wrapper(f):
        COMMANDS[name] = f
        return f

    return wrapper


# --------------------------------------------------------------------
def _out_dir(config: Config) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------
def _template_for(manifest: DatasetManifest) -> SkinnedTemplate:
    return resolve_template(manifest.template, manifest.root)


# --------------------------------------------------------------------
def _load_checkpoint(
    path, cfg: RunConfig, manifest: DatasetManifest, force: bool
) -> Checkpoint:
    return load_checkpoint(
        path, config_hash=cfg.model_hash(), dataset_hash=manifest.dataset_hash, force=force
    )


# --------------------------------------------------------------------
def _stamp(cfg: RunConfig) -> dict[str, str]:
    return {"config_hash": cfg.hash(), "model_hash": cfg.model_hash()}


# --------------------------------------------------------------------
def write_run_config(out: Path, cfg: RunConfig) -> Path:
    path = out / "config.json"
    path.write_text(dump_json({"config": cfg.tree(), "config_hash": cfg.hash()}))
    return path


# --------------------------------------------------------------------
def read_pose_file(path, n_joints: int) -> list[Pose]:
    """
    Pose vectors (J*3 axis-angle values then the root translation) as a
    JSON list of vectors, a single vector, or {"poses": [...]}.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError("--pose-file", f"cannot read {path}: {e}") from e
    if isinstance(data, dict):
        data = data.get("poses", [])
    if data and not isinstance(data[0], list):
        data = [data]
    poses = []
    for vector in data:
        if len(vector) != n_joints * 3 + 3:
            raise ConfigurationError(
                "--pose-file", f"pose vectors need {n_joints * 3 + 3} values, found {len(vector)}"
            )
        poses.append(Pose.from_vector(vector))
    if not poses:
        raise ConfigurationError("--pose-file", f"no poses in {path}")
    return poses


# --------------------------------------------------------------------
def train_run(cfg: RunConfig, manifest_path: Path, out: Path, resume: Optional[Path] = None, force=False) -> Path:
    """Train one model into `out`, writing the log, checkpoints and resolved config."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(manifest_path)
    template = _template_for(manifest)
    ckpt = None if resume is None else _load_checkpoint(resume, cfg, manifest, force)
    state = create_state(
        manifest,
        template,
        cfg.field_config(template.n_joints),
        cfg.train_config(),
        out_dir=out,
        config_hash=cfg.model_hash(),
        run_hash=cfg.hash(),
        checkpoint=ckpt,
    )
    write_run_config(out, cfg)
    sink = JsonLinesSink(out / TRAIN_LOG, (Events.STEP, Events.CHECKPOINT, Events.DIAGNOSTIC))
    bus = EventBus.get()
    sink.attach(bus)
    try:
        train(state)
    finally:
        sink.detach(bus)
    return out / FINAL_CHECKPOINT


# --------------------------------------------------------------------
def eval_run(
    cfg: RunConfig,
    manifest_path: Path,
    checkpoint: Path,
    target: Path,
    force=False,
    max_frames: Optional[int] = None,
    renders=False,
) -> Path:
    """Evaluate a checkpoint on both held-out splits and write the JSON report to `target`."""
    manifest = load_manifest(manifest_path)
    template = _template_for(manifest)
    ckpt = _load_checkpoint(checkpoint, cfg, manifest, force)
    state = create_state(
        manifest,
        template,
        ckpt.params.cfg,
        cfg.train_config(),
        render_cfg=cfg.render_config(),
        config_hash=cfg.model_hash(),
        run_hash=cfg.hash(),
        checkpoint=ckpt,
    )
    render_dir = target.parent / "renders" if renders else None
    report = evaluation_report(state, render_dir, max_frames)
    report["checkpoint"] = str(checkpoint)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_json(report))
    return target


# --------------------------------------------------------------------
def missing_report_fields(report: dict) -> list[str]:
    return [key for key in REPORT_FIELDS if report.get(key) in (None, "")]


# --------------------------------------------------------------------
@command(Config.Command.DATAGEN)
def run_datagen(config: Config, cfg: RunConfig) -> int:
    out = _out_dir(config)
    generate_dataset(cfg.scene_spec(), out, config_hash=cfg.hash())
    write_run_config(out, cfg)
    return 0


# --------------------------------------------------------------------
@command(Config.Command.TRAIN)
def run_train(config: Config, cfg: RunConfig) -> int:
    resume = None if config.checkpoint is None else Path(config.checkpoint)
    train_run(cfg, Path(config.dataset), _out_dir(config), resume, config.force)
    return 0


# --------------------------------------------------------------------
@command(Config.Command.EVAL)
def run_eval(config: Config, cfg: RunConfig) -> int:
    target = _out_dir(config) / REPORT_NAME
    eval_run(
        cfg,
        Path(config.dataset),
        Path(config.checkpoint),
        target,
        config.force,
        config.max_frames,
        config.renders,
    )
    missing = missing_report_fields(json.loads(target.read_text()))
    if missing:
        EventBus.get().emit(Events.ERROR, "eval", f"report fields without a value: {', '.join(missing)}")
        return 1
    return 0


# --------------------------------------------------------------------
def default_camera(manifest: DatasetManifest) -> str:
    """The first held-out camera, or the first camera when none is held out."""
    if manifest.splits.holdout_cameras:
        return manifest.splits.holdout_cameras[0]
    return manifest.cameras[0].id


# --------------------------------------------------------------------
def _manifest_poses(manifest: DatasetManifest) -> list[Pose]:
    by_index: dict[int, Pose] = {}
    for record in manifest.records:
        by_index.setdefault(record.pose_index, record.pose)
    return [by_index[i] for i in sorted(by_index)]


# --------------------------------------------------------------------
def render_poses(
    config: Config,
    cfg: RunConfig,
    manifest: DatasetManifest,
    poses: list[Pose],
    out: Path,
    pattern: str,
) -> list[Path]:
    """Render `poses` from one camera as numbered PNGs named by `pattern`."""
    template = _template_for(manifest)
    ckpt = _load_checkpoint(config.checkpoint, cfg, manifest, config.force)
    camera = manifest.camera(config.camera or default_camera(manifest))
    shape = manifest.records[0].shape if manifest.records else Shape.zeros(template.n_shape)
    render_cfg = cfg.render_config()
    bus = EventBus.get()
    paths = []
    for i, pose in enumerate(poses):
        rgb, alpha = render_image(camera, pose, shape, ckpt.params, template, render_cfg)
        paths.append(write_png(out / (pattern % i), rgb, alpha, text=_stamp(cfg)))
        bus.emit(Events.INFO, config.command, f"{paths[-1]} ({i + 1}/{len(poses)})")
    return paths


# --------------------------------------------------------------------
@command(Config.Command.RENDER)
def run_render(config: Config, cfg: RunConfig) -> int:
    manifest = load_manifest(config.dataset)
    if config.pose_file is not None:
        poses = read_pose_file(config.pose_file, _template_for(manifest).n_joints)
    else:
        poses = _manifest_poses(manifest)
    camera = config.camera or default_camera(manifest)
    render_poses(config, cfg, manifest, poses, _out_dir(config) / "render", f"{camera}_%03d.png")
    return 0


# --------------------------------------------------------------------
@command(Config.Command.ANIMATE)
def run_animate(config: Config, cfg: RunConfig) -> int:
    manifest = load_manifest(config.dataset)
    if config.pose_file is not None:
        poses = read_pose_file(config.pose_file, _template_for(manifest).n_joints)
    else:
        poses = sequence(config.motion, config.frames)
    render_poses(config, cfg, manifest, poses, _out_dir(config) / "frames", "frame_%04d.png")
    return 0


# --------------------------------------------------------------------
@recipe("datagen")
def make_dataset(cfg: RunConfig, target: Path) -> Path:
    generate_dataset(cfg.scene_spec(), target.parent, config_hash=cfg.hash())
    return target


# --------------------------------------------------------------------
@recipe("train")
def make_checkpoint(cfg: RunConfig, manifest: Path, target: Path) -> Path:
    train_run(cfg, manifest, target.parent)
    return target


# --------------------------------------------------------------------
@recipe("eval")
def make_report(cfg: RunConfig, manifest: Path, checkpoint: Path, target: Path, max_frames=None) -> Path:
    return eval_run(cfg, manifest, checkpoint, target, max_frames=max_frames)


# --------------------------------------------------------------------
@recipe("table")
def make_table(target: Path, *reports: Path) -> Path:
    loaded = {}
    for path in reports:
        report = json.loads(Path(path).read_text())
        loaded[report["ablation"]] = report
    rows = ablation_table(loaded)
    target.write_text(dump_json({"rows": rows}))
    EventBus.get().emit(Events.INFO, "ablate", "\n" + format_table(rows))
    return target


# --------------------------------------------------------------------
def ablation_recipes(cfg: RunConfig, out: Path, dataset: Optional[Path] = None, max_frames=None) -> Recipe:
    """
    The four-variant ablation as a recipe graph: one dataset, then a
    training and an evaluation per variant, then the combined table.
    """
    manifest = dataset if dataset is not None else make_dataset(cfg, out / "data" / MANIFEST_NAME)
    reports = []
    for name in Ablation.ALL:
        variant = cfg.copy().set("train.ablate", name)
        variant_dir = out / name
        ckpt = make_checkpoint(variant, manifest, variant_dir / FINAL_CHECKPOINT)
        reports.append(make_report(variant, manifest, ckpt, variant_dir / REPORT_NAME, max_frames))
    return make_table(out / TABLE_NAME, *reports)


# --------------------------------------------------------------------
@command(Config.Command.ABLATE)
def run_ablate(config: Config, cfg: RunConfig) -> int:
    out = _out_dir(config)
    dataset = None
    if config.dataset is not None:
        dataset = Path(config.dataset)
        if dataset.is_dir():
            dataset = dataset / MANIFEST_NAME
    write_run_config(out, cfg)
    ablation_recipes(cfg, out, dataset, config.max_frames)()
    return 0


# --------------------------------------------------------------------
def main(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = Config().parse_args(*argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if config.debug:
        Recipe.DEBUG = True
    match config.color:
        case Config.ColorOptions.YES:
            enable_color()
        case Config.ColorOptions.NO:
            disable_color()
        case Config.ColorOptions.AUTO:
            pass

    txt = TextDecorator()
    with EventBus.session() as bus:
        ConsoleHook(quiet=config.quiet, txt=txt).attach(bus)
        try:
            cfg = config.run_config()
            return COMMANDS[config.command](config, cfg)
        except UvhError as e:
            if config.debug:
                traceback.print_exc()
            txt.embrace(config.command, fg="red", render="bold")
            txt.print(str(e), fg="red")
            return 1
