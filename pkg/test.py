import dataclasses
import io
import json
import os
import shutil
import sys
import tempfile
import time
import unittest
from pathlib import Path

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.body_model import (
    Pose,
    Shape,
    SkinnedTemplate,
    compute_normals,
    compute_normals_t,
    forward_kinematics,
    load_template,
    posed_joints,
    rodrigues,
    rodrigues_t,
    save_template,
    skin_vertices,
)
from uvhfield.bvh import MeshBvh, brute_force_nearest, closest_point_on_triangles
from uvhfield.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from uvhfield.cli import REPORT_FIELDS, main, missing_report_fields, read_pose_file
from uvhfield.config import RunConfig
from uvhfield.console import ConsoleHook, TextDecorator
from uvhfield.container import ContainerError, read_container, write_container
from uvhfield.datagen import (
    MANIFEST_NAME,
    SceneSpec,
    Split,
    generate_dataset,
    holdout_pose_indices,
    jitter_poses,
    load_frame,
    load_manifest,
    procedural_texture,
    rasterize_view,
)
from uvhfield.encodings import (
    FreqEncoding,
    HashConfig,
    HashGrid,
    extended_pose_vector,
    freq_encode,
    hash_encode,
    pose_encode,
    pose_input_width,
)
from uvhfield.errors import (
    CheckpointMismatchError,
    ConfigurationError,
    ContractViolation,
    DegenerateGeometryError,
    InternalError,
    ManifestError,
    NonFiniteGradientError,
    NonFiniteLossError,
    ProjectionError,
    TemplateError,
    UndefinedMetricError,
)
from uvhfield.events import EventBus, Events, JsonLinesSink
from uvhfield.field import (
    MLP_LAYERS,
    Ablation,
    FieldParams,
    offset_penalty,
    prepare_frame,
    query_field,
    remap_uvh,
)
from uvhfield.humanoid import JOINT_NAMES, build_humanoid
from uvhfield.imaging import read_png, read_png_text
from uvhfield.motions import keyframes, sequence
from uvhfield.optim import AdamState, adam_step, lr_at_step
from uvhfield.recipe import BuildError, CompositeError, recipe
from uvhfield.render import (
    Camera,
    RenderConfig,
    composite,
    composite_arrays,
    generate_rays,
    march_ray,
    march_rays,
    masked_psnr,
    render_image,
    render_rays,
)
from uvhfield.surface_map import (
    SurfaceIndex,
    differentiable_uvh,
    dispersed_project,
    local_view_dir,
    nearest_point_oracle,
    seam_statistics,
    shell_test,
    surface_index,
    to_uvh,
)
from uvhfield.testing import (
    OutputCapture,
    chain_poses,
    chain_template,
    cube_mesh,
    icosphere,
    micro_scene,
    quad_mesh,
    small_field_config,
    tent_mesh,
    tiny_dataset,
)
from uvhfield.trainer import (
    TrainConfig,
    TrainFrame,
    ablation_table,
    create_state,
    evaluate,
    evaluation_report,
    format_table,
    pose_refinement_error,
    sample_pixels,
    train,
    train_step,
)
from uvhfield.utils import THREADS_ENV

# --------------------------------------------------------------------
SLOW = bool(os.environ.get("UVH_SLOW"))

# Field and sampler sizes small enough for end-to-end runs through the CLI.
SMALL_FLAGS = [
    "--set", "encoding.hash.levels=2",
    "--set", "encoding.hash.table_size_log2=10",
    "--set", "encoding.hash.base_res=4",
    "--set", "encoding.hash.max_res=16",
    "--set", "encoding.freq.bands=2",
    "--set", "field.width=8",
    "--set", "field.blocks=1",
    "--set", "pose.latent_dim=4",
    "--set", "train.rays_per_step=32",
    "--set", "train.samples=8",
    "--set", "render.samples=8",
    "--set", "train.ckpt_every=0",
]  # fmt: skip


# --------------------------------------------------------------------
class TempDirTestCase(unittest.TestCase):
    def setUp(self):
        self.prefix = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.prefix)


# --------------------------------------------------------------------
class TestingUtilsTests(unittest.TestCase):
    def test_output_capture(self):
        original_stdout = sys.stdout

        with OutputCapture(stdout=True) as capture:
            self.assertIs(sys.stdout, capture.stdout)
            print("Hello!")
            self.assertEqual(capture.stdout.getvalue(), "Hello!\n")

        self.assertIs(sys.stdout, original_stdout)

    def test_output_capture_rejects_unknown_targets(self):
        with self.assertRaises(ValueError):
            OutputCapture(stdin=True)


# --------------------------------------------------------------------
class AutodiffTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_elementwise_gradients(self):
        a = self.rng.normal(size=(3, 4))
        b = self.rng.uniform(0.5, 2.0, size=(3, 4))

        def f(x, y):
            return ad.sin(x) * ad.exp(y * 0.5) + x / (y * y + 1.0) - ad.tanh(x) ** 2 + ad.sqrt(y) * ad.log(y)

        self.assertLess(ad.gradcheck(f, [a, b]), 1e-4)

    def test_activation_gradients(self):
        a = self.rng.normal(size=(5, 3))
        f = lambda x: ad.sigmoid(x) + ad.softplus(x) * ad.relu(x) + ad.absolute(x) * ad.cos(x)
        self.assertLess(ad.gradcheck(f, [a]), 1e-4)

    def test_matmul_and_reductions(self):
        a = self.rng.normal(size=(4, 3))
        b = self.rng.normal(size=(3, 2))
        f = lambda x, y: ad.mean((x @ y) ** 2, axis=0) + ad.tsum(ad.tsum(x, axis=1, keepdims=True))
        self.assertLess(ad.gradcheck(f, [a, b]), 1e-4)

    def test_cumsum_and_composite(self):
        sigma = self.rng.uniform(0.1, 3.0, size=(2, 5))
        rgb = self.rng.uniform(0.0, 1.0, size=(2, 5, 3))
        delta = np.full((2, 5), 0.2)

        self.assertLess(ad.gradcheck(lambda x: ad.cumsum_exclusive(x, axis=1) * x, [sigma]), 1e-4)
        self.assertLess(
            ad.gradcheck(lambda s, c: composite_arrays(s, c, delta)[0], [sigma, rgb]), 1e-4
        )

    def test_gather_and_scatter(self):
        table = self.rng.normal(size=(6, 2))
        index = np.array([[0, 3], [3, 5], [1, 1]])
        values = self.rng.normal(size=(4, 3))
        rows = np.array([2, 0, 2, 1])

        self.assertLess(
            ad.gradcheck(lambda t: ad.gather_rows(t, index) * ad.gather_rows(t, index[::-1]), [table]),
            1e-4,
        )
        self.assertLess(ad.gradcheck(lambda v: ad.scatter_add(v, rows, 3) ** 2, [values]), 1e-4)

    def test_cross_normalize_and_where(self):
        a = self.rng.normal(size=(4, 3))
        b = self.rng.normal(size=(4, 3))
        cond = np.array([[True], [False], [True], [False]])

        self.assertLess(ad.gradcheck(lambda x, y: ad.normalize(ad.cross(x, y)), [a, b]), 1e-4)
        self.assertLess(ad.gradcheck(lambda x, y: ad.where(cond, x * x, y * 3.0), [a, b]), 1e-4)

    def test_shape_operations(self):
        a = self.rng.normal(size=(2, 3))
        b = self.rng.normal(size=(2, 3))

        def f(x, y):
            joined = ad.concat([x, y], axis=1)
            stacked = ad.stack([x, y], axis=0)
            wide = ad.broadcast_to(ad.reshape(x, (1, 2, 3)), (4, 2, 3))
            return ad.tsum(joined * joined) + ad.tsum(stacked[1] * x) + ad.tsum(wide * y)

        self.assertLess(ad.gradcheck(f, [a, b]), 1e-4)

    def test_rodrigues(self):
        aa = self.rng.normal(size=(3, 3))
        with ad.precision(np.float64):
            R = rodrigues_t(ad.Tensor(aa)).data
        self.assertTrue(np.allclose(R, rodrigues(aa), atol=1e-12))
        self.assertTrue(np.allclose(R @ np.swapaxes(R, 1, 2), np.eye(3), atol=1e-12))
        self.assertLess(ad.gradcheck(lambda r: rodrigues_t(r), [aa]), 1e-4)

    def test_backward_rejects_unrecorded_root(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            pass
        with self.assertRaises(InternalError):
            tape.backward(x)

    def test_backward_only_once(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            y = ad.tsum(x * 2.0)
        tape.backward(y)
        with self.assertRaises(InternalError):
            tape.backward(y)

    def test_no_recording_without_tape(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        self.assertTrue(y.is_leaf)
        self.assertFalse(y.requires_grad)

    def test_leaf_gradients_accumulate(self):
        store = ad.ParamStore(np.float64)
        w = store.add("layer.w", np.array([1.0, 2.0]))
        for _ in range(2):
            with ad.Tape() as tape:
                loss = ad.tsum(w * 3.0)
            tape.backward(loss)
        self.assertTrue(np.allclose(w.grad, [6.0, 6.0]))
        store.zero_grad()
        self.assertTrue(np.all(w.grad == 0))

    def test_precision(self):
        self.assertEqual(ad.as_tensor(1.0).dtype, np.float32)
        with ad.precision(np.float64):
            self.assertEqual(ad.as_tensor(1.0).dtype, np.float64)
        self.assertEqual(ad.default_dtype(), np.float32)


# --------------------------------------------------------------------
class ParamStoreTests(unittest.TestCase):
    def test_groups_and_norms(self):
        store = ad.ParamStore()
        store.add("hash.level00", np.zeros((4, 2)))
        store.add("rgb.l0.W", np.zeros((2, 2)))
        store.add("rgb.l0.b", np.zeros(2))
        store["rgb.l0.b"].grad[...] = [3.0, 4.0]

        self.assertEqual(store.groups(), ["hash", "rgb"])
        self.assertEqual(store.names("rgb"), ["rgb.l0.W", "rgb.l0.b"])
        self.assertEqual(store.count(), 14)
        norms = store.grad_norms()
        self.assertAlmostEqual(norms["rgb"], 5.0)
        self.assertEqual(norms["hash"], 0.0)

    def test_duplicate_name(self):
        store = ad.ParamStore()
        store.add("rgb.l0.W", np.zeros(2))
        with self.assertRaises(InternalError):
            store.add("rgb.l0.W", np.zeros(2))

    def test_load_state_dict(self):
        store = ad.ParamStore()
        store.add("rgb.l0.W", np.zeros(2))
        store.load_state_dict({"rgb.l0.W": np.array([1.0, 2.0])})
        self.assertTrue(np.allclose(store["rgb.l0.W"].data, [1.0, 2.0]))

        with self.assertRaises(InternalError):
            store.load_state_dict({})
        with self.assertRaises(InternalError):
            store.load_state_dict({"rgb.l0.W": np.zeros(3)})
        store.load_state_dict({}, strict=False)


# --------------------------------------------------------------------
class OptimTests(unittest.TestCase):
    def test_schedule_endpoints(self):
        self.assertEqual(lr_at_step(0, 100, 1e-2, 1e-3), 1e-2)
        self.assertEqual(lr_at_step(100, 100, 1e-2, 1e-3), 1e-3)
        self.assertEqual(lr_at_step(100, 100, 1e-2, 1e-3, "linear"), 1e-3)
        self.assertAlmostEqual(lr_at_step(50, 100, 1e-2, 1e-3), np.sqrt(1e-5))
        self.assertAlmostEqual(lr_at_step(50, 100, 1e-2, 1e-3, "linear"), 5.5e-3)

    def test_unknown_schedule(self):
        with self.assertRaises(ConfigurationError) as context:
            lr_at_step(50, 100, schedule="cosine")
        self.assertEqual(context.exception.key, "train.schedule")

    def test_adam_minimizes_a_quadratic(self):
        store = ad.ParamStore(np.float64)
        x = store.add("w.x", np.zeros(1))
        state = AdamState()
        total = 2000
        for step in range(total):
            with ad.Tape() as tape:
                loss = ad.tsum((x - 3.0) ** 2)
            tape.backward(loss)
            adam_step(store, state, lr_at_step(step, total, 0.1, 1e-4))
        self.assertAlmostEqual(float(x.data[0]), 3.0, delta=1e-2)
        self.assertEqual(state.step, total)
        self.assertTrue(np.all(x.grad == 0))

    def test_nonfinite_gradient_aborts_step(self):
        store = ad.ParamStore(np.float64)
        a = store.add("a.x", np.ones(2))
        b = store.add("b.y", np.ones(2))
        a.grad[...] = 1.0
        b.grad[...] = [1.0, np.nan]
        state = AdamState()

        with self.assertRaises(NonFiniteGradientError) as context:
            adam_step(store, state, 0.1)
        self.assertEqual(context.exception.param, "b.y")
        self.assertTrue(np.all(a.data == 1.0))
        self.assertEqual(state.step, 0)

    def test_group_learning_rate_scale(self):
        store = ad.ParamStore(np.float64)
        a = store.add("a.x", np.zeros(1))
        frozen = store.add("pose_correction.root", np.zeros(1))
        a.grad[...] = 1.0
        frozen.grad[...] = 1.0

        adam_step(store, AdamState(), 0.1, {"pose_correction": 0.0})
        self.assertAlmostEqual(float(a.data[0]), -0.1, places=6)
        self.assertEqual(float(frozen.data[0]), 0.0)


# --------------------------------------------------------------------
class BodyModelTests(unittest.TestCase):
    def setUp(self):
        self.chain = chain_template()

    def test_chain_is_valid(self):
        self.chain.validate()
        self.assertEqual(self.chain.n_joints, 3)
        self.assertEqual(self.chain.n_shape, 1)

    def test_rest_pose_is_identity(self):
        posed = skin_vertices(self.chain, None, Pose.zeros(3))
        self.assertTrue(np.allclose(posed.vertices, self.chain.vertices, atol=1e-12))
        self.assertTrue(np.allclose(posed.joint_transforms, np.eye(4), atol=1e-12))

    def test_root_translation(self):
        offset = np.array([1.0, 2.0, 3.0])
        posed = skin_vertices(self.chain, None, Pose(np.zeros((3, 3)), offset))
        self.assertTrue(np.allclose(posed.vertices, self.chain.vertices + offset, atol=1e-12))

    def test_bending_the_middle_joint(self):
        angle = np.pi / 2
        aa = np.zeros((3, 3))
        aa[1, 2] = angle
        pose = Pose(aa)
        posed = skin_vertices(self.chain, None, pose)
        R = rodrigues(aa[1])
        pivot = self.chain.joints[1]

        # The base ring follows joint 0 only, the tip ring joint 2 only.
        base, tip = slice(0, 8), slice(len(self.chain.vertices) - 8, None)
        self.assertTrue(np.allclose(posed.vertices[base], self.chain.vertices[base], atol=1e-12))
        expected = (self.chain.vertices[tip] - pivot) @ R.T + pivot
        self.assertTrue(np.allclose(posed.vertices[tip], expected, atol=1e-12))

        joints = posed_joints(self.chain, forward_kinematics(self.chain, pose))
        self.assertTrue(np.allclose(joints[2], [-np.sin(angle), 1.0 + np.cos(angle), 0.0], atol=1e-12))

    def test_shape_scales_the_tube(self):
        posed = skin_vertices(self.chain, Shape([1.0]), Pose.zeros(3))
        radial = np.linalg.norm(posed.vertices[:, [0, 2]], axis=1)
        self.assertTrue(np.allclose(radial, 0.22, atol=1e-12))
        joints = posed_joints(self.chain, posed.joint_transforms, Shape([1.0]))
        self.assertTrue(np.allclose(joints, self.chain.joints, atol=1e-12))

    def test_shape_size_mismatch(self):
        with self.assertRaises(ConfigurationError):
            skin_vertices(self.chain, Shape([1.0, 2.0]), Pose.zeros(3))

    def test_pose_joint_mismatch(self):
        with self.assertRaises(ConfigurationError) as context:
            skin_vertices(self.chain, None, Pose.zeros(2))
        self.assertEqual(context.exception.key, "pose")

    def test_pose_wrapping(self):
        pose = Pose([[0.0, 0.0, 1.5 * np.pi]])
        self.assertTrue(np.allclose(pose.axis_angle, [[0.0, 0.0, -0.5 * np.pi]]))
        self.assertTrue(np.allclose(rodrigues(pose.axis_angle), rodrigues([[0.0, 0.0, 1.5 * np.pi]])))

        pi_pose = Pose([[np.pi, 0.0, 0.0]])
        self.assertEqual(pi_pose.axis_angle[0, 0], np.pi)

    def test_pose_must_be_finite(self):
        with self.assertRaises(ConfigurationError):
            Pose([[np.nan, 0.0, 0.0]])
        with self.assertRaises(ConfigurationError):
            Pose(np.zeros((1, 3)), [0.0, np.inf, 0.0])

    def test_pose_vector(self):
        pose = chain_poses(3)[2]
        vector = pose.to_vector()
        self.assertEqual(vector.shape, (12,))
        self.assertTrue(np.allclose(Pose.from_vector(vector).axis_angle, pose.axis_angle))

    def test_weights_must_sum_to_one(self):
        bad = dataclasses.replace(self.chain, weights=self.chain.weights * 0.5)
        with self.assertRaises(TemplateError):
            bad.validate()

    def test_joints_must_be_topologically_ordered(self):
        bad = dataclasses.replace(self.chain, parents=np.array([-1, 2, 1]))
        with self.assertRaises(TemplateError):
            bad.validate()

    def test_uv_range(self):
        bad = dataclasses.replace(self.chain, uv=self.chain.uv + 0.5)
        with self.assertRaises(TemplateError):
            bad.validate()

    def test_uv_overlap(self):
        quad = quad_mesh()
        same = np.array([[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]] * 2)
        bad = dataclasses.replace(quad, uv=same)
        with self.assertRaises(TemplateError):
            bad.validate()
        bad.validate(check_charts=False)

    def test_normals_point_outward(self):
        sphere = icosphere(1)
        normals = compute_normals(skin_vertices(sphere, None, Pose.zeros(1)))
        self.assertTrue(np.all(np.sum(normals * sphere.vertices, axis=1) > 0.9))
        self.assertTrue(np.allclose(np.linalg.norm(normals, axis=1), 1.0))

    def test_differentiable_normals_match(self):
        sphere = icosphere(1)
        with ad.precision(np.float64):
            normals = compute_normals_t(ad.Tensor(sphere.vertices), sphere.faces).data
        self.assertTrue(np.allclose(normals, compute_normals(sphere.vertices, sphere.faces), atol=1e-12))

    def test_degenerate_face(self):
        vertices = np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 1.0, 0.0)])
        faces = np.array([(0, 1, 3), (0, 1, 2)])
        with self.assertRaises(DegenerateGeometryError) as context:
            compute_normals(vertices, faces)
        self.assertEqual(context.exception.face, 1)

    def test_cancelling_face_normals(self):
        vertices = np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)])
        faces = np.array([(0, 1, 2), (0, 2, 1)])
        with self.assertRaises(DegenerateGeometryError) as context:
            compute_normals(vertices, faces)
        self.assertEqual(context.exception.face, 0)

    def test_skinning_is_rigidly_equivariant(self):
        rng = np.random.default_rng(5)
        aa = rng.uniform(-0.5, 0.5, size=(3, 3))
        aa[0] = 0.0
        rt = rng.normal(size=3)
        shape = Shape([0.5])
        base = skin_vertices(self.chain, shape, Pose(aa, rt))

        # The root joint sits at the origin, so a global motion (G, t)
        # is the root rotation G with the root translation carried along.
        g_aa, t = np.array([0.3, -0.7, 0.4]), np.array([0.5, -1.0, 2.0])
        G = rodrigues(g_aa)
        moved_aa = aa.copy()
        moved_aa[0] = g_aa
        moved = skin_vertices(self.chain, shape, Pose(moved_aa, G @ rt + t))

        expected = base.vertices @ G.T + t
        self.assertLess(np.abs(moved.vertices - expected).max(), 1e-6 * np.abs(expected).max())
        self.assertTrue(np.allclose(moved.vertex_normals, base.vertex_normals @ G.T, atol=1e-9))

    def test_vertex_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        aa = rng.uniform(-0.6, 0.6, size=(3, 3))
        weights = rng.normal(size=(len(self.chain.vertices), 3))

        with ad.precision(np.float64):
            delta = ad.Tensor(np.zeros((3, 3)), requires_grad=True)
            with ad.Tape() as tape:
                posed = skin_vertices(self.chain, None, Pose(aa), (delta, ad.Tensor(np.zeros(3))))
                tape.backward(ad.tsum(posed.vertices_t * weights))
        analytic = delta.grad.reshape(-1)

        def loss(flat: np.ndarray) -> float:
            return float(np.sum(skin_vertices(self.chain, None, Pose(flat.reshape(3, 3))).vertices * weights))

        eps = 1e-4
        numeric = np.zeros(9)
        for i in range(9):
            up, down = aa.reshape(-1).copy(), aa.reshape(-1).copy()
            up[i] += eps
            down[i] -= eps
            numeric[i] = (loss(up) - loss(down)) / (2 * eps)

        self.assertLess(np.abs(analytic - numeric).max() / np.abs(numeric).max(), 1e-3)

    def test_save_and_load(self):
        prefix = Path(tempfile.mkdtemp())
        try:
            save_template(prefix / "chain.uvht", self.chain)
            loaded = load_template(prefix / "chain.uvht")
            self.assertEqual(loaded.joint_names, self.chain.joint_names)
            self.assertEqual(loaded.name, "chain")
            self.assertTrue(np.array_equal(loaded.faces, self.chain.faces))
            self.assertTrue(np.array_equal(loaded.weights, self.chain.weights))
            self.assertTrue(np.array_equal(loaded.shape_dirs, self.chain.shape_dirs))
        finally:
            shutil.rmtree(prefix)


# --------------------------------------------------------------------
class TemplateFileTests(unittest.TestCase):
    def setUp(self):
        self.prefix = Path(tempfile.mkdtemp())
        shutil.copytree("./testsrc", self.prefix / "testsrc")
        self.prev_cwd = os.getcwd()
        os.chdir(self.prefix)

    def tearDown(self):
        shutil.rmtree(self.prefix)
        os.chdir(self.prev_cwd)

    def test_load_triangle(self):
        template = load_template("testsrc/templates/triangle.uvht")
        self.assertEqual(template.name, "triangle")
        self.assertEqual(template.n_faces, 1)
        self.assertEqual(template.joint_names, ("root",))
        self.assertIsNone(template.shape_dirs)
        normals = compute_normals(template.vertices, template.faces)
        self.assertTrue(np.allclose(normals, [0.0, 0.0, 1.0]))

    def test_wrong_kind(self):
        write_container("testsrc/other.uvht", "something-else", {}, {})
        with self.assertRaises(ContainerError):
            load_template("testsrc/other.uvht")


# --------------------------------------------------------------------
class HumanoidTests(unittest.TestCase):
    def test_build(self):
        humanoid = build_humanoid()
        humanoid.validate()
        self.assertEqual(humanoid.n_joints, 24)
        self.assertEqual(humanoid.joint_names, JOINT_NAMES)
        self.assertEqual(humanoid.n_shape, 2)
        self.assertGreaterEqual(len(np.unique(humanoid.charts)), 15)

    def test_every_motion_poses_cleanly(self):
        humanoid = build_humanoid(n_ring=8, n_len=4)
        for name in ("arm_rotation", "hand_wave", "head_tilt", "leg_lift"):
            for pose in sequence(name, 4):
                posed = skin_vertices(humanoid, Shape([0.5, -0.5]), pose)
                self.assertTrue(np.all(np.isfinite(posed.vertices)))
                self.assertTrue(np.all(np.isfinite(posed.vertex_normals)))


# --------------------------------------------------------------------
class MotionTests(unittest.TestCase):
    def test_sequence(self):
        seq = sequence("arm_rotation", 8)
        self.assertEqual(len(seq), 8)
        self.assertEqual(seq[0].n_joints, 24)
        shoulder = JOINT_NAMES.index("left_shoulder")
        self.assertTrue(np.allclose(seq[0].axis_angle[shoulder], [0.0, 1.0, 0.0]))

    def test_unknown_sequence(self):
        with self.assertRaises(ConfigurationError):
            sequence("moonwalk", 8)
        with self.assertRaises(ConfigurationError):
            sequence("hand_wave", 0)

    def test_keyframes(self):
        seq = sequence("leg_lift", 8)
        picks = keyframes(seq, 3)
        self.assertEqual(len(picks), 3)
        self.assertIs(picks[0], seq[0])
        self.assertIs(picks[-1], seq[-1])
        with self.assertRaises(ConfigurationError):
            keyframes(seq, 0)
        with self.assertRaises(ConfigurationError):
            keyframes(seq, 9)


# --------------------------------------------------------------------
class BvhTests(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        sphere = icosphere(2)
        self.tris = sphere.vertices[sphere.faces] + rng.normal(0.0, 0.02, size=(len(sphere.faces), 3, 3))
        self.points = rng.uniform(-1.5, 1.5, size=(10000, 3))

    def test_nearest_matches_brute_force(self):
        bvh = MeshBvh.from_triangles(self.tris)
        faces, d2, _ = bvh.nearest(self.points)
        faces_ref, d2_ref, _ = brute_force_nearest(self.points, self.tris)
        self.assertTrue(np.allclose(d2, d2_ref, rtol=1e-9, atol=1e-12))
        self.assertTrue(np.array_equal(faces, faces_ref))

    def test_max_dist(self):
        bvh = MeshBvh.from_triangles(self.tris)
        faces, d2, _ = bvh.nearest(self.points, max_dist=0.1)
        _, d2_ref, _ = brute_force_nearest(self.points, self.tris)
        near = d2_ref <= 0.01
        self.assertTrue(np.all(faces[near] >= 0))
        self.assertTrue(np.all(faces[~near] == -1))
        self.assertTrue(np.all(np.isinf(d2[~near])))

    def test_closest_point_regions(self):
        tri = np.array([[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]] * 2)
        points = np.array([(0.2, 0.2, 1.0), (2.0, 2.0, 0.0)])
        d2, bary = closest_point_on_triangles(points, tri)
        self.assertTrue(np.allclose(d2, [1.0, 4.5]))
        self.assertTrue(np.allclose(bary, [(0.6, 0.2, 0.2), (0.0, 0.5, 0.5)]))


# --------------------------------------------------------------------
class SurfaceMapTests(unittest.TestCase):
    def setUp(self):
        self.quad = skin_vertices(quad_mesh(), None, Pose.zeros(1))
        self.tent = skin_vertices(tent_mesh(), None, Pose.zeros(1))

    def test_oracle_and_bvh_agree(self):
        sphere = skin_vertices(icosphere(1), None, Pose.zeros(1))
        points = np.random.default_rng(1).uniform(-1.2, 1.2, size=(100, 3))
        brute = nearest_point_oracle(points, sphere)
        tree = nearest_point_oracle(points, sphere, use_bvh=True)
        self.assertTrue(np.allclose(np.abs(brute.distance), np.abs(tree.distance), atol=1e-12))

    def test_uvh_on_a_flat_quad(self):
        for dispersed in (True, False):
            uvh, sp = to_uvh((0.1, -0.2, 0.05), self.quad, dispersed=dispersed)
            self.assertAlmostEqual(float(uvh.u), 0.6)
            self.assertAlmostEqual(float(uvh.v), 0.3)
            self.assertAlmostEqual(float(uvh.h), 0.5)
            self.assertTrue(np.allclose(sp.normal, [0.0, 0.0, 1.0]))

            below, _ = to_uvh((0.1, -0.2, -0.03), self.quad, dispersed=dispersed)
            self.assertAlmostEqual(float(below.h), -0.3)

    def test_dispersed_projection_across_a_ridge(self):
        right, sp = to_uvh((0.02, 1.05, 0.0), self.tent)
        self.assertIn(int(sp.face), (2, 3))
        self.assertGreaterEqual(float(right.u), 0.6)
        nearest, _ = to_uvh((0.02, 1.05, 0.0), self.tent, dispersed=False)
        self.assertGreater(float(right.h), float(nearest.h))
        self.assertGreater(float(right.h), 0.5)

        left, sp = to_uvh((-0.02, 1.05, 0.0), self.tent)
        self.assertIn(int(sp.face), (0, 1))
        self.assertLessEqual(float(left.u), 0.4)

        ridge, _ = to_uvh((0.0, 1.05, 0.0), self.tent)
        self.assertAlmostEqual(float(ridge.h), 0.5, places=5)

    def test_projection_failure_and_fallback(self):
        far = np.array([[0.0, 5.0, 0.0]])
        with self.assertRaises(ProjectionError) as context:
            dispersed_project(far, self.tent, fallback=False)
        self.assertEqual(context.exception.count, 1)

        with EventBus.session() as bus:
            sp = dispersed_project(far, self.tent)
            self.assertEqual(bus.counters["projection.fallback"], 1)
        self.assertIn(int(sp.face[0]), range(4))

        _, found, fell_back = surface_index(self.tent).dispersed(far, fallback=False)
        self.assertFalse(found[0])
        self.assertFalse(fell_back[0])

    def test_shell_boundary_is_inside(self):
        self.assertTrue(shell_test((-0.5, -0.5, 0.1), self.quad))
        self.assertFalse(shell_test((-0.5, -0.5, 0.1001), self.quad))
        self.assertTrue(shell_test((0.0, 0.0, -0.05), self.quad))
        self.assertFalse(shell_test((0.0, 0.0, 3.0), self.quad))

    def test_shell_of_a_sphere(self):
        sphere = skin_vertices(icosphere(1), None, Pose.zeros(1))
        direction = sphere.vertices[0] / np.linalg.norm(sphere.vertices[0])
        inside = shell_test(np.stack([1.05 * direction, 1.2 * direction, 0.3 * direction]), sphere)
        self.assertEqual(list(inside), [True, False, False])

    def test_accepted_points_have_bounded_height(self):
        rng = np.random.default_rng(11)
        for template, extent in ((cube_mesh(), 0.7), (icosphere(2), 1.2)):
            posed = skin_vertices(template, None, Pose.zeros(1))
            points = rng.uniform(-extent, extent, size=(20000, 3))
            accepted = points[shell_test(points, posed)]
            self.assertGreater(len(accepted), 100)
            uvh, _ = to_uvh(accepted, posed)
            self.assertLessEqual(float(np.abs(uvh.h).max()), 1.0)

    def test_surface_index_is_cached(self):
        self.assertIs(surface_index(self.quad), surface_index(self.quad))
        self.assertIsNot(surface_index(self.quad), surface_index(self.quad, h_max=0.2))

    def test_local_view_dir(self):
        sp = nearest_point_oracle((0.1, 0.1, 0.05), self.quad)
        self.assertTrue(np.allclose(local_view_dir((0.0, 0.0, -1.0), sp.frame), [0.0, 0.0, -1.0]))
        self.assertTrue(np.allclose(local_view_dir((1.0, 0.0, 0.0), sp.frame), [1.0, 0.0, 0.0]))
        self.assertTrue(np.allclose(local_view_dir((0.0, 1.0, 0.0), sp.frame), [0.0, 1.0, 0.0]))
        with self.assertRaises(ContractViolation):
            local_view_dir((0.0, 0.0, 2.0), sp.frame)

    def test_seam_statistics(self):
        faces = np.array([[0, 1, -1, 2], [0, 2, 2, -1]])
        stats = seam_statistics(faces, np.array([0, 0, 1]))
        self.assertEqual(stats["pairs"], 3)
        self.assertEqual(stats["crossings"], 1)
        self.assertAlmostEqual(stats["fraction"], 1 / 3)
        self.assertEqual(seam_statistics(np.full((2, 3), -1), np.zeros(1, np.int64))["fraction"], 0.0)

    def test_uvh_gradient_under_translation(self):
        template = quad_mesh()
        points = np.array([(0.1, -0.2, 0.05), (-0.2, 0.3, -0.04)])

        def root_gradient(column: int) -> np.ndarray:
            with ad.precision(np.float64):
                rt = ad.Tensor(np.zeros(3), requires_grad=True)
                with ad.Tape() as tape:
                    posed = skin_vertices(template, None, Pose.zeros(1), (ad.Tensor(np.zeros((1, 3))), rt))
                    index = SurfaceIndex(posed)
                    sp, found, fell_back = index.dispersed(points)
                    self.assertTrue(np.all(found) and not np.any(fell_back))
                    normals = compute_normals_t(posed.vertices_t, posed.faces)
                    uvh = differentiable_uvh(points, sp, index, fell_back, posed.vertices_t, normals)
                    tape.backward(ad.tsum(uvh[:, column]))
            return rt.grad

        self.assertTrue(np.allclose(root_gradient(0), [-2.0, 0.0, 0.0], atol=1e-9))
        self.assertTrue(np.allclose(root_gradient(1), [0.0, -2.0, 0.0], atol=1e-9))
        self.assertTrue(np.allclose(root_gradient(2), [0.0, 0.0, -20.0], atol=1e-9))

    def test_uvh_gradient_under_rotation(self):
        template = chain_template()
        theta = np.array([np.pi / 8, 5 * np.pi / 8])
        points = np.stack(
            [0.25 * np.sin(theta), np.array([0.6, 1.4]), 0.25 * np.cos(theta)], axis=1
        )
        base = np.zeros((3, 3))
        base[1, 2] = 0.05
        base[0, 0] = 0.02

        def uvh_of(aa: ad.Tensor) -> ad.Tensor:
            posed = skin_vertices(template, None, Pose.zeros(3), (aa, ad.Tensor(np.zeros(3))))
            index = SurfaceIndex(posed)
            sp, _, fell_back = index.dispersed(points)
            vertices = posed.vertices_t
            normals = None if vertices is None else compute_normals_t(vertices, posed.faces)
            return differentiable_uvh(points, sp, index, fell_back, vertices, normals)

        eps = 1e-4
        with ad.precision(np.float64):
            aa = ad.Tensor(base.copy(), requires_grad=True)
            with ad.Tape() as tape:
                h = ad.tsum(uvh_of(aa)[:, 2])
            tape.backward(h)
            analytic = aa.grad.reshape(-1)

            numeric = np.zeros(9)
            for i in range(9):
                up, down = base.copy().reshape(-1), base.copy().reshape(-1)
                up[i] += eps
                down[i] -= eps
                f_up = uvh_of(ad.Tensor(up.reshape(3, 3))).data[:, 2].sum()
                f_down = uvh_of(ad.Tensor(down.reshape(3, 3))).data[:, 2].sum()
                numeric[i] = (f_up - f_down) / (2 * eps)

        self.assertTrue(np.allclose(analytic, numeric, rtol=1e-3, atol=1e-3))
        self.assertGreater(np.abs(analytic).max(), 0.1)


# --------------------------------------------------------------------
class EncodingTests(unittest.TestCase):
    def test_frequency_encoding(self):
        self.assertEqual(FreqEncoding().width(3), 39)
        out = freq_encode(np.array([0.25, 0.0, 0.0]), FreqEncoding(bands=6)).data
        self.assertEqual(out.shape, (39,))
        self.assertTrue(np.allclose(out[:3], [0.25, 0.0, 0.0]))
        self.assertAlmostEqual(out[3], np.sin(np.pi / 4))
        self.assertAlmostEqual(out[4], np.cos(np.pi / 4))
        self.assertAlmostEqual(out[5], 1.0)
        self.assertAlmostEqual(out[6], 0.0)
        self.assertEqual(freq_encode(np.zeros((5, 3)), FreqEncoding(bands=2)).shape, (5, 15))

    def test_level_geometry(self):
        grid = HashGrid(HashConfig(levels=2, features=2, table_size_log2=6, base_res=2, max_res=16))
        self.assertEqual(grid.resolutions, [2, 16])
        self.assertEqual(grid.dense, [True, False])
        self.assertEqual(grid.table_sizes, [27, 64])
        self.assertEqual(HashConfig().width, 64)
        cells = np.array([[0, 0, 0], [15, 15, 15], [7, 3, 11]])
        rows = grid.corner_indices(1, cells)
        self.assertEqual(rows.shape, (3, 8))
        self.assertTrue(np.all((rows >= 0) & (rows < 64)))

    def test_bad_grid_config(self):
        with self.assertRaises(ConfigurationError):
            HashGrid(HashConfig(base_res=32, max_res=16))

    def test_dense_corners_are_exact(self):
        grid = HashGrid(HashConfig(levels=1, features=2, table_size_log2=12, base_res=4, max_res=4))
        store = ad.ParamStore(np.float64)
        rng = np.random.default_rng(0)
        grid.init_params(store, rng)
        table = store[grid.param_name(0)].data
        table[...] = rng.normal(size=table.shape)

        for i, j, k in [(0, 0, 0), (1, 2, 3), (4, 4, 4), (4, 0, 2)]:
            out = hash_encode(np.array([[i / 4, j / 4, k / 4]]), grid, store).data[0]
            self.assertTrue(np.allclose(out, table[i + 5 * (j + 5 * k)], atol=1e-12))

    def test_encoding_is_continuous(self):
        grid = HashGrid(HashConfig(levels=3, features=2, table_size_log2=8, base_res=4, max_res=16))
        store = ad.ParamStore(np.float64)
        rng = np.random.default_rng(0)
        grid.init_params(store, rng)
        for name in store:
            store[name].data[...] = rng.normal(size=store[name].shape)

        a = hash_encode(np.array([[0.25 - 1e-9, 0.3, 0.7]]), grid, store).data
        b = hash_encode(np.array([[0.25 + 1e-9, 0.3, 0.7]]), grid, store).data
        self.assertTrue(np.allclose(a, b, atol=1e-6))

    def test_hash_gradient(self):
        grid = HashGrid(HashConfig(levels=2, features=2, table_size_log2=8, base_res=4, max_res=16))
        store = ad.ParamStore(np.float64)
        rng = np.random.default_rng(0)
        grid.init_params(store, rng)
        for name in store:
            store[name].data[...] = rng.normal(size=store[name].shape)
        positions = np.array([[0.3, 0.55, 0.7], [0.61, 0.12, 0.43]])
        self.assertLess(ad.gradcheck(lambda p: hash_encode(p, grid, store), [positions]), 1e-3)

    def test_clamped_positions_are_counted(self):
        grid = HashGrid(HashConfig(levels=2, features=2, table_size_log2=8, base_res=4, max_res=8))
        store = ad.ParamStore(np.float64)
        grid.init_params(store, np.random.default_rng(0))
        with EventBus.session() as bus:
            outside = hash_encode(np.array([[1.5, 0.5, 0.5]]), grid, store).data
            self.assertEqual(bus.counters["hash.clamped"], 1)
        edge = hash_encode(np.array([[1.0, 0.5, 0.5]]), grid, store).data
        self.assertTrue(np.allclose(outside, edge))

    def test_pose_encoder(self):
        self.assertEqual(pose_input_width(24), 78)
        self.assertEqual(extended_pose_vector(Pose.zeros(24)).shape, (78,))
        params = FieldParams.create(small_field_config(3))
        latent = pose_encode(extended_pose_vector(chain_poses(2)[1]), params.store).data
        self.assertEqual(latent.shape, (4,))
        self.assertTrue(np.all(np.abs(latent) < 1.0))

        with self.assertRaises(ConfigurationError) as context:
            pose_encode(np.zeros(10), params.store)
        self.assertEqual(context.exception.key, "pose.input_width")


# --------------------------------------------------------------------
class FieldTests(unittest.TestCase):
    def setUp(self):
        self.chain = chain_template()
        theta = np.pi / 8
        self.inside = np.array([0.25 * np.sin(theta), 0.6, 0.25 * np.cos(theta)])
        self.direction = np.array([0.0, 0.0, -1.0])

    def test_parameter_groups(self):
        full = FieldParams.create(small_field_config(3))
        self.assertEqual(set(full.store.groups()), {"hash", "pose_encoder", "remap", "resnet", "rgb"})
        self.assertEqual(full.trunk, "resnet")

        plain = FieldParams.create(small_field_config(3).with_ablation(Ablation.BOTH))
        self.assertEqual(set(plain.store.groups()), {"hash", "pose_encoder", "mlp", "rgb"})
        layers = {name.rsplit(".", 1)[0] for name in plain.store.names("mlp")}
        self.assertEqual(len([l for l in layers if l.startswith("mlp.l")]), MLP_LAYERS)

    def test_unknown_ablation(self):
        with self.assertRaises(ConfigurationError):
            Ablation.flags("no_hash")

    def test_remap_starts_as_identity(self):
        params = FieldParams.create(small_field_config(3))
        uvh = np.array([[0.2, 0.4, -0.5], [0.9, 0.1, 0.3]])
        out, delta = remap_uvh(uvh, np.zeros(4), params)
        self.assertTrue(np.allclose(out.data, uvh))
        self.assertTrue(np.all(delta.data == 0))

    def test_remap_offset_is_bounded(self):
        params = FieldParams.create(small_field_config(3))
        params.store["remap.l2.W"].data[...] = 100.0
        uvh = np.random.default_rng(0).uniform(0.0, 1.0, size=(16, 3))
        _, delta = remap_uvh(uvh, np.ones(4), params)
        self.assertTrue(np.all(np.abs(delta.data) <= params.cfg.remap_scale + 1e-6))

    def test_offset_penalty(self):
        penalty = offset_penalty(np.array([[0.1, -0.2, 0.3], [0.0, 0.0, 0.0]]))
        self.assertAlmostEqual(float(penalty.data), 0.3, places=6)
        self.assertEqual(float(offset_penalty(None).data), 0.0)

    def test_query_outside_the_shell(self):
        params = FieldParams.create(small_field_config(3))
        sigma, rgb = query_field(
            np.array([5.0, 5.0, 5.0]), self.direction, Pose.zeros(3), None, params, self.chain
        )
        self.assertEqual(sigma, 0.0)
        self.assertTrue(np.all(rgb == 0))

    def test_every_variant_answers_queries(self):
        for name in Ablation.ALL:
            params = FieldParams.create(small_field_config(3).with_ablation(name))
            sigma, rgb = query_field(self.inside, self.direction, chain_poses(3)[1], None, params, self.chain)
            self.assertGreater(sigma, 0.0, name)
            self.assertTrue(np.all((rgb > 0) & (rgb < 1)), name)

    def test_pose_must_match_the_field(self):
        params = FieldParams.create(small_field_config(3))
        with self.assertRaises(ConfigurationError):
            prepare_frame(params, self.chain, Pose.zeros(2))


# --------------------------------------------------------------------
class RenderTests(unittest.TestCase):
    def setUp(self):
        self.template, self.camera, self.pose = micro_scene()
        self.params = FieldParams.create(small_field_config(1))

    def test_camera_rays(self):
        origins, dirs = generate_rays(self.camera, self.camera.all_pixels())
        self.assertEqual(dirs.shape, (64, 3))
        self.assertTrue(np.allclose(np.linalg.norm(dirs, axis=1), 1.0))
        self.assertTrue(np.allclose(origins, [0.0, 0.0, 2.0]))
        _, center = generate_rays(self.camera, [[4, 4]])
        self.assertGreater(center[0] @ np.array([0.0, 0.0, -1.0]), 0.99)

        pix, depth = self.camera.project(np.zeros((1, 3)))
        self.assertTrue(np.allclose(pix, [[4.0, 4.0]]))
        self.assertAlmostEqual(float(depth[0]), 2.0)

    def test_pixels_out_of_bounds(self):
        with self.assertRaises(ContractViolation):
            generate_rays(self.camera, [[8, 0]])
        with self.assertRaises(ContractViolation):
            generate_rays(self.camera, [[0, -1]])

    def test_camera_contract(self):
        with self.assertRaises(ContractViolation):
            Camera(0.0, 1.0, 4.0, 4.0, 8, 8)
        skewed = np.eye(4)
        skewed[0, 1] = 0.5
        with self.assertRaises(ContractViolation):
            Camera(1.0, 1.0, 4.0, 4.0, 8, 8, skewed)
        self.assertEqual(Camera.from_dict(self.camera.to_dict()).to_dict(), self.camera.to_dict())

    def test_composite(self):
        sigma = np.array([[1.0, 2.0]])
        rgb = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
        delta = np.array([[0.5, 0.5]])
        with ad.precision(np.float64):
            color, alpha = composite_arrays(sigma, rgb, delta)
        w0 = 1 - np.exp(-0.5)
        w1 = np.exp(-0.5) * (1 - np.exp(-1.0))
        bg = 1 - w0 - w1
        self.assertAlmostEqual(float(alpha.data[0]), w0 + w1)
        self.assertTrue(np.allclose(color.data[0], [w0 + bg, w1 + bg, bg]))

        empty, alpha = composite_arrays(np.zeros((1, 4)), np.zeros((1, 4, 3)), np.ones((1, 4)), (0.2, 0.4, 0.6))
        self.assertTrue(np.allclose(empty.data, [[0.2, 0.4, 0.6]]))
        self.assertEqual(float(alpha.data[0]), 0.0)

    def test_march_contract(self):
        frame = prepare_frame(self.params, self.template, self.pose)
        query = lambda x, d, assume_inside=False: None
        with self.assertRaises(ContractViolation):
            march_rays(np.zeros((1, 3)), np.array([[0.0, 0.0, -2.0]]), frame.index, query, 8)
        with self.assertRaises(ContractViolation):
            march_rays(np.zeros((1, 3)), np.array([[0.0, 0.0, -1.0]]), frame.index, query, 8, near=1.0, far=1.0)

    def test_missed_ray(self):
        frame = prepare_frame(self.params, self.template, self.pose)
        from uvhfield.render import field_query_for

        samples = march_ray(
            np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0]), frame.index, field_query_for(self.params, frame), 8
        )
        self.assertFalse(samples.hit[0])
        self.assertEqual(int(samples.evaluated[0]), 0)
        color, alpha = composite(samples)
        self.assertTrue(np.allclose(color.data, 1.0))
        self.assertEqual(float(alpha.data[0]), 0.0)

    def test_background_only_image(self):
        away = Camera.look_at((0.0, 0.0, 2.0), (0.0, 0.0, 5.0), 8, 8, 8.0)
        rgb, alpha = render_image(away, self.pose, None, self.params, self.template, RenderConfig(samples=8))
        self.assertEqual(rgb.shape, (8, 8, 3))
        self.assertTrue(np.allclose(rgb, 1.0))
        self.assertTrue(np.all(alpha == 0.0))

    def test_scatter_of_an_empty_batch(self):
        empty = ad.Tensor(np.zeros((0, 3)), requires_grad=True)
        with ad.Tape() as tape:
            out = ad.scatter_add(empty, np.zeros(0, dtype=np.int64), 4)
            tape.backward(ad.tsum(out))
        self.assertEqual(out.shape, (4, 3))
        self.assertTrue(np.all(out.data == 0.0))
        self.assertEqual(empty.grad.shape, (0, 3))

    def test_samples_are_culled_to_the_shell(self):
        chain = chain_template()
        params = FieldParams.create(small_field_config(3))
        frame = prepare_frame(params, chain, Pose.zeros(3))
        from uvhfield.render import field_query_for

        samples = march_ray(
            np.array([0.0, 1.0, 3.0]), np.array([0.0, 0.0, -1.0]), frame.index, field_query_for(params, frame), 64
        )
        self.assertTrue(samples.hit[0])
        self.assertGreater(int(samples.evaluated[0]), 0)
        self.assertGreater(int(samples.culled[0]), 0)
        self.assertEqual(int(samples.evaluated[0] + samples.culled[0]), 64)
        self.assertEqual(int(np.sum(samples.faces[0] >= 0)), int(samples.evaluated[0]))

    def test_render_is_deterministic(self):
        cfg = RenderConfig(samples=8, chunk=16)
        rgb_a, alpha_a = render_image(self.camera, self.pose, None, self.params, self.template, cfg)
        previous = os.environ.get(THREADS_ENV)
        os.environ[THREADS_ENV] = "1"
        try:
            rgb_b, alpha_b = render_image(self.camera, self.pose, None, self.params, self.template, cfg)
        finally:
            if previous is None:
                del os.environ[THREADS_ENV]
            else:
                os.environ[THREADS_ENV] = previous
        self.assertEqual(rgb_a.shape, (8, 8, 3))
        self.assertTrue(np.array_equal(rgb_a, rgb_b))
        self.assertTrue(np.array_equal(alpha_a, alpha_b))
        self.assertEqual(float(alpha_a[0, 0]), 0.0)
        self.assertGreater(float(alpha_a[4, 4]), 0.0)

    def test_gradients_reach_every_network(self):
        frame_pixels = self.camera.all_pixels()
        origins, dirs = generate_rays(self.camera, frame_pixels)
        with ad.Tape() as tape:
            frame = prepare_frame(self.params, self.template, self.pose)
            color, _, _ = render_rays(origins, dirs, self.params, frame, RenderConfig(samples=8), None)
            loss = ad.mean((color - 0.5) ** 2)
        tape.backward(loss)
        norms = self.params.store.grad_norms()
        for group in ("hash", "pose_encoder", "remap", "resnet", "rgb"):
            self.assertGreater(norms[group], 0.0, group)

    def test_masked_psnr(self):
        truth = np.full((4, 4, 3), 0.1)
        mask = np.ones((4, 4), dtype=bool)
        self.assertEqual(masked_psnr(truth, truth, mask), float("inf"))
        self.assertAlmostEqual(masked_psnr(np.zeros((4, 4, 3)), truth, mask), 20.0)

        with self.assertRaises(UndefinedMetricError):
            masked_psnr(truth, truth, np.zeros((4, 4), dtype=bool))
        with self.assertRaises(ContractViolation):
            masked_psnr(truth, np.zeros((4, 5, 3)), mask)


# --------------------------------------------------------------------
class DatagenTests(TempDirTestCase):
    def test_tiny_dataset(self):
        manifest = tiny_dataset(self.prefix / "data")
        self.assertEqual(len(manifest.records), 9)
        self.assertEqual(len(manifest.records_for(Split.TRAIN)), 4)
        self.assertEqual(len(manifest.records_for(Split.NOVEL_VIEW)), 2)
        self.assertEqual(len(manifest.records_for(Split.NOVEL_POSE)), 2)
        self.assertEqual(len(manifest.records_for(Split.HOLDOUT_BOTH)), 1)
        self.assertEqual(manifest.splits.holdout_poses, [1])
        self.assertEqual(manifest.splits.holdout_cameras, ["cam01"])
        self.assertEqual(sorted(manifest.train_poses()), [0, 2])

        for record in manifest.records_for(Split.TRAIN):
            self.assertNotIn(record.camera, manifest.splits.holdout_cameras)
            self.assertNotIn(record.pose_index, manifest.splits.holdout_poses)

    def test_images_and_masks(self):
        manifest = tiny_dataset(self.prefix / "data")
        self.assertTrue((self.prefix / "data" / "texture.png").exists())
        for record in manifest.records:
            image, mask = load_frame(manifest, record)
            self.assertEqual(image.shape, (24, 24, 3))
            self.assertTrue(mask.any())
            self.assertFalse(mask.all())
            self.assertTrue(np.all(image[~mask] == 1.0))

    def test_manifest_reload(self):
        manifest = tiny_dataset(self.prefix / "data")
        for path in (self.prefix / "data", self.prefix / "data" / MANIFEST_NAME):
            loaded = load_manifest(path)
            self.assertEqual(loaded.dataset_hash, manifest.dataset_hash)
            self.assertEqual(loaded.template, "chain.uvht")

    def test_tampered_split_is_rejected(self):
        tiny_dataset(self.prefix / "data")
        path = self.prefix / "data" / MANIFEST_NAME
        data = json.loads(path.read_text())
        for record in data["records"]:
            if record["split"] == Split.TRAIN:
                record["split"] = Split.NOVEL_POSE
                break
        path.write_text(json.dumps(data))
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_overlapping_splits_are_rejected(self):
        tiny_dataset(self.prefix / "data")
        path = self.prefix / "data" / MANIFEST_NAME
        data = json.loads(path.read_text())
        data["splits"]["train_poses"].append(1)
        path.write_text(json.dumps(data))
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_schema_version(self):
        tiny_dataset(self.prefix / "data")
        path = self.prefix / "data" / MANIFEST_NAME
        data = json.loads(path.read_text())
        data["schema_version"] = 99
        path.write_text(json.dumps(data))
        with self.assertRaises(ManifestError):
            load_manifest(path)
        with self.assertRaises(ManifestError):
            load_manifest(self.prefix / "missing")

    def test_config_hash_is_stamped(self):
        manifest = tiny_dataset(self.prefix / "data", config_hash="abc123")
        self.assertEqual(manifest.config_hash, "abc123")
        text = read_png_text(manifest.root / manifest.records[0].image)
        self.assertEqual(text["config_hash"], "abc123")

    def test_pose_jitter(self):
        poses = chain_poses(3)
        self.assertIs(jitter_poses(poses, 0.0, 0)[1], poses[1])
        a = jitter_poses(poses, 0.1, 4)
        b = jitter_poses(poses, 0.1, 4)
        self.assertTrue(np.array_equal(a[1].axis_angle, b[1].axis_angle))
        self.assertFalse(np.allclose(a[1].axis_angle, poses[1].axis_angle))
        with self.assertRaises(ConfigurationError):
            jitter_poses(poses, -1.0, 0)

        manifest = tiny_dataset(self.prefix / "data", pose_jitter_std=0.05)
        record = manifest.records[0]
        self.assertGreater(record.pose_fitted.angle_error(record.pose), 0.0)

    def test_holdout_pose_indices(self):
        self.assertEqual(holdout_pose_indices(10, 2), [3, 6])
        self.assertEqual(holdout_pose_indices(3, 1), [1])
        self.assertEqual(holdout_pose_indices(5, 0), [])

    def test_scene_spec(self):
        with self.assertRaises(ConfigurationError) as context:
            SceneSpec.from_dict({"n_cameras": 4, "zoom": 2})
        self.assertEqual(context.exception.key, "data.zoom")
        with self.assertRaises(ConfigurationError):
            SceneSpec(n_cameras=4, holdout_camera=4).validate()
        spec = SceneSpec.from_dict({"shape": [1.0, 0.5]})
        self.assertEqual(spec.shape, (1.0, 0.5))

    def test_rasterize_a_quad(self):
        template, camera, pose = micro_scene()
        posed = skin_vertices(template, None, pose)
        texture = np.full((4, 4, 3), 0.25)
        image, mask = rasterize_view(posed, texture, camera)
        self.assertTrue(mask[4, 4])
        self.assertFalse(mask[0, 0])
        self.assertTrue(np.allclose(image[mask], 0.25))
        self.assertTrue(np.all(image[~mask] == 1.0))

    def test_texture(self):
        texture = procedural_texture(32)
        self.assertEqual(texture.shape, (32, 32, 3))
        self.assertTrue(np.all((texture >= 0.0) & (texture <= 1.0)))

    @unittest.skipUnless(SLOW, "set UVH_SLOW=1 to run")
    def test_humanoid_dataset(self):
        spec = SceneSpec(
            n_train_poses=2, n_holdout_poses=1, n_cameras=2, width=32, height=32, texture_size=64
        )
        manifest = generate_dataset(spec, self.prefix / "humanoid")
        self.assertEqual(len(manifest.records), 6)
        for record in manifest.records:
            _, mask = load_frame(manifest, record)
            self.assertTrue(mask.any())


# --------------------------------------------------------------------
class ContainerTests(TempDirTestCase):
    def test_round_trip(self):
        path = write_container(
            self.prefix / "c.bin", "test", {"a": 1}, {"x": np.arange(6, dtype=np.int32).reshape(2, 3)}
        )
        meta, arrays = read_container(path, "test")
        self.assertEqual(meta, {"a": 1})
        self.assertTrue(np.array_equal(arrays["x"], np.arange(6).reshape(2, 3)))

    def test_corruption(self):
        path = write_container(self.prefix / "c.bin", "test", {}, {"x": np.zeros(16)})
        raw = path.read_bytes()

        with self.assertRaises(ContainerError):
            read_container(path, "other")

        broken = self.prefix / "broken.bin"
        for data in (b"NOPE" + raw[4:], raw[:6], raw[:20], raw[:-8]):
            broken.write_bytes(data)
            with self.assertRaises(ContainerError):
                read_container(broken)

        with self.assertRaises(ContainerError):
            read_container(self.prefix / "missing.bin")


# --------------------------------------------------------------------
class CheckpointTests(TempDirTestCase):
    def setUp(self):
        super().setUp()
        self.params = FieldParams.create(small_field_config(3))
        self.adam = AdamState(step=5)
        self.adam.moments("rgb.l1.b", np.zeros(3))[0][...] = 0.5
        self.path = save_checkpoint(
            self.prefix / "model.ckpt",
            Checkpoint(self.params, self.adam, step=5, config_hash="abc", dataset_hash="data"),
        )

    def test_round_trip(self):
        ckpt = load_checkpoint(self.path, config_hash="abc", dataset_hash="data")
        self.assertEqual(ckpt.step, 5)
        self.assertEqual(ckpt.params.cfg, self.params.cfg)
        self.assertEqual(set(ckpt.params.store), set(self.params.store))
        for name, tensor in self.params.store.items():
            self.assertTrue(np.array_equal(ckpt.params.store[name].data, tensor.data), name)
        self.assertEqual(ckpt.adam.step, 5)
        self.assertTrue(np.all(ckpt.adam.m["rgb.l1.b"] == 0.5))

    def test_mismatch(self):
        with self.assertRaises(CheckpointMismatchError) as context:
            load_checkpoint(self.path, config_hash="xyz")
        self.assertEqual(context.exception.what, "config")
        with self.assertRaises(CheckpointMismatchError) as context:
            load_checkpoint(self.path, config_hash="abc", dataset_hash="other")
        self.assertEqual(context.exception.what, "dataset")

    def test_force(self):
        warnings = []
        with EventBus.session() as bus:
            bus.subscribe(Events.WARNING, warnings.append)
            ckpt = load_checkpoint(self.path, config_hash="xyz", force=True)
        self.assertEqual(ckpt.step, 5)
        self.assertEqual(len(warnings), 1)


# --------------------------------------------------------------------
class TrainerTests(TempDirTestCase):
    def setUp(self):
        super().setUp()
        self.manifest = tiny_dataset(self.prefix / "data")
        self.template = chain_template()
        self.cfg = TrainConfig(steps=4, rays_per_step=16, samples=8, ckpt_every=0)

    def make_state(self, cfg=None, **kwargs):
        return create_state(
            self.manifest, self.template, small_field_config(3), cfg or self.cfg, **kwargs
        )

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            TrainConfig(steps=0).validate()
        with self.assertRaises(ConfigurationError):
            TrainConfig(foreground_fraction=1.5).validate()
        with self.assertRaises(ConfigurationError):
            TrainConfig(ablate="no_hash").validate()

    def test_sample_pixels(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        frame = TrainFrame(None, np.zeros((4, 4, 3)), mask, np.argwhere(mask), np.argwhere(~mask))
        picks = sample_pixels(frame, 10, 0.8, np.random.default_rng(0))
        self.assertEqual(picks.shape, (10, 2))
        self.assertTrue(np.all(picks[:8] == [2, 1]))
        self.assertFalse(np.any(mask[picks[8:, 1], picks[8:, 0]]))

    def test_train_step(self):
        state = self.make_state()
        with EventBus.session() as bus:
            steps = []
            bus.subscribe(Events.STEP, steps.append)
            loss, metrics = train_step(state)
        self.assertTrue(np.isfinite(loss))
        self.assertEqual(state.step, 1)
        self.assertEqual(metrics["total"], 4)
        self.assertGreater(metrics["evaluated"], 0)
        self.assertGreater(metrics["grad_norms"]["rgb"], 0.0)
        self.assertEqual(len(steps), 1)

    def test_train_writes_final_checkpoint(self):
        state = self.make_state(out_dir=self.prefix / "run", config_hash="abc")
        losses = train(state)
        self.assertEqual(len(losses), 4)
        self.assertEqual(state.step, 4)
        ckpt = load_checkpoint(
            self.prefix / "run" / "final.ckpt", config_hash="abc", dataset_hash=self.manifest.dataset_hash
        )
        self.assertEqual(ckpt.step, 4)
        self.assertEqual(ckpt.extra["final_loss"], losses[-1])

        resumed = self.make_state(checkpoint=ckpt)
        self.assertEqual(resumed.step, 4)
        for name, tensor in state.store.items():
            self.assertTrue(np.array_equal(resumed.store[name].data, tensor.data), name)

    def test_periodic_checkpoints(self):
        cfg = dataclasses.replace(self.cfg, ckpt_every=2)
        state = self.make_state(cfg, out_dir=self.prefix / "run")
        train(state)
        self.assertTrue((self.prefix / "run" / "step000002.ckpt").exists())
        self.assertTrue((self.prefix / "run" / "step000004.ckpt").exists())

    def test_nonfinite_loss_dumps_the_batch(self):
        state = self.make_state(out_dir=self.prefix / "run")
        for name in state.store.names("hash"):
            state.store[name].data[...] = np.nan
        with self.assertRaises(NonFiniteLossError) as context:
            train_step(state)
        self.assertIsNotNone(context.exception.dump_path)
        self.assertTrue(Path(context.exception.dump_path).exists())

    def test_pose_refinement(self):
        manifest = tiny_dataset(self.prefix / "jittered", pose_jitter_std=0.05)
        cfg = dataclasses.replace(self.cfg, pose_refine=True)
        state = create_state(manifest, self.template, small_field_config(3), cfg)
        self.assertIn("pose_correction", state.store.groups())
        self.assertEqual(state.store["pose_correction.axis_angle"].shape, (2, 3, 3))

        error = pose_refinement_error(state)
        self.assertGreater(error["initial"], 0.0)
        self.assertAlmostEqual(error["refined"], error["initial"])

        _, metrics = train_step(state)
        self.assertIn("pose_correction", metrics["grad_norms"])
        self.assertTrue(np.isfinite(metrics["grad_norms"]["pose_correction"]))

    def test_evaluate(self):
        state = self.make_state(config_hash="abc")
        train_step(state)
        renders = self.prefix / "renders"
        report = evaluate(state, Split.NOVEL_VIEW, renders, max_frames=1)
        self.assertEqual(len(report["frames"]), 1)
        self.assertIsInstance(report["mean_psnr"], float)
        self.assertGreater(report["seams"]["pairs"], 0)

        written = renders / Split.NOVEL_VIEW / Path(report["frames"][0]["image"]).name
        self.assertEqual(read_png(written).shape, (24, 24, 3))
        self.assertEqual(read_png_text(written)["model_hash"], "abc")

        with self.assertRaises(ConfigurationError):
            evaluate(state, Split.HOLDOUT_BOTH)

    def test_evaluation_report(self):
        state = self.make_state(config_hash="abc")
        report = evaluation_report(state, max_frames=1)
        for key in ("novel_view_psnr", "novel_pose_psnr", "pose_error", "config_hash", "dataset_hash"):
            self.assertIn(key, report)
        self.assertEqual(report["ablation"], Ablation.NONE)
        self.assertEqual(missing_report_fields(report), [])

    def test_ablation_table(self):
        rows = ablation_table({Ablation.NONE: {"novel_view_psnr": 21.5, "novel_pose_psnr": 19.25}})
        self.assertEqual([r["variant"] for r in rows], list(Ablation.ALL))
        self.assertEqual(rows[0]["novel_view_psnr"], 21.5)
        self.assertIsNone(rows[1]["novel_view_psnr"])
        text = format_table(rows)
        self.assertIn("w/o ResNet", text)
        self.assertIn("21.50", text)

    @unittest.skipUnless(SLOW, "set UVH_SLOW=1 to run")
    def test_overfit_reduces_the_loss(self):
        cfg = TrainConfig(steps=150, rays_per_step=64, samples=16, ckpt_every=0, lr_start=2e-2)
        state = self.make_state(cfg)
        losses = train(state)
        self.assertLess(np.mean(losses[-10:]), np.mean(losses[:10]))


# --------------------------------------------------------------------
class RecipeTests(TempDirTestCase):
    def setUp(self):
        super().setUp()
        self.calls = []
        self.source = self.prefix / "source.txt"
        self.source.write_text("hello")
        past = time.time() - 100
        os.utime(self.source, (past, past))

    def test_file_target_is_reused(self):
        calls = self.calls

        @recipe("upper")
        def upper(source: Path, target: Path) -> Path:
            calls.append(source)
            target.write_text(source.read_text().upper())
            return target

        target = self.prefix / "out.txt"
        self.assertEqual(upper(self.source, target)(), target)
        self.assertEqual(target.read_text(), "HELLO")
        upper(self.source, target)()
        self.assertEqual(len(calls), 1)

        stale = time.time() - 1000
        os.utime(target, (stale, stale))
        upper(self.source, target)()
        self.assertEqual(len(calls), 2)

    def test_components_and_memoization(self):
        calls = self.calls

        @recipe
        def add(a, b):
            calls.append((a, b))
            return a + b

        total = add(1, add(2, 3))
        self.assertEqual(total(), 6)
        self.assertEqual(total(), 6)
        self.assertEqual(len(calls), 2)

    def test_failures(self):
        @recipe("broken")
        def broken(target: Path):
            raise ValueError("nope")

        @recipe
        def combine(a, b):
            return [a, b]

        with self.assertRaises(BuildError):
            broken(self.prefix / "x")()

        with self.assertRaises(BuildError) as context:
            combine(broken(self.prefix / "y"), broken(self.prefix / "z"))()
        self.assertIsInstance(context.exception.__cause__, CompositeError)
        self.assertEqual(len(context.exception.__cause__.exceptions), 2)

    def test_events(self):
        @recipe("const")
        def const():
            return 1

        names = []
        with EventBus.session() as bus:
            bus.listen(lambda event: names.append(event.name))
            const()()
        self.assertEqual(names, [Events.START, Events.SUCCESS])


# --------------------------------------------------------------------
class EventTests(TempDirTestCase):
    def test_sessions_nest(self):
        outer_bus = EventBus.get()
        with EventBus.session() as outer:
            self.assertIs(EventBus.get(), outer)
            with EventBus.session() as inner:
                self.assertIs(EventBus.get(), inner)
            self.assertIs(EventBus.get(), outer)
        self.assertIs(EventBus.get(), outer_bus)
        EventBus.get().emit(Events.INFO, "test", "dropped")

    def test_counters(self):
        with EventBus.session() as bus:
            bus.count("projection.fallback", 2)
            bus.count("projection.fallback")
            bus.count("hash.clamped", 0)
        self.assertEqual(bus.counters["projection.fallback"], 3)
        self.assertNotIn("hash.clamped", bus.counters)

    def test_json_lines_sink(self):
        path = self.prefix / "log" / "train_log.jsonl"
        with EventBus.session() as bus:
            sink = JsonLinesSink(path).attach(bus)
            bus.emit(Events.STEP, "train", {"step": 1, "loss": float("inf"), "norms": np.arange(2)})
            bus.emit(Events.INFO, "train", "not logged")
            sink.detach(bus)
            bus.emit(Events.STEP, "train", {"step": 2})

        lines = path.read_text().splitlines()
        self.assertEqual(len(lines), 1)
        record = json.loads(lines[0])
        self.assertEqual(record["event"], Events.STEP)
        self.assertEqual(record["step"], 1)
        self.assertEqual(record["loss"], "inf")
        self.assertEqual(record["norms"], [0, 1])
        self.assertIn("when", record)


# --------------------------------------------------------------------
class ConsoleTests(unittest.TestCase):
    def test_step_throttling(self):
        out = io.StringIO()
        with EventBus.session() as bus:
            ConsoleHook(step_every=2, txt=TextDecorator(out)).attach(bus)
            for step in range(1, 6):
                bus.emit(Events.STEP, "train", {"step": step, "total": 5, "loss": 0.5, "lr": 1e-3})
        text = out.getvalue()
        self.assertIn("step 2/5", text)
        self.assertIn("step 4/5", text)
        self.assertIn("step 5/5", text)
        self.assertNotIn("step 3/5", text)

    def test_quiet_keeps_warnings(self):
        out = io.StringIO()
        with EventBus.session() as bus:
            ConsoleHook(quiet=True, txt=TextDecorator(out)).attach(bus)
            bus.emit(Events.INFO, "datagen", "chatter")
            bus.emit(Events.WARNING, "checkpoint", "hash mismatch overridden")
        self.assertNotIn("chatter", out.getvalue())
        self.assertIn("hash mismatch overridden", out.getvalue())


# --------------------------------------------------------------------
class RunConfigTests(TempDirTestCase):
    def test_defaults(self):
        cfg = RunConfig()
        self.assertEqual(cfg["mapping.h_max"], 0.1)
        self.assertEqual(cfg["encoding.hash.levels"], 16)
        self.assertEqual(cfg["encoding.freq.bands"], 6)
        self.assertIn("seed=0\n", cfg.canonical())
        self.assertEqual(cfg.hash(), RunConfig().hash())
        self.assertEqual(len(cfg.hash()), 64)

    def test_unknown_key(self):
        with self.assertRaises(ConfigurationError) as context:
            RunConfig().get("train.nope")
        self.assertEqual(context.exception.key, "train.nope")
        with self.assertRaises(ConfigurationError):
            RunConfig().set("train.nope", 1)

    def test_types(self):
        cfg = RunConfig()
        with self.assertRaises(ConfigurationError):
            cfg.set("train.steps", "many")
        cfg.set("mapping.h_max", 1)
        cfg.set("data.light", None)
        self.assertIsNone(cfg.scene_spec().light)

    def test_assignments(self):
        cfg = RunConfig()
        cfg.set_assignment("train.steps=5")
        cfg.set_assignment("train.schedule=linear")
        cfg.set_assignment("render.background=[0, 0, 0]")
        self.assertEqual(cfg["train.steps"], 5)
        self.assertEqual(cfg["train.schedule"], "linear")
        self.assertEqual(cfg.render_config().background, (0.0, 0.0, 0.0))
        with self.assertRaises(ConfigurationError):
            cfg.set_assignment("train.steps")

    def test_hashes(self):
        cfg = RunConfig()
        sampled = cfg.copy().set("render.samples", 16)
        self.assertNotEqual(sampled.hash(), cfg.hash())
        self.assertEqual(sampled.model_hash(), cfg.model_hash())

        wider = cfg.copy().set("field.width", 32)
        self.assertNotEqual(wider.model_hash(), cfg.model_hash())
        ablated = cfg.copy().set("train.ablate", "no_remap")
        self.assertNotEqual(ablated.model_hash(), cfg.model_hash())

    def test_files(self):
        first = self.prefix / "first.json"
        second = self.prefix / "second.json"
        first.write_text(json.dumps({"train": {"steps": 5}, "data": {"light": None}}))
        second.write_text(json.dumps({"train": {"steps": 7}}))
        cfg = RunConfig().load_files([first, second])
        self.assertEqual(cfg["train.steps"], 7)

        conflict = self.prefix / "conflict.json"
        conflict.write_text(json.dumps({"data": {"light": [1.0, 1.0, 1.0]}}))
        with self.assertRaises(ConfigurationError):
            cfg.load_file(conflict)

        broken = self.prefix / "broken.json"
        broken.write_text("{")
        with self.assertRaises(ConfigurationError):
            RunConfig().load_file(broken)
        with self.assertRaises(ConfigurationError):
            RunConfig().load_file(self.prefix / "missing.json")

    def test_derived_configs(self):
        cfg = RunConfig().set("train.ablate", "no_resnet").set("data.shape", [1.0, 0.0])
        field_cfg = cfg.field_config(3)
        self.assertTrue(field_cfg.no_resnet)
        self.assertFalse(field_cfg.no_remap)
        self.assertEqual(field_cfg.n_joints, 3)
        self.assertEqual(cfg.train_config().ablate, "no_resnet")
        self.assertEqual(cfg.scene_spec().shape, (1.0, 0.0))

        with self.assertRaises(ConfigurationError):
            RunConfig().set("train.schedule", "cosine").train_config()
        with self.assertRaises(ConfigurationError):
            RunConfig().set("render.background", [1.0]).render_config()


# --------------------------------------------------------------------
class CliTests(TempDirTestCase):
    def run_cli(self, *args) -> int:
        with OutputCapture(stderr=True):
            return main([str(a) for a in args])

    def test_usage_errors(self):
        self.assertEqual(self.run_cli(), 2)
        self.assertEqual(self.run_cli("train"), 2)
        self.assertEqual(self.run_cli("render", "--dataset", self.prefix), 2)
        self.assertEqual(self.run_cli("bogus"), 2)

    def test_configuration_errors(self):
        out = self.prefix / "out"
        self.assertEqual(self.run_cli("datagen", "--out", out, "--set", "data.nope=1"), 1)
        self.assertEqual(self.run_cli("datagen", "--out", out, "--set", "train.steps=many"), 1)
        self.assertEqual(self.run_cli("train", "--dataset", self.prefix / "missing", "--out", out), 1)

    def test_pose_files(self):
        path = self.prefix / "poses.json"
        vector = [0.0] * 12

        path.write_text(json.dumps([vector, vector]))
        self.assertEqual(len(read_pose_file(path, 3)), 2)
        path.write_text(json.dumps(vector))
        self.assertEqual(len(read_pose_file(path, 3)), 1)
        path.write_text(json.dumps({"poses": [vector] * 3}))
        self.assertEqual(len(read_pose_file(path, 3)), 3)

        path.write_text(json.dumps([[0.0] * 5]))
        with self.assertRaises(ConfigurationError):
            read_pose_file(path, 3)
        path.write_text(json.dumps([]))
        with self.assertRaises(ConfigurationError):
            read_pose_file(path, 3)

    def test_missing_report_fields(self):
        report = {key: 1.0 for key in REPORT_FIELDS}
        self.assertEqual(missing_report_fields(report), [])
        report["dataset_hash"] = ""
        report["novel_pose_psnr"] = None
        self.assertEqual(missing_report_fields(report), ["novel_pose_psnr", "dataset_hash"])

    @unittest.skipUnless(SLOW, "set UVH_SLOW=1 to run")
    def test_train_eval_animate(self):
        tiny_dataset(self.prefix / "data")
        dataset = self.prefix / "data"
        run = self.prefix / "run"

        self.assertEqual(
            self.run_cli("train", "--dataset", dataset, "--out", run, "--steps", 2, "--quiet", *SMALL_FLAGS), 0
        )
        ckpt = run / "final.ckpt"
        self.assertTrue(ckpt.exists())
        self.assertTrue((run / "config.json").exists())
        log = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
        self.assertEqual([r["step"] for r in log if r["event"] == Events.STEP], [1, 2])

        self.assertEqual(
            self.run_cli("eval", "--dataset", dataset, "--checkpoint", ckpt, "--out", run, "--quiet", *SMALL_FLAGS),
            0,
        )
        report = json.loads((run / "report.json").read_text())
        self.assertEqual(missing_report_fields(report), [])

        # A different model configuration is refused without --force.
        self.assertEqual(
            self.run_cli("eval", "--dataset", dataset, "--checkpoint", ckpt, "--out", run, "--quiet"), 1
        )

        poses = self.prefix / "poses.json"
        poses.write_text(json.dumps([p.to_list() for p in chain_poses(5)]))
        self.assertEqual(
            self.run_cli(
                "animate", "--dataset", dataset, "--checkpoint", ckpt, "--out", run,
                "--pose-file", poses, "--quiet", *SMALL_FLAGS,
            ),
            0,
        )  # fmt: skip
        frames = sorted((run / "frames").glob("frame_*.png"))
        self.assertEqual(len(frames), 5)
        self.assertIn("config_hash", read_png_text(frames[0]))

        self.assertEqual(
            self.run_cli("render", "--dataset", dataset, "--checkpoint", ckpt, "--out", run, "--quiet", *SMALL_FLAGS),
            0,
        )
        self.assertEqual(len(list((run / "render").glob("cam01_*.png"))), 3)

    @unittest.skipUnless(SLOW, "set UVH_SLOW=1 to run")
    def test_ablate(self):
        tiny_dataset(self.prefix / "data")
        out = self.prefix / "ablation"
        self.assertEqual(
            self.run_cli(
                "ablate", "--dataset", self.prefix / "data", "--out", out,
                "--steps", 1, "--max-frames", 1, "--quiet", *SMALL_FLAGS,
            ),
            0,
        )  # fmt: skip
        rows = json.loads((out / "table.json").read_text())["rows"]
        self.assertEqual([row["variant"] for row in rows], list(Ablation.ALL))
        for row in rows:
            self.assertIsNotNone(row["novel_view_psnr"], row["variant"])
            self.assertTrue((out / row["variant"] / "final.ckpt").exists())


# --------------------------------------------------------------------
if __name__ == "__main__":
    unittest.main()
