"""Pairwise photometric consistency loss, its gradient chain, and the Adam
optimization loop over the latent code and similarity transform.

Per frame pair, surface points are sampled by rasterizing from the bisecting
virtual viewpoint, depth-tested for visibility in both input views, projected
into both images, and compared with an L1 intensity loss. Gradients chain the
bilinear image gradient, the projection Jacobian, and the (frozen) barycentric
weights into per-vertex gradients, then through the shape prior into z-space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .camera import Camera, project_points, projection_jacobians
from .errors import NonFiniteLoss, NoVisibleSamples
from .image import Image, sample_bilinear_many, sample_with_gradient_many
from .intersect import barycentric_points
from .mesh import TriangleMesh
from .prior import LinearShapePrior, ShapeState
from .raster import TAU_VIS, rasterize, view_visibility
from .transform import virtual_camera


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.003
    iterations: int = 100
    lambda_code: float = 0.05
    lambda_scale: float = 0.02
    pairs_per_iteration: int = 8
    pair_policy: str = "random"  # "random" (with cyclic adjacent pair) or "all"
    virtual_size: tuple[int, int] | None = None  # None: input resolution
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    tau_vis: float = TAU_VIS

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lambda_code < 0 or self.lambda_scale < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.pair_policy not in ("random", "all"):
            raise ValueError(f"unknown pair policy {self.pair_policy!r}")


@dataclass(frozen=True)
class LossReport:
    total: float
    photometric: float
    code_term: float   # ||z' - z0||^2, unweighted
    scale_term: float  # -s, unweighted
    pair_sample_counts: list[int]
    out_of_bounds: int
    occluded: int
    skipped_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "photometric": self.photometric,
            "code_term": self.code_term,
            "scale_term": self.scale_term,
            "pair_sample_counts": list(self.pair_sample_counts),
            "out_of_bounds": self.out_of_bounds,
            "occluded": self.occluded,
            "skipped_pairs": self.skipped_pairs,
        }


@dataclass
class FrameSet:
    """Ordered (image, camera) sequence with shared intrinsics."""

    frames: list[tuple[Image, Camera]]

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a FrameSet needs at least 2 frames")
        img0, cam0 = self.frames[0]
        for img, cam in self.frames:
            if img.width != img0.width or img.height != img0.height:
                raise ValueError("all frames must share the image size")
            if not cam.intrinsics_match(cam0):
                raise ValueError("all cameras must share intrinsics")
            if img.width != cam.width or img.height != cam.height:
                raise ValueError("image size must match its camera")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int):
        return self.frames[i]

    @property
    def images(self) -> list[Image]:
        return [f[0] for f in self.frames]

    @property
    def cameras(self) -> list[Camera]:
        return [f[1] for f in self.frames]


@dataclass(frozen=True)
class PairRecords:
    """Per-sample bookkeeping for one frame pair."""

    face_indices: np.ndarray   # (n,) used samples
    alphas: np.ndarray         # (n, 3)
    points: np.ndarray         # (n, 3)
    xy_a: np.ndarray           # (n, 2) projections into view a
    xy_b: np.ndarray
    residual_signs: np.ndarray  # (n, 3) in {-1, 0, 1}
    n_candidates: int
    n_used: int
    n_out_of_bounds: int
    n_occluded: int


@dataclass(frozen=True)
class PairResult:
    loss: float
    records: PairRecords
    grad_vertices: np.ndarray | None = None
    grad_by_view: tuple[np.ndarray, np.ndarray] | None = None


def _scatter_vertex_gradient(grad, faces, sample_faces, alphas, g_points):
    for m in range(3):
        np.add.at(grad, faces[sample_faces, m], alphas[:, m, None] * g_points)


def evaluate_pair(
    image_a: Image,
    image_b: Image,
    cam_a: Camera,
    cam_b: Camera,
    mesh: TriangleMesh,
    sample_camera: Camera | None = None,
    depth_a: np.ndarray | None = None,
    depth_b: np.ndarray | None = None,
    tau: float = TAU_VIS,
    with_gradient: bool = False,
) -> PairResult:
    """Photometric loss (and optionally its vertex gradient) for one pair.

    ``sample_camera`` defaults to the Slerp-bisection virtual viewpoint. If it
    coincides exactly with an input view, that view's projected coordinates are
    the fixed rasterization grid and carry no dependence on the vertices, so
    its gradient contribution is identically zero and is dropped.
    """
    if mesh.n_faces == 0:
        raise NoVisibleSamples("mesh has no faces")
    if sample_camera is None:
        sample_camera = virtual_camera(cam_a, cam_b)
    maps = rasterize(mesh, sample_camera)
    jj, ii = np.nonzero(maps.coverage)
    n_candidates = len(jj)
    if n_candidates == 0:
        raise NoVisibleSamples("no surface coverage from the sampling viewpoint")
    sample_faces = maps.face_index[jj, ii].astype(np.int64)
    alphas = maps.bary[jj, ii]
    points = barycentric_points(mesh.vertices, mesh.faces, sample_faces, alphas)

    if depth_a is None:
        depth_a = rasterize(mesh, cam_a).depth
    if depth_b is None:
        depth_b = rasterize(mesh, cam_b).depth
    vis_a, xy_a, _, inb_a = view_visibility(points, cam_a, depth_a, tau)
    vis_b, xy_b, _, inb_b = view_visibility(points, cam_b, depth_b, tau)
    used = vis_a & vis_b
    in_bounds = inb_a & inb_b
    n_oob = int(np.count_nonzero(~in_bounds))
    n_occ = int(np.count_nonzero(in_bounds & ~used))
    n_used = int(np.count_nonzero(used))
    if n_used == 0:
        raise NoVisibleSamples("no sample visible in both views")

    sample_faces = sample_faces[used]
    alphas = alphas[used]
    points = points[used]
    xy_a = xy_a[used]
    xy_b = xy_b[used]

    if with_gradient:
        vals_a, gimg_a = sample_with_gradient_many(image_a, xy_a)
        vals_b, gimg_b = sample_with_gradient_many(image_b, xy_b)
    else:
        vals_a = sample_bilinear_many(image_a, xy_a)
        vals_b = sample_bilinear_many(image_b, xy_b)
    residual = vals_a - vals_b
    signs = np.sign(residual)
    loss = float(np.abs(residual).sum() / n_used)

    records = PairRecords(sample_faces, alphas, points, xy_a, xy_b, signs,
                          n_candidates, n_used, n_oob, n_occ)
    if not with_gradient:
        return PairResult(loss, records)

    grad = np.zeros_like(mesh.vertices)
    per_view = []
    for cam, gimg, sign_mult in ((cam_a, gimg_a, 1.0), (cam_b, gimg_b, -1.0)):
        gv = np.zeros_like(mesh.vertices)
        if not sample_camera.same_pose(cam):
            # dL/dxy = sum_c sign_c * dI_c/dxy, L1 subgradient at 0 is 0
            dldxy = sign_mult * np.einsum("nc,nkc->nk", signs, gimg)
            J = projection_jacobians(points, cam)
            g_points = np.einsum("nkj,nk->nj", J, dldxy) / n_used
            _scatter_vertex_gradient(gv, mesh.faces, sample_faces, alphas, g_points)
        per_view.append(gv)
        grad += gv
    return PairResult(loss, records, grad, (per_view[0], per_view[1]))


def photometric_loss(image_a: Image, image_b: Image, cam_a: Camera, cam_b: Camera,
                     mesh: TriangleMesh, tau: float = TAU_VIS):
    """Mean L1 intensity discrepancy over mutually visible surface samples."""
    res = evaluate_pair(image_a, image_b, cam_a, cam_b, mesh, tau=tau)
    return res.loss, res.records


def photometric_gradient(image_a: Image, image_b: Image, cam_a: Camera, cam_b: Camera,
                         mesh: TriangleMesh, sample_camera: Camera | None = None,
                         tau: float = TAU_VIS) -> PairResult:
    """Loss plus per-vertex (and per-view) gradients for one frame pair."""
    return evaluate_pair(image_a, image_b, cam_a, cam_b, mesh,
                         sample_camera=sample_camera, tau=tau, with_gradient=True)


def filter_records(records: PairRecords, keep: np.ndarray) -> PairRecords:
    """Restrict a PairRecords to a sample subset (renormalizes n_used)."""
    return PairRecords(
        records.face_indices[keep], records.alphas[keep], records.points[keep],
        records.xy_a[keep], records.xy_b[keep], records.residual_signs[keep],
        records.n_candidates, int(np.count_nonzero(keep)),
        records.n_out_of_bounds, records.n_occluded)


def frozen_pair_gradient(image_a: Image, image_b: Image, cam_a: Camera, cam_b: Camera,
                         vertices: np.ndarray, faces: np.ndarray,
                         records: PairRecords):
    """(loss, vertex gradient) of the frozen-sampling pair loss.

    Sample set, barycentrics, and L1 signs come from ``records``; this is the
    exact analytic derivative of :func:`frozen_pair_loss` at ``vertices``.
    """
    points = barycentric_points(vertices, faces, records.face_indices, records.alphas)
    xy_a, _ = project_points(points, cam_a)
    xy_b, _ = project_points(points, cam_b)
    vals_a, gimg_a = sample_with_gradient_many(image_a, xy_a)
    vals_b, gimg_b = sample_with_gradient_many(image_b, xy_b)
    signs = records.residual_signs
    loss = float((signs * (vals_a - vals_b)).sum() / records.n_used)
    grad = np.zeros_like(vertices)
    for cam, gimg, sign_mult in ((cam_a, gimg_a, 1.0), (cam_b, gimg_b, -1.0)):
        dldxy = sign_mult * np.einsum("nc,nkc->nk", signs, gimg)
        J = projection_jacobians(points, cam)
        g_points = np.einsum("nkj,nk->nj", J, dldxy) / records.n_used
        _scatter_vertex_gradient(grad, faces, records.face_indices, records.alphas, g_points)
    return loss, grad


def frozen_pair_loss(image_a: Image, image_b: Image, cam_a: Camera, cam_b: Camera,
                     vertices: np.ndarray, faces: np.ndarray,
                     records: PairRecords, use_frozen_signs: bool = True) -> float:
    """Pair loss re-evaluated at new vertices with sampling held fixed.

    The sample set (faces, barycentrics) and, optionally, the L1 signs are
    frozen; this is the function the analytic gradient differentiates, so
    finite differences of it are the gradient-check oracle.
    """
    points = barycentric_points(vertices, faces, records.face_indices, records.alphas)
    xy_a, _ = project_points(points, cam_a)
    xy_b, _ = project_points(points, cam_b)
    vals_a = sample_bilinear_many(image_a, xy_a)
    vals_b = sample_bilinear_many(image_b, xy_b)
    residual = vals_a - vals_b
    if use_frozen_signs:
        return float((records.residual_signs * residual).sum() / records.n_used)
    return float(np.abs(residual).sum() / records.n_used)


def regularizer(state: ShapeState, z0: np.ndarray, lambda_code: float,
                lambda_scale: float):
    """Trust-region code penalty plus expansion-encouraging scale penalty.

    Returns (value, gradient over the (K+7)-vector [code; s; omega; t]).
    """
    z0 = np.asarray(z0, dtype=np.float64)
    dz = state.code - z0
    value = lambda_code * float(dz @ dz) - lambda_scale * state.transform.log_scale
    grad = np.zeros(state.n_code + 7)
    grad[: state.n_code] = 2.0 * lambda_code * dz
    grad[state.n_code] = -lambda_scale
    return value, grad


class Adam:
    """Standard Adam with bias correction over a flat parameter vector."""

    def __init__(self, lr=0.003, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def select_pairs(n_frames: int, iteration: int, config: OptimConfig,
                 rng: np.random.Generator) -> list[tuple[int, int]]:
    """Unordered frame pairs for one iteration.

    "all": every pair. "random": ``pairs_per_iteration`` distinct pairs, with
    the cyclically chosen adjacent pair (it mod F, it+1 mod F) always included
    so neighboring frames keep appearing over the run.
    """
    all_count = n_frames * (n_frames - 1) // 2
    if config.pair_policy == "all":
        return [(i, j) for i in range(n_frames) for j in range(i + 1, n_frames)]
    target = min(config.pairs_per_iteration, all_count)
    a = iteration % n_frames
    b = (iteration + 1) % n_frames
    pairs = [(min(a, b), max(a, b))]
    while len(pairs) < target:
        i = int(rng.integers(n_frames))
        j = int(rng.integers(n_frames))
        if i == j:
            continue
        p = (min(i, j), max(i, j))
        if p not in pairs:
            pairs.append(p)
    return sorted(pairs)


def optimize(prior: LinearShapePrior, frames: FrameSet, init: ShapeState,
             z0: np.ndarray | None = None,
             config: OptimConfig = OptimConfig()):
    """Minimize pairwise photometric loss + regularizers over z = [code; theta].

    Returns (final ShapeState, per-iteration LossReport list). Deterministic
    for a fixed seed; pairs with no mutually visible samples contribute zero
    and are counted in the trace.
    """
    if init.n_code != prior.n_code:
        raise ValueError("init code length does not match the prior")
    z0 = np.array(init.code if z0 is None else z0, dtype=np.float64)
    k = prior.n_code
    z = init.to_vector()
    adam = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x9A125]))
    cameras = frames.cameras
    images = frames.images
    if config.virtual_size is not None:
        from .camera import scale_camera

        def make_virtual(a, b):
            vc = virtual_camera(a, b)
            return scale_camera(vc, *config.virtual_size)
    else:
        make_virtual = virtual_camera

    trace: list[LossReport] = []
    for it in range(config.iterations):
        state = ShapeState.from_vector(z, k)
        mesh = prior.generate(state)
        pairs = select_pairs(len(frames), it, config, rng)
        needed = sorted({i for p in pairs for i in p})
        depth_cache = {i: rasterize(mesh, cameras[i]).depth for i in needed}

        # pairs weighted by their sample count: the aggregate is the plain
        # per-sample mean over the iteration, so sample-starved pairs cannot
        # dominate the gradient and the penalty weights stay resolution-free
        grad_v = np.zeros_like(mesh.vertices)
        loss_sum = 0.0
        weight = 0
        counts: list[int] = []
        oob = occ = skipped = 0
        for i, j in pairs:
            try:
                res = evaluate_pair(
                    images[i], images[j], cameras[i], cameras[j], mesh,
                    sample_camera=make_virtual(cameras[i], cameras[j]),
                    depth_a=depth_cache[i], depth_b=depth_cache[j],
                    tau=config.tau_vis, with_gradient=True,
                )
            except NoVisibleSamples:
                skipped += 1
                counts.append(0)
                continue
            n = res.records.n_used
            loss_sum += res.loss * n
            grad_v += res.grad_vertices * n
            weight += n
            counts.append(n)
            oob += res.records.n_out_of_bounds
            occ += res.records.n_occluded
        photo = loss_sum / weight if weight else 0.0
        if weight:
            grad_v /= weight

        grad_z = prior.backpropagate(state, grad_v)
        _, reg_grad = regularizer(state, z0, config.lambda_code, config.lambda_scale)
        grad_z += reg_grad
        code_term = float(np.sum((state.code - z0) ** 2))
        scale_term = -state.transform.log_scale
        total = photo + config.lambda_code * code_term + config.lambda_scale * scale_term
        if not (np.isfinite(total) and np.all(np.isfinite(grad_z))):
            raise NonFiniteLoss(f"non-finite loss or gradient at iteration {it}")
        z = adam.step(z, grad_z)
        trace.append(LossReport(total, photo, code_term, scale_term, counts, oob, occ, skipped))
    return ShapeState.from_vector(z, k), trace


class PhotometricMeshOptimizer(BaseEstimator):
    """Estimator wrapper around :func:`optimize`.

    fit(frames, init_state=...) stores the optimized ``state_``, the loss
    ``trace_``, and the final ``mesh_``. Constructor parameters mirror
    OptimConfig so get_params/set_params and clone() behave as usual.
    """

    def __init__(self, prior: LinearShapePrior | None = None, learning_rate: float = 0.003,
                 iterations: int = 100, lambda_code: float = 0.05,
                 lambda_scale: float = 0.02, pairs_per_iteration: int = 8,
                 pair_policy: str = "random", seed: int = 0):
        self.prior = prior
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.lambda_code = lambda_code
        self.lambda_scale = lambda_scale
        self.pairs_per_iteration = pairs_per_iteration
        self.pair_policy = pair_policy
        self.seed = seed

    def _config(self) -> OptimConfig:
        return OptimConfig(
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            lambda_code=self.lambda_code,
            lambda_scale=self.lambda_scale,
            pairs_per_iteration=self.pairs_per_iteration,
            pair_policy=self.pair_policy,
            seed=self.seed,
        )

    def fit(self, X: FrameSet, y=None, init_state: ShapeState | None = None,
            z0: np.ndarray | None = None) -> "PhotometricMeshOptimizer":
        if self.prior is None:
            raise ValueError("a fitted LinearShapePrior is required")
        if init_state is None:
            init_state = ShapeState(np.zeros(self.prior.n_code))
        self.state_, self.trace_ = optimize(self.prior, X, init_state, z0, self._config())
        self.mesh_ = self.prior.generate(self.state_)
        return self

    def predict(self, X=None) -> TriangleMesh:
        return self.mesh_
