"""photomesh: align a 3D triangle mesh to a calibrated multi-view RGB sequence
by minimizing pairwise photometric consistency over a low-dimensional shape
code and a 3D similarity transform, with virtual-viewpoint rasterization."""

from .camera import Camera, Ray, load_cameras, look_at, project, project_jacobian, save_cameras, unproject
from .errors import (ConfigError, DegenerateMesh, DimensionMismatch, EmptySet, FaceOutOfRange,
                     InsufficientData, IntrinsicsMismatch, NonFiniteLoss, NoOverlap,
                     NoVisibleSamples, PhotomeshError, PointBehindCamera, TopologyMismatch)
from .image import Image, sample_bilinear, sample_gradient
from .intersect import BarycentricSample, ray_triangle_intersect, sample_triangle_points
from .mesh import TriangleMesh, load_obj, make_icosphere, normalize_to_unit_sphere, save_obj
from .metrics import depth_error, mesh_to_mesh_errors, point_set_error, reprojection_error, sample_mesh_surface
from .photometric import (Adam, FrameSet, LossReport, OptimConfig, PhotometricMeshOptimizer,
                          optimize, photometric_gradient, photometric_loss, regularizer)
from .prior import LinearShapePrior, ShapeState, fit_prior, make_shape_family
from .raster import RasterMaps, SampleSet, rasterize, visible_samples
from .scenes import (NoiseSpec, OrbitRig, Panorama, TextureSpec, crop_panorama, load_scene,
                     make_noise_panorama, make_orbit_cameras, make_sequence, perturb_state,
                     render, save_scene)
from .transform import (SimilarityParams, apply_similarity, similarity_jacobian, slerp,
                        so3_exp, so3_exp_jacobian, virtual_camera)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
