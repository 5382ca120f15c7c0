"""Exception types raised across the package."""


class PhotomeshError(Exception):
    """Base class for all photomesh errors."""


class PointBehindCamera(PhotomeshError):
    """Projection requested for a point at or behind the camera's near plane."""


class FaceOutOfRange(PhotomeshError, IndexError):
    """Face index outside the mesh's face list."""


class IntrinsicsMismatch(PhotomeshError, ValueError):
    """Two cameras were expected to share intrinsics and image size but do not."""


class DimensionMismatch(PhotomeshError, ValueError):
    """Latent code or parameter vector has the wrong length."""


class TopologyMismatch(PhotomeshError, ValueError):
    """Meshes expected to share vertex count and face list do not."""


class InsufficientData(PhotomeshError, ValueError):
    """Not enough training meshes to fit the requested number of components."""


class NoVisibleSamples(PhotomeshError):
    """A frame pair produced no surface samples visible in both views."""


class NonFiniteLoss(PhotomeshError):
    """Loss or gradient became NaN/inf during optimization."""


class EmptySet(PhotomeshError, ValueError):
    """Point-set metric called with an empty set."""


class DegenerateMesh(PhotomeshError, ValueError):
    """Mesh has (near-)zero total surface area."""


class NoOverlap(PhotomeshError):
    """Depth-error comparison found no pixel covered by both meshes in any view."""


class ConfigError(PhotomeshError, ValueError):
    """Invalid or unknown configuration key/value."""
