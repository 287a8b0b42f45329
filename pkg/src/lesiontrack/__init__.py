"""Longitudinal skin-lesion tracking on textured 3D body scans."""

__version__ = "0.1.0"

from .boxes import AnnotationSet, BoundingBox2D
from .correspondence import CorrespondenceMap, ReconstructedVertices, chain_correspondence
from .errors import LesionTrackError
from .mesh import TexturedMesh, load_mesh
from .tracking import MatchConfig, MatchResult, track
from .uvmap import LesionSet3D, lesions_to_3d

__all__ = [
    "AnnotationSet", "BoundingBox2D", "CorrespondenceMap", "LesionSet3D", "LesionTrackError",
    "MatchConfig", "MatchResult", "ReconstructedVertices", "TexturedMesh", "chain_correspondence",
    "lesions_to_3d", "load_mesh", "track",
]
