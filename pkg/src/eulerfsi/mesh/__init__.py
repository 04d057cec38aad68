from .core import (AREA_FLOOR, EDGE_LABELS, FLUID, GAMMA_IN, GAMMA_OUT, GAMMA_WALL,
                   REGION_NAMES, SIGMA, SOLID, FlipOverError, Mesh, MeshError, Polyline,
                   SizingSpec, TopologyError, Validity, boundary_polygon_area, check_valid,
                   extract_interface, interface_edges, move_solid_vertices, signed_areas)
from .flustruk import FlustrukGeometry, GeometryError, build_flustruk_mesh
from .io import read_mesh_text, write_mesh_text, write_vtk
from .locate import PointLocator, PointOutsideError, barycentric, interpolate_to_new_mesh
from .remesh import RemeshError, remesh_fluid
from .shapes import box_mesh, channel_mesh, polygon_mesh

__all__ = [
    "AREA_FLOOR", "EDGE_LABELS", "FLUID", "GAMMA_IN", "GAMMA_OUT", "GAMMA_WALL", "REGION_NAMES",
    "SIGMA", "SOLID", "FlipOverError", "FlustrukGeometry", "GeometryError", "Mesh", "MeshError",
    "PointLocator", "PointOutsideError", "Polyline", "RemeshError", "SizingSpec",
    "TopologyError", "Validity", "barycentric", "boundary_polygon_area", "build_flustruk_mesh",
    "check_valid", "extract_interface", "interface_edges", "interpolate_to_new_mesh",
    "move_solid_vertices", "read_mesh_text", "remesh_fluid", "signed_areas", "write_mesh_text",
    "write_vtk", "box_mesh", "channel_mesh", "polygon_mesh",
]
