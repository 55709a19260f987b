from .color import accumulate_frames, apply_white_balance, render_temperature_sample
from .dataset import DatasetManifest, ForgeOptions, build_dataset, load_png, save_png
from .dof import coc_radius, render_dof
from .raster import ClipSample, gradient_energy, render_motion_blur, render_sharp, render_shutter_clip
from .scenes import (
    SceneParams2D,
    SceneParams3D,
    SceneSpec2D,
    SceneSpec3D,
    ShapeSpec,
    SolidSpec,
    advance,
    random_scene_2d,
    random_scene_3d,
)
