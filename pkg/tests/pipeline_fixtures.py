"""Write synthetic sequences to disk in the EuRoC folder layout."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from densevo.pipeline.trajectory import quaternion_xyzw


def write_euroc(root, frames, camera=None, ground_truth=None) -> Path:
    cam = Path(root) / "mav0" / "cam0"
    (cam / "data").mkdir(parents=True, exist_ok=True)
    rows = ["#timestamp [ns],filename"]
    for f in frames:
        name = f"{f.timestamp}.png"
        img = np.clip(np.rint(f.image.data * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(cam / "data" / name)
        rows.append(f"{f.timestamp},{name}")
    (cam / "data.csv").write_text("\n".join(rows) + "\n")
    if camera is not None:
        (cam / "sensor.yaml").write_text(
            "sensor_type: camera\n"
            f"resolution: [{camera.width}, {camera.height}]\n"
            "camera_model: pinhole\n"
            f"intrinsics: [{camera.fx}, {camera.fy}, {camera.cx}, {camera.cy}]\n"
            "distortion_model: radial-tangential\n"
            "distortion_coefficients: [0.0, 0.0, 0.0, 0.0]\n")
    if ground_truth is not None:
        gt = Path(root) / "mav0" / "state_groundtruth_estimate0"
        gt.mkdir(parents=True, exist_ok=True)
        lines = ["#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z"]
        for ts, p in zip(ground_truth.timestamps, ground_truth.poses):
            x, y, z, w = (float(v) for v in quaternion_xyzw(p.R))
            tx, ty, tz = (float(v) for v in p.t)
            lines.append(f"{ts},{tx!r},{ty!r},{tz!r},{w!r},{x!r},{y!r},{z!r}")
        (gt / "data.csv").write_text("\n".join(lines) + "\n")
    return Path(root)
