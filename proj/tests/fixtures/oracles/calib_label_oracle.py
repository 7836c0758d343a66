"""Independent 4x4 homogeneous-matrix oracle for the calib and label fixtures.

Writes ../calib_label_expected.txt. Run from this directory: python3 calib_label_oracle.py
"""
import math
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent
FIX = HERE.parent


def load_calib(path):
    rows = {}
    for line in path.read_text().splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            rows[k.strip()] = np.array([float(t) for t in v.split()])
    r0 = np.eye(4)
    r0[:3, :3] = rows["R0_rect"].reshape(3, 3)
    tr = np.eye(4)
    tr[:3, :] = rows["Tr_velo_to_cam"].reshape(3, 4)
    p2 = rows["P2"].reshape(3, 4)
    return p2, r0 @ tr


def main():
    p2, velo_to_rect = load_calib(FIX / "calib.txt")
    cam_to_velo = np.linalg.inv(velo_to_rect)
    out = []
    point = np.array([12.5, -3.25, 0.75, 1.0])
    cam = velo_to_rect @ point
    img = p2 @ cam
    out.append("lidar_point 12.5 -3.25 0.75")
    out.append("camera %.17g %.17g %.17g" % tuple(cam[:3]))
    out.append("image %.17g %.17g %.17g" % (img[0] / img[2], img[1] / img[2], img[2]))
    for line in (FIX / "label.txt").read_text().splitlines():
        f = line.split()
        if f[0] not in ("Car", "Pedestrian", "Cyclist"):
            continue
        h, w, l, x, y, z, ry = map(float, f[8:15])
        center = cam_to_velo @ np.array([x, y - h / 2.0, z, 1.0])
        heading = cam_to_velo[:3, :3] @ np.array([math.cos(ry), 0.0, -math.sin(ry)])
        yaw = math.atan2(heading[1], heading[0])
        out.append("box %s %.17g %.17g %.17g %.17g %.17g %.17g %.17g" % (f[0], *center[:3], l, w, h, yaw))
    (FIX / "calib_label_expected.txt").write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
