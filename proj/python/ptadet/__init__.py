"""Python access to the PTA-Det C++ core."""

from ._ptadet import (  # noqa: F401
    Box3D,
    Calibration,
    LidBinning,
    PtadetError,
    ap40_from_matches,
    average_precision_40,
    farthest_point_sampling,
    focal_loss,
    generate_scene,
    iou_3d,
    iou_bev,
    knn_group,
    nms,
    parse_calib,
    read_velodyne,
    run_cli,
    smooth_l1,
    __version__,
)
