"""Manual PR-curve oracle for the golden AP fixture.

All fixture boxes have yaw 0, so 3D IoU is the axis-aligned box overlap.
Writes ../golden_expected.txt. Run from this directory: python3 ap_oracle.py
"""
import pathlib

HERE = pathlib.Path(__file__).resolve().parent
FIX = HERE.parent


def rows(name):
    out = []
    for line in (FIX / name).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            out.append(line.split())
    return out


def iou_aabb(a, b):
    inter = 1.0
    for c, s in ((0, 3), (1, 4), (2, 5)):
        lo = max(a[c] - a[s] / 2, b[c] - b[s] / 2)
        hi = min(a[c] + a[s] / 2, b[c] + b[s] / 2)
        inter *= max(0.0, hi - lo)
    va = a[3] * a[4] * a[5]
    vb = b[3] * b[4] * b[5]
    return inter / (va + vb - inter)


def main():
    gts = [[float(t) for t in r[1:8]] for r in rows("golden_gt.txt")]
    dets = sorted(([float(t) for t in r[1:9]] for r in rows("golden_dets.txt")), key=lambda d: -d[0])
    taken = [False] * len(gts)
    flags = []
    for d in dets:
        best, best_iou = None, 0.7
        for g, box in enumerate(gts):
            iou = iou_aabb(d[1:], box)
            if not taken[g] and iou >= best_iou:
                best, best_iou = g, iou
        if best is not None:
            taken[best] = True
        flags.append(best is not None)
    precision, recall, tp = [], [], 0
    for i, f in enumerate(flags):
        tp += f
        precision.append(tp / (i + 1))
        recall.append(tp / len(gts))
    ap = 0.0
    for k in range(1, 41):
        r = k / 40
        ap += max([p for p, rc in zip(precision, recall) if rc >= r], default=0.0)
    ap /= 40
    (FIX / "golden_expected.txt").write_text("Car %.17g\n" % ap)


if __name__ == "__main__":
    main()
