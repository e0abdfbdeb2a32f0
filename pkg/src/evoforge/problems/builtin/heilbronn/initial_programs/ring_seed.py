import math


def entrypoint():
    # 11 points on a circle around the incenter: no three points on a circle
    # are ever collinear, so this is always a valid (if weak) configuration.
    height = 3.0 ** 0.25
    cx, cy = 0.0, -2.0 * height / 3.0
    radius = 0.8 * height / 3.0
    points = []
    for k in range(11):
        angle = 2.0 * math.pi * k / 11.0
        points.append([cx + radius * math.cos(angle), cy + radius * math.sin(angle)])
    return points
