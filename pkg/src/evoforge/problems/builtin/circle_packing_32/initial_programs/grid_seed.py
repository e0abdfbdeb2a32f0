def entrypoint():
    n = 32
    cols, rows = 6, 6
    r = 0.5 / max(cols, rows)
    circles = []
    for i in range(rows):
        for j in range(cols):
            if len(circles) < n:
                circles.append([(j + 0.5) / cols, (i + 0.5) / rows, r])
    return circles
