"""Regenerates the bundled MovingAI map fixtures. Deterministic."""

import random
from collections import deque
from pathlib import Path

HERE = Path(__file__).resolve().parent


def write(name, rows):
    h, w = len(rows), len(rows[0])
    text = f"type octile\nheight {h}\nwidth {w}\nmap\n" + "\n".join("".join(r) for r in rows) + "\n"
    (HERE / f"{name}.map").write_text(text)


def keep_largest_component(grid):
    h, w = len(grid), len(grid[0])
    seen = [[False] * w for _ in range(h)]
    best = []
    for r in range(h):
        for c in range(w):
            if grid[r][c] != "." or seen[r][c]:
                continue
            comp, q = [], deque([(r, c)])
            seen[r][c] = True
            while q:
                y, x = q.popleft()
                comp.append((y, x))
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and grid[ny][nx] == "." and not seen[ny][nx]:
                        seen[ny][nx] = True
                        q.append((ny, nx))
            if len(comp) > len(best):
                best = comp
    keep = set(best)
    for r in range(h):
        for c in range(w):
            if grid[r][c] == "." and (r, c) not in keep:
                grid[r][c] = "@"
    return grid


def warehouse():
    # 4x8 shelf blocks separated by 1-wide aisles (every fifth row, every ninth column),
    # with 3-column open strips at both ends for the workstations. Consecutive aisles
    # alternate in parity.
    h, w = 33, 57

    def free(r, c):
        return r % 5 == 0 or c % 9 == 0 or c < 3 or c >= w - 3

    return [["." if free(r, c) else "@" for c in range(w)] for r in range(h)]


def city(seed=1, n=64):
    # Irregular street grid: 1-2 wide streets between blocks of 4-9 cells, so traffic
    # funnels through narrow streets unless it spreads over parallel ones.
    rng = random.Random(seed)
    grid = [["@"] * n for _ in range(n)]

    def streets():
        out, x = [], rng.randint(0, 3)
        while x < n:
            width = rng.randint(1, 2)
            out.append((x, width))
            x += width + rng.randint(4, 9)
        return out

    for r, width in streets():
        for rr in range(r, min(r + width, n)):
            grid[rr] = ["."] * n
    for c, width in streets():
        for cc in range(c, min(c + width, n)):
            for r in range(n):
                grid[r][cc] = "."
    return keep_largest_component(grid)


def random_map(n, density, seed):
    rng = random.Random(seed)
    grid = [["@" if rng.random() < density else "." for _ in range(n)] for _ in range(n)]
    return keep_largest_component(grid)


def main():
    write("warehouse", warehouse())
    write("city", city())
    write("random256", random_map(256, 0.2, 3))
    write("random32", random_map(32, 0.2, 5))
    write("empty8", [["."] * 8 for _ in range(8)])
    write("empty16", [["."] * 16 for _ in range(16)])


if __name__ == "__main__":
    main()
