"""Synthetic glyph formulas: a desk-scale stand-in for rendered LaTeX.

Every formula is laid out on a row of square glyph cells. Atoms fill a cell
with a full-size glyph; scripts and fractions use half-size glyphs, so the
raster position of every token is known exactly.
"""

from dataclasses import dataclass

import numpy as np

from .config import SynthConfig
from .errors import ConfigError

_GLYPH_ART = {
    "0": ["........", "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..", "........"],
    "1": ["........", "...##...", "..#.#...", "....#...", "....#...", "....#...", "..#####.", "........"],
    "2": ["........", "..####..", ".#....#.", ".....#..", "...##...", "..#.....", ".######.", "........"],
    "3": ["........", ".#####..", "......#.", "..####..", "......#.", "......#.", ".#####..", "........"],
    "4": ["........", ".#...#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#..", "........"],
    "5": ["........", ".######.", ".#......", ".#####..", "......#.", "......#.", ".#####..", "........"],
    "6": ["........", "..####..", ".#......", ".#####..", ".#....#.", ".#....#.", "..####..", "........"],
    "7": ["........", ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "........"],
    "8": ["........", "..####..", ".#....#.", "..####..", ".#....#.", ".#....#.", "..####..", "........"],
    "9": ["........", "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "..####..", "........"],
    "a": ["........", "........", "..####..", "......#.", "..#####.", ".#....#.", "..#####.", "........"],
    "b": ["........", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#####..", "........"],
    "x": ["........", "........", ".#....#.", "..#..#..", "...##...", "..#..#..", ".#....#.", "........"],
    "y": ["........", ".#....#.", ".#....#.", "..#..#..", "...##...", "...#....", "..#.....", "........"],
    "+": ["........", "...##...", "...##...", ".######.", "...##...", "...##...", "........", "........"],
    "=": ["........", "........", ".######.", "........", "........", ".######.", "........", "........"],
    "(": ["........", "....##..", "...#....", "...#....", "...#....", "...#....", "....##..", "........"],
    ")": ["........", "..##....", "....#...", "....#...", "....#...", "....#...", "..##....", "........"],
}

GLYPHS = {k: np.array([[c == "#" for c in row] for row in art], dtype=bool) for k, art in _GLYPH_ART.items()}
STRUCTURAL = ("^", "_", "{", "}", "\\frac")


@dataclass
class SynthSample:
    tokens: str
    image: np.ndarray
    token_cells: list
    cell_px: int

    def token_columns(self):
        """Pixel column span [start, stop) of each token on the raw raster."""
        return [(c * self.cell_px, (c + 1) * self.cell_px) for c in self.token_cells]


def _upscale(bitmap, factor):
    return np.kron(bitmap, np.ones((factor, factor), dtype=bool))


def _item(kind, rng, glyphs):
    pick = lambda: glyphs[rng.integers(len(glyphs))]  # noqa: E731
    if kind == "atom":
        g = pick()
        return [g], [0], [("full", g)]
    if kind in ("sup", "sub"):
        base, s = pick(), pick()
        mark = "^" if kind == "sup" else "_"
        return [base, mark, "{", s, "}"], [0, 1, 1, 1, 1], [("full", base), (kind, s)]
    num, den = pick(), pick()
    return ["\\frac", "{", num, "}", "{", den, "}"], [0] * 7, [("frac", num, den)]


def _draw_cell(canvas, col, spec, scale):
    cs = 8 * scale
    x0 = col * cs
    half = scale // 2
    hs = 4 * scale
    if spec[0] == "full":
        canvas[:, x0:x0 + cs] |= _upscale(GLYPHS[spec[1]], scale)
        return
    cell = np.zeros((cs, cs), dtype=bool)
    off = (cs - hs) // 2
    if spec[0] == "sup":
        cell[:hs, off:off + hs] = _upscale(GLYPHS[spec[1]], half)
    elif spec[0] == "sub":
        cell[hs:, off:off + hs] = _upscale(GLYPHS[spec[1]], half)
    else:
        cell[:hs, off:off + hs] = _upscale(GLYPHS[spec[1]], half)
        cell[hs:, off:off + hs] = _upscale(GLYPHS[spec[2]], half)
        bar = max(1, half)
        cell[hs - bar:hs + bar, half:cs - half] = True
    canvas[:, x0:x0 + cs] |= cell


def render(items, scale):
    """Rasterise a list of layout items; returns (uint8 image, n_cells)."""
    n_cells = sum(len(layout) for _, _, layout in items)
    ink = np.zeros((8 * scale, 8 * scale * n_cells), dtype=bool)
    col = 0
    for _, _, layout in items:
        for spec in layout:
            _draw_cell(ink, col, spec, scale)
            col += 1
    return np.where(ink, 0, 255).astype(np.uint8), n_cells


def _check(config):
    glyphs = config.glyphs or tuple(GLYPHS)
    unknown = [g for g in glyphs if g not in GLYPHS]
    if unknown:
        raise ConfigError(f"synth.glyphs: unknown glyphs {unknown}")
    if len(set(glyphs)) < 2:
        raise ConfigError("synth.glyphs: need at least 2 distinct glyphs")
    if config.scale < 2 or config.scale % 2:
        raise ConfigError("synth.scale must be an even integer >= 2")
    if not 1 <= config.min_items <= config.max_items:
        raise ConfigError("synth: need 1 <= min_items <= max_items")
    if config.max_cells < 2:
        raise ConfigError("synth.max_cells must be >= 2")
    if config.min_cells > config.max_cells:
        raise ConfigError("synth.min_cells must not exceed max_cells")
    return list(glyphs)


def _kind(rng, config):
    u = rng.random()
    if u < config.p_sup:
        return "sup"
    if u < config.p_sup + config.p_sub:
        return "sub"
    if u < config.p_sup + config.p_sub + config.p_frac:
        return "frac"
    return "atom"


def generate_one(rng, config):
    glyphs = _check(config)
    n_items = int(rng.integers(config.min_items, config.max_items + 1))
    items, cells = [], 0
    for _ in range(n_items):
        item = _item(_kind(rng, config), rng, glyphs)
        if cells + len(item[2]) > config.max_cells:
            break
        items.append(item)
        cells += len(item[2])
    # pad up to min_cells; an atom always fits in the last free cell
    while cells < config.min_cells:
        item = _item(_kind(rng, config), rng, glyphs)
        if cells + len(item[2]) > config.max_cells:
            item = _item("atom", rng, glyphs)
        items.append(item)
        cells += len(item[2])
    tokens, token_cells, col = [], [], 0
    for toks, offs, layout in items:
        tokens.extend(toks)
        token_cells.extend(col + o for o in offs)
        col += len(layout)
    image, _ = render(items, config.scale)
    return SynthSample(" ".join(tokens), image, token_cells, 8 * config.scale)


def synth_generate(n_samples, config=None, seed=0, unique=False, max_tries=100000):
    """Generate ``n_samples`` seeded formulas and their rasters.

    With ``unique=True`` repeated token strings are redrawn.
    """
    config = config or SynthConfig()
    _check(config)
    rng = np.random.default_rng(seed)
    out, seen, tries = [], set(), 0
    while len(out) < n_samples:
        tries += 1
        if tries > max_tries:
            raise ConfigError(f"could not draw {n_samples} unique formulas from this grammar")
        s = generate_one(rng, config)
        if unique and s.tokens in seen:
            continue
        seen.add(s.tokens)
        out.append(s)
    return out


def synth_vocab_tokens(config=None):
    """Every token the grammar can emit."""
    config = config or SynthConfig()
    return sorted(set(_check(config)) | set(STRUCTURAL))
