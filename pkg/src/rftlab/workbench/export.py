"""Grid export: stress-map CSV and standalone SVG heatmaps.

The SVG writer emits exactly one <rect> element per grid cell (the
color-scale bar and background use <path>), so structural checks can
count cells directly.
"""

import numpy as np

from ..errors import ConfigError
from ..stress_field import GridStressMap, write_map_csv

# Piecewise-linear approximation of a perceptually uniform colormap.
_COLOR_ANCHORS = [
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.267, 0.749, 0.441),
    (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150),
    (0.993, 0.906, 0.144),
]


def _color(value):
    """Map value in [0, 1] to a '#rrggbb' color."""
    v = min(max(float(value), 0.0), 1.0) * (len(_COLOR_ANCHORS) - 1)
    i = min(int(v), len(_COLOR_ANCHORS) - 2)
    f = v - i
    rgb = [
        (1.0 - f) * a + f * b for a, b in zip(_COLOR_ANCHORS[i], _COLOR_ANCHORS[i + 1])
    ]
    return "#" + "".join(f"{int(round(255 * c)):02x}" for c in rgb)


def heatmap_svg(beta_axis, gamma_axis, values, title="") -> str:
    """Render a gridded field as an SVG heatmap string.

    beta runs along the horizontal axis, gamma along the vertical axis
    (increasing upward); one rect per grid node.
    """
    beta_axis = np.asarray(beta_axis, dtype=float)
    gamma_axis = np.asarray(gamma_axis, dtype=float)
    values = np.asarray(values, dtype=float)
    nb, ng = values.shape
    cell = 12
    left, top, right, bottom = 64, 34, 86, 52
    width = left + nb * cell + right
    height = top + ng * cell + bottom
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<defs>",
        '<linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">',
    ]
    for k in range(11):
        out.append(f'<stop offset="{k * 10}%" stop-color="{_color(k / 10)}"/>')
    out.append("</linearGradient>")
    out.append("</defs>")
    bg = f"M0 0 H{width} V{height} H0 Z"
    out.append(f'<path d="{bg}" fill="white"/>')
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    for i in range(nb):
        for j in range(ng):
            norm = 0.5 if span == 0.0 else (values[i, j] - vmin) / span
            x = left + i * cell
            y = top + (ng - 1 - j) * cell
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_color(norm)}"/>'
            )
    plot_w, plot_h = nb * cell, ng * cell
    axis_font = 'font-family="sans-serif" font-size="11"'
    out.append(
        f'<path d="M{left} {top} V{top + plot_h} H{left + plot_w}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    out.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{top + plot_h + 30}" '
        f'text-anchor="middle" {axis_font}>β (rad)</text>'
    )
    out.append(
        f'<text x="{left - 40}" y="{top + plot_h / 2:.1f}" text-anchor="middle" {axis_font} '
        f'transform="rotate(-90 {left - 40} {top + plot_h / 2:.1f})">γ (rad)</text>'
    )
    for value, x_pos, anchor in (
        (beta_axis[0], left, "start"),
        (beta_axis[-1], left + plot_w, "end"),
    ):
        out.append(
            f'<text x="{x_pos}" y="{top + plot_h + 14}" text-anchor="{anchor}" '
            f"{axis_font}>{value:.3f}</text>"
        )
    for value, y_pos in ((gamma_axis[0], top + plot_h), (gamma_axis[-1], top + 8)):
        out.append(
            f'<text x="{left - 6}" y="{y_pos}" text-anchor="end" {axis_font}>{value:.3f}</text>'
        )
    bar_x = left + plot_w + 24
    bar = f"M{bar_x} {top} h14 v{plot_h} h-14 Z"
    out.append(f'<path d="{bar}" fill="url(#scale)" stroke="black" stroke-width="0.5"/>')
    out.append(
        f'<text x="{bar_x + 18}" y="{top + 8}" {axis_font}>{vmax:.4g}</text>'
    )
    out.append(
        f'<text x="{bar_x + 18}" y="{top + plot_h}" {axis_font}>{vmin:.4g}</text>'
    )
    out.append("</svg>")
    return "\n".join(out)


def export_heatmap(stress_map: GridStressMap, path, render: str = "csv", component: str = "z"):
    """Write a stress map to ``path`` as CSV (both components) or SVG (one).

    Returns the path written.
    """
    if render == "csv":
        write_map_csv(stress_map, path)
    elif render == "svg":
        if component not in ("z", "x"):
            raise ConfigError("component must be 'z' or 'x'")
        values = stress_map.values_z if component == "z" else stress_map.values_x
        svg = heatmap_svg(
            stress_map.beta_axis, stress_map.gamma_axis, values, title=f"alpha_{component}"
        )
        with open(path, "w") as fh:
            fh.write(svg)
    else:
        raise ConfigError(f"render must be csv|svg, got {render!r}")
    return path
