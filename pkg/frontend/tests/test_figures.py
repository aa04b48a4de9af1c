import math

import numpy as np
import pytest

from wc4dvar_plots.figures import (FigureSpec, PlotInputError,
                                   convergence_figure, map_figure,
                                   read_map, read_trace, render,
                                   surface_figure, variant_color)

MAP_HEADER = ("# schema: wc4dvar-map-v1\n"
              "c_dinv,rho,p,mode,winner,min_cost\n")


def spec_for(kind, inputs, output, **kw):
    return FigureSpec(kind=kind, inputs=tuple(str(p) for p in inputs),
                      output=str(output), **kw)


def line_styles(fig):
    ax = fig.axes[0]
    return [ln.get_linestyle() for ln in ax.get_lines()]


def test_spec_rejects_unknown_kind(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("# schema: wc4dvar-trace-v1\n")
    with pytest.raises(PlotInputError):
        spec_for("pie", [f], tmp_path / "o.png")


def test_spec_requires_existing_inputs(tmp_path):
    with pytest.raises(PlotInputError):
        spec_for("convergence", [tmp_path / "missing.csv"],
                 tmp_path / "o.png")


def test_schema_mismatch_is_input_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# schema: wc4dvar-trace-v9\nouter,inner,J\n")
    out = tmp_path / "o.png"
    with pytest.raises(PlotInputError):
        render(spec_for("convergence", [bad], out))
    assert not out.exists()


def test_empty_trace_errors_without_writing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("# schema: wc4dvar-trace-v1\n"
                     "outer,inner,J,q_st,residual_norm,ops_model\n")
    out = tmp_path / "o.svg"
    with pytest.raises(PlotInputError):
        render(spec_for("convergence", [empty], out))
    assert not out.exists()


def test_single_variant_gives_one_curve_pair(data_dir, tmp_path):
    spec = spec_for("convergence", [data_dir / "SAQ0-M-0.csv"],
                    tmp_path / "o.png")
    fig, plt = convergence_figure(spec)
    styles = line_styles(fig)
    assert styles.count("-") == 1
    assert styles.count("--") == 1
    plt.close(fig)


def test_default_residual_rule_trace_has_rising_quadratic(data_dir,
                                                          tmp_path):
    rows = read_trace(data_dir / "SAQ0-M-0.csv")
    qs = [r["q_st"] for r in rows if math.isfinite(r["q_st"])]
    assert any(b > a for a, b in zip(qs, qs[1:]))
    out = tmp_path / "saq0.png"
    assert render(spec_for("convergence", [data_dir / "SAQ0-M-0.csv"],
                           out)) == str(out)
    assert out.stat().st_size > 0


def test_multi_variant_convergence_with_optimum(data_dir, tmp_path):
    inputs = [data_dir / "SAQ1-M-0.csv", data_dir / "STQ1-S-M.csv"]
    spec = spec_for("convergence", inputs, tmp_path / "o.png",
                    optimum=100.0)
    fig, plt = convergence_figure(spec)
    labels = [ln.get_label() for ln in fig.axes[0].get_lines()]
    assert any(lb.startswith("SAQ1-M-0") for lb in labels)
    assert any(lb.startswith("STQ1-S-M") for lb in labels)
    assert fig.axes[0].get_yscale() == "log"
    plt.close(fig)


def test_cost_convergence_x_is_cumulative(data_dir, tmp_path):
    spec = spec_for("cost_convergence", [data_dir / "SAQ1-M-0.csv"],
                    tmp_path / "o.png")
    fig, plt = convergence_figure(spec)
    solid = [ln for ln in fig.axes[0].get_lines()
             if ln.get_linestyle() == "-"][0]
    x = solid.get_xdata()
    assert np.all(np.diff(x) >= 0)
    assert x[-1] > x[0]
    plt.close(fig)


def test_cost_convergence_rejects_unknown_weight(data_dir, tmp_path):
    spec = spec_for("cost_convergence", [data_dir / "SAQ1-M-0.csv"],
                    tmp_path / "o.png", weights={"warp": 1.0})
    with pytest.raises(PlotInputError):
        convergence_figure(spec)


def test_one_cell_map(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text(MAP_HEADER + "0.5,0.001,1,fully_mpi,FOQ1-D,123.0\n")
    out = tmp_path / "m.png"
    render(spec_for("map", [f], out))
    assert out.stat().st_size > 0


def test_uniform_winner_single_legend_entry(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text(MAP_HEADER
                 + "0.5,0.001,1,fully_mpi,FOQ1-D,123.0\n"
                 + "1.0,0.001,1,fully_mpi,FOQ1-D,124.0\n"
                 + "0.5,0.01,1,fully_mpi,FOQ1-D,99.0\n"
                 + "1.0,0.01,1,fully_mpi,FOQ1-D,98.0\n")
    fig, plt = map_figure(spec_for("map", [f], tmp_path / "m.png"))
    legend = fig.axes[0].get_legend()
    assert len(legend.get_texts()) == 1
    assert legend.get_texts()[0].get_text() == "FOQ1-D"
    plt.close(fig)


def test_default_map_sequential_forcing_dominates(data_dir, tmp_path):
    rows = [r for r in read_map(data_dir / "map.csv") if r["p"] == 1]
    tally = {}
    for r in rows:
        if r["winner"]:
            tally[r["winner"][:2]] = tally.get(r["winner"][:2], 0) + 1
    assert tally.get("FO", 0) > max(
        (v for k, v in tally.items() if k != "FO"), default=0)
    out = tmp_path / "map.png"
    render(spec_for("map", [data_dir / "map.csv"], out, p=1,
                    mode="fully_mpi"))
    assert out.stat().st_size > 0


def test_ambiguous_slice_requires_selection(data_dir, tmp_path):
    with pytest.raises(PlotInputError, match="slice"):
        map_figure(spec_for("map", [data_dir / "map.csv"],
                            tmp_path / "m.png"))


def test_surface_renders(data_dir, tmp_path):
    out = tmp_path / "s.png"
    render(spec_for("surface", [data_dir / "map.csv"], out, p=1,
                    mode="fully_mpi"))
    assert out.stat().st_size > 0


@pytest.mark.parametrize("ext", ["svg", "png"])
def test_outputs_are_byte_deterministic(data_dir, tmp_path, ext):
    a = tmp_path / f"a.{ext}"
    b = tmp_path / f"b.{ext}"
    for out in (a, b):
        render(spec_for("convergence", [data_dir / "SAQ1-M-0.csv"], out,
                        optimum=99.98))
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / f"c.{ext}"
    d = tmp_path / f"d.{ext}"
    for out in (c, d):
        render(spec_for("map", [data_dir / "map.csv"], out, p=1,
                        mode="fully_mpi"))
    assert c.read_bytes() == d.read_bytes()


def test_rendering_leaves_inputs_untouched(data_dir, tmp_path):
    src = data_dir / "SAQ1-M-0.csv"
    before = src.read_bytes()
    render(spec_for("convergence", [src], tmp_path / "o.png"))
    assert src.read_bytes() == before


def test_variant_color_is_stable_and_distinct():
    assert variant_color("FOQ1-D") == variant_color("FOQ1-D")
    names = ["FOQ1-D", "SAQ1-M-0", "STQ1-S-M", "SAQ50-M-I"]
    colors = {variant_color(n) for n in names}
    assert len(colors) == len(names)
    for c in colors:
        assert all(0.0 <= v <= 1.0 for v in c)
