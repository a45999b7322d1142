import pandas as pd
import pytest

from plot import PlotError, PlotSpec, aggregate, load_plot_spec, plot

ROWS = pd.DataFrame(
    {
        "row_type": ["seed", "seed", "seed", "seed", "mean"],
        "variant": ["a", "a", "b", "b", "a"],
        "ratio": [0.5, 0.5, 0.5, 1.0, 0.5],
        "accuracy": [0.4, 0.6, 0.7, 0.9, 99.0],
    }
)


def test_aggregate_uses_seed_rows():
    groups = aggregate(ROWS, PlotSpec(x="ratio", y="accuracy", series="variant"))
    assert set(groups) == {"a", "b"}
    a = groups["a"]
    assert a["x"].tolist() == [0.5]
    assert a["mean"].iloc[0] == pytest.approx(0.5)
    assert a["std"].iloc[0] == pytest.approx(0.1)
    assert groups["b"]["x"].tolist() == [0.5, 1.0]


def test_aggregate_several_metrics():
    df = ROWS.assign(loss=[1.0, 2.0, 3.0, 4.0, 5.0])
    groups = aggregate(df, PlotSpec(x="ratio", y=("accuracy", "loss")))
    assert set(groups) == {"accuracy", "loss"}


def test_spec_needs_a_metric():
    with pytest.raises(PlotError):
        PlotSpec(x="ratio", y=())


def test_load_plot_spec(tmp_path):
    path = tmp_path / "p.ini"
    path.write_text("[plot]\nx = k\ny = accuracy, kl_id\nlogx = yes\ncategorical = false\n")
    spec = load_plot_spec(str(path))
    assert spec.y == ("accuracy", "kl_id")
    assert spec.logx and not spec.categorical
    assert spec.rows == "seed"


@pytest.mark.parametrize(
    "text,message",
    [
        ("[plot]\nx = k\ny = accuracy\ncolour = red\n", "unknown key plot.colour"),
        ("[plot]\nx = k\n", "missing key plot.y"),
        ("[figure]\nx = k\n", "missing \\[plot\\]"),
    ],
)
def test_plot_spec_errors(tmp_path, text, message):
    path = tmp_path / "p.ini"
    path.write_text(text)
    with pytest.raises(PlotError, match=message):
        load_plot_spec(str(path))


def test_plot_writes_svg(tmp_path):
    csv = tmp_path / "r.csv"
    ROWS.to_csv(csv, index=False)
    out = tmp_path / "plots" / "acc.svg"
    plot(str(csv), PlotSpec(x="ratio", y="accuracy", series="variant", title="t", logx=True), str(out))
    text = out.read_text()
    assert "<svg" in text
    assert "dc:date" not in text


def test_categorical_axis(tmp_path):
    csv = tmp_path / "r.csv"
    ROWS.to_csv(csv, index=False)
    out = tmp_path / "cat.svg"
    plot(str(csv), PlotSpec(x="variant", y="accuracy", categorical=True), str(out))
    assert out.is_file()


def test_empty_csv_writes_nothing(tmp_path):
    csv = tmp_path / "empty.csv"
    csv.write_text("")
    out = tmp_path / "x.svg"
    with pytest.raises(PlotError):
        plot(str(csv), PlotSpec(x="ratio", y="accuracy"), str(out))
    assert not out.exists()


def test_missing_column(tmp_path):
    csv = tmp_path / "r.csv"
    ROWS.to_csv(csv, index=False)
    with pytest.raises(PlotError, match="missing columns"):
        plot(str(csv), PlotSpec(x="k", y="accuracy"), str(tmp_path / "x.svg"))


def test_no_values(tmp_path):
    csv = tmp_path / "r.csv"
    ROWS.assign(accuracy=float("nan")).to_csv(csv, index=False)
    out = tmp_path / "x.svg"
    with pytest.raises(PlotError, match="no values"):
        plot(str(csv), PlotSpec(x="ratio", y="accuracy"), str(out))
    assert not out.exists()
