#!/usr/bin/env -S marimo run
# /// script
# [tool.marimo.display]
# theme = "dark"
# ///

import marimo

__generated_with = "0.14.16"
app = marimo.App(width="medium")


@app.cell(hide_code=True)
def imports():
    import os
    from pathlib import Path

    import marimo as mo

    from bsgal.output.report import accuracy_trajectory, list_runs, load_summary, load_table

    output_root = Path(os.getenv("GAL_OUT_DIR", "runs"))
    return accuracy_trajectory, list_runs, load_summary, load_table, mo, output_root


@app.cell(hide_code=True)
def header(mo, output_root):
    mo.md(
        f"""
    # **bsgal runs**
    Browsing artifacts under `{output_root.absolute()}`. Point `GAL_OUT_DIR` elsewhere to browse another root.
    """
    )
    return


@app.cell(hide_code=True)
def run_picker(list_runs, mo, output_root):
    runs = {str(path.relative_to(output_root)): path for path in list_runs(output_root)}
    run_dropdown = mo.ui.dropdown(options=list(runs), value=next(iter(runs), None))

    mo.md(f"""
    Pick a run {run_dropdown}""") if runs else mo.md("No runs yet. Try `bsgal train bsgal`.")
    return run_dropdown, runs


@app.cell(hide_code=True)
def run_summary(accuracy_trajectory, load_summary, mo, run_dropdown, runs):
    display = mo.md("")
    if run_dropdown.value:
        summary = load_summary(runs[run_dropdown.value])
        trajectory = [{"iteration": t, "accuracy": acc} for t, acc in accuracy_trajectory(summary)]
        tiers = summary.get("tier_accuracy", {})
        display = mo.vstack([
            mo.md(
                f"**{summary['mode']}** seed {summary['seed']}: final accuracy {summary['final_accuracy']:.4f}, "
                f"acceptance rate {summary['acceptance_rate']:.3f}, config `{summary['config_hash'][:12]}`"
            ),
            mo.ui.table([{"tier": tier, "accuracy": acc} for tier, acc in tiers.items()], selection=None),
            mo.ui.table(trajectory, selection=None),
        ])
    display
    return


@app.cell(hide_code=True)
def histogram_tables(mo, output_root):
    histograms = sorted(output_root.rglob("histograms.csv")) if output_root.exists() else []
    histogram_dropdown = mo.ui.dropdown(options=[str(p.relative_to(output_root)) for p in histograms])

    mo.md(f"""
    Contribution histograms by noise tier {histogram_dropdown}""") if histograms else mo.md("")
    return (histogram_dropdown,)


@app.cell(hide_code=True)
def histogram_view(histogram_dropdown, load_table, mo, output_root):
    histogram_display = mo.md("")
    if histogram_dropdown.value:
        histogram_display = mo.ui.table(load_table(output_root / histogram_dropdown.value), selection=None)
    histogram_display
    return


if __name__ == "__main__":
    app.run()
