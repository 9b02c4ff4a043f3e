import os
from typing import Dict, Iterable, Optional

import pandas as pd
from rich.box import ROUNDED
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from manifest import SYNTH_STAGES


class OutputFormatter:
    def __init__(self, output_dir, console: Optional[Console] = None):
        self.output_dir = str(output_dir)
        self.console = console or Console()

    def save_to_csv(self, frame: pd.DataFrame, filename) -> str:
        filepath = os.path.join(self.output_dir, filename)
        os.makedirs(os.path.dirname(filepath), exist_ok=True)
        frame.to_csv(filepath, index=False, float_format="%.6f")
        self.console.print(f"\n[bold green]Saved to: [underline]{filepath}[/underline][/bold green]")
        return filepath

    def _get_mae_style(self, value, thresholds=(60.0, 120.0)):
        """Return style based on MAE thresholds (low, medium, high) in HU"""
        if value <= thresholds[0]:
            return "green"
        elif value <= thresholds[1]:
            return "yellow"
        else:
            return "red"

    def print_header(self, title: str):
        self.console.print(Panel.fit(title, style="bold blue", padding=(1, 4)))

    def print_config(self, canonical_text: str, config_hash: str):
        table = Table(title=f"Run configuration ({config_hash[:12]})", box=ROUNDED, style="dim")
        table.add_column("Key", style="cyan")
        table.add_column("Value", justify="right")
        for line in canonical_text.splitlines():
            key, _, value = line.partition("=")
            table.add_row(key, value)
        self.console.print(table)

    def print_training(self, summaries: Iterable[Dict[str, object]]):
        table = Table(title="Training Summary", box=ROUNDED)
        table.add_column("Model", style="cyan")
        table.add_column("View")
        table.add_column("Params", justify="right")
        table.add_column("Patches", justify="right")
        table.add_column("Initial val", justify="right")
        table.add_column("Final val", justify="right")
        table.add_column("Time", justify="right")
        for s in summaries:
            improved = s['final_val'] < s['initial_val']
            style = "green" if improved else "red"
            table.add_row(s['kind'], s['view'], f"{s['parameters']:,}", str(s['patches']),
                          f"{s['initial_val']:.4f}", f"[{style}]{s['final_val']:.4f}[/]", f"{s['seconds']:.1f}s")
        self.console.print(table)

    def print_metrics(self, report_frame: pd.DataFrame, baselines: Optional[Dict[str, float]] = None):
        table = Table(title="Region Metrics (HU, ME = CT - sCT)", box=ROUNDED)
        for column in ("Case", "Region", "MAE", "ME", "Voxels"):
            table.add_column(column, justify="right" if column not in ("Case", "Region") else "left")
        if baselines:
            table.add_column("Constant MAE", justify="right")
        for _, row in report_frame.iterrows():
            style = self._get_mae_style(row['mae_hu'])
            cells = [str(row['case_id']), str(row['region']),
                     f"[{style}]{row['mae_hu']:.1f} ± {row['mae_sd_hu']:.1f}[/]",
                     f"{row['me_hu']:+.1f} ± {row['me_sd_hu']:.1f}", f"{row['voxels']:.0f}"]
            if baselines:
                baseline = baselines.get(f"{row['case_id']}/{row['region']}")
                cells.append(f"{baseline:.1f}" if baseline is not None else "")
            table.add_row(*cells)
        self.console.print(table)

    def print_timings(self, timings: Dict[str, float], title="Stage Timings"):
        table = Table(title=title, box=ROUNDED)
        table.add_column("Stage", style="cyan")
        table.add_column("Seconds", justify="right")
        table.add_column("Share", justify="right")
        total = sum(timings.values())
        ordered = [s for s in SYNTH_STAGES if s in timings] + sorted(s for s in timings if s not in SYNTH_STAGES)
        for stage in ordered:
            share = timings[stage] / total * 100 if total > 0 else 0
            table.add_row(stage, f"{timings[stage]:.2f}", f"{share:.1f}%")
        table.add_row("[bold]total", f"[bold]{total:.2f}", "")
        self.console.print(table)

    def print_frame(self, frame: pd.DataFrame, title: str):
        table = Table(title=title, box=ROUNDED)
        for column in frame.columns:
            table.add_column(str(column), justify="right")
        for _, row in frame.iterrows():
            table.add_row(*[f"{x:.2f}" if isinstance(x, float) else str(x) for x in row])
        self.console.print(table)
