import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns
from rich.console import Console
from rich.table import Table


class SweepVisualization:
    def __init__(self, sweep_df: pd.DataFrame, clip_df: pd.DataFrame, fusion_df: pd.DataFrame, output_dir,
                 label: str, console: Console = None):
        self.sweep_df = sweep_df
        self.clip_df = clip_df
        self.fusion_df = fusion_df
        self.output_dir = str(output_dir)
        self.label = label
        self.console = console or Console()
        os.makedirs(self.output_dir, exist_ok=True)

    def save_tables(self):
        """Save the sweep, clip and fusion tables to CSV files."""
        paths = []
        for name, frame in (('sweep', self.sweep_df), ('clip', self.clip_df), ('fusion', self.fusion_df)):
            filepath = os.path.join(self.output_dir, f"{name}_{self.label}.csv")
            frame.to_csv(filepath, index=False, float_format="%.6f")
            self.console.print(f"\n[bold green]Table saved to: [underline]{filepath}[/underline][/bold green]")
            paths.append(filepath)
        return paths

    def visualize(self):
        """Print the comparison tables and insights, and save the bar chart."""
        self._print_table(self.sweep_df, "Tiling Sweep (body MAE/ME per cell)")
        self._print_table(self.clip_df, "Clip Policy Robustness")
        self._print_table(self.fusion_df, "Fusion Policies")
        self._print_insights()
        return self.save_plot()

    def _print_table(self, frame: pd.DataFrame, title: str):
        table = Table(title=f"[bold]{title}[/bold]", show_header=True, header_style="bold magenta")
        for col in frame.columns:
            table.add_column(col, justify="right")
        for _, row in frame.iterrows():
            table.add_row(*[f"{x:.2f}" if isinstance(x, float) else str(x) for x in row])
        self.console.print(table)

    def _print_insights(self):
        self.console.print("\n[bold underline]Key Insights:[/bold underline]")
        if self.sweep_df.empty:
            self.console.print("[yellow]Warning: empty sweep[/yellow]")
            return
        best = self.sweep_df.loc[self.sweep_df['body_mae_hu'].idxmin()]
        self.console.print(f"[bold]Lowest body MAE:[/bold] [green]{best['tilespec']} ({best['scaled_label']}), "
                           f"{best['views']}, {best['policy']}[/green] ({best['body_mae_hu']:.1f} HU)")

        naive = self.sweep_df[(self.sweep_df['crop'] == 0) & (self.sweep_df['views'] == 'axial')]
        fused = self.sweep_df[self.sweep_df['views'] != 'axial']
        if not naive.empty and not fused.empty:
            self.console.print(f"[bold]Single-view naive tiling:[/bold] {naive['body_mae_hu'].min():.1f} HU vs "
                               f"[bold]best multi-view:[/bold] {fused['body_mae_hu'].min():.1f} HU")
        if not self.fusion_df.empty:
            spread = self.fusion_df['body_mae_hu'].max() - self.fusion_df['body_mae_hu'].min()
            self.console.print(f"[bold]Fusion policy spread:[/bold] {spread:.1f} HU")

    def save_plot(self):
        """Bar charts of body MAE and ME per tiling cell, one bar per view set."""
        frame = self.sweep_df.copy()
        if frame.empty:
            return None
        frame['cell'] = frame['tilespec'] + " / " + frame['policy']
        fig, axes = plt.subplots(1, 2, figsize=(12, 4.5))
        sns.barplot(data=frame, x='cell', y='body_mae_hu', hue='views', ax=axes[0])
        sns.barplot(data=frame, x='cell', y='body_me_hu', hue='views', ax=axes[1])
        axes[0].set_ylabel("MAE (HU)")
        axes[1].set_ylabel("ME (HU)")
        for ax in axes:
            ax.set_xlabel("")
            ax.tick_params(axis='x', rotation=60)
        fig.tight_layout()
        filepath = os.path.join(self.output_dir, f"sweep_{self.label}.png")
        fig.savefig(filepath, dpi=120, metadata={'Software': None})
        plt.close(fig)
        self.console.print(f"\n[bold green]Plot saved to: [underline]{filepath}[/underline][/bold green]")
        return filepath
