"""Textual browser for the upsampler cost table."""

from textual.app import App, ComposeResult
from textual.binding import Binding
from textual.containers import Container
from textual.screen import ModalScreen
from textual.widgets import DataTable, Footer, Header, Input, Label, Static

from .errors import ConfigurationError
from .models import CostReport
from .services.complexity import IMPLEMENTED, PRINTED_EXPRESSIONS, STEP_NAMES, cost_table, printed_total_differs


def parse_shape(text: str) -> tuple[int, int, int]:
    """Parse ``C,H,W`` into positive integers."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError("Enter three comma-separated integers: C,H,W")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigurationError("C, H and W must be integers") from None
    if min(values) < 1:
        raise ConfigurationError("C, H and W must be positive")
    return values


class StepScreen(ModalScreen):
    """Modal screen with the per-step costs of one upsampler."""

    BINDINGS = [
        Binding("escape", "close", "Close"),
        Binding("q", "close", "Close"),
    ]

    CSS = """
    StepScreen {
        align: center middle;
    }
    StepScreen > Container {
        width: 80%;
        height: auto;
        border: solid $primary;
        background: $surface;
        padding: 1 2;
    }
    StepScreen .title {
        text-align: center;
        text-style: bold;
        padding-bottom: 1;
    }
    """

    def __init__(self, report: CostReport) -> None:
        super().__init__()
        self.report = report

    def compose(self) -> ComposeResult:
        with Container():
            yield Label(self.report.query.upsampler.value, classes="title")
            yield Static(id="step-content")

    def on_mount(self) -> None:
        q = self.report.query
        flops_expr, params_expr = PRINTED_EXPRESSIONS[q.upsampler]
        lines = [
            "[bold cyan]Query[/]",
            f"  C={q.C} d={q.d} K={q.K} S={q.S} g={q.g} H={q.H} W={q.W}",
            "",
            "[bold cyan]Steps[/]",
        ]
        for step, s in self.report.steps.items():
            lines.append(f"  {step:<4} {STEP_NAMES[step]:<18} {s.flops:>16,} FLOPs {s.params:>12,} params")
        lines += [
            "",
            "[bold cyan]Total[/]",
            f"  {self.report.flops:,} FLOPs ({self.report.gflops:.3f} G), {self.report.params:,} params",
            f"  FLOPs = ({flops_expr}) x HW, params = {params_expr}",
        ]
        if printed_total_differs(q):
            lines.append("  [yellow]The printed total does not match the sum of its steps[/]")
        if q.upsampler not in IMPLEMENTED:
            lines.append("  [dim]Cost model only[/]")
        self.query_one("#step-content", Static).update("\n".join(lines))

    def action_close(self) -> None:
        self.dismiss()


class ShapeScreen(ModalScreen[tuple[int, int, int] | None]):
    """Modal for changing the feature shape C,H,W."""

    BINDINGS = [
        Binding("escape", "cancel", "Cancel"),
    ]

    CSS = """
    ShapeScreen {
        align: center middle;
    }
    ShapeScreen > Container {
        width: 60%;
        height: auto;
        border: solid $primary;
        background: $surface;
        padding: 1 2;
    }
    ShapeScreen .title {
        text-align: center;
        text-style: bold;
        padding-bottom: 1;
    }
    ShapeScreen .error {
        color: $error;
        padding-top: 1;
    }
    """

    def __init__(self, initial: str) -> None:
        super().__init__()
        self.initial = initial

    def compose(self) -> ComposeResult:
        with Container():
            yield Label("Feature shape (C,H,W)", classes="title")
            yield Input(value=self.initial, id="shape-input")
            yield Label("", id="error-label", classes="error")

    def on_mount(self) -> None:
        self.query_one("#shape-input", Input).focus()

    def on_input_submitted(self, event: Input.Submitted) -> None:
        try:
            self.dismiss(parse_shape(event.value))
        except ConfigurationError as e:
            self.query_one("#error-label", Label).update(str(e))

    def action_cancel(self) -> None:
        self.dismiss(None)


class SapaApp(App):
    """Browse FLOPs and parameter counts of the dynamic upsamplers."""

    CSS = """
    Screen {
        background: $surface;
    }
    #main-container {
        height: 100%;
    }
    #cost-table {
        height: 1fr;
    }
    """

    BINDINGS = [
        Binding("q", "quit", "Quit"),
        Binding("enter", "open_steps", "Steps"),
        Binding("s", "change_shape", "Shape"),
        Binding("j", "cursor_down", "Down", show=False),
        Binding("k", "cursor_up", "Up", show=False),
    ]

    def __init__(self, C: int = 256, H: int = 120, W: int = 120) -> None:
        super().__init__()
        self.shape = (C, H, W)
        self.reports: list[CostReport] = []
        self.title = "SAPA cost table"

    def compose(self) -> ComposeResult:
        yield Header()
        with Container(id="main-container"):
            yield DataTable(id="cost-table")
        yield Footer()

    def on_mount(self) -> None:
        table = self.query_one("#cost-table", DataTable)
        table.add_columns("Upsampler", "GFLOPs", "FLOPs / position", "Params", "")
        table.cursor_type = "row"
        self._refresh_costs()

    def _refresh_costs(self) -> None:
        C, H, W = self.shape
        self.reports = cost_table(C, H, W)
        self.sub_title = f"C={C} H={H} W={W}"
        table = self.query_one("#cost-table", DataTable)
        table.clear()
        for r in self.reports:
            up = r.query.upsampler
            table.add_row(
                up.value,
                f"{r.gflops:.3f}",
                f"{r.flops_per_position:,}",
                f"{r.params:,}",
                "[green]implemented[/]" if up in IMPLEMENTED else "[dim]cost only[/]",
            )

    def _get_selected_report(self) -> CostReport | None:
        table = self.query_one("#cost-table", DataTable)
        if table.row_count == 0:
            return None
        row_idx = table.cursor_row
        if 0 <= row_idx < len(self.reports):
            return self.reports[row_idx]
        return None

    def action_open_steps(self) -> None:
        report = self._get_selected_report()
        if report:
            self.push_screen(StepScreen(report))

    def on_data_table_row_selected(self, event: DataTable.RowSelected) -> None:
        # the table swallows enter while focused
        self.action_open_steps()

    def action_change_shape(self) -> None:
        self.push_screen(ShapeScreen(",".join(map(str, self.shape))), callback=self._on_shape)

    def _on_shape(self, shape: tuple[int, int, int] | None) -> None:
        if shape:
            self.shape = shape
            self._refresh_costs()
            self.notify(f"Shape set to {shape[0]}x{shape[1]}x{shape[2]}")

    def action_cursor_down(self) -> None:
        self.query_one("#cost-table", DataTable).action_cursor_down()

    def action_cursor_up(self) -> None:
        self.query_one("#cost-table", DataTable).action_cursor_up()
