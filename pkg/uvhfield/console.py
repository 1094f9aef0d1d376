# --------------------------------------------------------------------
# console.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Tuesday March 4, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Progress output on standard error for long-running subcommands.
"""

import io
import os
import sys
from functools import partial
from typing import Optional, TextIO

from uvhfield.events import Event, EventBus, Events

# --------------------------------------------------------------------
_ansi_enabled = (
    "NO_COLOR" not in os.environ and sys.stderr.isatty()
) or "FORCE_COLOR" in os.environ


# --------------------------------------------------------------------
def disable():
    global _ansi_enabled
    _ansi_enabled = False


# --------------------------------------------------------------------
def enable():
    global _ansi_enabled
    _ansi_enabled = True


# --------------------------------------------------------------------
def is_enabled():
    return _ansi_enabled


# --------------------------------------------------------------------
COLORS = ("black", "red", "green", "yellow", "blue", "magenta", "cyan", "white")
RENDER_MODES = ("none", "bold", "dim", "italic", "underline")
ANSI_ESC = "\033["
RESET = ANSI_ESC + "0m"


# --------------------------------------------------------------------
def style(
    fg: Optional[str] = None, bg: Optional[str] = None, render: Optional[str] = None
) -> str:
    codes: list[int] = []
    if render is not None:
        codes.append(RENDER_MODES.index(render))
    if fg is not None:
        codes.append(30 + COLORS.index(fg))
    if bg is not None:
        codes.append(40 + COLORS.index(bg))
    return ANSI_ESC + ";".join(str(c) for c in codes) + "m"


# --------------------------------------------------------------------
def color(
    *content,
    fg: Optional[str] = None,
    bg: Optional[str] = None,
    render: Optional[str] = None,
) -> str:
    text = "".join(str(obj) for obj in content)
    if _ansi_enabled:
        return style(fg, bg, render) + text + RESET
    return text


# --------------------------------------------------------------------
class TextDecorator:
    def __init__(self, outfile: Optional[TextIO] = None):
        self._outfile = outfile

    @property
    def outfile(self) -> TextIO:
        # Resolved late so that OutputCapture can swap sys.stderr.
        return self._outfile or sys.stderr

    def embrace(self, text, *, begin="[", end="]", **kwargs):
        brace = partial(color, fg="white", render="bold")
        sb = io.StringIO()
        sb.write(brace(begin))
        sb.write(color(text, **kwargs))
        sb.write(brace(end))
        return self.outfile.write(sb.getvalue() + " ")

    def print(self, text, **kwargs):
        n = self.outfile.write(color(text, **kwargs))
        n += self.outfile.write("\n")
        self.outfile.flush()
        return n

    def __call__(self, text, **kwargs):
        return self.print(text, **kwargs)


# --------------------------------------------------------------------
def _format_step(data: dict) -> str:
    parts = [f"step {data.get('step', '?')}/{data.get('total', '?')}"]
    if "loss" in data:
        parts.append(f"loss {data['loss']:.5f}")
    if "lr" in data:
        parts.append(f"lr {data['lr']:.2e}")
    return "  ".join(parts)


# --------------------------------------------------------------------
class ConsoleHook:
    """
    Prints bus events to standard error.  Step events are throttled to
    every `step_every` steps.
    """

    def __init__(self, quiet=False, step_every=50, txt: Optional[TextDecorator] = None):
        self.quiet = quiet
        self.step_every = max(1, step_every)
        self.txt = txt or TextDecorator()

    def sigil(self, event: Event) -> str:
        context = event.context
        if context is None:
            return "uvh"
        if hasattr(context, "sigil"):
            return context.sigil()
        return str(context)

    def on_step(self, event: Event):
        data = event.data or {}
        step = data.get("step", 0)
        if self.quiet or (step % self.step_every and step != data.get("total")):
            return
        self.txt.embrace(self.sigil(event), fg="cyan", render="bold")
        self.txt.print(_format_step(data), fg="white", render="dim")

    def on_info(self, event: Event):
        if self.quiet:
            return
        self.txt.embrace(self.sigil(event), fg="white", render="dim")
        self.txt.print(event.data)

    def on_warning(self, event: Event):
        self.txt.embrace(self.sigil(event), fg="yellow", render="bold")
        self.txt.print(event.data, fg="yellow")

    def on_error(self, event: Event):
        self.txt.embrace(self.sigil(event), fg="red", render="bold")
        self.txt.print(event.data)

    def on_start(self, event: Event):
        if self.quiet:
            return
        self.txt.embrace(self.sigil(event), fg="cyan", render="bold")
        self.txt.print("started")

    def on_success(self, event: Event):
        if self.quiet:
            return
        self.txt.embrace(self.sigil(event), fg="green", render="bold")
        self.txt.print("ok")

    def on_fail(self, event: Event):
        self.txt.embrace(self.sigil(event), fg="white", bg="red", render="bold")
        self.txt.print(f"failed: {event.data}")

    def on_checkpoint(self, event: Event):
        if self.quiet:
            return
        self.txt.embrace(self.sigil(event), fg="green")
        self.txt.print(f"checkpoint {event.data}", render="dim")

    def attach(self, bus: EventBus) -> "ConsoleHook":
        for name, listener in [
            (Events.STEP, self.on_step),
            (Events.INFO, self.on_info),
            (Events.EVAL, self.on_info),
            (Events.WARNING, self.on_warning),
            (Events.DIAGNOSTIC, self.on_warning),
            (Events.ERROR, self.on_error),
            (Events.START, self.on_start),
            (Events.SUCCESS, self.on_success),
            (Events.FAIL, self.on_fail),
            (Events.CHECKPOINT, self.on_checkpoint),
        ]:
            bus.subscribe(name, listener)
        return self
