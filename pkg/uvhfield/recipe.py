# --------------------------------------------------------------------
# recipe.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Friday March 14, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
A small build graph for long pipelines.  A recipe makes one file
target from the results of its component recipes and any static input
files; a target that exists and is newer than all of its inputs is
reused instead of being made again.
"""

import inspect
import traceback
import uuid
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Generator, Iterable, Optional, cast

from uvhfield.errors import UvhError
from uvhfield.events import Event, EventBus, Events
from uvhfield.typedefs import PathSpec


# --------------------------------------------------------------------
class BuildError(UvhError):
    def __init__(self, recipe: "Recipe", msg=""):
        super().__init__(f"[{recipe.sigil()}] {msg}")
        self.recipe = recipe


# --------------------------------------------------------------------
class CompositeError(UvhError):
    def __init__(self, exceptions: Iterable[Exception], msg: str = "Multiple errors occurred."):
        self.msg = msg
        self.exceptions = list(exceptions)
        super().__init__(self._compose_message())

    def _compose_message(self):
        sb = [self.msg]
        for exc in self.exceptions:
            lines = str(exc).split("\n")
            lines[0] = f"{exc.__class__.__qualname__}: " + lines[0]
            sb.extend("    " + line for line in lines)
        return "\n".join(sb)


# --------------------------------------------------------------------
class Recipe:
    DEBUG = False

    def __init__(
        self,
        components: Iterable["Recipe"] = (),
        *,
        name="(nameless)",
        target: Optional[PathSpec] = None,
        static_files: Iterable[PathSpec] = (),
        memoize=True,
    ):
        self.id = uuid.uuid4()
        self.components = [*components]
        self.name = name
        self._target = None if target is None else Path(target)
        self.static_files = [Path(s) for s in static_files]
        self.memoize = memoize
        self.saved_result: Any = None

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f"<{self.sigil()}>"

    @property
    def target(self) -> Path:
        assert self._target is not None, "There is no target."
        return self._target

    def has_target(self) -> bool:
        return self._target is not None

    def sigil(self) -> str:
        if self.has_target():
            return f"{self.name}:{self.target}"
        return self.name

    def log(self, event_name: str, data: Any = None):
        EventBus.get().send(Event(event_name, self, data))

    def age(self, ref: datetime) -> timedelta:
        if self.has_target() and self.target.exists():
            return ref - datetime.fromtimestamp(self.target.stat().st_mtime)
        return timedelta.min

    def inputs_age(self, ref: datetime) -> timedelta:
        ages = [ref - datetime.fromtimestamp(f.stat().st_mtime) for f in self.static_files if f.exists()]
        ages.extend(max(c.age(ref), c.inputs_age(ref)) for c in self.components)
        return min(ages, default=timedelta.max)

    def outdated(self, ref: datetime) -> bool:
        return self.age(ref) > self.inputs_age(ref)

    def done(self) -> bool:
        if self.has_target():
            return self.target.exists() and not self.outdated(datetime.now())
        return self.saved_result is not None

    def result(self):
        if self.has_target() and self.done():
            return self.target
        if self.saved_result is None:
            raise ValueError("Recipe result has not yet been recorded.")
        return self.saved_result

    def make_components(self) -> list[Any]:
        """Make every component, collecting all failures before raising."""
        results, exceptions = [], []
        for c in self.components:
            try:
                results.append(c())
            except Exception as e:
                exceptions.append(e)
        if exceptions:
            exc = CompositeError(exceptions, "Failed to make one or more components.")
            self.log(Events.ERROR, exc)
            raise exc
        return results

    def make(self, results: list[Any]) -> Any:
        return results

    def __call__(self):
        if self.done() and (self.has_target() or self.memoize):
            return self.result()
        try:
            results = self.make_components()
            self.log(Events.START)
            result = self.make(results)
            if self.has_target():
                if Path(result).resolve() != self.target.resolve():
                    raise ValueError(f"Recipe result path differs from its target: {result} != {self.target}.")
                result = self.target
            self.saved_result = result
            if not self.done():
                self.saved_result = None
                raise ValueError("Recipe make() didn't complete successfully.")
            self.log(Events.SUCCESS)
            return result

        except Exception as e:
            self.log(Events.FAIL, e)
            if Recipe.DEBUG:
                traceback.print_exc()
            if isinstance(e, BuildError):
                raise
            raise BuildError(self, str(e)) from e

    @classmethod
    def flat(cls, recipes: Iterable["Recipe"]) -> Generator["Recipe", None, None]:
        visited: set[Recipe] = set()

        def walk(items):
            for recipe in items:
                if recipe not in visited:
                    visited.add(recipe)
                    yield recipe
                    yield from walk(recipe.components)

        yield from walk(recipes)


# --------------------------------------------------------------------
class Lambda(Recipe):
    """A recipe whose make() calls `f` with component recipes replaced by their results."""

    def __init__(self, f: Callable, args: list[Any], kwargs: dict[str, Any], **options):
        self.f = f
        self.args = args
        self.kwargs = kwargs
        components = [a for a in [*args, *kwargs.values()] if isinstance(a, Recipe)]
        bound = inspect.signature(f).bind(*args, **kwargs)
        target = options.pop("target", None) or bound.arguments.get("target")
        statics = [
            a
            for a in [*args, *kwargs.values()]
            if isinstance(a, Path) and (target is None or a != Path(target))
        ]
        super().__init__(components, static_files=statics, target=target, **options)

    def make(self, results: list[Any]) -> Any:
        resolve = lambda v: v.result() if isinstance(v, Recipe) else v
        return self.f(
            *[resolve(a) for a in self.args],
            **{k: resolve(v) for k, v in self.kwargs.items()},
        )


# --------------------------------------------------------------------
def recipe(
    name_or_f: Optional[str | Callable] = None,
    *,
    memoize=True,
    target: Callable[..., PathSpec] | None = None,
):
    """
    Decorator turning a function into a recipe template.  Calling the
    decorated function returns a recipe; recipe arguments become
    components whose results are passed when it is made.

    The file target is the function's `target` parameter, or what the
    optional `target` callable returns for the same arguments.
    """

    name = None if callable(name_or_f) else name_or_f

    def wrapper(f):
        def make_recipe(*args, **kwargs) -> Recipe:
            options: dict[str, Any] = {"name": name or f.__name__, "memoize": memoize}
            if target is not None:
                options["target"] = target(*args, **kwargs)
            return Lambda(f, [*args], {**kwargs}, **options)

        make_recipe.__doc__ = f.__doc__
        make_recipe.__name__ = f.__name__
        return make_recipe

    if callable(name_or_f):
        return cast(Callable[..., Recipe], wrapper(name_or_f))
    return cast(Callable[[Callable], Callable[..., Recipe]], wrapper)

