"""Plugin hooks for vecal experiments.

Drop a Python file into the ``plugins`` directory next to the *vecal*
package (or point ``VECAL_PLUGIN_PATH`` at another directory) that defines a
subclass of :class:`BasePlugin`. The first subclass found in each file is
instantiated and receives the hooks below while the runner works.

Example::

    from vecal.plugin import BasePlugin

    class PrintFits(BasePlugin):
        def after_fit(self, report, **kwargs):
            print(report.kind.value, report.r2_adj_test)

Every hook also receives ``**kwargs`` so that new context can be passed
without breaking existing plugins.
"""

from __future__ import annotations

import importlib.util
import logging
import os
import sys
from pathlib import Path
from typing import List, Sequence, Type

from .logger import log_event

__all__ = [
    "BasePlugin",
    "PluginManager",
]


class BasePlugin:
    """Base class for vecal plugins; every hook is a no-op by default."""

    def after_process(self, series_count: int, report, **kwargs):
        """Called once raw runs have been turned into cleaned samples."""

    def after_fit(self, report, **kwargs):
        """Called with each :class:`~vecal.models.FitReport`."""

    def on_cell_evaluated(self, test: str, model_group: int, data_group: int, value: float, **kwargs):
        """Called for every cell of a cross-application matrix."""

    def after_crossval(self, matrices, **kwargs):
        """Called with the dict of test name -> EvalMatrix."""

    def on_event(self, name: str, **payload):
        """Receive a generic event not covered by the hooks above."""


class PluginManager:
    """Loads plugins and dispatches hooks to them."""

    _ENV_PATH = "VECAL_PLUGIN_PATH"

    def __init__(self, search_paths: Sequence[os.PathLike[str] | str] | None = None):
        default_path = Path(__file__).resolve().parent.parent / "plugins"
        env_path = os.getenv(self._ENV_PATH)
        paths: List[Path] = []

        if search_paths is not None:
            paths.extend(Path(p) for p in search_paths)
        else:
            paths.append(default_path)
            if env_path:
                paths.append(Path(env_path))

        self._paths: List[Path] = []
        seen: set[str] = set()
        for p in paths:
            p = p.expanduser().resolve()
            if p.is_dir() and str(p) not in seen:
                self._paths.append(p)
                seen.add(str(p))

        self._plugins: List[BasePlugin] = []
        self._discover_plugins()

    @property
    def plugins(self) -> List[BasePlugin]:
        return list(self._plugins)

    def register(self, plugin: BasePlugin) -> None:
        self._plugins.append(plugin)

    def dispatch(self, hook: str, *args, **kwargs):
        """Invoke *hook* on every plugin that implements it; plugin errors are logged and ignored."""
        for plugin in self._plugins:
            cb = getattr(plugin, hook, None)
            if callable(cb):
                try:
                    cb(*args, **kwargs)
                except Exception as e:
                    log_event("plugin_error", logging.WARNING, plugin=type(plugin).__name__,
                              hook=hook, error=str(e))

    def _discover_plugins(self):
        for base in self._paths:
            for path in sorted(base.glob("*.py")):
                plugin_cls = self._load_plugin_from_file(path)
                if plugin_cls is None:
                    continue
                try:
                    self.register(plugin_cls())
                except Exception as e:
                    log_event("plugin_error", logging.WARNING, plugin=plugin_cls.__name__,
                              hook="__init__", error=str(e))

    def _load_plugin_from_file(self, file_path: Path) -> Type[BasePlugin] | None:
        module_name = f"vecal_plugin_{file_path.stem}"
        spec = importlib.util.spec_from_file_location(module_name, file_path)
        if not (spec and spec.loader):
            return None
        module = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = module
        try:
            spec.loader.exec_module(module)  # type: ignore[arg-type]
        except Exception as e:
            log_event("plugin_error", logging.WARNING, plugin=file_path.name, hook="import", error=str(e))
            return None

        candidates = [
            obj
            for obj in module.__dict__.values()
            if isinstance(obj, type) and issubclass(obj, BasePlugin) and obj is not BasePlugin
        ]
        return candidates[0] if candidates else None
