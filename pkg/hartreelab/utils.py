"""Small helpers shared by the registry and the experiment layer."""
import importlib

from hartreelab.exceptions import throw


def get_attr(method_string: str):
    """Resolve a dotted path such as ``hartreelab.models.kerr1``."""
    if "." not in method_string:
        throw(f"{method_string!r} is not a dotted path")
    module_name, attr = method_string.rsplit(".", 1)
    module = importlib.import_module(module_name)
    try:
        return getattr(module, attr)
    except AttributeError:
        throw(f"{module_name} has no attribute {attr!r}")


def get_hooks(hook: str) -> dict:
    """Read a registry declared in ``hartreelab.hooks``."""
    from hartreelab import hooks

    value = getattr(hooks, hook, None)
    if value is None:
        throw(f"unknown hook {hook!r}")
    return value

