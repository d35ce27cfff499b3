import functools
import inspect
from typing import Callable


def dynamic_default(arg_name: str, default_func: Callable, /):
    """Fill `arg_name` from `default_func()` at call time when it is omitted or None."""

    def decorator(func):
        orig_signature = inspect.signature(func)
        if arg_name not in orig_signature.parameters:
            raise TypeError(f"{func.__qualname__} has no argument {arg_name!r}")

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            bound_args = orig_signature.bind_partial(*args, **kwargs)
            bound_args.apply_defaults()

            if (
                arg_name not in bound_args.arguments
                or bound_args.arguments[arg_name] is None
            ):
                bound_args.arguments[arg_name] = default_func()

            return func(*bound_args.args, **bound_args.kwargs)

        wrapper.__signature__ = orig_signature
        return wrapper

    return decorator
