from functools import wraps
from types import ModuleType
from typing import Any, Callable

from pydantic import BaseModel


class decorator(BaseModel):
    """Attaches itself to the wrapped function under `__dec_name__`."""

    __dec_name__: str = "__decorator__"

    def __call__(self, func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            return func(*args, **kwargs)

        setattr(wrapper, self.__dec_name__, self)

        return wrapper

    @classmethod
    def all(this_cls, namespace: type | ModuleType) -> list[Callable]:
        """Functions of `namespace` decorated with this decorator, in definition order."""
        found = []
        for attr in vars(namespace).values():
            meta = getattr(attr, this_cls.__dec_name__, None)
            if isinstance(meta, this_cls):
                found.append(attr)
        return found

    @classmethod
    def meta(this_cls, func: Callable) -> Any:
        return getattr(func, this_cls.__dec_name__)
