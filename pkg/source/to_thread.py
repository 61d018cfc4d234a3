import asyncio
import os
import functools
import typing
from typing import Callable, List, TypeVar

from rich.progress import Progress

T = TypeVar('T')
R = TypeVar('R')


def to_thread(func: typing.Callable) -> typing.Callable[..., typing.Coroutine]:
    """Turns a blocking function into a coroutine running in the default thread pool."""
    @functools.wraps(func)
    async def wrapper(*args, **kwargs):
        return await asyncio.to_thread(func, *args, **kwargs)
    return wrapper


async def _gather(func: Callable[[T], R], items: List[T], workers: int, progress: Progress | None, task_id) -> List[R]:
    semaphore = asyncio.Semaphore(max(1, workers))
    blocking = to_thread(func)

    async def run_one(item: T) -> R:
        async with semaphore:
            result = await blocking(item)
        if progress is not None:
            progress.advance(task_id)
        return result

    return list(await asyncio.gather(*(run_one(item) for item in items)))


def gather_in_threads(func: Callable[[T], R], items: List[T], workers: int = 4, description: str = '',
                      show_progress: bool | None = None) -> List[R]:
    """Maps a blocking function over items on at most `workers` threads; results keep input order.

    Exceptions propagate from the first failing item.
    """
    if show_progress is None:
        show_progress = bool(description) and _progress_enabled()
    if workers <= 1:
        return [func(item) for item in items]
    if not show_progress:
        return asyncio.run(_gather(func, items, workers, None, None))
    with Progress(transient=True) as progress:
        task_id = progress.add_task(description, total=len(items))
        return asyncio.run(_gather(func, items, workers, progress, task_id))


def _progress_enabled() -> bool:
    return os.getenv('TASE_PROGRESS', '1') != '0'
