import sys
import logging
from typing import Callable, Dict, List, Optional, Type

import click
import torch
from pydantic import ValidationError

from dlove.config import Config
from dlove.commands import experiment_commands, stage_commands
from dlove.utils.exceptions import DloveException
from dlove.utils.models import ErrorResponse

logger = logging.getLogger('dlove')

cli = click.CommandCollection(sources=[experiment_commands, stage_commands],
                              help="Watermark overwriting attacks on toy encoder/decoder pipelines.")

exception_handlers: Dict[Type[BaseException], Callable[[BaseException], int]] = {}


def exception_handler(exc_class: Type[BaseException]):
    def register(handler: Callable[[BaseException], int]):
        exception_handlers[exc_class] = handler
        return handler

    return register


def render_error(reason: str) -> None:
    click.echo(ErrorResponse(reason=reason).model_dump_json(), err=True)


@exception_handler(DloveException)
def dlove_exception_handler(exc: DloveException) -> int:
    render_error(reason=exc.detail)
    return exc.exit_code


@exception_handler(ValidationError)
def validation_exception_handler(exc: ValidationError) -> int:
    render_error(reason='; '.join(f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
                                  for error in exc.errors()))
    return 1


@exception_handler(click.ClickException)
def click_exception_handler(exc: click.ClickException) -> int:
    render_error(reason=exc.format_message())
    return 1


def configure() -> None:
    logging.basicConfig(level=Config.LOG_LEVEL.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if Config.TORCH_THREADS > 0:
        torch.set_num_threads(Config.TORCH_THREADS)


def main(args: Optional[List[str]] = None) -> int:
    configure()
    try:
        cli.main(args=args, prog_name='dlove', standalone_mode=False)
    except click.Abort:
        render_error(reason="Aborted.")
        return 1
    except Exception as exc:
        for exc_class, handler in exception_handlers.items():
            if isinstance(exc, exc_class):
                return handler(exc)
        logger.exception("Unexpected failure")
        render_error(reason=f"{type(exc).__name__}: {exc}")
        return 2

    return 0


if __name__ == "__main__":
    sys.exit(main())
