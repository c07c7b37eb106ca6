import os
import pathlib

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    OUTPUT_DIR: str = os.environ.get('DLOVE_OUTPUT_DIR', 'runs')

    WORKERS: int = os.environ.get('DLOVE_WORKERS', 1)
    TORCH_THREADS: int = os.environ.get('DLOVE_TORCH_THREADS', 0)

    LOG_LEVEL: str = os.environ.get('DLOVE_LOG_LEVEL', 'INFO')
    PROGRESS: bool = os.environ.get('DLOVE_PROGRESS', True)

    class Config:
        env_prefix = 'DLOVE_'
        env_nested_delimiter = '__'
        env_file = f"{pathlib.Path(__file__).resolve().parent.parent.parent}/.env"
        extra = 'ignore'


Config = Settings()
