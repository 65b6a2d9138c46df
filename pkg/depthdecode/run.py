"""Run directories: one manifest, a log file and progress records per command."""
from datetime import datetime, timezone
import hashlib
import json
import logging
from pathlib import Path
import shutil
import time
from typing import Dict, List, Literal, Mapping, Optional, Sequence

from pydantic import BaseModel, ValidationError

from .__version__ import __version__
from .config import Config
from .const import PROGRESS_LOG, RUN_LOG, RUN_MANIFEST
from .errors import ConsistencyError, OutputExistsError, ResumeMismatchError
from .fileio import PathLike
from .fitting import ProgressLog

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

STATUS_RUNNING = "running"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"


class RunManifest(BaseModel):
    """Define the record a command leaves in its run directory."""

    command: str
    argv: List[str] = []
    config: Dict
    seeds: Dict[str, int]
    version: str = __version__
    inputs: Dict[str, str] = {}
    outputs: List[str] = []
    output_roots: List[str] = []
    started: str = ""
    wall_time: float = 0.0
    status: Literal["running", "complete", "failed"] = STATUS_RUNNING
    error: Optional[str] = None

    def parsed_config(self) -> Config:
        """Return the configuration snapshot as a Config."""
        return Config.model_validate(self.config)


def file_checksum(path: PathLike) -> str:
    """Return the sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def path_checksum(path: PathLike) -> str:
    """Return the sha256 of a file, or of every file under a directory.

    A directory digest covers the sorted relative paths and file digests.

    Raises:
        ConsistencyError: the path does not exist.
    """
    path = Path(path)
    if path.is_file():
        return file_checksum(path)
    if not path.is_dir():
        raise ConsistencyError("Missing input", [str(path)])
    digest = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(child.relative_to(path).as_posix().encode())
        digest.update(file_checksum(child).encode())
    return digest.hexdigest()


def input_checksums(inputs: Sequence[PathLike]) -> Dict[str, str]:
    """Return path -> checksum for every input."""
    return {str(Path(p)): path_checksum(p) for p in inputs}


def read_run_manifest(run_dir: PathLike) -> RunManifest:
    """Read the manifest of a run directory."""
    path = Path(run_dir) / RUN_MANIFEST
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as err:
        raise ConsistencyError(f"Cannot read run manifest {path}: {err}") from err


class RunDirectory:
    """Context manager owning one command's run directory.

    Entering writes a `running` manifest and attaches a `run.log` handler to
    the root logger; leaving records the outputs, wall time and status.
    With `resume`, a completed run whose inputs and configuration are
    unchanged is marked `skip`; changed inputs raise ResumeMismatchError.
    """

    def __init__(
        self,
        root: PathLike,
        command: str,
        config: Config,
        inputs: Sequence[PathLike] = (),
        argv: Sequence[str] = (),
        resume: bool = False,
        force: bool = False,
    ) -> None:
        self.root = Path(root)
        self.command = command
        self.config = config
        self.inputs = list(inputs)
        self.argv = list(argv)
        self.resume = resume
        self.force = force
        self.skip = False
        self.progress = None  # type: Optional[ProgressLog]
        self._outputs = []  # type: List[str]
        self._output_roots = []  # type: List[str]
        self._handler = None  # type: Optional[logging.Handler]
        self._start = 0.0
        self._manifest = None  # type: Optional[RunManifest]

    @property
    def manifest_path(self) -> Path:
        """Return the path of the run manifest."""
        return self.root / RUN_MANIFEST

    def path(self, name: str) -> Path:
        """Return `name` inside the run directory."""
        return self.root / name

    def output(self, path: PathLike) -> Path:
        """Register an artifact written by the command and return its path."""
        path = Path(path)
        self._outputs.append(str(path))
        return path

    def output_root(self, path: PathLike) -> Path:
        """Register a directory outside the run directory that the command fills."""
        path = self.output(path)
        self._output_roots.append(str(path))
        return path

    def _check_resume(self, checksums: Mapping[str, str]) -> None:
        previous = read_run_manifest(self.root)
        if previous.command != self.command:
            raise ResumeMismatchError(
                f"{self.root} holds a {previous.command} run, not {self.command}"
            )
        changed = sorted(
            path
            for path in set(previous.inputs) | set(checksums)
            if previous.inputs.get(path) != checksums.get(path)
        )
        if changed:
            raise ResumeMismatchError(f"Inputs changed since the run started: {', '.join(changed)}")
        if previous.parsed_config() != self.config:
            raise ResumeMismatchError(f"Configuration differs from the one recorded in {self.root}")
        if previous.status == STATUS_COMPLETE:
            _LOGGER.info("Run %s already complete, skipping", self.root)
            self.skip = True
            self._manifest = previous

    def __enter__(self) -> "RunDirectory":
        checksums = input_checksums(self.inputs)
        if self.manifest_path.exists():
            if self.resume:
                self._check_resume(checksums)
                if self.skip:
                    return self
            elif not self.force:
                raise OutputExistsError(
                    f"Run directory {self.root} already holds a run; pass --resume or --force"
                )
            else:
                _LOGGER.warning("Replacing run directory %s", self.root)
                shutil.rmtree(self.root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / PROGRESS_LOG).unlink(missing_ok=True)

        self._handler = logging.FileHandler(self.root / RUN_LOG, encoding="utf-8")
        self._handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(self._handler)
        self.progress = ProgressLog(self.root / PROGRESS_LOG)
        self._start = time.monotonic()
        self._manifest = RunManifest(
            command=self.command,
            argv=self.argv,
            config=self.config.model_dump(mode="json"),
            seeds=self.config.seeds,
            inputs=checksums,
            started=datetime.now(timezone.utc).isoformat(),
        )
        self._write()
        _LOGGER.info("Started %s in %s", self.command, self.root)
        return self

    def __exit__(self, exc_type, exc, traceback) -> None:
        if self.skip:
            return
        self._manifest.outputs = self._outputs
        self._manifest.output_roots = self._output_roots
        self._manifest.wall_time = round(time.monotonic() - self._start, 3)
        if exc is None:
            self._manifest.status = STATUS_COMPLETE
        else:
            self._manifest.status = STATUS_FAILED
            self._manifest.error = f"{type(exc).__name__}: {exc}"
        self._write()
        _LOGGER.info(
            "%s %s after %.1fs", self.command, self._manifest.status, self._manifest.wall_time
        )
        if self._handler is not None:
            logging.getLogger().removeHandler(self._handler)
            self._handler.close()
            self._handler = None

    @property
    def manifest(self) -> Optional[RunManifest]:
        """Return the manifest of the current (or skipped) run."""
        return self._manifest

    def _write(self) -> None:
        self.manifest_path.write_text(
            json.dumps(self._manifest.model_dump(mode="json"), indent=2) + "\n",
            encoding="utf-8",
        )
