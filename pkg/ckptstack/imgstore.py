"""Durable, redundant checkpoint-image storage."""
from __future__ import annotations

import contextlib
import logging
import os
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from struct import Struct
from typing import NamedTuple

from .const import (
    DEFAULT_KEEP,
    DEFAULT_REDUNDANCY,
    IMAGE_MAGIC,
    IMAGE_SUFFIX,
    IMAGE_VERSION,
    STAGED_SUFFIX,
    TEMP_SUFFIX,
)
from .exceptions import AllCopiesCorrupt, NoImage, NonMonotonicGeneration, StorageFailure

_LOGGER = logging.getLogger(__name__)

# "CKPT" | version[2B] | job_id[8B] | generation[4B] | virtual_time[8B] | payload_len[4B]
IMAGE_HEADER = Struct("!4sHQIQI")
_CRC = Struct("!I")
_FINAL_RE = re.compile(r"^gen(\d+)\.copy(\d+)\.ckpt$")


class StoredImage(NamedTuple):
    """A committed image as returned by reads."""

    generation: int
    virtual_time: int
    payload: bytes


@dataclass(frozen=True)
class ImageRef:
    """Location of a committed generation."""

    job_id: int
    generation: int
    paths: tuple[Path, ...]


@dataclass(frozen=True)
class CopyVerdict:
    """Verification result of one image copy."""

    copy: int
    path: Path
    ok: bool
    reason: str = ""


def encode_image(job_id: int, generation: int, virtual_time: int, payload: bytes) -> bytes:
    """Frame a payload as an image file with a trailing CRC-32."""
    body = IMAGE_HEADER.pack(
        IMAGE_MAGIC, IMAGE_VERSION, job_id, generation, virtual_time, len(payload)
    ) + bytes(payload)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_image(data: bytes) -> tuple[int, int, int, bytes]:
    """Check an image and return (job_id, generation, virtual_time, payload)."""
    if len(data) < IMAGE_HEADER.size + _CRC.size:
        raise ValueError("image truncated")
    body, (crc,) = data[: -_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ValueError("crc mismatch")
    magic, version, job_id, generation, virtual_time, length = IMAGE_HEADER.unpack_from(body)
    if magic != IMAGE_MAGIC:
        raise ValueError("bad magic")
    if version != IMAGE_VERSION:
        raise ValueError(f"unsupported image version {version}")
    if len(body) != IMAGE_HEADER.size + length:
        raise ValueError("payload length mismatch")
    return job_id, generation, virtual_time, bytes(body[IMAGE_HEADER.size:])


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


class ImageStore:
    """Checkpoint images on one filesystem, ``redundancy`` copies per generation.

    Layout: ``<root>/<job_id>/gen<generation>.copy<k>.ckpt``. Images written by
    a protocol round are first staged (``.staged`` suffix) and only renamed to
    their final names when the coordinator commits the round.
    """

    def __init__(
        self,
        root: str | os.PathLike[str],
        redundancy: int = DEFAULT_REDUNDANCY,
        keep: int = DEFAULT_KEEP,
    ) -> None:
        """Initialize."""
        if redundancy < 1:
            raise ValueError(f"redundancy must be >= 1, got {redundancy}")
        if keep < 1:
            raise ValueError(f"keep must be >= 1, got {keep}")
        self.root = Path(root)
        self.redundancy = redundancy
        self.keep = keep

    # -- paths ---------------------------------------------------------------

    def job_dir(self, job_id: int) -> Path:
        """Return the directory holding a job's images."""
        return self.root / str(job_id)

    def image_path(self, job_id: int, generation: int, copy: int) -> Path:
        """Return the final name of one copy."""
        return self.job_dir(job_id) / f"gen{generation}.copy{copy}{IMAGE_SUFFIX}"

    def _staged_path(self, job_id: int, generation: int, copy: int) -> Path:
        return self.image_path(job_id, generation, copy).with_name(
            f"gen{generation}.copy{copy}{IMAGE_SUFFIX}{STAGED_SUFFIX}"
        )

    # -- catalogue -----------------------------------------------------------

    def generations(self, job_id: int) -> list[int]:
        """Return the generations with at least one final-named copy, ascending."""
        directory = self.job_dir(job_id)
        if not directory.is_dir():
            return []
        found = set()
        for entry in directory.iterdir():
            match = _FINAL_RE.match(entry.name)
            if match:
                found.add(int(match.group(1)))
        return sorted(found)

    def latest(self, job_id: int) -> int:
        """Return the newest committed generation, 0 when none exists."""
        gens = self.generations(job_id)
        return gens[-1] if gens else 0

    # -- writing -------------------------------------------------------------

    def _write_atomic(self, data: bytes, target: Path) -> None:
        tmp = target.with_name(f".{target.name}{TEMP_SUFFIX}")
        with open(tmp, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, target)

    def _clean_temporaries(self, directory: Path) -> None:
        for entry in directory.glob(f".*{TEMP_SUFFIX}"):
            _LOGGER.debug("Removing stray temporary %s", entry)
            entry.unlink(missing_ok=True)

    def _write_copies(self, job_id, generation, virtual_time, payload, path_for) -> list[Path]:
        directory = self.job_dir(job_id)
        data = encode_image(job_id, generation, virtual_time, payload)
        paths = []
        try:
            directory.mkdir(parents=True, exist_ok=True)
            self._clean_temporaries(directory)
            for copy in range(self.redundancy):
                path = path_for(job_id, generation, copy)
                self._write_atomic(data, path)
                paths.append(path)
            _fsync_dir(directory)
        except OSError as exc:
            raise StorageFailure(
                f"cannot write generation {generation} of job {job_id}: {exc}"
            ) from exc
        return paths

    def write_image(
        self, job_id: int, generation: int, virtual_time: int, payload: bytes
    ) -> ImageRef:
        """Write every copy of the next generation directly under its final name."""
        expected = self.latest(job_id) + 1
        if generation != expected:
            raise NonMonotonicGeneration(
                f"job {job_id}: generation {generation} written, expected {expected}"
            )
        paths = self._write_copies(job_id, generation, virtual_time, payload, self.image_path)
        _LOGGER.debug("Wrote generation %d of job %d (%d copies)", generation, job_id, len(paths))
        return ImageRef(job_id, generation, tuple(paths))

    def stage_image(
        self, job_id: int, generation: int, virtual_time: int, payload: bytes
    ) -> None:
        """Write every copy of a generation that is not yet committed."""
        latest = self.latest(job_id)
        if generation <= latest:
            raise NonMonotonicGeneration(
                f"job {job_id}: staging generation {generation} but {latest} is committed"
            )
        self._write_copies(job_id, generation, virtual_time, payload, self._staged_path)
        _LOGGER.debug("Staged generation %d of job %d", generation, job_id)

    def commit_staged(self, job_id: int, generation: int) -> ImageRef:
        """Publish a staged generation under its final names."""
        latest = self.latest(job_id)
        if generation <= latest:
            raise NonMonotonicGeneration(
                f"job {job_id}: committing generation {generation} but {latest} is committed"
            )
        directory = self.job_dir(job_id)
        paths = []
        try:
            for copy in range(self.redundancy):
                staged = self._staged_path(job_id, generation, copy)
                final = self.image_path(job_id, generation, copy)
                os.replace(staged, final)
                paths.append(final)
            _fsync_dir(directory)
        except OSError as exc:
            for copy, final in enumerate(paths):
                with contextlib.suppress(OSError):
                    os.replace(final, self._staged_path(job_id, generation, copy))
            raise StorageFailure(
                f"cannot commit generation {generation} of job {job_id}: {exc}"
            ) from exc
        _LOGGER.debug("Committed generation %d of job %d", generation, job_id)
        return ImageRef(job_id, generation, tuple(paths))

    def discard_staged(self, job_id: int, generation: int) -> None:
        """Drop the staged copies of an aborted generation."""
        for copy in range(self.redundancy):
            self._staged_path(job_id, generation, copy).unlink(missing_ok=True)

    def withdraw(self, job_id: int, generation: int) -> None:
        """Remove the published copies of a generation whose round was rolled back."""
        for copy in range(self.redundancy):
            self.image_path(job_id, generation, copy).unlink(missing_ok=True)
        _LOGGER.warning("Withdrew generation %d of job %d", generation, job_id)

    # -- reading -------------------------------------------------------------

    def _read_copy(self, job_id: int, generation: int, copy: int) -> StoredImage:
        path = self.image_path(job_id, generation, copy)
        data = path.read_bytes()
        found_job, found_gen, virtual_time, payload = decode_image(data)
        if found_job != job_id or found_gen != generation:
            raise ValueError(f"header names job {found_job} gen {found_gen}")
        return StoredImage(generation, virtual_time, payload)

    def read_generation(self, job_id: int, generation: int) -> StoredImage:
        """Return one generation from the first copy that verifies."""
        if generation not in self.generations(job_id):
            raise NoImage(f"job {job_id} has no generation {generation}")
        for copy in range(self.redundancy):
            try:
                return self._read_copy(job_id, generation, copy)
            except (OSError, ValueError) as exc:
                _LOGGER.warning(
                    "Copy %d of generation %d (job %d) unusable: %s", copy, generation, job_id, exc
                )
        raise AllCopiesCorrupt(f"every copy of generation {generation} of job {job_id} is corrupt")

    def read_latest(self, job_id: int) -> StoredImage:
        """Return the newest generation that verifies on at least one copy."""
        gens = self.generations(job_id)
        if not gens:
            raise NoImage(f"job {job_id} has no committed image")
        for generation in reversed(gens):
            try:
                return self.read_generation(job_id, generation)
            except AllCopiesCorrupt:
                continue
        raise AllCopiesCorrupt(f"no generation of job {job_id} verifies")

    def verify(self, job_id: int, generation: int) -> list[CopyVerdict]:
        """Recompute the CRC of every copy of a generation."""
        if generation not in self.generations(job_id):
            raise NoImage(f"job {job_id} has no generation {generation}")
        verdicts = []
        for copy in range(self.redundancy):
            path = self.image_path(job_id, generation, copy)
            try:
                self._read_copy(job_id, generation, copy)
            except FileNotFoundError:
                verdicts.append(CopyVerdict(copy, path, False, "missing"))
            except (OSError, ValueError) as exc:
                verdicts.append(CopyVerdict(copy, path, False, str(exc)))
            else:
                verdicts.append(CopyVerdict(copy, path, True))
        return verdicts

    # -- pruning -------------------------------------------------------------

    def prune(self, job_id: int) -> list[int]:
        """Remove all but the newest ``keep`` generations."""
        gens = self.generations(job_id)
        removed = gens[: max(0, len(gens) - self.keep)]
        for generation in removed:
            for copy in range(self.redundancy):
                self.image_path(job_id, generation, copy).unlink(missing_ok=True)
        if removed:
            _LOGGER.debug("Pruned generations %s of job %d", removed, job_id)
        return removed
