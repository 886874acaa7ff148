# ptyinr/container.py
"""Self-describing result directories: manifest.json plus one raw little-endian file per array."""
import contextlib
import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional

import numpy as np

from ptyinr.errors import ContainerError, OutputLockedError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"

# manifest dtype name -> on-disk little-endian dtype
_DTYPES = {
    "float64": np.dtype("<f8"),
    "float32": np.dtype("<f4"),
    "complex128": np.dtype("<c16"),
    "int64": np.dtype("<i8"),
}


@dataclass
class Container:
    arrays: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    roles: Dict[str, str] = field(default_factory=dict)

    def require(self, name: str) -> np.ndarray:
        if name not in self.arrays:
            raise ContainerError(f"container has no array named {name}")
        return self.arrays[name]


def _to_disk(name: str, value):
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        kind = "complex128"
    elif arr.dtype == np.float32:
        kind = "float32"
    elif np.issubdtype(arr.dtype, np.floating):
        kind = "float64"
    elif np.issubdtype(arr.dtype, np.integer):
        kind = "int64"
    else:
        raise ContainerError(f"array {name}: unsupported dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=_DTYPES[kind]), kind


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_tree(path: str, container: Container) -> None:
    os.makedirs(path, exist_ok=True)
    entries = {}
    for name in sorted(container.arrays):
        arr, kind = _to_disk(name, container.arrays[name])
        data = arr.tobytes(order="C")
        filename = f"{name}.bin"
        with open(os.path.join(path, filename), "wb") as f:
            f.write(data)
        entries[name] = {
            "file": filename,
            "shape": list(arr.shape),
            "dtype": kind,
            "byte_length": len(data),
            "sha256": _sha256(data),
            "role": container.roles.get(name, "data"),
        }
    manifest = {
        "format_version": FORMAT_VERSION,
        "arrays": entries,
        "metadata": container.metadata,
        "provenance": container.provenance,
    }
    with open(os.path.join(path, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _replace_dir(tmp: str, target: str) -> None:
    if os.path.isdir(target):
        shutil.rmtree(target)
    os.rename(tmp, target)


def save_container(dir_path: str, arrays: Dict[str, np.ndarray], metadata: Optional[dict] = None,
                   provenance: Optional[dict] = None, roles: Optional[Dict[str, str]] = None,
                   atomic: bool = True) -> str:
    """Write the container next to its final place, then rename it in.

    With `atomic=False` the files go straight into `dir_path`, for callers that already
    stage the whole output directory.
    """
    container = Container(dict(arrays), metadata or {}, provenance or {}, roles or {})
    dir_path = os.path.abspath(dir_path)
    if not atomic:
        _write_tree(dir_path, container)
        return dir_path
    tmp = f"{dir_path}.tmp-{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    try:
        _write_tree(tmp, container)
        _replace_dir(tmp, dir_path)
    except OSError as e:
        shutil.rmtree(tmp, ignore_errors=True)
        raise ContainerError(f"could not write container {dir_path}: {e}") from e
    except ContainerError:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    logger.info(f"Saved container {dir_path} ({len(arrays)} arrays)")
    return dir_path


def load_container(dir_path: str) -> Container:
    """Read and fully validate a container; nothing outside `dir_path` is consulted."""
    manifest_path = os.path.join(dir_path, MANIFEST)
    if not os.path.isfile(manifest_path):
        raise ContainerError(f"no {MANIFEST} in {dir_path}")
    try:
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise ContainerError(f"unreadable manifest in {dir_path}: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ContainerError(f"format_version mismatch: {version} (expected {FORMAT_VERSION})")

    arrays, roles = {}, {}
    for name, entry in manifest.get("arrays", {}).items():
        kind = entry.get("dtype")
        if kind not in _DTYPES:
            raise ContainerError(f"array {name}: unknown dtype {kind}")
        dtype = _DTYPES[kind]
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if entry.get("byte_length") != expected:
            raise ContainerError(f"array {name}: byte length mismatch (manifest {entry.get('byte_length')}, shape needs {expected})")
        path = os.path.join(dir_path, entry["file"])
        if not os.path.isfile(path):
            raise ContainerError(f"array {name}: missing file {entry['file']}")
        with open(path, "rb") as f:
            data = f.read()
        if len(data) != expected:
            raise ContainerError(f"array {name}: byte length mismatch (file {len(data)}, expected {expected})")
        if _sha256(data) != entry.get("sha256"):
            raise ContainerError(f"array {name}: checksum mismatch")
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        roles[name] = entry.get("role", "data")
    logger.info(f"Loaded container {dir_path} ({len(arrays)} arrays)")
    return Container(arrays, manifest.get("metadata", {}), manifest.get("provenance", {}), roles)


# --- Output directories ---

@contextlib.contextmanager
def output_lock(dir_path: str) -> Iterator[str]:
    lock_path = f"{os.path.abspath(dir_path)}.lock"
    os.makedirs(os.path.dirname(lock_path), exist_ok=True)
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLockedError(f"output {dir_path} is locked by another run ({lock_path})")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lock_path
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock_path)


@contextlib.contextmanager
def staged_output(dir_path: str) -> Iterator[str]:
    """Yield a scratch directory that replaces `dir_path` only if the block succeeds."""
    dir_path = os.path.abspath(dir_path)
    with output_lock(dir_path):
        tmp = f"{dir_path}.tmp-{os.getpid()}-stage"
        if os.path.exists(tmp):
            shutil.rmtree(tmp)
        os.makedirs(tmp)
        try:
            yield tmp
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        _replace_dir(tmp, dir_path)
