"""Binary container for radar data cubes.

Layout::

    b"RDC1"                 4-byte format tag
    uint32 little-endian    length H of the header text in bytes
    H bytes                 UTF-8 header, one ``key=value`` per line
    payload                 complex64 little-endian (float32 real, imag pairs),
                            index order frame, rx, chirp, sample

The header carries every :class:`RadarConfig` field plus ``n_frames``.
Writers emit the known keys in a fixed order followed by any unknown keys
in sorted order; floats use ``repr`` so they survive a round trip exactly.
Unknown keys are kept on read and written back, which lets newer writers
add fields without breaking older readers.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .radar import DataCube, RadarConfig

MAGIC = b"RDC1"
PAYLOAD_DTYPE = np.dtype("<c8")
_PREAMBLE = len(MAGIC) + 4
_CONFIG_KEYS = tuple(f.name for f in fields(RadarConfig))
_INT_KEYS = {"n_chirps", "n_adc_samples", "n_rx", "n_tx", "n_frames"}
_WRITE_BLOCK = 64  # frames per write when streaming a lazy cube


class CubeFileError(ValueError):
    """Malformed cube file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class CubeFile:
    cube: DataCube
    extra: Mapping[str, str] = field(default_factory=dict)


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(int(v))


def encode_header(config: RadarConfig, n_frames: int, extra: Mapping[str, str] = {}) -> bytes:
    items = [(k, _format_value(getattr(config, k))) for k in _CONFIG_KEYS]
    items.append(("n_frames", str(int(n_frames))))
    for k in sorted(extra):
        if k in _CONFIG_KEYS or k == "n_frames":
            raise ValueError(f"extra header key {k!r} shadows a standard key")
        if "=" in k or "\n" in k or "\n" in str(extra[k]):
            raise ValueError(f"header entry {k!r} is not representable")
        items.append((k, str(extra[k])))
    return "".join(f"{k}={v}\n" for k, v in items).encode("utf-8")


def _parse_header(text_bytes: bytes, base: int) -> tuple[RadarConfig, int, dict]:
    try:
        text = text_bytes.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CubeFileError("header is not valid UTF-8", base + e.start) from None
    values: dict[str, str] = {}
    where: dict[str, int] = {}
    pos = base
    for line in text.splitlines(keepends=True):
        body = line.rstrip("\n")
        key, sep, value = body.partition("=")
        if not sep or not key:
            raise CubeFileError(f"malformed header line {body!r}", pos)
        if key in values:
            raise CubeFileError(f"duplicate header key {key!r}", pos)
        values[key] = value
        where[key] = pos
        pos += len(line.encode("utf-8"))
    missing = [k for k in _CONFIG_KEYS + ("n_frames",) if k not in values]
    if missing:
        raise CubeFileError(f"header lacks {', '.join(missing)}", base)
    kwargs = {}
    for k in _CONFIG_KEYS + ("n_frames",):
        try:
            kwargs[k] = int(values[k]) if k in _INT_KEYS else float(values[k])
        except ValueError:
            raise CubeFileError(f"bad value for {k}: {values[k]!r}", where[k]) from None
    n_frames = kwargs.pop("n_frames")
    if n_frames < 1:
        raise CubeFileError("n_frames must be >= 1", base)
    try:
        config = RadarConfig(**kwargs)
    except ValueError as e:
        raise CubeFileError(f"invalid radar configuration: {e}", base) from None
    extra = {k: v for k, v in values.items() if k not in _CONFIG_KEYS and k != "n_frames"}
    return config, n_frames, extra


def write_cube(path, cube: DataCube, extra: Mapping[str, str] = {}) -> int:
    """Write ``cube`` to ``path``; returns the number of bytes written."""
    header = encode_header(cube.config, cube.n_frames, extra)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for k0 in range(0, cube.n_frames, _WRITE_BLOCK):
            block = np.asarray(cube.frames[k0:k0 + _WRITE_BLOCK])
            fh.write(np.ascontiguousarray(block, dtype=PAYLOAD_DTYPE).tobytes())
        return fh.tell()


def write_cube_file(path, cf: CubeFile) -> int:
    return write_cube(path, cf.cube, cf.extra)


def read_cube(path, mmap: bool = True) -> CubeFile:
    """Read a cube file.

    With ``mmap`` the payload is a read-only memory map, so opening a large
    file costs no memory until frames are touched.

    Raises
    ------
    CubeFileError
        Bad tag, malformed header or a payload whose length does not match
        the header.  ``offset`` points at the first offending byte.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CubeFileError(f"bad format tag {magic!r}", 0)
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise CubeFileError("truncated header length", len(MAGIC) + len(raw_len))
        (hlen,) = struct.unpack("<I", raw_len)
        text = fh.read(hlen)
        if len(text) < hlen:
            raise CubeFileError(f"header truncated: expected {hlen} bytes", _PREAMBLE + len(text))
        config, n_frames, extra = _parse_header(text, _PREAMBLE)
        start = _PREAMBLE + hlen
        shape = (n_frames, config.n_rx, config.n_chirps, config.n_adc_samples)
        need = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
        have = size - start
        if have < need:
            raise CubeFileError(f"payload truncated: expected {need} bytes, found {have}", size)
        if have > need:
            raise CubeFileError(f"{have - need} trailing bytes after payload", start + need)
        if mmap:
            frames = np.memmap(path, dtype=PAYLOAD_DTYPE, mode="r", offset=start, shape=shape)
        else:
            frames = np.frombuffer(fh.read(need), dtype=PAYLOAD_DTYPE).reshape(shape)
    return CubeFile(DataCube(config, frames), extra)
