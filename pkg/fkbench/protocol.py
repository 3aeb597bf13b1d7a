"""
FKB binary dataset codec.

Files are little-endian flattened feature records with integer labels,
suitable for exporting image datasets such as blood-cell crops.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import FormatError
from .types import Dataset


class FkbCodec:
    """
    FKB encoder/decoder.

    File Structure:
        [4 bytes: magic b"FKB1"]
        [4 bytes: n, number of records (uint32)]
        [4 bytes: d, features per record (uint32)]
        [4 bytes: C, number of classes (uint32)]
        [n*d*4 bytes: features (float32, row-major)]
        [n*2 bytes: labels (uint16)]

    All integers and floats are little-endian.
    """

    MAGIC = b"FKB1"
    HEADER = struct.Struct("<4sIII")
    FEATURE_DTYPE = np.dtype("<f4")
    LABEL_DTYPE = np.dtype("<u2")

    def encode(self, dataset: Dataset) -> bytes:
        """
        Encode a dataset to FKB bytes.

        Features are narrowed to float32.
        """
        n, d = dataset.features.shape
        header = self.HEADER.pack(self.MAGIC, n, d, dataset.num_classes)
        features = np.ascontiguousarray(dataset.features, dtype=self.FEATURE_DTYPE)
        labels = np.ascontiguousarray(dataset.labels, dtype=self.LABEL_DTYPE)
        return header + features.tobytes() + labels.tobytes()

    def decode(self, data: bytes, name: str = "dataset") -> Dataset:
        """
        Decode FKB bytes to a Dataset with float64 features.

        Raises:
            FormatError: On bad magic, truncation, trailing bytes, or a label
                outside [0, C). The message carries the failing byte offset.
        """
        if len(data) < self.HEADER.size:
            raise FormatError(
                f"truncated header: {len(data)} of {self.HEADER.size} bytes", offset=len(data)
            )
        magic, n, d, num_classes = self.HEADER.unpack_from(data, 0)
        if magic != self.MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {self.MAGIC!r}", offset=0)
        if d == 0:
            raise FormatError("feature dimension must be positive", offset=8)
        if num_classes == 0:
            raise FormatError("class count must be positive", offset=12)

        offset = self.HEADER.size
        feature_bytes = n * d * self.FEATURE_DTYPE.itemsize
        label_bytes = n * self.LABEL_DTYPE.itemsize
        expected = offset + feature_bytes + label_bytes
        if len(data) < expected:
            raise FormatError(
                f"truncated body: expected {expected} bytes for {n} records of {d} features, "
                f"got {len(data)}",
                offset=len(data),
            )
        if len(data) > expected:
            raise FormatError(f"{len(data) - expected} trailing bytes after labels", offset=expected)

        features = np.frombuffer(data, dtype=self.FEATURE_DTYPE, count=n * d, offset=offset)
        label_offset = offset + feature_bytes
        labels = np.frombuffer(data, dtype=self.LABEL_DTYPE, count=n, offset=label_offset)

        bad = np.flatnonzero(labels >= num_classes)
        if bad.size:
            record = int(bad[0])
            raise FormatError(
                f"record {record}: label {int(labels[record])} out of range [0, {num_classes})",
                offset=label_offset + record * self.LABEL_DTYPE.itemsize,
            )
        if not np.all(np.isfinite(features)):
            first = int(np.flatnonzero(~np.isfinite(features))[0])
            raise FormatError(
                f"record {first // d}: non-finite feature",
                offset=offset + first * self.FEATURE_DTYPE.itemsize,
            )

        return Dataset(
            features=features.astype(np.float64).reshape(n, d),
            labels=labels.astype(np.int64),
            num_classes=int(num_classes),
            name=name,
        )

    def write(self, dataset: Dataset, path: Union[str, Path]) -> Path:
        """Encode and write a dataset file; returns the path written."""
        file = Path(path)
        file.parent.mkdir(parents=True, exist_ok=True)
        file.write_bytes(self.encode(dataset))
        return file

    def read(self, path: Union[str, Path]) -> Dataset:
        file = Path(path)
        return self.decode(file.read_bytes(), name=file.stem)


# Singleton instance for convenience
codec = FkbCodec()
