"""Binary weight-bank container.

Layout (all integers little-endian)::

    b"HWB1"                      magic
    u16 version                  currently 1
    u64 arch hash
    u32 z_dim
    u32 member count
    member count x (z_dim f64, P f64)
    u32 CRC-32 of every byte between the magic and the CRC

P is implied by the file length. Provenance (seed, gauge status, the
architecture itself) goes in a JSON sidecar next to the container.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .analysis import WeightBank
from .hypernet import HyperNetConfig, HyperNetParams, build
from .report import atomic_write
from .target import ArchDescriptor

MAGIC = b"HWB1"
VERSION = 1
_HEADER = struct.Struct("<HQII")


class BankError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def encode_bank(z: np.ndarray, theta: np.ndarray, arch_hash: int) -> bytes:
    z = np.asarray(z, dtype="<f8")
    theta = np.asarray(theta, dtype="<f8")
    count, z_dim = len(theta), z.shape[1]
    if z.shape[0] != count:
        raise BankError("z and theta disagree on the member count")
    body = _HEADER.pack(VERSION, arch_hash, z_dim, count) + np.concatenate([z, theta], axis=1).tobytes()
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def decode_bank(raw: bytes, expected_hash: int | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """(z, theta, arch hash); raises BankError on any structural problem."""
    if raw[:4] != MAGIC:
        raise BankError("bad magic: not a weight bank file")
    if len(raw) < 4 + _HEADER.size + 4:
        raise BankError("truncated header")
    body, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise BankError("CRC mismatch: the bank file is corrupted")
    version, arch_hash, z_dim, count = _HEADER.unpack(body[: _HEADER.size])
    if version != VERSION:
        raise BankError(f"unsupported bank format version {version}")
    if expected_hash is not None and arch_hash != expected_hash:
        raise BankError(f"architecture hash mismatch: file {arch_hash:016x}, expected {expected_hash:016x}")
    payload = len(body) - _HEADER.size
    if count == 0 or payload % (8 * count):
        raise BankError("member count inconsistent with file length")
    width = payload // (8 * count)
    if width < z_dim:
        raise BankError("member count inconsistent with file length")
    data = np.frombuffer(body, dtype="<f8", offset=_HEADER.size).reshape(count, width).astype(np.float64)
    return data[:, :z_dim].copy(), data[:, z_dim:].copy(), arch_hash


def arch_hash(arch: ArchDescriptor | None) -> int:
    return 0 if arch is None else arch.hash64()


def save_bank(path, bank: WeightBank) -> None:
    path = Path(path)
    atomic_write(path, encode_bank(bank.z, bank.theta, arch_hash(bank.arch)))
    meta = {
        "format_version": VERSION,
        "members": len(bank),
        "z_dim": bank.z_dim,
        "gauge_fixed": bank.gauge_fixed,
        "seed": bank.seed,
        "arch": None if bank.arch is None else bank.arch.to_dict(),
    }
    atomic_write(_sidecar(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_bank(path, arch: ArchDescriptor | None) -> WeightBank:
    """Read a bank written for ``arch`` (None for generators without a target network)."""
    path = Path(path)
    z, theta, _ = decode_bank(path.read_bytes(), arch_hash(arch))
    gauge, seed = False, None
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
        gauge, seed = bool(meta.get("gauge_fixed", False)), meta.get("seed")
    try:
        return WeightBank(z, theta, arch, gauge, seed)
    except ValueError as exc:
        raise BankError(str(exc)) from None


# -- generator checkpoints (a one-member bank with an empty z) ------------------


def params_hash(cfg: HyperNetConfig, arch: ArchDescriptor | None) -> int:
    blob = json.dumps({"hypernet": cfg.to_dict(), "arch": None if arch is None else arch.to_dict()}, sort_keys=True)
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "little")


def save_params(path, params: HyperNetParams, step: int | None = None) -> None:
    path = Path(path)
    vec = params.state_vector()[None]
    atomic_write(path, encode_bank(np.zeros((1, 0)), vec, params_hash(params.cfg, params.arch)))
    meta = {"format_version": VERSION, "kind": "generator", "step": step, "parameters": params.count,
            "hypernet": params.cfg.to_dict()}
    atomic_write(_sidecar(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_params(path, cfg: HyperNetConfig, arch: ArchDescriptor | None) -> HyperNetParams:
    _, theta, _ = decode_bank(Path(path).read_bytes(), params_hash(cfg, arch))
    template = build(cfg, arch, np.random.default_rng(0))
    try:
        return template.with_state_vector(theta[0])
    except ValueError as exc:
        raise BankError(str(exc)) from None
