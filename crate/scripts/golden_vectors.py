#!/usr/bin/env python3
"""Reference derivations for RPI and CCI golden vectors.

Standalone from the Rust code: SHA-256 truncation via hashlib and an
HKDF-SHA256 written directly against RFC 5869 on top of hmac.

    python3 scripts/golden_vectors.py > crates/core/tests/data/golden_vectors.json
"""

import hashlib
import hmac
import json
import struct

CCI_INFO = b"CCIv1"


def rpi(tek: bytes, day: int, interval: int, rotation_minutes: int) -> bytes:
    per_day = 1440 // rotation_minutes
    absolute = day * per_day + interval
    return hashlib.sha256(tek + struct.pack("<I", absolute)).digest()[:16]


def hkdf_sha256(ikm: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    if not salt:
        salt = b"\x00" * 32
    prk = hmac.new(salt, ikm, hashlib.sha256).digest()
    okm, block, counter = b"", b"", 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


def cci(older: bytes, newer: bytes) -> bytes:
    return hkdf_sha256(older + newer, b"", CCI_INFO, 16)


def main() -> None:
    # RFC 5869 test case 3 (empty salt and info) guards the HKDF itself.
    ikm = bytes([0x0B] * 22)
    assert hkdf_sha256(ikm, b"", b"", 42).hex() == (
        "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d"
        "9d201395faa4b61a96c8"
    )

    vectors = []
    rpi_cases = [
        (bytes(16), 0, 0, 10),
        (bytes(16), 0, 1, 10),
        (bytes(16), 0, 143, 10),
        (bytes(range(16)), 18500, 77, 10),
        (bytes([0xFF] * 16), 1, 0, 10),
        (bytes(range(16)), 18500, 200, 5),
    ]
    for tek, day, interval, rotation in rpi_cases:
        vectors.append(
            {
                "tek_hex": tek.hex(),
                "day": day,
                "interval": interval,
                "rotation_minutes": rotation,
                "rpi_hex": rpi(tek, day, interval, rotation).hex(),
            }
        )

    r0 = rpi(bytes(16), 0, 0, 10)
    r1 = rpi(bytes(16), 0, 1, 10)
    cci_cases = [
        (bytes([0x01] * 16), bytes([0x02] * 16)),
        (bytes([0x02] * 16), bytes([0x01] * 16)),
        (bytes(16), bytes(16)),
        (r0, r1),
    ]
    for older, newer in cci_cases:
        vectors.append(
            {
                "rpi_older_hex": older.hex(),
                "rpi_newer_hex": newer.hex(),
                "cci_hex": cci(older, newer).hex(),
            }
        )
    print(json.dumps(vectors, indent=2))


if __name__ == "__main__":
    main()
