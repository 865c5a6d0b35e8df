"""The NIST P-256 group (prime order, cofactor 1) backed by OpenSSL."""

from random import Random

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

from .encoding import DecodeError

CURVE = ec.SECP256R1()
ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
ELEMENT_SIZE = 33
# SEC1 encoding of the point at infinity.
IDENTITY_ENCODING = b"\x00"


class GroupElement:
    """A non-identity point, kept alongside its compressed SEC1 encoding."""

    __slots__ = ("_key", "_enc")

    def __init__(self, key: ec.EllipticCurvePublicKey):
        self._key = key
        self._enc = key.public_bytes(serialization.Encoding.X962,
                                     serialization.PublicFormat.CompressedPoint)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GroupElement":
        if len(data) != ELEMENT_SIZE:
            raise DecodeError("group element must be 33 bytes")
        try:
            return cls(ec.EllipticCurvePublicKey.from_encoded_point(CURVE, bytes(data)))
        except ValueError as exc:
            raise DecodeError("not a point on P-256") from exc

    def to_bytes(self) -> bytes:
        return self._enc

    def __eq__(self, other):
        return isinstance(other, GroupElement) and self._enc == other._enc

    def __hash__(self):
        return hash(self._enc)

    def __reduce__(self):
        return GroupElement.from_bytes, (self._enc,)

    def __repr__(self):
        return f"GroupElement({self._enc.hex()[:16]}...)"


def random_scalar(rng: Random) -> int:
    return rng.randrange(1, ORDER)


def _private(x: int) -> ec.EllipticCurvePrivateKey:
    if not 0 < x < ORDER:
        raise ValueError("scalar out of range")
    return ec.derive_private_key(x, CURVE)


def base_exp(x: int) -> GroupElement:
    """g^x."""
    return GroupElement(_private(x).public_key())


def dh(x: int, point: GroupElement) -> bytes:
    """Affine x-coordinate of ``point``^x (32 bytes)."""
    return _private(x).exchange(ec.ECDH(), point._key)


def generator() -> GroupElement:
    return base_exp(1)
