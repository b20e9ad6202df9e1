"""Classical XOR-homomorphic encryption of pad bits.

Two backends:

``mock``
    The bit is masked with HMAC-derived pads, one per fresh encryption that
    went into the ciphertext.  Perfectly correct, no security (the public key
    carries the secret material).  Decrypting under a different key yields a
    pseudorandom bit derived from the ciphertext, which mimics an attacker
    decrypting with the wrong secret.

``lwe_additive``
    Public-key Regev encryption over ``Z_q`` with the message in the high bit.
    Homomorphic XOR is ciphertext addition.  The default parameters are
    desk-scale and NOT secure.

Noise accounting: ``noise_level`` counts absorbed XORs.  For LWE the fresh
noise is a sum of ``m/2`` rounded Gaussians on average, so after ``k`` XORs the
noise standard deviation is ``sigma_fresh * sqrt(k + 1)``.  The budget is the
largest ``k`` with ``TAIL_SIGMAS * sigma_fresh * sqrt(k + 1) < q / 4``.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SERIAL_VERSION = 1
SCHEME_TAGS = {"mock": 1, "lwe_additive": 2}
TAIL_SIGMAS = 8.0
MOCK_BUDGET = 1 << 20


class FheError(ValueError):
    pass


class BudgetExceeded(FheError):
    pass


@dataclass(frozen=True)
class FheParams:
    scheme: str = "mock"
    lwe_dimension: int = 32
    noise_stddev: float = 1.0
    modulus: int = 2048
    samples: int = 64  # public-key rows for lwe_additive

    def __post_init__(self):
        if self.scheme not in SCHEME_TAGS:
            raise FheError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "lwe_additive":
            if self.modulus % 2 or self.modulus < 8:
                raise FheError("modulus must be an even integer >= 8")
            if self.lwe_dimension < 1 or self.samples < 1 or self.noise_stddev < 0:
                raise FheError("invalid LWE dimensions")

    @classmethod
    def mock(cls) -> "FheParams":
        return cls("mock")

    @classmethod
    def lwe(cls, dimension=32, modulus=2048, noise=1.0, samples=64) -> "FheParams":
        return cls("lwe_additive", dimension, noise, modulus, samples)

    @property
    def fresh_noise_std(self) -> float:
        return self.noise_stddev * math.sqrt(self.samples / 2)

    @property
    def xor_budget(self) -> int:
        """Maximum ``noise_level`` that still decrypts correctly."""
        if self.scheme == "mock":
            return MOCK_BUDGET
        if self.noise_stddev == 0:
            return MOCK_BUDGET
        ratio = (self.modulus / 4) / (TAIL_SIGMAS * self.fresh_noise_std)
        return int(math.floor(ratio**2 - 1e-9)) - 1


@dataclass(frozen=True)
class FheKeyPair:
    secret: bytes
    public: bytes
    params: FheParams

    @cached_property
    def key_id(self) -> bytes:
        return hashlib.sha256(self.public).digest()[:8]


_HEADER = struct.Struct("<BBIII")


@dataclass(frozen=True)
class CipherBit:
    """One encrypted bit.

    Wire layout (little endian): version u8, scheme tag u8, noise_level u32,
    budget u32, body length u32, then the body ``key_id[8] || payload``.
    LWE payloads are int64 words ``[q, c0_1 .. c0_n, c1]``.
    """

    scheme: str
    key_id: bytes
    payload: bytes
    noise_level: int = 0
    budget: int = MOCK_BUDGET

    def to_bytes(self) -> bytes:
        body = self.key_id + self.payload
        header = _HEADER.pack(
            SERIAL_VERSION, SCHEME_TAGS[self.scheme], self.noise_level, self.budget, len(body)
        )
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "CipherBit":
        if len(data) < _HEADER.size:
            raise FheError("truncated ciphertext header")
        version, tag, noise, budget, length = _HEADER.unpack_from(data)
        if version != SERIAL_VERSION:
            raise FheError(f"unsupported ciphertext version {version}")
        scheme = {v: k for k, v in SCHEME_TAGS.items()}.get(tag)
        if scheme is None:
            raise FheError(f"unknown scheme tag {tag}")
        body = data[_HEADER.size : _HEADER.size + length]
        if len(body) != length:
            raise FheError("truncated ciphertext")
        return cls(scheme, body[:8], body[8:], noise, budget)

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def fromhex(cls, text: str) -> "CipherBit":
        return cls.from_bytes(bytes.fromhex(text))


# --------------------------------------------------------------------------
# key generation


def keygen(params: FheParams, rng: np.random.Generator) -> FheKeyPair:
    if params.xor_budget <= 0:
        raise FheError("parameters leave no homomorphic XOR budget")
    if params.scheme == "mock":
        secret = rng.bytes(32)
        return FheKeyPair(secret, b"mock" + secret, params)
    n, m, q = params.lwe_dimension, params.samples, params.modulus
    s = rng.integers(0, q, size=n, dtype=np.int64)
    A = rng.integers(0, q, size=(m, n), dtype=np.int64)
    e = np.rint(rng.normal(0.0, params.noise_stddev, size=m)).astype(np.int64)
    b = (A @ s + e) % q
    public = np.concatenate([A.ravel(), b]).astype("<i8").tobytes()
    return FheKeyPair(s.astype("<i8").tobytes(), public, params)


def _lwe_public(kp_or_public: bytes, params: FheParams):
    arr = np.frombuffer(kp_or_public, dtype="<i8")
    m, n = params.samples, params.lwe_dimension
    return arr[: m * n].reshape(m, n), arr[m * n :]


def _mock_pad(secret: bytes, nonce: bytes) -> int:
    return hmac.new(secret, nonce, hashlib.sha256).digest()[0] & 1


# --------------------------------------------------------------------------
# encryption


def enc(bit: int, keys: FheKeyPair, rng: np.random.Generator) -> CipherBit:
    """Encrypt with the public part of ``keys``."""
    if bit not in (0, 1):
        raise FheError(f"plaintext must be a bit, got {bit!r}")
    params = keys.params
    if params.scheme == "mock":
        secret = keys.public[4:]
        nonce = rng.bytes(16)
        masked = bit ^ _mock_pad(secret, nonce)
        return CipherBit("mock", keys.key_id, bytes([masked]) + nonce, 0, params.xor_budget)
    A, b = _lwe_public(keys.public, params)
    q = params.modulus
    r = rng.integers(0, 2, size=params.samples, dtype=np.int64)
    c0 = (r @ A) % q
    c1 = (int(r @ b) + bit * (q // 2)) % q
    payload = np.concatenate([[q], c0, [c1]]).astype("<i8").tobytes()
    return CipherBit("lwe_additive", keys.key_id, payload, 0, params.xor_budget)


def dec(cipher: CipherBit, keys: FheKeyPair) -> int:
    """Decrypt with the secret part of ``keys``.

    A ciphertext made under another key pair decrypts to an arbitrary bit
    rather than raising.
    """
    params = keys.params
    if cipher.scheme != params.scheme:
        raise FheError(f"{cipher.scheme} ciphertext under a {params.scheme} key")
    if cipher.scheme == "mock":
        if cipher.key_id != keys.key_id:
            digest = hmac.new(keys.secret, cipher.payload, hashlib.sha256).digest()
            return digest[0] & 1
        bit = cipher.payload[0]
        body = cipher.payload[1:]
        for i in range(0, len(body), 16):
            bit ^= _mock_pad(keys.secret, body[i : i + 16])
        return bit
    q = params.modulus
    arr = np.frombuffer(cipher.payload, dtype="<i8")
    s = np.frombuffer(keys.secret, dtype="<i8")
    v = (int(arr[-1]) - int(arr[1:-1] @ s)) % q
    return int(q // 4 <= v < 3 * q // 4)


def hxor(x: CipherBit, y: CipherBit) -> CipherBit:
    """Homomorphic XOR.  ``noise_level`` becomes the sum plus one."""
    if x.scheme != y.scheme or x.key_id != y.key_id:
        raise FheError("cannot combine ciphertexts from different key pairs")
    level = x.noise_level + y.noise_level + 1
    budget = min(x.budget, y.budget)
    if level > budget:
        raise BudgetExceeded(f"noise level {level} exceeds the XOR budget {budget}")
    if x.scheme == "mock":
        masked = x.payload[0] ^ y.payload[0]
        payload = bytes([masked]) + x.payload[1:] + y.payload[1:]
        return CipherBit("mock", x.key_id, payload, level, budget)
    a = np.frombuffer(x.payload, dtype="<i8")
    b = np.frombuffer(y.payload, dtype="<i8")
    q = int(a[0])
    words = np.concatenate([[q], (a[1:] + b[1:]) % q]).astype("<i8")
    return CipherBit("lwe_additive", x.key_id, words.tobytes(), level, budget)


def hxor_const(x: CipherBit, c: int) -> CipherBit:
    """XOR with a public bit; adds no noise for either backend."""
    if c not in (0, 1):
        raise FheError(f"constant must be a bit, got {c!r}")
    if not c:
        return x
    if x.scheme == "mock":
        payload = bytes([x.payload[0] ^ 1]) + x.payload[1:]
        return CipherBit("mock", x.key_id, payload, x.noise_level, x.budget)
    arr = np.frombuffer(x.payload, dtype="<i8").copy()
    q = int(arr[0])
    arr[-1] = (arr[-1] + q // 2) % q
    return CipherBit("lwe_additive", x.key_id, arr.tobytes(), x.noise_level, x.budget)
