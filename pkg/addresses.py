# addresses.py
# Anonymous route-preserving return addresses: padding, hash cascade, MAC,
# the optional per-subtree encryption layer, and the local receiver inference.

import hashlib
import logging
from dataclasses import dataclass
from fractions import Fraction

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from embedding import EmbeddingConfig, random_bits
from errors import AddressStateError, DomainError, UnsupportedOperationError

log = logging.getLogger(__name__)

SUBTREE_KEY_BYTES = 16
MAC_KEY_BYTES = 32

# candidate_receiver_set markers
NON_NEIGHBOR = "non-neighbor"
DESCENDANT = "descendant"


def _nbytes(bits):
    return (bits + 7) // 8


def _mask(bits):
    return (1 << bits) - 1


def h(value, bits):
    """SHA-256 of the big-endian encoding of a b-bit value, truncated to b bits."""
    digest = hashlib.sha256(value.to_bytes(_nbytes(bits), "big")).digest()
    return int.from_bytes(digest, "big") & _mask(bits)


def prng(seed, counter, bits):
    """Counter-mode PRNG: the counter-th b-bit output of the generator keyed by seed."""
    width = max(_nbytes(bits), (seed.bit_length() + 7) // 8)
    data = seed.to_bytes(width, "big") + counter.to_bytes(8, "big")
    return int.from_bytes(hashlib.sha256(data).digest(), "big") & _mask(bits)


@dataclass(frozen=True)
class ReturnAddress:
    digest_vector: tuple
    routing_seed: int
    mac_tag: int
    tree_index: int

    @property
    def vector(self):
        return self.digest_vector


@dataclass(frozen=True)
class PppAddress:
    encrypted_vector: tuple
    routing_seed: int
    mac_tag: int
    tree_index: int

    @property
    def vector(self):
        return self.encrypted_vector


@dataclass(frozen=True)
class AddressKeys:
    """
    Key material of one node in one tree. subtree_keys = (k_1, ..., k_{l-1}) received
    from the ancestors at levels 1..l-1; own_key = k_l, generated when the node has
    children.
    """
    mac_key: bytes
    level: int = 0
    subtree_keys: tuple = ()
    own_key: bytes = None

    def decryption_keys(self):
        return self.subtree_keys + ((self.own_key,) if self.own_key is not None else ())


class SubtreeCipher:
    """
    Length-preserving cipher on b-bit hash values: the value is XORed with the AES-CTR
    keystream of the subtree key. Encryption and decryption are the same map.
    """

    def __init__(self, bits):
        self.bits = bits

    def _apply(self, key, value):
        enc = Cipher(algorithms.AES(key), modes.CTR(b"\x00" * 16)).encryptor()
        n = _nbytes(self.bits)
        stream = enc.update(b"\x00" * n) + enc.finalize()
        return (value ^ int.from_bytes(stream, "big")) & _mask(self.bits)

    def encrypt(self, key, value):
        return self._apply(key, value)

    def decrypt(self, key, value):
        return self._apply(key, value)


def make_mac_keys(n, rng):
    return [rng.bytes(MAC_KEY_BYTES) for _ in range(n)]


def hash_cascade(x_padded, k_tilde, bits):
    """d_1 = h(k ^ a_1), d_j = h(d_{j-1} ^ a_j)."""
    out = []
    d = k_tilde
    for a in x_padded:
        d = h(d ^ a, bits)
        out.append(d)
    return tuple(out)


def cascade_cpl(vector, c, k_tilde, bits):
    """
    Common prefix length of `vector` and hash_cascade(c, k_tilde), hashing c only up to
    the first element that disagrees.
    """
    d = k_tilde
    m = 0
    for a, target in zip(c, vector):
        d = h(d ^ a, bits)
        if d != target:
            break
        m += 1
    return m


def pad(x, s_pad, length, bits):
    """x extended to `length` elements with a'_j = PRNG(s_pad, j) (1-based j)."""
    return tuple(x) + tuple(prng(s_pad, j, bits) for j in range(len(x) + 1, length + 1))


def compute_mac(mac_key, vector, bits):
    n = _nbytes(bits)
    data = mac_key + b"".join(d.to_bytes(n, "big") for d in vector)
    return int.from_bytes(hashlib.sha256(data).digest(), "big") & _mask(bits)


def generate_rp(x, keys, children_next_elements, s, s_pad, cfg=EmbeddingConfig(), tree_index=0):
    """
    Pads x to L elements, hashes it into a cascade keyed by k~ = PRNG(s) and adds a MAC.
    The padding seed is redrawn while the first padding element equals the next element
    of one of the issuer's children.
    """
    bits, length = cfg.bits_per_element, cfg.max_length
    if len(x) > length:
        raise DomainError(f"coordinate length {len(x)} exceeds L={length}")
    if len(children_next_elements) >= 1 << bits:
        raise DomainError("children use every element value, padding cannot differ")
    seed, attempt = s_pad, 0
    while len(x) < length and prng(seed, len(x) + 1, bits) in children_next_elements:
        attempt += 1
        seed = s_pad | (attempt << bits)
        log.debug("padding collides with a child's element, redraw %d", attempt)
    padded = pad(x, seed, length, bits)
    k_tilde = prng(s, 0, bits)
    y = hash_cascade(padded, k_tilde, bits)
    return ReturnAddress(y, k_tilde, compute_mac(keys.mac_key, y, bits), tree_index)


def issue_address(node, tree, coords, ts, keys, rng, cfg=EmbeddingConfig()):
    """Fresh return address of `node` in `tree` with seeds drawn from rng."""
    x = coords[tree][node]
    t = ts.trees[tree]
    children = {coords[tree][c][len(x)] for c in t.children[node] if coords[tree][c] is not None}
    s = random_bits(rng, cfg.bits_per_element)
    s_pad = random_bits(rng, cfg.bits_per_element)
    return generate_rp(x, keys, children, s, s_pad, cfg, tree)


def diversity_rp(addr, c, metric, cfg=EmbeddingConfig()):
    """Distance of coordinate c to the address under TD or CPL, through the cascade."""
    length = len(addr.digest_vector)
    m = cascade_cpl(addr.digest_vector, c, addr.routing_seed, cfg.bits_per_element)
    if metric == "TD":
        return length + len(c) - 2 * m
    if metric == "CPL":
        if m == length and len(c) == length:
            return Fraction(0)
        return Fraction(cfg.cpl_constant - m) - Fraction(1, length + len(c) + 1)
    raise DomainError(f"unknown metric {metric!r}")


def verify_mac(addr, keys, cfg=EmbeddingConfig()):
    """The tag width is the configured element width, never read off the tag itself."""
    bits = cfg.bits_per_element
    if addr.mac_tag >> bits or any(d >> bits for d in addr.vector):
        return False
    return compute_mac(keys.mac_key, addr.vector, bits) == addr.mac_tag


def distribute_subtree_keys(ts, tree, mac_keys, rng):
    """
    Every internal non-root node at level l generates k_l and hands it to its
    descendants. Returns AddressKeys per node (None outside the tree).
    """
    t = ts.trees[tree]
    out = [None] * ts.node_count
    out[t.root] = AddressKeys(mac_keys[t.root], 0, (), None)
    for v in t.subtree(t.root)[1:]:
        parent = out[t.parent[v]]
        inherited = parent.subtree_keys + ((parent.own_key,) if parent.own_key else ())
        own = rng.bytes(SUBTREE_KEY_BYTES) if t.children[v] else None
        out[v] = AddressKeys(mac_keys[v], int(t.level[v]), inherited, own)
    return out


def add_ppp_layer(addr, issuer_keys, cipher):
    """Encrypts element j (2 <= j <= l) with k_{j-1}; the rest passes through."""
    level = issuer_keys.level
    if len(issuer_keys.subtree_keys) < max(level - 1, 0):
        raise AddressStateError(
            f"issuer at level {level} holds {len(issuer_keys.subtree_keys)} subtree keys")
    y = list(addr.digest_vector)
    for j in range(2, level + 1):
        y[j - 1] = cipher.encrypt(issuer_keys.subtree_keys[j - 2], y[j - 1])
    y = tuple(y)
    return PppAddress(y, addr.routing_seed,
                      compute_mac(issuer_keys.mac_key, y, cipher.bits), addr.tree_index)


def ppp_partial_decrypt(addr, evaluator_keys, cipher):
    """
    f(y'): element 1 copied, elements 2..l_u+1 decrypted with k_1..k_{l_u} as far as the
    evaluator holds them, later elements passed through.
    """
    keys = evaluator_keys.decryption_keys()
    z = list(addr.encrypted_vector)
    for j in range(2, min(len(keys) + 1, len(z)) + 1):
        z[j - 1] = cipher.decrypt(keys[j - 2], z[j - 1])
    return tuple(z)


def diversity_ppp(addr, c, evaluator_keys, cfg, cipher, metric="CPL"):
    if metric != "CPL":
        raise UnsupportedOperationError("the encryption layer only supports the CPL distance")
    z = ppp_partial_decrypt(addr, evaluator_keys, cipher)
    m = cascade_cpl(z, c, addr.routing_seed, cfg.bits_per_element)
    return Fraction(cfg.cpl_constant - m) - Fraction(1, len(z) + len(c) + 1)


def ppp_cpl(addr, c, evaluator_keys, cfg, cipher):
    """The common prefix length implied by diversity_ppp."""
    z = ppp_partial_decrypt(addr, evaluator_keys, cipher)
    return cascade_cpl(z, c, addr.routing_seed, cfg.bits_per_element)


@dataclass(frozen=True)
class LocalView:
    """What a local attacker knows: its neighbors' coordinates, one tuple per tree."""
    node: int
    neighbor_coords: dict


def candidate_receiver_set(addrs, view, metric="TD", cfg=EmbeddingConfig()):
    """
    Best local inference of the receiver of an address vector (one address per tree):
    either {NON_NEIGHBOR}, or a neighbor together with DESCENDANT, because any node
    below that neighbor in every tree looks the same from here.
    """
    closest = None
    for i, addr in enumerate(addrs):
        scores = {v: diversity_rp(addr, xs[i], metric, cfg) for v, xs in view.neighbor_coords.items()}
        best = min(scores.values())
        winners = {v for v, d in scores.items() if d == best}
        closest = winners if closest is None else closest & winners
    if not closest:
        return frozenset({NON_NEIGHBOR})

    plausible = {
        v for v in closest
        if all(cascade_cpl(addr.digest_vector, view.neighbor_coords[v][i], addr.routing_seed,
                           cfg.bits_per_element) == len(view.neighbor_coords[v][i])
               for i, addr in enumerate(addrs))
    }
    if not plausible:
        return frozenset({NON_NEIGHBOR})
    return frozenset(plausible | {DESCENDANT})


def to_bytes(addr, cfg=EmbeddingConfig()):
    """L digests, then seed, then MAC; each b-bit value little-endian in ceil(b/8) bytes."""
    n = _nbytes(cfg.bits_per_element)
    values = list(addr.vector) + [addr.routing_seed, addr.mac_tag]
    return b"".join(v.to_bytes(n, "little") for v in values)


def from_bytes(data, cfg=EmbeddingConfig(), tree_index=0):
    n = _nbytes(cfg.bits_per_element)
    if len(data) != n * (cfg.max_length + 2):
        raise DomainError(f"expected {n * (cfg.max_length + 2)} bytes, got {len(data)}")
    values = [int.from_bytes(data[k:k + n], "little") for k in range(0, len(data), n)]
    return ReturnAddress(tuple(values[:-2]), values[-2], values[-1], tree_index)
