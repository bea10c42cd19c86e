#!/usr/bin/env python3
"""Independent serializer/parser for the pqc2 golden wire vectors.

Uses only hashlib and struct. Regenerates:
  testdata/merkle_roots.txt
  testdata/envelopes/canonical_minimal.hex
  testdata/envelopes/seed_zero_command.hex
  testdata/certs/seed_zero_ground_station.hex
and, with --check, parses the committed hex files field by field.
"""
import hashlib
import os
import struct
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
TESTDATA = os.path.dirname(HERE)


def sha(b):
    return hashlib.sha256(b).digest()


class MerkleLamport:
    def __init__(self, seed, depth):
        self.seed = seed
        self.depth = depth
        self.leaves = [self.leaf(i) for i in range(1 << depth)]
        self.levels = [self.leaves]
        cur = self.leaves
        while len(cur) > 1:
            cur = [sha(cur[k] + cur[k + 1]) for k in range(0, len(cur), 2)]
            self.levels.append(cur)
        self.root = cur[0]
        self.next = 0

    def secret(self, i, j, b):
        return sha(self.seed + b"ots" + struct.pack(">IHB", i, j, b))

    def pub(self, i, j, b):
        return sha(self.secret(i, j, b))

    def leaf(self, i):
        return sha(b"".join(self.pub(i, j, b) for j in range(256) for b in (0, 1)))

    def sign(self, msg):
        i = self.next
        self.next += 1
        d = sha(msg)
        bits = [(d[j >> 3] >> (7 - (j & 7))) & 1 for j in range(256)]
        reveal = b"".join(self.secret(i, j, bits[j]) for j in range(256))
        comp = b"".join(self.pub(i, j, 1 - bits[j]) for j in range(256))
        path = []
        idx = i
        for lvl in range(self.depth):
            path.append(self.levels[lvl][idx ^ 1])
            idx >>= 1
        return i, reveal + comp + struct.pack(">I", i) + b"".join(path)


def merkle_root(leaves):
    cur = list(leaves)
    while len(cur) > 1:
        cur = [sha(cur[k] + cur[k + 1]) for k in range(0, len(cur), 2)]
    return cur[0]


def canonical(version, sender, topic, seq, ts, scheme, payload):
    s = sender.encode()
    t = topic.encode()
    return (b"pqc2-envelope-v1" + bytes([version])
            + struct.pack(">H", len(s)) + s
            + struct.pack(">H", len(t)) + t
            + struct.pack(">QQH", seq, ts, scheme)
            + struct.pack(">I", len(payload)) + payload)


ROLES = ["ground_station", "monitor", "agent", "relay", "broker", "attacker", "other"]


def cert_tbs(subject, role, scheme, pk, nb, na, serial, issuer):
    s = subject.encode()
    iss = issuer.encode()
    return (b"PQCT" + bytes([1])
            + struct.pack(">H", len(s)) + s
            + bytes([ROLES.index(role)])
            + struct.pack(">H", scheme)
            + struct.pack(">I", len(pk)) + pk
            + struct.pack(">QQQ", nb, na, serial)
            + struct.pack(">H", len(iss)) + iss)


GOLDEN_ENVELOPE = dict(sender="ground_station", topic="/command", seq=1,
                       ts=1700000000000, payload=b'{"v":0.5,"omega":0.1}')
GOLDEN_CERT = dict(subject="ground_station", role="ground_station", nb=1700000000,
                   na=1700000000 + 365 * 86400, serial=1, issuer="groundCA")


def build():
    out = {}
    zero = bytes(32)
    ones = bytes([1]) * 32
    roots = []
    for depth in (0, 1, 2, 3, 10):
        roots.append("seed=00 depth=%d root=%s" % (depth, MerkleLamport(zero, depth).root.hex()))
    fixed = [sha(bytes([k])) for k in range(4)]
    roots.append("leaves=sha256(00..03) root=%s" % merkle_root(fixed).hex())
    out["merkle_roots.txt"] = "\n".join(roots) + "\n"

    out["envelopes/canonical_minimal.hex"] = canonical(1, "a", "/t", 0, 0, 1, b"").hex() + "\n"

    key = MerkleLamport(zero, 10)
    e = GOLDEN_ENVELOPE
    cb = canonical(1, e["sender"], e["topic"], e["seq"], e["ts"], 1, e["payload"])
    idx, sig = key.sign(cb)
    wire = b"PQC2" + cb + struct.pack(">I", len(sig)) + sig + struct.pack(">H", idx)
    out["envelopes/seed_zero_command.hex"] = wire.hex() + "\n"

    ca = MerkleLamport(zero, 10)
    ca_tbs = cert_tbs("groundCA", "other", 1, ca.root, GOLDEN_CERT["nb"], GOLDEN_CERT["na"], 0, "groundCA")
    ca.sign(b"pqc2-cert-v1" + ca_tbs)  # self-signature consumes leaf 0
    subject = MerkleLamport(ones, 10)
    c = GOLDEN_CERT
    tbs = cert_tbs(c["subject"], c["role"], 1, subject.root, c["nb"], c["na"], c["serial"], c["issuer"])
    _, csig = ca.sign(b"pqc2-cert-v1" + tbs)
    out["certs/seed_zero_ground_station.hex"] = (tbs + struct.pack(">HI", 1, len(csig)) + csig).hex() + "\n"
    return out


class Reader:
    def __init__(self, b):
        self.b = b
        self.p = 0

    def take(self, n):
        assert self.p + n <= len(self.b), "truncated"
        v = self.b[self.p:self.p + n]
        self.p += n
        return v

    def u(self, fmt):
        n = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(n))[0]


def verify_sig(root, msg, sig, depth):
    assert len(sig) == 8192 + 8192 + 4 + 32 * depth
    d = sha(msg)
    bits = [(d[j >> 3] >> (7 - (j & 7))) & 1 for j in range(256)]
    pubs = []
    for j in range(256):
        revealed = sha(sig[32 * j:32 * j + 32])
        other = sig[8192 + 32 * j:8192 + 32 * j + 32]
        pubs += [revealed, other] if bits[j] == 0 else [other, revealed]
    node = sha(b"".join(pubs))
    idx = struct.unpack(">I", sig[16384:16388])[0]
    i = idx
    for lvl in range(depth):
        sib = sig[16388 + 32 * lvl:16388 + 32 * lvl + 32]
        node = sha(node + sib) if i & 1 == 0 else sha(sib + node)
        i >>= 1
    return node == root, idx


def check():
    zero = bytes(32)
    ones = bytes([1]) * 32
    env = bytes.fromhex(open(os.path.join(TESTDATA, "envelopes/seed_zero_command.hex")).read().strip())
    r = Reader(env)
    assert r.take(4) == b"PQC2"
    start = r.p
    assert r.take(16) == b"pqc2-envelope-v1"
    assert r.u(">B") == 1
    sender = r.take(r.u(">H")).decode()
    topic = r.take(r.u(">H")).decode()
    seq, ts, scheme = r.u(">Q"), r.u(">Q"), r.u(">H")
    payload = r.take(r.u(">I"))
    cb = env[start:r.p]
    sig = r.take(r.u(">I"))
    ots = r.u(">H")
    assert r.p == len(env)
    e = GOLDEN_ENVELOPE
    assert (sender, topic, seq, ts, scheme, payload) == (e["sender"], e["topic"], e["seq"], e["ts"], 1, e["payload"])
    ok, idx = verify_sig(MerkleLamport(zero, 10).root, cb, sig, 10)
    assert ok and idx == ots == 0
    print("envelope: fields and signature verified")

    cert = bytes.fromhex(open(os.path.join(TESTDATA, "certs/seed_zero_ground_station.hex")).read().strip())
    r = Reader(cert)
    assert r.take(4) == b"PQCT" and r.u(">B") == 1
    subject = r.take(r.u(">H")).decode()
    role = ROLES[r.u(">B")]
    scheme = r.u(">H")
    pk = r.take(r.u(">I"))
    nb, na, serial = r.u(">Q"), r.u(">Q"), r.u(">Q")
    issuer = r.take(r.u(">H")).decode()
    tbs = cert[:r.p]
    sig_scheme = r.u(">H")
    sig = r.take(r.u(">I"))
    assert r.p == len(cert)
    c = GOLDEN_CERT
    assert (subject, role, scheme, nb, na, serial, issuer, sig_scheme) == (
        c["subject"], c["role"], 1, c["nb"], c["na"], c["serial"], c["issuer"], 1)
    assert pk == MerkleLamport(ones, 10).root
    ok, idx = verify_sig(MerkleLamport(zero, 10).root, b"pqc2-cert-v1" + tbs, sig, 10)
    assert ok and idx == 1
    print("certificate: fields and CA signature verified")


if __name__ == "__main__":
    if "--check" in sys.argv:
        check()
    else:
        for name, text in build().items():
            path = os.path.join(TESTDATA, name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w") as f:
                f.write(text)
            print("wrote", name)
