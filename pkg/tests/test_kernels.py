import os
import random
import subprocess
import sys

import pytest

from dnshygiene import _accel, _kernels_py
from dnshygiene.errors import WireError

compiled = pytest.importorskip("dnshygiene._kernels", reason="compiled kernels not built")


def _outcome(fn, *args):
    try:
        return ("ok", fn(*args))
    except WireError as exc:
        return (type(exc).__name__,)


def _random_packet(rng: random.Random) -> bytes:
    # bias towards structure: label runs, pointers and terminators
    out = bytearray(rng.randbytes(12))
    for _ in range(rng.randint(0, 12)):
        r = rng.random()
        if r < 0.6:
            n = rng.choice([1, 3, 7, 63, 64, rng.randint(0, 70)])
            out.append(min(n, 255))
            out += bytes(rng.choice(b"abcxyz-09AZ.\x00\x7f") for _ in range(n))
        elif r < 0.8:
            target = rng.randint(0, max(len(out) + 4, 1))
            out += bytes([0xC0 | (target >> 8) & 0x3F, target & 0xFF])
        elif r < 0.9:
            out.append(rng.choice([0x40, 0x80]))
        else:
            out.append(0)
    return bytes(out)


def test_decode_name_parity():
    rng = random.Random(1234)
    for _ in range(20000):
        data = _random_packet(rng)
        assert _outcome(compiled.decode_name, data, 12) == _outcome(_kernels_py.decode_name, data, 12)


def test_longest_match_parity():
    rng = random.Random(99)
    root: dict = {}
    words = ["a", "b", "c", "ex", "com", "net"]
    for k in range(500):
        labels = [rng.choice(words) for _ in range(rng.randint(1, 4))]
        node = root
        for lab in reversed(labels):
            node = node.setdefault(lab, {})
        node[""] = (k, "x", rng.random() < 0.2)
    for _ in range(5000):
        name = [rng.choice(words) for _ in range(rng.randint(0, 6))]
        assert compiled.longest_match(root, name) == _kernels_py.longest_match(root, name)


def test_accel_selects_compiled():
    assert _accel.COMPILED is True


def test_env_forces_pure_python():
    code = "import dnshygiene._accel as a; print(a.COMPILED)"
    env = dict(os.environ, DNSHYGIENE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
