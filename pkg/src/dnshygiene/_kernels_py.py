"""Pure-Python versions of the hot kernels.

``_kernels.pyx`` mirrors these functions one-for-one; ``_accel`` picks the
compiled module when it is importable.
"""

from __future__ import annotations

from .errors import BadLabel, PointerLoop, Truncated

MAX_NAME_LENGTH = 253
MAX_LABEL_LENGTH = 63


def decode_name(data: bytes, offset: int) -> tuple[list[str], int, bool]:
    """Decode a wire-format name starting at ``offset``.

    Returns ``(labels, end, compressed)`` where ``end`` is the offset just
    past the name in the original stream. A compression pointer must land before
    the start of the label run containing it, which rules out cycles.
    """
    n = len(data)
    pos = offset
    chunk = offset
    end = -1
    compressed = False
    labels: list[str] = []
    presentation = 0
    while True:
        if pos >= n:
            raise Truncated(f"name runs past end of message at offset {pos}")
        length = data[pos]
        if length == 0:
            if end < 0:
                end = pos + 1
            break
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= n:
                raise Truncated("compression pointer cut short")
            target = ((length & 0x3F) << 8) | data[pos + 1]
            # each jump must land before the start of the run it was read
            # from, so every chain strictly descends and cannot cycle
            if target >= chunk:
                raise PointerLoop(f"pointer at {pos} targets {target}")
            if end < 0:
                end = pos + 2
            compressed = True
            pos = chunk = target
            continue
        if kind:
            raise BadLabel(f"unsupported label type 0x{kind:02x} at offset {pos}")
        start = pos + 1
        stop = start + length
        if stop > n:
            raise Truncated(f"label at {pos} runs past end of message")
        raw = data[start:stop]
        for byte in raw:
            if byte < 0x21 or byte > 0x7E or byte == 0x2E:
                raise BadLabel(f"illegal byte 0x{byte:02x} in label at offset {pos}")
        presentation += length + (1 if labels else 0)
        if presentation > MAX_NAME_LENGTH:
            raise BadLabel("name longer than 253 bytes")
        labels.append(raw.decode("ascii").lower())
        pos = stop
    return labels, end, compressed


def longest_match(root: dict, labels) -> tuple[int, object]:
    """Walk a reversed-label trie and return the deepest applicable payload.

    Trie nodes are dicts keyed by label; a node's payload sits under the key
    ``""`` as ``(entry, verdict_class, exact_only)``. Exact-only payloads
    apply only when the whole name is consumed.
    """
    node = root
    n = len(labels)
    best = None
    best_depth = 0
    for i in range(n - 1, -1, -1):
        node = node.get(labels[i])
        if node is None:
            break
        payload = node.get("")
        if payload is not None and (not payload[2] or i == 0):
            best = payload
            best_depth = n - i
    return best_depth, best
