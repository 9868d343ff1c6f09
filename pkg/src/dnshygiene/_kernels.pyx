# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels; behaviour matches ``_kernels_py`` exactly."""

from .errors import BadLabel, PointerLoop, Truncated

cdef enum:
    MAX_NAME_LENGTH = 253


def decode_name(bytes data, Py_ssize_t offset):
    cdef const unsigned char[:] buf = data
    cdef Py_ssize_t n = len(data)
    cdef Py_ssize_t pos = offset
    cdef Py_ssize_t chunk = offset
    cdef Py_ssize_t end = -1
    cdef Py_ssize_t start, stop, target, k
    cdef unsigned char length, kind, byte
    cdef int presentation = 0
    cdef bint compressed = False
    cdef list labels = []
    while True:
        if pos >= n:
            raise Truncated(f"name runs past end of message at offset {pos}")
        length = buf[pos]
        if length == 0:
            if end < 0:
                end = pos + 1
            break
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= n:
                raise Truncated("compression pointer cut short")
            target = ((length & 0x3F) << 8) | buf[pos + 1]
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
        for k in range(start, stop):
            byte = buf[k]
            if byte < 0x21 or byte > 0x7E or byte == 0x2E:
                raise BadLabel(f"illegal byte 0x{byte:02x} in label at offset {pos}")
        if labels:
            presentation += length + 1
        else:
            presentation += length
        if presentation > MAX_NAME_LENGTH:
            raise BadLabel("name longer than 253 bytes")
        labels.append(data[start:stop].decode("ascii").lower())
        pos = stop
    return labels, end, compressed


def longest_match(dict root, labels):
    cdef dict node = root
    cdef object child, payload
    cdef object best = None
    cdef Py_ssize_t n = len(labels)
    cdef Py_ssize_t i
    cdef Py_ssize_t best_depth = 0
    for i in range(n - 1, -1, -1):
        child = node.get(labels[i])
        if child is None:
            break
        node = <dict>child
        payload = node.get("")
        if payload is not None and (not (<tuple>payload)[2] or i == 0):
            best = payload
            best_depth = n - i
    return best_depth, best
