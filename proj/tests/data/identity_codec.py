"""Identity external codec used by the test suite.

encode: stdin = concatenated serialized tensors; stdout = per frame
        [keyframe u8][length u32 LE][serialized tensor]
decode: the reverse.
"""
import struct
import sys

SIZES = {1: 1, 2: 2, 3: 4, 4: 8, 5: 4, 6: 8}


def tensors(buf):
    pos = 0
    while pos < len(buf):
        tag, rank = buf[pos], buf[pos + 1]
        dims = struct.unpack_from("<%dI" % rank, buf, pos + 2)
        n = SIZES[tag]
        for d in dims:
            n *= d
        end = pos + 2 + 4 * rank + n
        yield buf[pos:end]
        pos = end


def main():
    data = sys.stdin.buffer.read()
    out = sys.stdout.buffer
    if sys.argv[1] == "encode":
        for t in tensors(data):
            out.write(struct.pack("<BI", 1, len(t)) + t)
    else:
        pos = 0
        while pos < len(data):
            _, n = struct.unpack_from("<BI", data, pos)
            out.write(data[pos + 5:pos + 5 + n])
            pos += 5 + n


if __name__ == "__main__":
    main()
