#include <stdio.h>

static int hex_value(int c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

static long read_unit(const unsigned char *p, size_t avail)
{
    if (avail < 6 || p[0] != '\\' || p[1] != 'u')
        return -1;
    long v = 0;
    for (int i = 2; i < 6; i++) {
        int d = hex_value(p[i]);
        if (d < 0)
            return -1;
        v = v * 16 + d;
    }
    return v;
}

int main(void)
{
    unsigned char buf[64];
    size_t n = fread(buf, 1, sizeof(buf), stdin);
    long hi = read_unit(buf, n);
    if (hi < 0)
        return 1;
    long cp = hi;
    if (hi >= 0xD800 && hi <= 0xDBFF) {
        long lo = read_unit(buf + 6, n - 6);
        if (lo < 0xDC00 || lo > 0xDFFF)
            return 1;
        cp = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
        if (hi == 0xD83D) {
            if (lo == 0xDE00)
                puts("grinning face");
        }
    }
    printf("U+%04lX\n", cp);
    return 0;
}
