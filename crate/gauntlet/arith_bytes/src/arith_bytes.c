#include <stdint.h>
#include <stdio.h>

static uint32_t le32(const unsigned char *p)
{
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) |
           ((uint32_t)p[3] << 24);
}

int main(void)
{
    unsigned char buf[32];
    size_t n = fread(buf, 1, sizeof(buf), stdin);
    if (n < 8)
        return 1;
    uint32_t key = le32(buf);
    uint32_t len = le32(buf + 4);
    if (len > 1000)
        return 2;
    if ((key ^ 0x1234ABCDu) == 0xDEADBEEFu) {
        puts("unlocked");
    }
    return 0;
}
