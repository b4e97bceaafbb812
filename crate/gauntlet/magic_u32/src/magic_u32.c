#include <stdint.h>
#include <stdio.h>

int main(void)
{
    unsigned char buf[64];
    size_t n = fread(buf, 1, sizeof(buf), stdin);
    if (n < 4)
        return 1;
    uint32_t v = buf[0] | (buf[1] << 8) | (buf[2] << 16) | ((uint32_t)buf[3] << 24);
    uint32_t tag = v;
    if (tag == 0xCAFEBABEu) {
        puts("class file");
        return 0;
    }
    return 2;
}
