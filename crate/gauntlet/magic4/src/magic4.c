#include <stdio.h>
#include <string.h>

static int check(const unsigned char *buf, size_t n)
{
    if (n < 4)
        return 0;
    if (memcmp(buf, "FUZZ", 4) == 0) {
        return 1;
    }
    return 2;
}

int main(void)
{
    unsigned char buf[256];
    size_t n = fread(buf, 1, sizeof(buf) - 1, stdin);
    buf[n] = 0;
    int r = check(buf, n);
    if (r == 1)
        puts("magic");
    return 0;
}
