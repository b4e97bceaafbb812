#include <stdio.h>
#include <string.h>

int main(void)
{
    char buf[16] = {0};
    size_t n = fread(buf, 1, sizeof(buf) - 1, stdin);
    if (n < 8)
        return 1;
    if (memcmp(buf, "ALFA", 4) == 0)
        puts("alfa");
    if (memcmp(buf, "BRVO", 4) == 0)
        puts("bravo");
    if (memcmp(buf, "CHRL", 4) == 0)
        puts("charlie");
    if (memcmp(buf + 4, "DLTA", 4) == 0)
        puts("delta");
    return 0;
}
