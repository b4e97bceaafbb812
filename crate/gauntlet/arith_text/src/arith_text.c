#include <stdio.h>
#include <stdlib.h>

int main(void)
{
    char line[64];
    size_t n = fread(line, 1, sizeof(line) - 1, stdin);
    line[n] = 0;
    int value = atoi(line);
    if (value <= 0)
        return 1;
    int scaled = value * 3;
    if (scaled == 1371) {
        puts("exact");
    } else {
        puts("miss");
    }
    return 0;
}
