#include <stdint.h>
#include <stdio.h>
#include <string.h>

#define GATE_HASH 0xc52a2fbdu

int main(void)
{
    char line[128];
    size_t n = fread(line, 1, sizeof(line) - 1, stdin);
    line[n] = '\0';
    if (strncmp(line, "say ", 4) != 0)
        return 1;
    const char *token = line + 4;
    size_t len = strcspn(token, "\n");
    uint32_t h = 5381;
    for (size_t i = 0; i < len; i++)
        h = (h * 33) ^ (unsigned char)token[i];
    if (h == GATE_HASH)
        puts("door opens");
    else
        puts("nothing happens");
    return 0;
}
