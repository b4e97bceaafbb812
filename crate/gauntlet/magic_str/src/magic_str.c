#include <stdio.h>
#include <string.h>

int main(void)
{
    char buf[128];
    size_t n = fread(buf, 1, sizeof(buf) - 1, stdin);
    buf[n] = '\0';

    size_t i = 0;
    while (i < n && buf[i] != ' ')
        i++;
    while (i < n && buf[i] == ' ')
        i++;
    const char *word = buf + i;
    size_t len = 0;
    while (i + len < n && buf[i + len] != ' ' && buf[i + len] != '\n')
        len++;

    if (len == 8 && memcmp(word, "deadbeef", 8) == 0) {
        puts("found");
        return 0;
    }
    return 1;
}
