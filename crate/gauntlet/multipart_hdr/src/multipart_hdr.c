#include <stdio.h>
#include <string.h>

#define MAX_FIELD 32

struct header {
    char key[MAX_FIELD];
    char value[MAX_FIELD];
};

static int split_line(const char *line, size_t len, struct header *h)
{
    const char *eq = memchr(line, '=', len);
    if (eq == NULL)
        return -1;
    size_t klen = eq - line;
    size_t vlen = len - klen - 1;
    klen = klen < MAX_FIELD ? klen : MAX_FIELD - 1;
    vlen = vlen < MAX_FIELD ? vlen : MAX_FIELD - 1;
    memcpy(h->key, line, klen);
    h->key[klen] = '\0';
    memcpy(h->value, eq + 1, vlen);
    h->value[vlen] = '\0';
    return 0;
}

int main(void)
{
    char buf[256];
    size_t n = fread(buf, 1, sizeof(buf) - 1, stdin);
    buf[n] = '\0';
    size_t start = 0;
    int debug = 0;
    while (start < n) {
        char *nl = memchr(buf + start, '\n', n - start);
        size_t len = nl ? (size_t)(nl - (buf + start)) : n - start;
        struct header h;
        if (split_line(buf + start, len, &h) == 0) {
            if (strcmp(h.key, "mode") == 0) {
                if (strcmp(h.value, "debug") == 0)
                    debug = 1;
            }
        }
        start += len + 1;
    }
    puts(debug ? "debug mode" : "normal mode");
    return 0;
}
