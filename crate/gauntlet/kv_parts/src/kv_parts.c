#include <stdio.h>
#include <string.h>

#define MAX_PARTS 4

static int split(char *data, size_t n, char **parts)
{
    int count = 0;
    size_t begin = 0;
    for (size_t i = 0; i <= n; i++) {
        if (i == n || data[i] == '\0') {
            if (count < MAX_PARTS)
                parts[count] = data + begin;
            count++;
            begin = i + 1;
        }
    }
    return count;
}

static int authorize(const char *user, const char *role)
{
    if (strcmp(user, "user") != 0)
        return 0;
    if (strcmp(role, "admin") == 0)
        return 2;
    return 1;
}

int main(void)
{
    char data[128];
    size_t n = fread(data, 1, sizeof(data) - 1, stdin);
    data[n] = '\0';
    char *parts[MAX_PARTS];
    int count = split(data, n, parts);
    if (count != 3)
        return 1;
    int level = authorize(parts[0], parts[2]);
    static const char *const names[] = {"denied", "guest", "admin"};
    puts(names[level]);
    return 0;
}
