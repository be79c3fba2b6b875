#include <cstdio>

int main() {
    std::puts("hycas: subcommands not wired up yet");
    return 2;
}
