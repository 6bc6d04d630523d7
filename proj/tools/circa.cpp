#include <cstdio>

int main() {
  std::puts("circa: no subcommand given");
  return 2;
}
