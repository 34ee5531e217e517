// covwish: Bayesian covariance-trajectory models for matrix-valued time
// series. Placeholder driver; subcommands are wired in as the library lands.
#include <cstdio>

int main() {
  std::puts("covwish: CLI under construction");
  return 0;
}
