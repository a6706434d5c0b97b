#include "pastel/common/platform.hpp"

#include <benchmark/benchmark.h>

int main(int argc, char** argv) {
  pastel::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
