#include "app.hpp"

#include "pastel/common/platform.hpp"

#include <iostream>

int main(int argc, char** argv) {
  pastel::tune_allocator();
  return pastel::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
