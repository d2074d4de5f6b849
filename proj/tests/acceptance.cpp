// Acceptance run: executes the shipped config suite and prints one line per criterion.
#include <iostream>
#include <string>

#include "kavg/acceptance.hpp"

int main(int argc, char** argv) {
  using namespace kavg::experiments;
  const std::string suite = argc > 2 ? argv[2] : KAVG_CONFIG_DIR;
  const std::string out = argc > 1 ? argv[1] : "acceptance-out";
  try {
    const auto report = verify(load_suite(suite), out, &std::cerr);
    print_criteria(std::cout, report.criteria);
    return report.passed() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cout << "FAIL  suite could not run: " << e.what() << "\n";
    return 2;
  }
}
