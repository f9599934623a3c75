// Line-oriented mock guidance service on stdin/stdout: mock_guidance_service MODE

#include <iostream>

#include "mock_guidance.hpp"

int main(int argc, char** argv) {
  const auto mode = mock::parse_mode(argc > 1 ? argv[1] : "zero");
  if (!mode) {
    std::cerr << "unknown mode\n";
    return 1;
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    if (auto r = mock::reply(line, *mode)) std::cout << *r << '\n' << std::flush;
  }
  return 0;
}
