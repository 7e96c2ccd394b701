#include <string>
#include <vector>

#include "srt/experiment.hpp"

int main(int argc, char** argv) {
  return srt::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
