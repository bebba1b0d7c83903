#include <csignal>
#include <iostream>

#include "commands.hpp"

namespace {

extern "C" void on_sigint(int) { road::cli::request_interrupt(); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  return road::cli::run_cli(argc, argv, std::cout, std::cerr);
}
