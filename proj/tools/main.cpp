#include "cli.hpp"

int main(int argc, char** argv) { return sphereflow::cli::run_cli(argc, argv); }
