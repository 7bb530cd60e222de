#include "lbf/cli.hpp"

int main(int argc, char** argv) { return lbf::cli::run_cli(argc, argv); }
