#include "evgrid/cli.hpp"

int main(int argc, char** argv) { return evgrid::run_cli(argc, argv); }
