#include "milc/cli.hpp"

int main(int argc, char** argv) { return milc::run_cli(argc, argv); }
