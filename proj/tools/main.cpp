#include "penet/cli.hpp"

int main(int argc, char** argv) { return penet::run_cli(argc, argv); }
