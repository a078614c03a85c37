#include "motarfuse/cli.hpp"

int main(int argc, char** argv) { return motarfuse::run_cli(argc, argv); }
