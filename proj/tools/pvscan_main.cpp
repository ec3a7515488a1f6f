#include "pvscan/cli.hpp"

int main(int argc, char** argv) { return pvscan::cli::main(argc, argv); }
