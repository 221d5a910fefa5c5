#include "sparselab/cli.hpp"

int main(int argc, char** argv) { return sparselab::cli_main(argc, argv); }
