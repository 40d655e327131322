#include "heis/cli.hpp"

int main(int argc, char** argv) { return heis::cli::cli_main(argc, argv); }
