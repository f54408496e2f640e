#include "doa/cli.hpp"

int main(int argc, char** argv) { return doa::cli::run(argc, argv); }
