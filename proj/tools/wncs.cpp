#include "wncs/cli.hpp"

int main(int argc, char** argv) { return wncs::cli::main(argc, argv); }
