#include "rea/cli.hpp"

int main(int argc, char** argv) { return rea::cli::main(argc, argv); }
