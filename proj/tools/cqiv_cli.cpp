#include "cqiv/cli/commands.hpp"

int main(int argc, char** argv) { return cqiv::cli::main(argc, argv); }
