#include "pfseg/cli.hpp"

int main(int argc, char** argv) { return pfseg::cli::run(argc, argv); }
