#include "bbgcn/cli.hpp"

int main(int argc, char** argv) { return bbgcn::cli::run(argc, argv); }
