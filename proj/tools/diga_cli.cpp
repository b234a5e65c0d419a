#include "diga/cli.hpp"

int main(int argc, char** argv) { return diga::cli::run(argc, argv); }
