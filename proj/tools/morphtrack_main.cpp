#include "morphtrack/cli.hpp"

int main(int argc, char** argv) { return morphtrack::cli_main(argc, argv); }
