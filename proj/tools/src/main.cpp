#include "divens/cli.hpp"

int main(int argc, char** argv) { return divens::cli_main(argc, argv); }
