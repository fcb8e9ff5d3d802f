#include "calvin/cli.hpp"

int main(int argc, char** argv) { return calvin::cli_main(argc, argv); }
