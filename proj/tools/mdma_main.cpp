#include "mdma/cli.hpp"

int main(int argc, char** argv) { return mdma::run_cli(argc, argv); }
