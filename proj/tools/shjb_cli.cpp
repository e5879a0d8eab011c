#include "shjb/cli.hpp"

int main(int argc, char** argv) { return shjb::run_cli(argc, argv); }
