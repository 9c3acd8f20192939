#include "dodti/cli.hpp"

int main(int argc, char** argv) { return dodti::run_cli(argc, argv); }
