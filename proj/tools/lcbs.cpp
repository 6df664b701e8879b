#include "lcbs/cli.hpp"

int main(int argc, char **argv) { return lcbs::run_cli(argc, argv); }
