#include "nowcast/cli.hpp"

int main(int argc, char** argv) { return nowcast::run_cli(argc, argv); }
